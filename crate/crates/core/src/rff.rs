//! Random Fourier features for the RBF kernel `exp(-‖v₁ - v₂‖² / 2σ²)`.
//!
//! `φ(v) = √(2/q) [cos(v·ω₁ + δ₁), ..., cos(v·ω_q + δ_q)]` with
//! `ω_s ~ N(0, σ⁻² I)` and `δ_s ~ U(0, 2π]`.
//!
//! Parameters are a pure function of `(seed, d, q, σ)`: a [`Stream`] with
//! that seed and stream id 0 yields the `q·d` standard normals for `ω` in
//! row-major order (each scaled by `1/σ`), then `q` uniforms `u` giving
//! `δ = 2πu`. Normals come from Box–Muller in pairs; when `q·d` is odd the
//! unused half of the last pair is discarded before the shifts are drawn.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq)]
pub struct RffParams {
    /// `q × d` frequency matrix, one frequency vector per row.
    pub omega: Array2<f64>,
    /// `q` phase shifts in `(0, 2π]`.
    pub delta: Array1<f64>,
    pub sigma: f64,
}

impl RffParams {
    pub fn q(&self) -> usize {
        self.omega.nrows()
    }

    pub fn d(&self) -> usize {
        self.omega.ncols()
    }

    /// Largest magnitude of an embedded entry, `√(2/q)`.
    pub fn amplitude(&self) -> f64 {
        (2.0 / self.q() as f64).sqrt()
    }
}

/// Embedded features and one-hot labels of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedDataset {
    /// `ℓ × q`, entries bounded by `√(2/q)` in magnitude.
    pub features: Array2<f64>,
    /// `ℓ × c`, one-hot rows.
    pub labels: Array2<f64>,
}

impl EmbeddedDataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> EmbeddedDataset {
        EmbeddedDataset {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
        }
    }
}

pub fn derive_params(seed: u64, d: usize, q: usize, sigma: f64) -> Result<RffParams> {
    if d == 0 || q == 0 {
        return Err(Error::domain(format!("embedding needs d, q >= 1, got d={d}, q={q}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    let mut rng = Stream::new(seed, 0);
    let omega = Array2::from_shape_simple_fn((q, d), || rng.standard_normal() / sigma);
    let delta = Array1::from_shape_simple_fn(q, || std::f64::consts::TAU * rng.uniform());
    Ok(RffParams { omega, delta, sigma })
}

/// Embeds one raw feature vector.
pub fn embed(params: &RffParams, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != params.d() {
        return Err(Error::domain(format!(
            "feature vector has {} entries, embedding expects {}",
            x.len(),
            params.d()
        )));
    }
    let omega_t = params.omega.t().as_standard_layout().into_owned();
    Ok(embed_row(params, &omega_t, x))
}

/// `φ` of one row given `ωᵀ` (`d × q`). Zero inputs are skipped and the
/// remaining terms are added in ascending input index, so the result for a
/// row does not depend on any other row.
fn embed_row(params: &RffParams, omega_t: &Array2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    let mut z = params.delta.clone();
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            z.scaled_add(xk, &omega_t.row(k));
        }
    }
    let amp = params.amplitude();
    z.mapv_inplace(|v| amp * v.cos());
    z
}

/// Embeds every row of `x`; labels are copied unchanged.
pub fn embed_matrix(
    params: &RffParams,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<EmbeddedDataset> {
    if x.ncols() != params.d() {
        return Err(Error::domain(format!(
            "features have {} columns, embedding expects {}",
            x.ncols(),
            params.d()
        )));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::domain(format!(
            "{} feature rows but {} label rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let omega_t = params.omega.t().as_standard_layout().into_owned();
    let mut features = Array2::zeros((x.nrows(), params.q()));
    for (mut out, row) in features.outer_iter_mut().zip(x.outer_iter()) {
        out.assign(&embed_row(params, &omega_t, row));
    }
    Ok(EmbeddedDataset {
        features,
        labels: y.to_owned(),
    })
}

/// The RBF kernel the embedding approximates.
pub fn rbf_kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, sigma: f64) -> f64 {
    let dist2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    (-dist2 / (2.0 * sigma * sigma)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};

    #[test]
    fn params_are_deterministic() {
        let a = derive_params(42, 7, 33, 5.0).unwrap();
        let b = derive_params(42, 7, 33, 5.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, derive_params(43, 7, 33, 5.0).unwrap());
    }

    #[test]
    fn draw_order_is_omega_then_delta() {
        let params = derive_params(9, 3, 5, 2.0).unwrap();
        let mut rng = Stream::new(9, 0);
        let normals: Vec<f64> = (0..15).map(|_| rng.standard_normal() / 2.0).collect();
        assert_eq!(params.omega.iter().copied().collect::<Vec<_>>(), normals);
        // 15 normals use 8 Box–Muller pairs, 16 words
        let mut rng = Stream::new(9, 0);
        for _ in 0..16 {
            rng.next_u64();
        }
        for &d in params.delta.iter() {
            assert_eq!(d, std::f64::consts::TAU * rng.uniform());
        }
    }

    #[test]
    fn reference_hyperparameters_allocate() {
        let params = derive_params(1, 784, 2000, 5.0).unwrap();
        assert_eq!(params.omega.dim(), (2000, 784));
        assert_eq!(params.delta.len(), 2000);
        assert!(params.delta.iter().all(|&d| d > 0.0 && d <= std::f64::consts::TAU));
    }

    #[test]
    fn omega_variance() {
        let params = derive_params(3, 100, 1000, 5.0).unwrap();
        let n = params.omega.len() as f64;
        let mean = params.omega.sum() / n;
        let var = params.omega.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
        assert!((var * 25.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn bad_arguments() {
        assert!(derive_params(0, 0, 4, 1.0).is_err());
        assert!(derive_params(0, 4, 0, 1.0).is_err());
        assert!(derive_params(0, 4, 4, 0.0).is_err());
        let params = derive_params(0, 4, 4, 1.0).unwrap();
        assert!(embed(&params, array![1.0, 2.0].view()).is_err());
        assert!(embed_matrix(&params, Array2::zeros((2, 3)).view(), Array2::zeros((2, 1)).view()).is_err());
        assert!(embed_matrix(&params, Array2::zeros((2, 4)).view(), Array2::zeros((3, 1)).view()).is_err());
    }

    #[test]
    fn self_inner_product_near_one() {
        let params = derive_params(5, 10, 10_000, 5.0).unwrap();
        let mut rng = Stream::new(6, 0);
        for _ in 0..5 {
            let v = Array1::from_shape_simple_fn(10, || rng.uniform());
            let phi = embed(&params, v.view()).unwrap();
            let norm2 = phi.dot(&phi);
            assert!(norm2 <= 2.0);
            assert!((norm2 - 1.0).abs() < 0.05, "{norm2}");
            let bound = params.amplitude();
            assert!(phi.iter().all(|e| e.abs() <= bound));
        }
    }

    #[test]
    fn kernel_pairs_within_bound() {
        let params = derive_params(7, 20, 2000, 5.0).unwrap();
        let mut rng = Stream::new(8, 0);
        for _ in 0..50 {
            let a = Array1::from_shape_simple_fn(20, || rng.uniform());
            let b = Array1::from_shape_simple_fn(20, || rng.uniform());
            let approx = embed(&params, a.view()).unwrap().dot(&embed(&params, b.view()).unwrap());
            let exact = rbf_kernel(a.view(), b.view(), 5.0);
            assert!((approx - exact).abs() <= 4.0 / 2000f64.sqrt(), "{approx} vs {exact}");
        }
    }

    #[test]
    fn matrix_rows_match_vector_embedding_bitwise() {
        let params = derive_params(11, 6, 40, 1.5).unwrap();
        let mut rng = Stream::new(12, 0);
        let mut x = Array2::from_shape_simple_fn((9, 6), || rng.uniform());
        x[[2, 3]] = 0.0;
        let y = Array2::eye(9);
        let emb = embed_matrix(&params, x.view(), y.view()).unwrap();
        assert_eq!(emb.labels, y);
        for i in 0..9 {
            assert_eq!(emb.features.row(i), embed(&params, x.row(i)).unwrap());
        }
        // a client holding only some of the rows gets the same embedding
        let part = embed_matrix(&params, x.slice(s![4..7, ..]), y.slice(s![4..7, ..])).unwrap();
        assert_eq!(part.features, emb.features.slice(s![4..7, ..]));
    }

    #[test]
    fn empty_input() {
        let params = derive_params(0, 3, 8, 1.0).unwrap();
        let emb = embed_matrix(&params, Array2::zeros((0, 3)).view(), Array2::zeros((0, 2)).view()).unwrap();
        assert!(emb.is_empty());
        assert_eq!(emb.features.dim(), (0, 8));
    }
}
