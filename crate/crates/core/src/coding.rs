//! Weighted random linear encoding of local data into parity rows.
//!
//! A client with embedded data `X̂ⱼ` (`ℓⱼ × q`) and labels `Yⱼ` releases
//! `X̆ⱼ = Gⱼ Wⱼ X̂ⱼ` and `Y̆ⱼ = Gⱼ Wⱼ Yⱼ`, where `Gⱼ` is a private `u × ℓⱼ`
//! matrix of zero-mean unit-variance entries and `Wⱼ` is diagonal. The
//! server sums the client parities into the global parity.
//!
//! # Binary format
//!
//! A parity (or embedded) dataset file is three little-endian `u64`
//! counts `rows, q, c`, then `rows·q` features and `rows·c` labels as
//! row-major little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::delay::{cdf_delay, NodeProfile};
use crate::error::{Error, Result};
use crate::rff::EmbeddedDataset;
use crate::rng::Stream;

/// Which of a client's points it processes, and the resulting weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec {
    pub processed_mask: Vec<bool>,
    /// Probability that the processed points' gradient misses the deadline.
    pub pnr_processed: f64,
    /// `√pnr` for processed points, 1 for the rest.
    pub weights: Vec<f64>,
}

impl WeightSpec {
    pub fn processed_count(&self) -> usize {
        self.processed_mask.iter().filter(|&&m| m).count()
    }

    pub fn processed_indices(&self) -> Vec<usize> {
        self.processed_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingDist {
    Gaussian,
    #[default]
    Rademacher,
}

/// Coded feature and label rows of one client, or of the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ParityDataset {
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
}

impl ParityDataset {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        write_pair(path, self.features.view(), self.labels.view())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let (features, labels) = read_pair(path)?;
        Ok(ParityDataset { features, labels })
    }
}

impl EmbeddedDataset {
    pub fn write_to(&self, path: &Path) -> Result<()> {
        write_pair(path, self.features.view(), self.labels.view())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let (features, labels) = read_pair(path)?;
        Ok(EmbeddedDataset { features, labels })
    }
}

/// Picks `ell_star` of the `ℓⱼ = ell_max` local points uniformly without
/// replacement and weights them by the chance their gradient is lost.
pub fn build_weight_spec(
    profile: &NodeProfile,
    ell_star: usize,
    t_star: f64,
    rng: &mut Stream,
) -> Result<WeightSpec> {
    let ell = profile.ell_max as usize;
    if ell_star as f64 > profile.ell_max {
        return Err(Error::domain(format!(
            "processed load {ell_star} exceeds the local dataset of {}",
            profile.ell_max
        )));
    }
    let pnr_processed = if ell_star == 0 {
        1.0
    } else {
        1.0 - cdf_delay(profile, ell_star as f64, t_star)?
    };
    let mut processed_mask = vec![false; ell];
    for i in rng.sample_indices(ell, ell_star) {
        processed_mask[i] = true;
    }
    let w = pnr_processed.sqrt();
    let weights = processed_mask
        .iter()
        .map(|&m| if m { w } else { 1.0 })
        .collect();
    Ok(WeightSpec {
        processed_mask,
        pnr_processed,
        weights,
    })
}

/// `u × ell` matrix of IID entries, drawn row-major. Rademacher signs take
/// the top bit of one word each.
pub fn generate_encoding_matrix(
    u: usize,
    ell: usize,
    rng: &mut Stream,
    dist: EncodingDist,
) -> Array2<f64> {
    match dist {
        EncodingDist::Gaussian => Array2::from_shape_simple_fn((u, ell), || rng.standard_normal()),
        EncodingDist::Rademacher => Array2::from_shape_simple_fn((u, ell), || {
            if rng.next_u64() >> 63 == 0 {
                1.0
            } else {
                -1.0
            }
        }),
    }
}

pub fn encode_local(
    embedded: &EmbeddedDataset,
    spec: &WeightSpec,
    g: ArrayView2<f64>,
) -> Result<ParityDataset> {
    let ell = embedded.len();
    if g.ncols() != ell || spec.weights.len() != ell || embedded.labels.nrows() != ell {
        return Err(Error::domain(format!(
            "encoding shapes disagree: G has {} columns, {} weights, {} feature rows, {} label rows",
            g.ncols(),
            spec.weights.len(),
            ell,
            embedded.labels.nrows()
        )));
    }
    let scale = |m: &Array2<f64>| {
        let mut out = m.clone();
        for (mut row, &w) in out.axis_iter_mut(Axis(0)).zip(&spec.weights) {
            row *= w;
        }
        out
    };
    Ok(ParityDataset {
        features: g.dot(&scale(&embedded.features)),
        labels: g.dot(&scale(&embedded.labels)),
    })
}

/// Sums client parities in ascending client id.
pub fn aggregate_global(parities: &[(usize, &ParityDataset)]) -> Result<ParityDataset> {
    let mut ordered: Vec<&(usize, &ParityDataset)> = parities.iter().collect();
    ordered.sort_by_key(|(id, _)| *id);
    let Some((_, first)) = ordered.first() else {
        return Err(Error::domain("no parity datasets to aggregate"));
    };
    let mut total = (*first).clone();
    for (id, parity) in &ordered[1..] {
        if parity.features.dim() != total.features.dim() || parity.labels.dim() != total.labels.dim() {
            return Err(Error::domain(format!(
                "parity of client {id} has shape {:?}/{:?}, expected {:?}/{:?}",
                parity.features.dim(),
                parity.labels.dim(),
                total.features.dim(),
                total.labels.dim()
            )));
        }
        total.features += &parity.features;
        total.labels += &parity.labels;
    }
    Ok(total)
}

fn write_pair(path: &Path, features: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<()> {
    if features.nrows() != labels.nrows() {
        return Err(Error::domain(format!(
            "{} feature rows but {} label rows",
            features.nrows(),
            labels.nrows()
        )));
    }
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for n in [features.nrows(), features.ncols(), labels.ncols()] {
        out.write_all(&(n as u64).to_le_bytes()).map_err(io)?;
    }
    for &v in features.iter().chain(labels.iter()) {
        out.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_pair(path: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let format = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 24 {
        return Err(format(bytes.len(), "truncated header".into()));
    }
    let count = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    let (rows, q, c) = (count(0), count(1), count(2));
    let expected = rows
        .checked_mul(q.checked_add(c).ok_or_else(|| format(8, "dimension overflow".into()))?)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(24))
        .ok_or_else(|| format(0, "dimension overflow".into()))?;
    if (bytes.len() as u64) != expected {
        return Err(format(
            bytes.len().min(expected as usize),
            format!("expected {expected} bytes for {rows}x({q}+{c}) entries, found {}", bytes.len()),
        ));
    }
    let (rows, q, c) = (rows as usize, q as usize, c as usize);
    let floats: Vec<f64> = bytes[24..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let (f, l) = floats.split_at(rows * q);
    let features = Array2::from_shape_vec((rows, q), f.to_vec()).expect("checked length");
    let labels = Array2::from_shape_vec((rows, c), l.to_vec()).expect("checked length");
    Ok((features, labels))
}
