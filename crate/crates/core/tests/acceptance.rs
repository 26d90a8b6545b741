//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Runs as a plain binary (`harness = false`).

use std::path::PathBuf;
use std::time::Instant;

use codedfl::allocation::{
    awgn_optimal_load, concavity_pieces, expected_return, lambert_w_minus1, maximize_node_return,
    solve_allocation,
};
use codedfl::coding::{
    aggregate_global, build_weight_spec, encode_local, generate_encoding_matrix, EncodingDist,
    ParityDataset,
};
use codedfl::delay::{cdf_delay, mean_delay, sample_delay, NodeProfile};
use codedfl::harness::experiment::load_data;
use codedfl::harness::{run_experiment, write_metrics, ExperimentConfig};
use codedfl::privacy::{budget_bits, feature_vulnerability, privacy_budget};
use codedfl::rff::{derive_params, embed, rbf_kernel, EmbeddedDataset};
use codedfl::rng::Stream;
use codedfl::trainer::{
    coded_federated_aggregate, coded_gradient, local_gradient, GradientMessage, TrainingTrace,
};
use ndarray::{concatenate, Array1, Array2, Axis};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

fn random_profile(rng: &mut Stream, p_max: f64) -> NodeProfile {
    NodeProfile::new(
        uniform(rng, 1.0, 10.0),
        uniform(rng, 0.5, 5.0),
        uniform(rng, 0.05, 1.0),
        uniform(rng, 0.0, p_max),
        uniform(rng, 5.0, 50.0),
    )
    .unwrap()
}

fn empirical_cdf(profile: &NodeProfile, load: f64, t: f64, samples: usize, rng: &mut Stream) -> f64 {
    let hits = (0..samples)
        .filter(|_| sample_delay(profile, load, rng).unwrap().total <= t)
        .count();
    hits as f64 / samples as f64
}

fn cdf_monte_carlo() -> Outcome {
    let mut rng = Stream::new(1, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let profile = random_profile(&mut rng, 0.5);
        let load = uniform(&mut rng, 1.0, profile.ell_max);
        let t = mean_delay(&profile, load) * uniform(&mut rng, 0.5, 1.5);
        let exact = cdf_delay(&profile, load, t).unwrap();
        worst = worst.max((exact - empirical_cdf(&profile, load, t, 100_000, &mut rng)).abs());
    }
    check(worst <= 0.01, format!("max |cdf - empirical| = {worst:.4} over 100 cases"))
}

fn expected_return_brute_force() -> Outcome {
    let mut rng = Stream::new(2, 0);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 50 {
        let profile = random_profile(&mut rng, 0.5);
        let load = uniform(&mut rng, 1.0, profile.ell_max);
        let t = mean_delay(&profile, load) * uniform(&mut rng, 0.8, 2.0);
        let exact = expected_return(&profile, load, t);
        // relative error is meaningless for near-zero returns
        if exact < 0.1 * load {
            continue;
        }
        let brute = load * empirical_cdf(&profile, load, t, 100_000, &mut rng);
        worst = worst.max((exact - brute).abs() / brute);
        cases += 1;
    }
    check(worst <= 0.02, format!("max relative error {worst:.4} over 50 cases"))
}

fn piecewise_concavity() -> Outcome {
    let mut rng = Stream::new(3, 0);
    let mut worst = f64::NEG_INFINITY;
    let mut stencils = 0;
    while stencils < 1000 {
        let profile = random_profile(&mut rng, 0.6);
        let t = uniform(&mut rng, 2.0 * profile.tau, 2.0 * mean_delay(&profile, profile.ell_max));
        let pieces = concavity_pieces(&profile, t);
        if pieces.is_empty() {
            continue;
        }
        let piece = pieces[rng.below(pieces.len() as u64) as usize];
        let width = piece.hi - piece.lo;
        let h = width * uniform(&mut rng, 1e-4, 0.25);
        let x = uniform(&mut rng, piece.lo + h, piece.hi - h);
        if !(x - h > piece.lo && x + h <= piece.hi) {
            continue;
        }
        let second = expected_return(&profile, x - h, t) - 2.0 * expected_return(&profile, x, t)
            + expected_return(&profile, x + h, t);
        worst = worst.max(second);
        stencils += 1;
    }
    check(worst <= 1e-9, format!("largest second difference {worst:.3e} over 1000 stencils"))
}

fn awgn_closed_form() -> Outcome {
    let mut rng = Stream::new(4, 0);
    let mut worst_load = 0.0f64;
    for _ in 0..1000 {
        let mut profile = random_profile(&mut rng, 0.0);
        profile.p = 0.0;
        let t = uniform(&mut rng, 2.0 * profile.tau, 3.0 * mean_delay(&profile, profile.ell_max));
        let closed = awgn_optimal_load(&profile, t).unwrap();
        let numeric = maximize_node_return(&profile, t).load;
        worst_load = worst_load.max((numeric - closed).abs() / closed.max(1e-12));
    }
    let mut worst_residual = 0.0f64;
    for _ in 0..1000 {
        let x = -(-1.0f64).exp() * rng.uniform();
        let w = lambert_w_minus1(x).unwrap();
        worst_residual = worst_residual.max((w * w.exp() - x).abs());
    }
    let branch = (lambert_w_minus1(-(-1.0f64).exp()).unwrap() + 1.0).abs();
    check(
        worst_load <= 1e-6 && worst_residual <= 1e-12 && branch <= 1e-10,
        format!(
            "load rel err {worst_load:.2e}, W residual {worst_residual:.2e}, |W(-1/e)+1| = {branch:.2e}"
        ),
    )
}

fn monotonicity() -> Outcome {
    let mut rng = Stream::new(5, 0);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let profile = random_profile(&mut rng, 0.6);
        let t_max = 3.0 * mean_delay(&profile, profile.ell_max);
        let mut prev = 0.0f64;
        for i in 1..=1000 {
            let value = maximize_node_return(&profile, t_max * i as f64 / 1000.0).value;
            // maximizer accuracy is relative to the return scale
            if value < prev - 1e-9 * prev.max(1.0) {
                violations += 1;
                worst = worst.max(prev - value);
            }
            prev = prev.max(value);
        }
    }
    check(violations == 0, format!("{violations} decreases over 20 × 1000 grid points (worst {worst:.2e})"))
}

/// Best return of one node at `t` over a 0.01-spaced load grid.
fn grid_best(profile: &NodeProfile, t: f64) -> f64 {
    let steps = (profile.ell_max * 100.0).round() as usize;
    (0..=steps)
        .map(|k| expected_return(profile, k as f64 / 100.0, t))
        .fold(0.0, f64::max)
}

fn two_step_optimality() -> Outcome {
    let mut rng = Stream::new(6, 0);
    let grid = 1e-3;
    let mut failures = Vec::new();
    for case in 0..20 {
        let profiles: Vec<NodeProfile> = (0..2)
            .map(|_| {
                NodeProfile::new(
                    uniform(&mut rng, 2.0, 10.0),
                    uniform(&mut rng, 0.5, 5.0),
                    uniform(&mut rng, 0.1, 0.5),
                    uniform(&mut rng, 0.0, 0.3),
                    (5 + rng.below(11)) as f64,
                )
                .unwrap()
            })
            .collect();
        let capacity = profiles[0].ell_max + profiles[1].ell_max;
        let m = (0.8 * capacity).floor();
        let result = solve_allocation(&profiles, m).unwrap();
        let achieved: f64 = profiles
            .iter()
            .zip(&result.loads)
            .map(|(p, &l)| expected_return(p, l, result.t_star))
            .sum();
        let mut earliest = None;
        let steps = ((result.t_star - grid) / grid).floor().max(0.0) as usize;
        for k in 1..=steps {
            let t = k as f64 * grid;
            if profiles.iter().map(|p| grid_best(p, t)).sum::<f64>() >= m {
                earliest = Some(t);
                break;
            }
        }
        if earliest.is_some() || achieved < m * (1.0 - 1e-9) {
            failures.push(format!("case {case}: t* = {}, grid hit {earliest:?}, return {achieved}", result.t_star));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "no grid deadline below t* - 1e-3 meets the demand in 20 instances".into()
        } else {
            failures.join("; ")
        },
    )
}

fn desk_dataset_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-desk"))
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        dataset_dir: desk_dataset_dir(),
        ..ExperimentConfig::default()
    }
}

fn rff_kernel() -> Outcome {
    let (train, _) = load_data(&desk_config()).map_err(|e| e.to_string())?;
    let (q, sigma) = (2000, 5.0);
    let params = derive_params(7, train.features.ncols(), q, sigma).unwrap();
    let mut rng = Stream::new(7, 1);
    let mut total = 0.0;
    for _ in 0..500 {
        let a = train.features.row(rng.below(train.len() as u64) as usize);
        let b = train.features.row(rng.below(train.len() as u64) as usize);
        let approx = embed(&params, a).unwrap().dot(&embed(&params, b).unwrap());
        total += (approx - rbf_kernel(a, b, sigma)).abs();
    }
    let mean = total / 500.0;
    let bound = 2.0 / (q as f64).sqrt();
    check(mean <= bound, format!("mean |phi.phi - K| = {mean:.4} (bound {bound:.4}) on MNIST pairs"))
}

fn random_dataset(rng: &mut Stream, rows: usize, q: usize, c: usize) -> EmbeddedDataset {
    EmbeddedDataset {
        features: Array2::from_shape_simple_fn((rows, q), || rng.standard_normal()),
        labels: Array2::from_shape_simple_fn((rows, c), || rng.uniform()),
    }
}

fn encoding_identities() -> Outcome {
    let mut rng = Stream::new(8, 0);
    let (u, q, c, ell) = (5, 6, 3, 4);
    let profile = NodeProfile::new(3.0, 2.0, 0.2, 0.1, ell as f64).unwrap();
    let mut parities = Vec::new();
    let (mut gs, mut ws, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for j in 0..3 {
        let data = random_dataset(&mut rng, ell, q, c);
        let spec = build_weight_spec(&profile, j + 1, 2.5, &mut rng).unwrap();
        let g = generate_encoding_matrix(u, ell, &mut rng, EncodingDist::Gaussian);
        parities.push(encode_local(&data, &spec, g.view()).unwrap());
        gs.push(g);
        ws.extend(spec.weights);
        xs.push(data.features);
        ys.push(data.labels);
    }
    let indexed: Vec<(usize, &ParityDataset)> = parities.iter().enumerate().collect();
    let global = aggregate_global(&indexed).unwrap();
    let g = concatenate(Axis(1), &gs.iter().map(|g| g.view()).collect::<Vec<_>>()).unwrap();
    let w = Array2::from_diag(&Array1::from(ws));
    let x = concatenate(Axis(0), &xs.iter().map(|x| x.view()).collect::<Vec<_>>()).unwrap();
    let y = concatenate(Axis(0), &ys.iter().map(|y| y.view()).collect::<Vec<_>>()).unwrap();
    let block_err = (&global.features - &g.dot(&w).dot(&x))
        .iter()
        .chain((&global.labels - &g.dot(&w).dot(&y)).iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));

    let (u_big, ell_big) = (10_000, 40);
    let mut worst_gram = 0.0f64;
    for dist in [EncodingDist::Rademacher, EncodingDist::Gaussian] {
        let g = generate_encoding_matrix(u_big, ell_big, &mut rng, dist);
        let gram = g.t().dot(&g) / u_big as f64;
        let off: f64 = (0..ell_big)
            .flat_map(|i| (0..ell_big).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| gram[[i, k]].abs())
            .sum::<f64>()
            / (ell_big * (ell_big - 1)) as f64;
        worst_gram = worst_gram.max(off);
    }
    let bound = 4.0 / (u_big as f64).sqrt();
    check(
        block_err <= 1e-10 && worst_gram <= bound,
        format!("block error {block_err:.2e}; off-diagonal mean {worst_gram:.4} (bound {bound:.4})"),
    )
}

fn unbiasedness() -> Outcome {
    let mut rng = Stream::new(9, 0);
    let (ell, q, c, u) = (8usize, 5, 3, 2000usize);
    let clients: Vec<NodeProfile> = [(4.0, 0.3), (2.0, 0.5), (1.0, 0.8)]
        .iter()
        .map(|&(mu, tau)| NodeProfile::new(mu, 2.0, tau, 0.1, ell as f64).unwrap())
        .collect();
    let server = NodeProfile::new(50.0, 2.0, 0.1, 0.0, 4.0).unwrap().guaranteed();
    let mut profiles = clients.clone();
    profiles.push(server);
    let m = (3 * ell) as f64;
    let allocation = solve_allocation(&profiles, m).unwrap();
    let loads = allocation.integer_loads(&profiles, m);
    let t_star = allocation.t_star;

    let data: Vec<EmbeddedDataset> = (0..3).map(|_| random_dataset(&mut rng, ell, q, c)).collect();
    let theta = Array2::from_shape_simple_fn((q, c), || 0.3 * rng.standard_normal());
    let mut weighted_x = Vec::new();
    let mut weighted_y = Vec::new();
    let mut partial = Vec::new();
    for (j, d) in data.iter().enumerate() {
        let spec = build_weight_spec(&clients[j], loads[j], t_star, &mut rng).unwrap();
        let w = Array2::from_diag(&Array1::from(spec.weights.clone()));
        // GᵀG/u replaced by the identity: parity √u·W·X gives (1/u)X̆ᵀX̆ = XᵀW²X
        weighted_x.push(w.dot(&d.features) * (u as f64).sqrt());
        weighted_y.push(w.dot(&d.labels) * (u as f64).sqrt());
        let processed = d.select(&spec.processed_indices());
        let gradient = if loads[j] > 0 {
            local_gradient(&processed, theta.view()).unwrap()
        } else {
            Array2::zeros((q, c))
        };
        partial.push((loads[j] as f64, gradient));
    }
    let parity = ParityDataset {
        features: concatenate(Axis(0), &weighted_x.iter().map(|x| x.view()).collect::<Vec<_>>()).unwrap(),
        labels: concatenate(Axis(0), &weighted_y.iter().map(|y| y.view()).collect::<Vec<_>>()).unwrap(),
    };
    let coded = coded_gradient(&parity, theta.view(), u, 0.0, true).unwrap();

    let draws = 100_000;
    let mut mean = Array2::<f64>::zeros((q, c));
    for _ in 0..draws {
        let messages: Vec<GradientMessage> = (0..3)
            .map(|j| GradientMessage {
                client: j,
                arrived: loads[j] > 0
                    && sample_delay(&clients[j], loads[j] as f64, &mut rng).unwrap().total <= t_star,
                load: partial[j].0,
                gradient: partial[j].1.clone(),
            })
            .collect();
        mean += &coded_federated_aggregate(&messages, coded.view(), m);
    }
    mean /= draws as f64;

    let all = EmbeddedDataset {
        features: concatenate(Axis(0), &data.iter().map(|d| d.features.view()).collect::<Vec<_>>()).unwrap(),
        labels: concatenate(Axis(0), &data.iter().map(|d| d.labels.view()).collect::<Vec<_>>()).unwrap(),
    };
    let full = local_gradient(&all, theta.view()).unwrap();
    let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = norm(&(&mean - &full)) / norm(&full);
    check(rel <= 0.02, format!("relative error {rel:.4} over {draws} draws, loads {loads:?}"))
}

fn privacy_formula() -> Outcome {
    let mut rng = Stream::new(12, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let rows = 2 + rng.below(10) as usize;
        let cols = 1 + rng.below(8) as usize;
        let x = Array2::from_shape_simple_fn((rows, cols), || uniform(&mut rng, -2.0, 2.0));
        let mut oracle = f64::INFINITY;
        for k2 in 0..cols {
            let mut total = 0.0;
            for k1 in 0..rows {
                total += x[[k1, k2]].abs().powi(2);
            }
            let mut biggest = 0.0f64;
            for k3 in 0..rows {
                biggest = biggest.max(x[[k3, k2]].abs().powi(2));
            }
            oracle = oracle.min((total - biggest).sqrt());
        }
        worst = worst.max((feature_vulnerability(x.view()).unwrap() - oracle).abs());
    }
    let f = feature_vulnerability(ndarray::arr2(&[[3.0], [4.0]]).view()).unwrap();
    let report = privacy_budget(ndarray::arr2(&[[3.0], [4.0]]).view(), 9, EncodingDist::Gaussian).unwrap();
    let eps = report.epsilon.unwrap_or(f64::NAN);
    check(
        worst <= 1e-12 && f == 3.0 && eps == 0.5 && budget_bits(9, 3.0) == 0.5,
        format!("oracle error {worst:.2e}; u = f² = 9 gives epsilon {eps}"),
    )
}

struct DeskRuns {
    first: Vec<TrainingTrace>,
    csv_equal: Result<bool, String>,
}

fn desk_runs() -> Result<DeskRuns, String> {
    let config = desk_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut traces = Vec::new();
    for dir in &dirs {
        let output = run_experiment(&config).map_err(|e| e.to_string())?;
        write_metrics(&output, dir.path()).map_err(|e| e.to_string())?;
        traces.push(output.traces);
    }
    let csv_equal = (|| {
        for trace in &traces[0] {
            let name = format!("trace_{}.csv", trace.scheme);
            let a = std::fs::read(dirs[0].path().join(&name)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].path().join(&name)).map_err(|e| e.to_string())?;
            if a != b || a.is_empty() {
                return Ok(false);
            }
        }
        Ok(true)
    })();
    Ok(DeskRuns {
        first: traces.swap_remove(0),
        csv_equal,
    })
}

fn trace<'a>(traces: &'a [TrainingTrace], scheme: &str) -> Result<&'a TrainingTrace, String> {
    traces
        .iter()
        .find(|t| t.scheme == scheme)
        .ok_or_else(|| format!("no {scheme} trace"))
}

fn speedup(runs: &Result<DeskRuns, String>) -> Outcome {
    let traces = &runs.as_ref().map_err(Clone::clone)?.first;
    let (naive, greedy, coded) = (trace(traces, "naive")?, trace(traces, "greedy")?, trace(traces, "coded")?);
    let target = naive.final_accuracy().unwrap_or(0.0) - 0.015;
    let time = |t: &TrainingTrace| t.time_to_accuracy(target).unwrap_or(f64::INFINITY);
    let (tn, tg, tc) = (time(naive), time(greedy), time(coded));
    let (vs_naive, vs_greedy) = (tn / tc, tg / tc);
    check(
        tc.is_finite() && vs_naive >= 1.5 && vs_greedy >= 2.0,
        format!(
            "target {target:.3}: coded {tc:.0} s, naive {tn:.0} s ({vs_naive:.2}x), greedy {tg:.0} s ({vs_greedy:.2}x)"
        ),
    )
}

fn overlap(runs: &Result<DeskRuns, String>) -> Outcome {
    let traces = &runs.as_ref().map_err(Clone::clone)?.first;
    let (naive, greedy, coded) = (trace(traces, "naive")?, trace(traces, "greedy")?, trace(traces, "coded")?);
    let mut worst = (0.0f64, 0);
    for (a, b) in naive.records.iter().zip(&coded.records) {
        let gap = (a.test_accuracy - b.test_accuracy).abs();
        if gap > worst.0 {
            worst = (gap, a.iteration);
        }
    }
    let over = naive
        .records
        .iter()
        .zip(&coded.records)
        .filter(|(a, b)| (a.test_accuracy - b.test_accuracy).abs() > 0.015)
        .count();
    let lag = coded.final_accuracy().unwrap_or(0.0) - greedy.final_accuracy().unwrap_or(0.0);
    let aligned = naive.records.len() == coded.records.len() && !coded.records.is_empty();
    check(
        aligned && worst.0 <= 0.015 && lag >= 0.03,
        format!(
            "max |coded - naive| = {:.3} at iteration {} ({over} of {} iterations above 0.015); greedy trails coded by {lag:.3}",
            worst.0,
            worst.1,
            coded.records.len()
        ),
    )
}

fn determinism(runs: &Result<DeskRuns, String>) -> Outcome {
    let equal = runs.as_ref().map_err(Clone::clone)?.csv_equal.clone()?;
    check(equal, format!("trace CSVs of two same-seed runs {}", if equal { "identical" } else { "differ" }))
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, run: &dyn Fn() -> Outcome| {
        let t0 = Instant::now();
        let outcome = run();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    };
    report(1, "cdf vs monte carlo", &cdf_monte_carlo);
    report(2, "expected return vs brute force", &expected_return_brute_force);
    report(3, "piecewise concavity", &piecewise_concavity);
    report(4, "awgn closed form", &awgn_closed_form);
    report(5, "monotone optimal return", &monotonicity);
    report(6, "two-step optimality", &two_step_optimality);
    report(7, "rff kernel approximation", &rff_kernel);
    report(8, "encoding identities", &encoding_identities);
    report(9, "unbiased coded gradient", &unbiasedness);
    let t0 = Instant::now();
    let runs = desk_runs();
    println!("desk-scale experiment ran twice in {:.1} s", t0.elapsed().as_secs_f64());
    report(10, "desk speedup", &|| speedup(&runs));
    report(11, "accuracy overlap", &|| overlap(&runs));
    report(12, "privacy formula", &privacy_formula);
    report(13, "determinism", &|| determinism(&runs));
    println!(
        "{} of 13 criteria passed in {:.1} s",
        13 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
