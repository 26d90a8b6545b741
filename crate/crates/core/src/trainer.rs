//! Mini-batch gradient descent for linear regression on embedded features,
//! under a simulated wall clock.
//!
//! Three aggregation schemes share one loop:
//!
//! * naive: wait for every client, average all local gradients;
//! * greedy: wait for the fastest `⌈(1-ψ)n⌉` clients, average what arrived;
//! * coded: stop at the deadline `t*`, combine the arrived client gradients
//!   with the server's gradient over the global parity data.
//!
//! The loss of a batch `(X, Y)` is `‖Xθ - Y‖²/(2ℓ)` with gradient
//! `Xᵀ(Xθ - Y)/ℓ`. The L2 term is applied in [`sgd_step`].

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::coding::{ParityDataset, WeightSpec};
use crate::delay::{cdf_delay, sample_delay, NodeProfile};
use crate::error::{Error, Result};
use crate::rff::EmbeddedDataset;
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    /// `q × c` regression weights.
    pub theta: Array2<f64>,
    pub iteration: usize,
    /// Simulated seconds elapsed; never decreases.
    pub sim_clock: f64,
}

impl ModelState {
    pub fn zeros(q: usize, c: usize) -> Self {
        ModelState {
            theta: Array2::zeros((q, c)),
            iteration: 0,
            sim_clock: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub scheme: String,
    pub iteration: usize,
    pub sim_clock_s: f64,
    pub test_accuracy: f64,
}

/// One record per model update.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTrace {
    pub scheme: String,
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_accuracy)
    }

    /// Simulated time of the first update reaching `accuracy`.
    pub fn time_to_accuracy(&self, accuracy: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.test_accuracy >= accuracy)
            .map(|r| r.sim_clock_s)
    }
}

/// `Xᵀ(Xθ - Y)`.
fn residual_product(x: ArrayView2<f64>, y: ArrayView2<f64>, theta: ArrayView2<f64>) -> Array2<f64> {
    let residual = x.dot(&theta) - y;
    x.t().dot(&residual)
}

fn check_theta(q: usize, c: usize, theta: ArrayView2<f64>) -> Result<()> {
    if theta.dim() != (q, c) {
        return Err(Error::domain(format!(
            "model is {:?}, data needs ({q}, {c})",
            theta.dim()
        )));
    }
    Ok(())
}

/// `X̂ᵀ(X̂θ - Y)/ℓ` over a client's processed points.
pub fn local_gradient(data: &EmbeddedDataset, theta: ArrayView2<f64>) -> Result<Array2<f64>> {
    if data.is_empty() {
        return Err(Error::domain("gradient over an empty batch"));
    }
    check_theta(data.features.ncols(), data.labels.ncols(), theta)?;
    Ok(residual_product(data.features.view(), data.labels.view(), theta) / data.len() as f64)
}

/// Server gradient over the global parity, rescaled so that it is unbiased
/// over the server's own arrival.
pub fn coded_gradient(
    parity: &ParityDataset,
    theta: ArrayView2<f64>,
    u_star: usize,
    pnr_c: f64,
    arrived: bool,
) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&pnr_c) {
        return Err(Error::domain(format!(
            "server non-return probability {pnr_c} must lie in [0, 1)"
        )));
    }
    if u_star == 0 {
        return Err(Error::domain("coded gradient needs u* >= 1"));
    }
    check_theta(parity.features.ncols(), parity.labels.ncols(), theta)?;
    if !arrived {
        return Ok(Array2::zeros(theta.dim()));
    }
    let denom = (1.0 - pnr_c) * u_star as f64;
    Ok(residual_product(parity.features.view(), parity.labels.view(), theta) / denom)
}

/// What the server receives from one client in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMessage {
    pub client: usize,
    pub arrived: bool,
    /// Number of points the gradient averages over.
    pub load: f64,
    pub gradient: Array2<f64>,
}

/// `(g_C + Σ_arrived ℓⱼ gⱼ) / m`.
pub fn coded_federated_aggregate(
    uncoded: &[GradientMessage],
    coded: ArrayView2<f64>,
    m: f64,
) -> Array2<f64> {
    let mut total = coded.to_owned();
    for msg in uncoded.iter().filter(|msg| msg.arrived) {
        total.scaled_add(msg.load, &msg.gradient);
    }
    total / m
}

/// `θ ← θ - lr·(g + λθ)`.
pub fn sgd_step(mut state: ModelState, gradient: ArrayView2<f64>, lr: f64, lambda: f64) -> ModelState {
    state.theta *= 1.0 - lr * lambda;
    state.theta.scaled_add(-lr, &gradient);
    state.iteration += 1;
    state
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    Naive,
    /// Ignore the slowest `ψ` fraction of clients.
    Greedy { psi: f64 },
    /// Aggregate at the fixed deadline `t*`.
    Coded { t_star: f64 },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Naive => "naive",
            Scheme::Greedy { .. } => "greedy",
            Scheme::Coded { .. } => "coded",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Scheme::Greedy { psi } if !(psi > 0.0 && psi < 1.0) => {
                Err(Error::domain(format!("greedy drop fraction {psi} not in (0, 1)")))
            }
            Scheme::Coded { t_star } if !(t_star > 0.0 && t_star.is_finite()) => {
                Err(Error::domain(format!("deadline {t_star} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Number of clients greedy aggregation waits for.
pub fn greedy_quorum(n: usize, psi: f64) -> usize {
    // tolerance keeps (1-ψ)n = 9.000000000000002 at 9
    (((1.0 - psi) * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

struct Round {
    time: f64,
    arrived: Vec<bool>,
}

/// Draws one delay per client with positive load, in client order.
fn sample_round(
    scheme: &Scheme,
    profiles: &[NodeProfile],
    loads: &[f64],
    rng: &mut Stream,
) -> Result<Round> {
    if profiles.len() != loads.len() {
        return Err(Error::domain(format!(
            "{} profiles but {} loads",
            profiles.len(),
            loads.len()
        )));
    }
    let mut delays = Vec::with_capacity(profiles.len());
    for (profile, &load) in profiles.iter().zip(loads) {
        delays.push(if load > 0.0 {
            Some(sample_delay(profile, load, rng)?.total)
        } else {
            None
        });
    }
    Ok(match *scheme {
        Scheme::Naive => Round {
            time: delays.iter().flatten().copied().fold(0.0, f64::max),
            arrived: delays.iter().map(Option::is_some).collect(),
        },
        Scheme::Greedy { psi } => {
            let mut order: Vec<(usize, f64)> = delays
                .iter()
                .enumerate()
                .filter_map(|(i, d)| d.map(|d| (i, d)))
                .collect();
            order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let k = greedy_quorum(order.len(), psi).min(order.len());
            let mut arrived = vec![false; delays.len()];
            for &(i, _) in &order[..k] {
                arrived[i] = true;
            }
            Round {
                time: order[..k].last().map_or(0.0, |&(_, d)| d),
                arrived,
            }
        }
        Scheme::Coded { t_star } => Round {
            time: t_star,
            arrived: delays.iter().map(|d| d.is_some_and(|d| d <= t_star)).collect(),
        },
    })
}

/// Simulated duration of one round under `scheme`.
pub fn simulate_iteration_time(
    scheme: &Scheme,
    profiles: &[NodeProfile],
    loads: &[f64],
    rng: &mut Stream,
) -> Result<f64> {
    scheme.validate()?;
    Ok(sample_round(scheme, profiles, loads, rng)?.time)
}

/// Step-decayed learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    /// Epochs (0-based) at whose start the rate is multiplied by the factor.
    pub decay_epochs: Vec<usize>,
}

impl LrSchedule {
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSchedule {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub lambda: f64,
}

/// A client's local mini-batches, visited in order every epoch.
#[derive(Clone, Debug)]
pub struct ClientData {
    pub id: usize,
    pub profile: NodeProfile,
    pub batches: Vec<EmbeddedDataset>,
}

/// Client-side coding state: which points of each local mini-batch it
/// processes. Never handed to the server.
#[derive(Clone, Debug)]
pub struct ClientCoding {
    pub load: usize,
    /// One spec per local mini-batch.
    pub specs: Vec<WeightSpec>,
}

/// Deadline, redundancy and server model of the coded scheme.
#[derive(Clone, Debug)]
pub struct CodedPlan {
    pub t_star: f64,
    pub u_star: usize,
    pub server: NodeProfile,
    /// Time spent uploading parity before the first round.
    pub upload_overhead_s: f64,
    pub clients: Vec<ClientCoding>,
}

/// Everything the server holds during training.
#[derive(Clone, Debug)]
pub struct ServerStore {
    /// Global parity, one per global mini-batch.
    pub global_parity: Vec<ParityDataset>,
    pub model: ModelState,
    /// Messages of the latest round.
    pub gradient_messages: Vec<GradientMessage>,
}

impl ServerStore {
    pub fn new(model: ModelState, global_parity: Vec<ParityDataset>) -> Self {
        ServerStore {
            global_parity,
            model,
            gradient_messages: Vec::new(),
        }
    }
}

/// Fraction of rows whose largest score matches the one-hot label.
pub fn accuracy(data: &EmbeddedDataset, theta: ArrayView2<f64>) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let scores = data.features.dot(&theta);
    let correct = scores
        .outer_iter()
        .zip(data.labels.outer_iter())
        .filter(|(s, y)| argmax(s.iter()) == argmax(y.iter()))
        .count();
    correct as f64 / data.len() as f64
}

fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Runs the full schedule for one scheme and records test accuracy after
/// every update. The model in `server` is updated in place.
pub fn run_training(
    schedule: &TrainingSchedule,
    scheme: &Scheme,
    clients: &[ClientData],
    coding: Option<&CodedPlan>,
    server: &mut ServerStore,
    test: &EmbeddedDataset,
    rng: &mut Stream,
) -> Result<TrainingTrace> {
    scheme.validate()?;
    let setup = |msg: String| Error::Setup(msg);
    let batches = clients.first().map_or(0, |c| c.batches.len());
    if clients.iter().any(|c| c.batches.len() != batches) {
        return Err(setup("clients hold different numbers of local mini-batches".into()));
    }
    if batches == 0 && schedule.epochs > 0 {
        return Err(setup("no local mini-batches to train on".into()));
    }
    let profiles: Vec<NodeProfile> = clients.iter().map(|c| c.profile).collect();

    let coded = match scheme {
        Scheme::Coded { t_star } => {
            let plan = coding.ok_or_else(|| setup("coded scheme without a coding plan".into()))?;
            if plan.clients.len() != clients.len()
                || plan.clients.iter().any(|c| c.specs.len() != batches)
            {
                return Err(setup("coding plan does not match the client batches".into()));
            }
            if server.global_parity.len() != batches {
                return Err(setup(format!(
                    "{} global parity sets for {batches} global mini-batches",
                    server.global_parity.len()
                )));
            }
            if plan.t_star != *t_star {
                return Err(setup("scheme deadline differs from the coding plan".into()));
            }
            let pnr_server = if plan.u_star == 0 {
                0.0
            } else {
                1.0 - cdf_delay(&plan.server, plan.u_star as f64, plan.t_star)?
            };
            if pnr_server >= 1.0 {
                return Err(setup("server parity can never arrive by the deadline".into()));
            }
            let subsets: Vec<Vec<EmbeddedDataset>> = clients
                .iter()
                .zip(&plan.clients)
                .map(|(c, cc)| {
                    c.batches
                        .iter()
                        .zip(&cc.specs)
                        .map(|(b, spec)| b.select(&spec.processed_indices()))
                        .collect()
                })
                .collect();
            server.model.sim_clock += plan.upload_overhead_s;
            Some((plan, pnr_server, subsets))
        }
        _ => None,
    };

    let mut trace = TrainingTrace {
        scheme: scheme.name().to_string(),
        records: Vec::with_capacity(schedule.epochs * batches),
    };
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr.at_epoch(epoch);
        for b in 0..batches {
            let theta = server.model.theta.view();
            let m: f64 = clients.iter().map(|c| c.batches[b].len() as f64).sum();
            let (gradient, time, messages) = match &coded {
                None => {
                    let loads: Vec<f64> = clients.iter().map(|c| c.batches[b].len() as f64).collect();
                    let round = sample_round(scheme, &profiles, &loads, rng)?;
                    let mut messages = Vec::new();
                    for (client, &arrived) in clients.iter().zip(&round.arrived) {
                        if arrived {
                            messages.push(GradientMessage {
                                client: client.id,
                                arrived,
                                load: client.batches[b].len() as f64,
                                gradient: local_gradient(&client.batches[b], theta)?,
                            });
                        }
                    }
                    let received: f64 = messages.iter().map(|msg| msg.load).sum();
                    let zero = Array2::zeros(theta.dim());
                    (
                        coded_federated_aggregate(&messages, zero.view(), received.max(f64::MIN_POSITIVE)),
                        round.time,
                        messages,
                    )
                }
                Some((plan, pnr_server, subsets)) => {
                    let loads: Vec<f64> = plan.clients.iter().map(|c| c.load as f64).collect();
                    let round = sample_round(scheme, &profiles, &loads, rng)?;
                    let mut messages = Vec::new();
                    for ((client, &arrived), subset) in clients.iter().zip(&round.arrived).zip(subsets) {
                        if arrived {
                            messages.push(GradientMessage {
                                client: client.id,
                                arrived,
                                load: subset[b].len() as f64,
                                gradient: local_gradient(&subset[b], theta)?,
                            });
                        }
                    }
                    let server_arrived = if plan.server.is_guaranteed() || plan.u_star == 0 {
                        true
                    } else {
                        sample_delay(&plan.server, plan.u_star as f64, rng)?.total <= plan.t_star
                    };
                    let g_c = if plan.u_star == 0 {
                        Array2::zeros(theta.dim())
                    } else {
                        coded_gradient(
                            &server.global_parity[b],
                            theta,
                            plan.u_star,
                            *pnr_server,
                            server_arrived,
                        )?
                    };
                    (
                        coded_federated_aggregate(&messages, g_c.view(), m),
                        round.time,
                        messages,
                    )
                }
            };
            let model = std::mem::replace(&mut server.model, ModelState::zeros(0, 0));
            server.model = sgd_step(model, gradient.view(), lr, schedule.lambda);
            server.model.sim_clock += time;
            server.gradient_messages = messages;
            trace.records.push(TraceRecord {
                scheme: trace.scheme.clone(),
                iteration: server.model.iteration,
                sim_clock_s: server.model.sim_clock,
                test_accuracy: accuracy(test, server.model.theta.view()),
            });
        }
    }
    Ok(trace)
}

/// `⌈R²·max(2B/ε², L/ε)⌉`, an order-of-magnitude iteration count.
pub fn iteration_complexity_bound(r: f64, b: f64, l: f64, epsilon: f64) -> Result<u64> {
    if !([r, b, l, epsilon].iter().all(|v| *v > 0.0 && v.is_finite())) {
        return Err(Error::domain(format!(
            "bound needs positive inputs, got R={r}, B={b}, L={l}, eps={epsilon}"
        )));
    }
    let bound = r * r * (2.0 * b / (epsilon * epsilon)).max(l / epsilon);
    Ok(bound.ceil() as u64)
}

/// Largest singular value of `x`, by power iteration on `xᵀx`.
pub fn spectral_norm(x: ArrayView2<f64>) -> f64 {
    let n = x.ncols();
    if n == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let mut rng = Stream::new(0x5eed, 0);
    let mut v = Array1::from_shape_simple_fn(n, || rng.standard_normal());
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let w = x.t().dot(&x.dot(&v));
        let next = v.dot(&w);
        v = w;
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// Smoothness constant `Σⱼ σ_max(X̂ⱼ)² / m` of the global loss.
pub fn smoothness_bound(client_features: &[ArrayView2<f64>], m: f64) -> f64 {
    client_features
        .iter()
        .map(|x| spectral_norm(*x).powi(2))
        .sum::<f64>()
        / m
}

/// Stacks local mini-batch `b` of every client.
pub fn global_batch(clients: &[ClientData], b: usize) -> EmbeddedDataset {
    let features: Vec<ArrayView2<f64>> = clients.iter().map(|c| c.batches[b].features.view()).collect();
    let labels: Vec<ArrayView2<f64>> = clients.iter().map(|c| c.batches[b].labels.view()).collect();
    EmbeddedDataset {
        features: ndarray::concatenate(Axis(0), &features).expect("equal widths"),
        labels: ndarray::concatenate(Axis(0), &labels).expect("equal widths"),
    }
}
