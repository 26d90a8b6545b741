//! End-to-end experiment: ingest, partition, embed, allocate, encode, train.
//!
//! All randomness derives from `config.seed` through fixed stream ids:
//!
//! | stream            | use                                   |
//! |-------------------|---------------------------------------|
//! | 0                 | embedding parameters                  |
//! | 1                 | rate and compute permutations         |
//! | `0x100 + j`       | processed-point masks of client `j`   |
//! | `0x200 + j`       | encoding matrices of client `j`       |
//! | `0x300 + scheme`  | round delays (naive 0, greedy 1, coded 2) |

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::allocation::{solve_allocation, AllocationResult};
use crate::coding::{
    aggregate_global, build_weight_spec, encode_local, generate_encoding_matrix, ParityDataset,
};
use crate::delay::NodeProfile;
use crate::error::{Error, Result, StageExt};
use crate::harness::config::{ExperimentConfig, SchemeKind};
use crate::harness::idx::{self, RawDataset};
use crate::harness::partition::partition_noniid;
use crate::harness::profiles::build_profiles;
use crate::privacy::{privacy_budget, PrivacyReport};
use crate::rff::{derive_params, embed_matrix, EmbeddedDataset};
use crate::rng::Stream;
use crate::trainer::{
    run_training, ClientCoding, ClientData, CodedPlan, LrSchedule, ModelState, Scheme, ServerStore,
    TrainingSchedule, TrainingTrace,
};

pub const PROFILE_STREAM: u64 = 1;
pub const MASK_STREAM_BASE: u64 = 0x100;
pub const ENCODING_STREAM_BASE: u64 = 0x200;
pub const DELAY_STREAM_BASE: u64 = 0x300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationSummary {
    pub t_star: f64,
    /// Real-valued optimal loads of the clients, then the server.
    pub loads: Vec<f64>,
    /// Loads used in training, same order.
    pub integer_loads: Vec<usize>,
    pub u_star: usize,
    pub expected_return: f64,
    pub upload_overhead_s: f64,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    /// Client profiles followed by the server profile.
    pub profiles: Vec<NodeProfile>,
    pub allocation: Option<AllocationSummary>,
    /// One report per client, for the parity it releases.
    pub privacy: Vec<PrivacyReport>,
    pub traces: Vec<TrainingTrace>,
    /// Server state after the coded run.
    pub coded_server: Option<ServerStore>,
}

fn scheme_index(kind: SchemeKind) -> u64 {
    match kind {
        SchemeKind::Naive => 0,
        SchemeKind::Greedy => 1,
        SchemeKind::Coded => 2,
    }
}

/// Pads one-hot labels with empty classes up to `classes` columns.
fn pad_classes(labels: &Array2<f64>, classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.nrows(), classes));
    out.slice_mut(s![.., ..labels.ncols()]).assign(labels);
    out
}

pub fn load_data(config: &ExperimentConfig) -> Result<(RawDataset, RawDataset)> {
    let limit = |l: usize| (l > 0).then_some(l);
    let dir = &config.dataset_dir;
    let mut train = idx::load_idx_limited(
        &idx::resolve(dir, idx::TRAIN_IMAGES),
        &idx::resolve(dir, idx::TRAIN_LABELS),
        limit(config.train_limit),
    )?;
    let mut test = idx::load_idx_limited(
        &idx::resolve(dir, idx::TEST_IMAGES),
        &idx::resolve(dir, idx::TEST_LABELS),
        limit(config.test_limit),
    )?;
    if train.features.ncols() != test.features.ncols() {
        return Err(Error::Setup(format!(
            "train images have {} pixels, test images {}",
            train.features.ncols(),
            test.features.ncols()
        )));
    }
    let classes = train.labels.ncols().max(test.labels.ncols());
    train.labels = pad_classes(&train.labels, classes);
    test.labels = pad_classes(&test.labels, classes);
    Ok((train, test))
}

/// Profiles for `classes` output columns and the allocation over them.
pub fn plan_allocation(
    config: &ExperimentConfig,
    classes: usize,
) -> Result<(Vec<NodeProfile>, AllocationResult)> {
    config.validate()?;
    let profiles = build_profiles(config, classes, &mut Stream::new(config.seed, PROFILE_STREAM))
        .stage("profiles")?;
    let result = solve_allocation(&profiles, config.global_batch as f64).stage("allocate")?;
    Ok((profiles, result))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let (train, test) = load_data(config).stage("ingest")?;
    run_experiment_on(config, &train, &test)
}

/// Runs the pipeline on already loaded data.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    train: &RawDataset,
    test: &RawDataset,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let n = config.n_clients;
    let m = config.global_batch;
    let local_batch = config.local_batch();
    let classes = train.labels.ncols();
    let shard_size = train.len() / n;
    if !train.len().is_multiple_of(n) || !shard_size.is_multiple_of(local_batch) || shard_size == 0 {
        return Err(Error::Setup(format!(
            "{} training rows do not split into {n} shards of whole {local_batch}-point mini-batches",
            train.len()
        )))
        .stage("partition");
    }
    let batches = shard_size / local_batch;

    let profiles = build_profiles(config, classes, &mut Stream::new(config.seed, PROFILE_STREAM))
        .stage("profiles")?;
    let (client_profiles, server_profile) = profiles.split_at(n);
    let server_profile = server_profile[0];
    let shards = partition_noniid(train, client_profiles, local_batch).stage("partition")?;

    let params = derive_params(config.seed, train.features.ncols(), config.rff_dim, config.rff_sigma)
        .stage("embed")?;
    let test_embedded = embed_matrix(&params, test.features.view(), test.labels.view()).stage("embed")?;
    let mut clients = Vec::with_capacity(n);
    let mut client_full = Vec::with_capacity(n);
    for shard in &shards {
        let embedded =
            embed_matrix(&params, shard.features.view(), shard.labels.view()).stage("embed")?;
        let batches: Vec<EmbeddedDataset> = (0..batches)
            .map(|b| {
                let rows = s![b * local_batch..(b + 1) * local_batch, ..];
                EmbeddedDataset {
                    features: embedded.features.slice(rows).to_owned(),
                    labels: embedded.labels.slice(rows).to_owned(),
                }
            })
            .collect();
        clients.push(ClientData {
            id: shard.client,
            profile: shard.profile,
            batches,
        });
        client_full.push(embedded);
    }

    let schedule = TrainingSchedule {
        epochs: config.epochs,
        lr: LrSchedule {
            initial: config.lr_initial,
            decay_factor: config.lr_decay_factor,
            decay_epochs: config.lr_decay_epochs.clone(),
        },
        lambda: config.l2_lambda,
    };

    let mut allocation = None;
    let mut privacy = Vec::new();
    let mut coded_setup = None;
    if config.schemes.contains(&SchemeKind::Coded) {
        let result = solve_allocation(&profiles, m as f64).stage("allocate")?;
        let integer_loads = result.integer_loads(&profiles, m as f64);
        let u_star = integer_loads[n];

        let mut codings = Vec::with_capacity(n);
        let mut parities: Vec<Vec<ParityDataset>> = vec![Vec::with_capacity(n); batches];
        for (j, client) in clients.iter().enumerate() {
            let mut masks = Stream::new(config.seed, MASK_STREAM_BASE + j as u64);
            let mut encoder = Stream::new(config.seed, ENCODING_STREAM_BASE + j as u64);
            let mut specs = Vec::with_capacity(batches);
            for (b, batch) in client.batches.iter().enumerate() {
                let spec = build_weight_spec(&client.profile, integer_loads[j], result.t_star, &mut masks)
                    .stage("encode")?;
                let g = generate_encoding_matrix(u_star, batch.len(), &mut encoder, config.encoding);
                parities[b].push(encode_local(batch, &spec, g.view()).stage("encode")?);
                specs.push(spec);
            }
            codings.push(ClientCoding {
                load: integer_loads[j],
                specs,
            });
        }
        let global_parity = parities
            .iter()
            .map(|ps| {
                let ids: Vec<(usize, &ParityDataset)> =
                    clients.iter().map(|c| c.id).zip(ps.iter()).collect();
                aggregate_global(&ids)
            })
            .collect::<Result<Vec<_>>>()
            .stage("encode")?;

        let payload = (config.rff_dim * classes) as f64;
        let upload_overhead_s = client_profiles
            .iter()
            .map(|p| p.tau * (u_star * (config.rff_dim + classes)) as f64 / payload / (1.0 - p.p))
            .fold(0.0, f64::max)
            * batches as f64;

        for full in &client_full {
            privacy.push(privacy_budget(full.features.view(), u_star.max(1), config.encoding).stage("privacy")?);
        }
        allocation = Some(AllocationSummary {
            t_star: result.t_star,
            loads: result.loads.clone(),
            integer_loads: integer_loads.clone(),
            u_star,
            expected_return: result.expected_return,
            upload_overhead_s,
        });
        coded_setup = Some((
            CodedPlan {
                t_star: result.t_star,
                u_star,
                server: server_profile,
                upload_overhead_s,
                clients: codings,
            },
            global_parity,
        ));
    }

    let q = config.rff_dim;
    let mut traces = Vec::new();
    let mut coded_server = None;
    for &kind in &config.schemes {
        let mut rng = Stream::new(config.seed, DELAY_STREAM_BASE + scheme_index(kind));
        let trace = match kind {
            SchemeKind::Naive | SchemeKind::Greedy => {
                let scheme = if kind == SchemeKind::Naive {
                    Scheme::Naive
                } else {
                    Scheme::Greedy { psi: config.psi }
                };
                let mut server = ServerStore::new(ModelState::zeros(q, classes), Vec::new());
                run_training(&schedule, &scheme, &clients, None, &mut server, &test_embedded, &mut rng)
            }
            SchemeKind::Coded => {
                let (plan, parity) = coded_setup.as_ref().expect("coded setup built above");
                let mut server = ServerStore::new(ModelState::zeros(q, classes), parity.clone());
                let trace = run_training(
                    &schedule,
                    &Scheme::Coded { t_star: plan.t_star },
                    &clients,
                    Some(plan),
                    &mut server,
                    &test_embedded,
                    &mut rng,
                );
                coded_server = Some(server);
                trace
            }
        }
        .stage("train")?;
        traces.push(trace);
    }

    Ok(ExperimentOutput {
        config: config.clone(),
        profiles,
        allocation,
        privacy,
        traces,
        coded_server,
    })
}
