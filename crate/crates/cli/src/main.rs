use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use codedfl::coding::EncodingDist;
use codedfl::harness::experiment::{load_data, plan_allocation, PROFILE_STREAM};
use codedfl::harness::{
    build_profiles, partition_noniid, run_experiment, write_metrics, ExperimentConfig, SchemeKind,
};
use codedfl::privacy::privacy_budget;
use codedfl::rff::{derive_params, embed_matrix, EmbeddedDataset};
use codedfl::rng::Stream;
use serde_json::json;

#[derive(Parser)]
#[command(name = "codedfl", version, about = "Coded federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the deadline and per-node loads; prints JSON.
    Allocate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output columns of the model (label classes).
        #[arg(long, default_value_t = 10)]
        classes: usize,
    },
    /// Run the configured schemes and write traces plus a manifest.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Embed a dataset split (or one client's shard) to the binary format.
    Embed {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        /// Embed only this client's non-IID shard of the training split.
        #[arg(long)]
        client: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Privacy budget of releasing `u` parity rows of an embedded dataset.
    Privacy {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        u: usize,
        #[arg(long, value_enum, default_value_t = Encoding::Rademacher)]
        encoding: Encoding,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Gaussian,
    Rademacher,
}

impl From<Encoding> for EncodingDist {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Gaussian => EncodingDist::Gaussian,
            Encoding::Rademacher => EncodingDist::Rademacher,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Naive,
    Greedy,
    Coded,
}

impl From<Scheme> for SchemeKind {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Naive => SchemeKind::Naive,
            Scheme::Greedy => SchemeKind::Greedy,
            Scheme::Coded => SchemeKind::Coded,
        }
    }
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Args)]
struct ConfigArgs {
    /// TOML config; defaults to the built-in desk-scale setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the full-scale 30-client setup instead of desk scale.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    n_clients: Option<usize>,
    #[arg(long)]
    rff_dim: Option<usize>,
    #[arg(long)]
    rff_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    global_batch: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    #[arg(long)]
    spread_span: Option<f64>,
    #[arg(long)]
    base_rate_bps: Option<f64>,
    #[arg(long)]
    base_mac_per_s: Option<f64>,
    #[arg(long)]
    link_failure_prob: Option<f64>,
    #[arg(long)]
    compute_ratio_alpha: Option<f64>,
    #[arg(long)]
    protocol_overhead_frac: Option<f64>,
    /// Rescales the learning-rate decay epochs proportionally.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    #[arg(long, value_enum)]
    encoding: Option<Encoding>,
}

macro_rules! override_fields {
    ($args:expr, $config:expr, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $config.$field = v; })*
    };
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.full_scale => ExperimentConfig::full_scale(),
            None => ExperimentConfig::default(),
        };
        override_fields!(
            self,
            config,
            dataset_dir,
            train_limit,
            test_limit,
            n_clients,
            rff_dim,
            rff_sigma,
            seed,
            global_batch,
            delta,
            psi,
            k1,
            k2,
            spread_span,
            base_rate_bps,
            base_mac_per_s,
            link_failure_prob,
            compute_ratio_alpha,
            protocol_overhead_frac,
            lr_initial,
            lr_decay_factor,
            l2_lambda
        );
        if let Some(epochs) = self.epochs {
            config = config.with_epochs(epochs);
        }
        if let Some(schemes) = &self.schemes {
            config.schemes = schemes.iter().map(|&s| s.into()).collect();
        }
        if let Some(encoding) = self.encoding {
            config.encoding = encoding.into();
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Allocate { config, classes } => {
            let config = config.resolve()?;
            let (profiles, result) = plan_allocation(&config, classes)?;
            let integer = result.integer_loads(&profiles, config.global_batch as f64);
            print_json(&json!({
                "t_star": result.t_star,
                "loads": result.loads,
                "expected_return": result.expected_return,
                "integer_loads": integer,
                "u_star": integer.last().copied().unwrap_or(0),
            }))
        }
        Command::Train { config, out } => {
            let config = config.resolve()?;
            let output = run_experiment(&config)?;
            for path in write_metrics(&output, &out)? {
                println!("{}", path.display());
            }
            for trace in &output.traces {
                eprintln!(
                    "{}: final accuracy {:.4} at {:.1} s",
                    trace.scheme,
                    trace.final_accuracy().unwrap_or(0.0),
                    trace.records.last().map_or(0.0, |r| r.sim_clock_s)
                );
            }
            Ok(())
        }
        Command::Embed {
            config,
            split,
            client,
            out,
        } => {
            let config = config.resolve()?;
            let (train, test) = load_data(&config)?;
            let params = derive_params(config.seed, train.features.ncols(), config.rff_dim, config.rff_sigma)?;
            let embedded: EmbeddedDataset = match (split, client) {
                (Split::Test, Some(_)) => bail!("--client applies to the training split only"),
                (Split::Test, None) => embed_matrix(&params, test.features.view(), test.labels.view())?,
                (Split::Train, None) => embed_matrix(&params, train.features.view(), train.labels.view())?,
                (Split::Train, Some(j)) => {
                    let mut rng = Stream::new(config.seed, PROFILE_STREAM);
                    let profiles = build_profiles(&config, train.labels.ncols(), &mut rng)?;
                    let shards = partition_noniid(&train, &profiles[..config.n_clients], config.local_batch())?;
                    let shard = shards
                        .get(j)
                        .with_context(|| format!("client {j} out of range (n = {})", config.n_clients))?;
                    embed_matrix(&params, shard.features.view(), shard.labels.view())?
                }
            };
            embedded.write_to(&out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Privacy { input, u, encoding } => {
            let data = EmbeddedDataset::read_from(&input)?;
            let report = privacy_budget(data.features.view(), u, encoding.into())?;
            print_json(&serde_json::to_value(report)?)
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
