use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedsim::data::{make_synthetic, save_dataset, SyntheticSpec};
use fedsim::federation::Strategy;
use fedsim::harness::emit::{emit_results, emit_table, TableRow};
use fedsim::harness::experiment::{client_splits, load_source, model_specs, pretrain, run_experiment_with};
use fedsim::harness::{run_ablation, run_sweep, DataSource, ExperimentConfig, SweepAxis, SweepSpec};
use fedsim::Model64;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    GenData(GenDataArgs),
    /// Train the statistics model on the held-out pool and save it.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment, or one per `--strategy` with a combined table.
    Run(RunArgs),
    /// Vary one hyper-parameter with everything else fixed.
    Sweep {
        #[command(flatten)]
        common: Overrides,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Total local epochs for an `epochs` sweep; rounds = budget / E.
        #[arg(long)]
        epoch_budget: Option<usize>,
    },
    /// Run the weighting-off and shared-BN ablations next to the full method.
    Ablate {
        #[command(flatten)]
        common: Overrides,
    },
}

#[derive(Args)]
struct GenDataArgs {
    /// Read the dataset settings from the `[data]` table of an experiment config.
    #[arg(long, conflicts_with_all = ["classes", "channels", "width", "samples_per_class", "separation", "noise"])]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 100)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

/// Flags that override config keys.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Train clients one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// Strategy tag; repeat to compare several on the same data.
    #[arg(long)]
    strategy: Vec<String>,
    #[arg(long)]
    prox_mu: Option<f64>,
    #[arg(long)]
    cut: Option<usize>,
    #[arg(long)]
    warm_up_rounds: Option<usize>,
    /// Checkpoint from `pretrain`, used instead of pretraining again.
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Epochs,
    Clients,
    Lambda,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

impl Overrides {
    fn apply(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.seed = Some(self.seed);
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.clients {
            cfg.clients = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.max_rounds {
            cfg.max_rounds = v;
        }
        if let Some(v) = self.epochs {
            cfg.training.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.training.lr = v;
        }
        if let Some(v) = self.momentum {
            cfg.training.momentum = v;
        }
        if let Some(v) = self.batch_size {
            cfg.training.batch_size = v;
        }
        if let Some(lambda) = self.lambda {
            cfg.strategy = with_lambda(cfg.strategy, lambda)?;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        Ok(cfg)
    }
}

fn with_lambda(s: Strategy, lambda: f64) -> CliResult<Strategy> {
    Ok(match s {
        Strategy::WeightedBn { .. } => Strategy::WeightedBn { lambda },
        Strategy::WeightedFeature { .. } => Strategy::WeightedFeature { lambda },
        Strategy::WeightedRunning { warm_up_rounds, .. } => Strategy::WeightedRunning { lambda, warm_up_rounds },
        other => return Err(format!("--lambda does not apply to `{}`", other.tag()).into()),
    })
}

/// Builds a strategy from its tag, taking knobs from flags first and then
/// from the config's own strategy.
fn strategy_from_flags(tag: &str, args: &RunArgs, base: &Strategy) -> CliResult<Strategy> {
    let lambda = || {
        args.common
            .lambda
            .or(base.lambda())
            .ok_or_else(|| format!("strategy `{tag}` needs --lambda"))
    };
    let warm = args.warm_up_rounds.unwrap_or(match base {
        Strategy::WeightedRunning { warm_up_rounds, .. } => *warm_up_rounds,
        _ => fedsim::federation::DEFAULT_WARM_UP_ROUNDS,
    });
    Ok(match tag {
        "base" => Strategy::Base {},
        "fedavg" => Strategy::FedAvg {},
        "fedbn" => Strategy::FedBn {},
        "fedprox" => Strategy::FedProx {
            mu: args.prox_mu.unwrap_or(match base {
                Strategy::FedProx { mu } => *mu,
                _ => fedsim::federation::DEFAULT_PROX_MU,
            }),
        },
        "fedper" => Strategy::FedPer {
            cut: args.cut.or(match base {
                Strategy::FedPer { cut } => *cut,
                _ => None,
            }),
        },
        "weighted_bn" => Strategy::WeightedBn { lambda: lambda()? },
        "weighted_feature" => Strategy::WeightedFeature { lambda: lambda()? },
        "weighted_running" => Strategy::WeightedRunning {
            lambda: lambda()?,
            warm_up_rounds: warm,
        },
        other => return Err(format!("unknown strategy `{other}`").into()),
    })
}

fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let spec = match &args.config {
        Some(path) => match ExperimentConfig::load(path)?.data {
            DataSource::Synthetic(spec) => spec,
            DataSource::File { .. } => return Err("config's data source is a file, not synthetic".into()),
        },
        None => SyntheticSpec {
            num_classes: args.classes,
            channels: args.channels,
            width: args.width,
            samples_per_class: args.samples_per_class,
            separation: args.separation,
            noise: args.noise,
            feature_shift: None,
        },
    };
    let data = make_synthetic::<f64>(&spec, args.seed)?;
    save_dataset(&data, &args.out)?;
    println!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(())
}

fn pretrain_cmd(config: &PathBuf, seed: u64, out: &PathBuf) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.seed = Some(seed);
    cfg.validate()?;
    let data = load_source::<f64>(&cfg.data, seed)?;
    let (_, pool) = client_splits(&cfg, &data)?;
    let pool = pool.ok_or("pretrain_fraction is 0: no pool to train on")?;
    let model = pretrain(&cfg, &pool, &model_specs(&cfg, &data))?;
    model.save_checkpoint(out)?;
    println!("pretrained on {} samples, saved to {}", pool.len(), out.display());
    Ok(())
}

fn run_cmd(args: &RunArgs) -> CliResult<()> {
    let base = args.common.apply()?;
    let pretrained = match &args.pretrained {
        Some(p) => Some(Model64::load_checkpoint(p)?),
        None => None,
    };
    let tags: Vec<String> = if args.strategy.is_empty() {
        vec![base.strategy.tag().to_string()]
    } else {
        args.strategy.clone()
    };
    let mut rows = Vec::new();
    for tag in &tags {
        let mut cfg = base.clone();
        cfg.strategy = strategy_from_flags(tag, args, &base.strategy)?;
        if tags.len() > 1 {
            cfg.output_dir = base.output_dir.join(cfg.run_label());
        }
        let res = run_experiment_with(&cfg, pretrained.clone())?;
        emit_results(&cfg.output_dir, &res)?;
        if let Some(f) = res.final_record() {
            println!("{:<24} avg accuracy {:.4}", cfg.run_label(), f.avg_accuracy);
            rows.push(TableRow::from_record(cfg.run_label(), f));
        }
    }
    if tags.len() > 1 {
        emit_table(&base.output_dir, &rows)?;
    }
    Ok(())
}

fn sweep_cmd(common: &Overrides, axis: Axis, values: &[String], epoch_budget: Option<usize>) -> CliResult<()> {
    let parse_usize = || -> CliResult<Vec<usize>> { Ok(values.iter().map(|v| v.parse()).collect::<Result<_, _>>()?) };
    let axis = match axis {
        Axis::Epochs => SweepAxis::LocalEpochs {
            values: parse_usize()?,
            epoch_budget,
        },
        Axis::Clients => SweepAxis::Clients(parse_usize()?),
        Axis::Lambda => SweepAxis::Lambda(values.iter().map(|v| v.parse()).collect::<Result<_, _>>()?),
    };
    let spec = SweepSpec {
        base: common.apply()?,
        axis,
    };
    let mut failed = 0;
    for run in run_sweep(&spec)? {
        match &run.result {
            Ok(r) => println!(
                "{} = {:<8} avg accuracy {:.4}",
                spec.axis.name(),
                run.value,
                r.final_record().map_or(f64::NAN, |f| f.avg_accuracy)
            ),
            Err(e) => {
                failed += 1;
                eprintln!("{} = {}: {e}", spec.axis.name(), run.value);
            }
        }
    }
    if failed > 0 {
        return Err(format!("{failed} sweep run(s) failed").into());
    }
    Ok(())
}

fn ablate_cmd(common: &Overrides) -> CliResult<()> {
    for (name, res) in run_ablation(&common.apply()?)? {
        let acc = res.final_record().map_or(f64::NAN, |f| f.avg_accuracy);
        println!("{name:<16} avg accuracy {acc:.4}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain { config, seed, out } => pretrain_cmd(config, *seed, out),
        Command::Run(a) => run_cmd(a),
        Command::Sweep {
            common,
            axis,
            values,
            epoch_budget,
        } => sweep_cmd(common, *axis, values, *epoch_budget),
        Command::Ablate { common } => ablate_cmd(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
