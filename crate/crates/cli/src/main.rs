use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dfmerge::harness::{ObjectiveMethod, SweepAxis};
use dfmerge::toymodels::SplitKind;
use dfmerge_cli::commands::{self, Command};
use dfmerge_cli::config::{AcquisitionName, ExperimentConfig, SweepSection};
use dfmerge_cli::error::{exit_code, ConfigError, EXIT_OK};

#[derive(Debug, Parser)]
#[command(
    name = "dfmerge",
    version,
    about = "Merge fine-tuned toy classifiers with Fisher weighting and Bayesian-optimized coefficients"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Objective {
    Df,
    Gta,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Acq {
    Ei,
    Ucb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Iterations,
    #[value(name = "val_ratio")]
    ValRatio,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Generate the task data, pretrain the shared initialization, and fine-tune one model per task.
    Train,
    /// Merge the fine-tuned models with one method.
    Merge {
        /// One of averaging, ta, gta, fisher, df, ties, dare.
        #[arg(long)]
        method: Option<String>,
        /// Per-model coefficients for df and gta, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambdas: Option<Vec<f64>>,
        /// Shared coefficient for ta, ties and dare.
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
        #[arg(long)]
        keep_fraction: Option<f64>,
        #[arg(long)]
        drop_rate: Option<f64>,
        /// Allow coefficients outside [0, 1].
        #[arg(long)]
        unbounded: bool,
    },
    /// Search the merging coefficients with Bayesian optimization.
    Optimize {
        #[arg(long, value_enum)]
        method: Option<Objective>,
        #[arg(long, value_enum)]
        acquisition: Option<Acq>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Number of initial random points.
        #[arg(long)]
        init: Option<usize>,
    },
    /// Evaluate a checkpoint on every task.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "validation")]
        split: SplitArg,
        /// Fraction of the split to evaluate on.
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
    },
    /// Accuracy over the plane spanned by two task vectors, for GTA and DF merges.
    Landscape {
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Compare the full method against its ablations and simple averaging.
    Ablate,
    /// Best result as a function of the iteration budget or validation ratio.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<f64>>,
    },
    /// Rerun the command recorded in a manifest and compare artifact checksums.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn resolve(cli: &Cli) -> anyhow::Result<(Command, ExperimentConfig)> {
    let path = cli.config.as_ref().ok_or_else(|| ConfigError("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let command = match &cli.command {
        Sub::Train => Command::Train,
        Sub::Merge { method, lambdas, lambda, keep_fraction, drop_rate, unbounded } => {
            let m = &mut cfg.merge;
            m.method = method.clone().or(m.method.take());
            m.lambdas = lambdas.clone().or(m.lambdas.take());
            m.lambda = lambda.or(m.lambda);
            m.keep_fraction = keep_fraction.unwrap_or(m.keep_fraction);
            m.drop_rate = drop_rate.or(m.drop_rate);
            m.unbounded |= *unbounded;
            Command::Merge
        }
        Sub::Optimize { method, acquisition, kappa, iterations, init } => {
            let b = &mut cfg.bo;
            if let Some(m) = method {
                b.objective = match m {
                    Objective::Df => ObjectiveMethod::Df,
                    Objective::Gta => ObjectiveMethod::Gta,
                };
            }
            if let Some(a) = acquisition {
                b.acquisition = match a {
                    Acq::Ei => AcquisitionName::Ei,
                    Acq::Ucb => AcquisitionName::Ucb,
                };
            }
            b.kappa = kappa.unwrap_or(b.kappa);
            b.iterations = iterations.unwrap_or(b.iterations);
            b.init_points = init.unwrap_or(b.init_points);
            Command::Optimize
        }
        Sub::Eval { checkpoint, split, ratio } => {
            let split = match split {
                SplitArg::Train => SplitKind::Train,
                SplitArg::Validation => SplitKind::Validation,
                SplitArg::Test => SplitKind::Test,
            };
            Command::Eval { checkpoint: checkpoint.clone(), split, ratio: *ratio }
        }
        Sub::Landscape { resolution } => {
            cfg.landscape.resolution = resolution.unwrap_or(cfg.landscape.resolution);
            Command::Landscape
        }
        Sub::Ablate => Command::Ablate,
        Sub::Sweep { axis, values } => {
            let axis = axis.map(|a| match a {
                AxisArg::Iterations => SweepAxis::Iterations,
                AxisArg::ValRatio => SweepAxis::ValRatio,
            });
            match (axis, values.clone(), cfg.sweep.take()) {
                (Some(axis), Some(values), _) => cfg.sweep = Some(SweepSection { axis, values }),
                (axis, values, Some(s)) => {
                    cfg.sweep = Some(SweepSection { axis: axis.unwrap_or(s.axis), values: values.unwrap_or(s.values) })
                }
                (None, _, None) | (_, None, None) => {
                    return Err(ConfigError("sweep needs --axis and --values, or a [sweep] section".into()).into())
                }
            }
            Command::Sweep
        }
        Sub::Rerun { .. } => unreachable!("handled before resolving"),
    };
    cfg.validate()?;
    Ok((command, cfg))
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let manifest = if let Sub::Rerun { manifest } = &cli.command {
        let m = commands::rerun(manifest, cli.output_dir.clone())?;
        println!("rerun reproduced {} artifacts", m.artifacts.len());
        m
    } else {
        let (command, cfg) = resolve(cli)?;
        commands::run(&command, &cfg)?
    };
    let out = &manifest.config.output_dir;
    println!("wrote {}", manifest.path_in(out).display());
    for rel in manifest.artifacts.keys() {
        println!("  {}", out.join(rel).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
