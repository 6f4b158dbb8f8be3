use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msk_cli::commands::{self, Context};
use msk_cli::config::{split_kind_name, ExperimentConfig, Method};
use msk_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "msk-pinn", version, about = "Physics-informed EMG-to-force/angle experiments")]
struct Cli {
    /// INI configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root [default: config `output`, then $MSK_PINN_OUT, then ./out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `[experiment] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps and ablations.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and save the dataset, auditing each trial.
    Generate,
    /// Train one network on the training split.
    Train {
        /// pinn, mse or deeper.
        #[arg(long, default_value = "pinn")]
        method: String,
        /// Dataset directory [default: <out>/dataset, generated if absent].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a trained checkpoint on its held-out split.
    Eval {
        /// Directory written by `train` [default: <out>/train].
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Every method at every training fraction and seed.
    SweepDatasize {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Paired runs with and without the physics term.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os("MSK_PINN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = Context { cfg, out };
    match cli.command {
        Command::Generate => {
            let rows = commands::generate(&ctx)?;
            let mut bad = 0;
            for r in &rows {
                println!(
                    "trial {:3}  speed {:.2}  max|rho| {:.3e}  max|tau| {:.3e}  {}",
                    r.trial,
                    r.speed,
                    r.max_residual,
                    r.max_torque,
                    if r.passes { "ok" } else { "FAIL" }
                );
                bad += usize::from(!r.passes);
            }
            println!("wrote {} trials to {}", rows.len(), ctx.dataset_dir().display());
            if bad > 0 {
                return Err(CliError::RunFailures(bad));
            }
        }
        Command::Train { method, data } => {
            let m = Method::parse(&method).ok_or_else(|| CliError::Usage(format!("unknown method `{method}`")))?;
            let r = commands::train(&ctx, m, data.as_deref())?;
            let last = r.history.last().map_or(f64::NAN, |h| h.total);
            println!("trained {} for {} iterations; final loss {last:.4}", m.name(), r.history.len());
            println!("{}", r.report);
            println!("wrote {}", ctx.out.join("train").display());
        }
        Command::Eval { train_dir, data } => {
            let report = commands::eval(&ctx, train_dir.as_deref(), data.as_deref())?;
            println!("{report}");
            println!("wrote {}", ctx.out.join("eval").display());
        }
        Command::SweepDatasize { data } => {
            let o = commands::sweep_datasize(&ctx, data.as_deref())?;
            for t in &o.trends {
                println!(
                    "{:<7} spearman(fraction, nRMSE) = {:>7.3}  {}",
                    t.method.name(),
                    t.spearman.unwrap_or(f64::NAN),
                    if t.passes() { "ok" } else { "not decreasing" }
                );
            }
            println!("wrote {}", ctx.out.join("sweep").display());
            if o.failures() > 0 {
                return Err(CliError::RunFailures(o.failures()));
            }
        }
        Command::Ablate { data } => {
            let rows = commands::ablate(&ctx, data.as_deref())?;
            for r in &rows {
                println!(
                    "{:<12} seed {:3}  physics {:.4}  mse {:.4}  delta {:+.4}",
                    split_kind_name(r.split),
                    r.seed,
                    r.physics.mean_nrmse(),
                    r.mse.mean_nrmse(),
                    r.delta()
                );
            }
            println!("wrote {}", ctx.out.join("ablate").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
