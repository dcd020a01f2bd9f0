use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ismra::harness::{Dumps, run_fit, run_metrics, run_oracle_predict, run_simulate, HarnessError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ismra", version, about = "Spatiotemporal Gaussian-process inference with the multi-resolution approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long = "predict-at")]
    predict_at: Option<PathBuf>,
    /// CSV holding the true responses of the prediction rows.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model and, with --predict-at, predict.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Also write the region tree summary.
        #[arg(long = "dump-tree")]
        dump_tree: bool,
        /// Also write the sparsity pattern of the full conditional precision.
        #[arg(long = "dump-q-pattern")]
        dump_q_pattern: bool,
    },
    /// Simulate training and held-out files from the configured truth.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Dense kriging at the configured true hyperparameters.
    OraclePredict {
        #[command(flatten)]
        common: Common,
    },
    /// Score a prediction file against --truth.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides = [
        (&common.train, &mut cfg.train),
        (&common.predict_at, &mut cfg.predict_at),
        (&common.truth, &mut cfg.truth),
        (&common.out_dir, &mut cfg.out_dir),
    ];
    for (flag, slot) in overrides {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(HarnessError::Config("--threads must be at least 1".into()));
        }
        cfg.threads = Some(t);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Fit {
            common,
            dump_tree,
            dump_q_pattern,
        } => {
            let cfg = resolve(&common)?;
            let out = run_fit(
                &cfg,
                Dumps {
                    tree: dump_tree,
                    q_pattern: dump_q_pattern,
                },
            )?;
            eprintln!("results written to {}", out.display());
        }
        Command::Simulate { common } => {
            let out = run_simulate(&resolve(&common)?)?;
            eprintln!("datasets written to {}", out.display());
        }
        Command::OraclePredict { common } => {
            let out = run_oracle_predict(&resolve(&common)?)?;
            eprintln!("results written to {}", out.display());
        }
        Command::Metrics { common, predictions } => {
            let m = run_metrics(&resolve(&common)?, &predictions)?;
            println!("n,mspe,medspe,coverage\n{},{},{},{}", m.n, m.mspe, m.medspe, m.coverage);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
