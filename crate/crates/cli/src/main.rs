use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use framebench_cli::commands::{self, Overrides};
use framebench_cli::UsageError;

#[derive(Parser)]
#[command(name = "framebench", version, about = "Sepsis prediction framing experiments on event data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Framing name; repeat for several
    #[arg(long = "framing", global = true)]
    framings: Vec<String>,
    #[arg(long, global = true)]
    prediction_window_h: Option<f64>,
    #[arg(long, global = true)]
    chunk_h: Option<f64>,
    #[arg(long, global = true)]
    horizon_h: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as event CSV
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sepsis onset per admission
    Label {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Samples of one framing
    Frame {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature dataset from a cohort and samples (or one framing)
    Featurize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a boosted-tree model on a dataset
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on a dataset, or cross-validate the dataset
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SHAP values and importance for a model on a dataset
    Explain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full experiment: report JSON, tables and plots
    Report {
        /// Event CSV; a cohort is synthesized from the config when absent
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Redraw plots from a report directory
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), UsageError> {
    let Ok(v) = std::env::var("FRAMEBENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| UsageError(format!("FRAMEBENCH_THREADS must be a number, got {v:?}")))?;
    // 0 means serial
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| UsageError(e.to_string()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.common;
    let o = Overrides {
        config: common.config,
        seed: common.seed,
        framings: common.framings,
        prediction_window_h: common.prediction_window_h,
        chunk_h: common.chunk_h,
        horizon_h: common.horizon_h,
    };
    match cli.command {
        Command::Synth { out } => commands::synth(&o, &out),
        Command::Label { input, out } => {
            o.resolve()?;
            commands::label(&input, &out)
        }
        Command::Frame { input, out } => commands::frame(&o, &input, &out),
        Command::Featurize { input, samples, out } => commands::featurize(&o, &input, samples.as_deref(), &out),
        Command::Train { input, out } => commands::train_cmd(&o, &input, &out),
        Command::Evaluate { input, model, out } => commands::evaluate(&o, &input, model.as_deref(), &out),
        Command::Explain { input, model, out } => commands::explain(&o, &input, &model, &out),
        Command::Report { input, out } => commands::report(&o, input.as_deref(), &out),
        Command::Plot { input, out } => commands::plot(&o, &input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
