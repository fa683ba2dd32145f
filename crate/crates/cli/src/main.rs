use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use origin_audit_cli::commands::{self, load_config, Overrides};
use origin_audit_cli::manifest::OUTPUT_ROOT_ENV;

#[derive(Parser)]
#[command(name = "origin-audit", version, about = "Data-origin membership inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic origin-structured dataset and its splits.
    Synth(Common),
    /// Train the target model on a dataset.
    TrainTarget {
        #[command(flatten)]
        common: Common,
        /// Continue training from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train shadow and meta models on proxy data and score every aux origin.
    Infer(Common),
    /// Build the evaluation report of an infer or sweep run.
    Evaluate(Common),
    /// Grid sweep over layer, bag size, featurization and shadow epochs.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; a fresh run directory is created inside it.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Target model checkpoint.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    proxy: Option<PathBuf>,
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Ground-truth table (origin,member).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Run manifest to evaluate.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl Common {
    fn overrides(&self, resume: Option<PathBuf>) -> Overrides {
        Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            workers: self.workers,
            dataset: self.dataset.clone(),
            target: self.target.clone(),
            proxy: self.proxy.clone(),
            aux: self.aux.clone(),
            truth: self.truth.clone(),
            manifest: self.manifest.clone(),
            resume,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, ov) = match &cli.command {
        Command::TrainTarget { common, resume } => (common, common.overrides(resume.clone())),
        Command::Synth(c) | Command::Infer(c) | Command::Evaluate(c) | Command::Sweep(c) => {
            (c, c.overrides(None))
        }
    };
    let result = load_config(&common.config, &ov).and_then(|cfg| {
        let out = ov.out_dir.as_deref();
        match &cli.command {
            Command::Synth(_) => commands::cmd_synth(&cfg, out),
            Command::TrainTarget { .. } => commands::cmd_train_target(&cfg, ov.resume.as_deref(), out),
            Command::Infer(_) => commands::cmd_infer(&cfg, out),
            Command::Evaluate(_) => commands::cmd_evaluate(&cfg, out),
            Command::Sweep(_) => commands::cmd_sweep(&cfg, out),
        }
    });
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
