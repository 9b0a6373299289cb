//! Argv shim over `munchlab::experiment`: parses flags, merges them onto the
//! JSON config, dispatches, and reports failures as one-line JSON on stderr
//! with the originating module's error code. Each subcommand prints the path
//! of its main artifact on stdout.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use munchlab::evalsuite::Pipeline;
use munchlab::experiment::{
    cmd_calibrate, cmd_eval, cmd_gen_data, cmd_report, cmd_run_munch, cmd_sweep, cmd_train,
    cmd_unlearn, ExperimentConfig, ExperimentError,
};
use munchlab::unlearner::UnlearnMethod;

/// Seed override honored everywhere, strongest setting first.
const SEED_ENV: &str = "MUNCHLAB_SEED";

#[derive(Parser)]
#[command(name = "munchlab", version, about = "Machine-unlearning laboratory runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ga,
    Dpo,
    Npo,
}

impl From<MethodArg> for UnlearnMethod {
    fn from(m: MethodArg) -> UnlearnMethod {
        match m {
            MethodArg::Ga => UnlearnMethod::Ga,
            MethodArg::Dpo => UnlearnMethod::Dpo,
            MethodArg::Npo => UnlearnMethod::Npo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Raw,
    Munch,
    Mello,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Pipeline {
        match p {
            PipelineArg::Raw => Pipeline::Raw,
            PipelineArg::Munch => Pipeline::Munch,
            PipelineArg::Mello => Pipeline::Mello,
        }
    }
}

/// Config-field overrides shared by every subcommand. Precedence:
/// MUNCHLAB_SEED env, then flags, then the config file, then defaults.
#[derive(Args)]
struct Overrides {
    /// Experiment config JSON; all fields optional, omitted file means
    /// defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pins every random stream of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Unlearning objective.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Keep the retain term in the unlearning objective.
    #[arg(long, overrides_with = "no_retain")]
    retain: bool,
    /// Drop the retain term (pure forget objective).
    #[arg(long, overrides_with = "retain")]
    no_retain: bool,
    /// Forget-loss weight in the combined objective.
    #[arg(long)]
    alpha: Option<f64>,
    /// Inverse temperature for the preference and ratio losses.
    #[arg(long)]
    beta: Option<f64>,
    /// Forget split fraction for dataset generation.
    #[arg(long)]
    forget_fraction: Option<f64>,
}

impl Overrides {
    fn into_config(self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.unlearn.method = m.into();
        }
        if self.retain {
            cfg.unlearn.with_retain = true;
        } else if self.no_retain {
            cfg.unlearn.with_retain = false;
        }
        if let Some(a) = self.alpha {
            cfg.unlearn.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.unlearn.beta = b;
        }
        if let Some(f) = self.forget_fraction {
            cfg.gen.forget_fraction = f;
        }
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(raw) => Some(raw.parse::<u64>().map_err(|_| {
                ExperimentError::Config(format!("{SEED_ENV}={raw} is not an integer"))
            })?),
            Err(_) => None,
        };
        if let Some(seed) = env_seed.or(self.seed) {
            cfg.apply_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset bundle.
    GenData {
        #[command(flatten)]
        overrides: Overrides,
        /// Output path (default: the configured dataset path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain the original model on the bundle's corpus.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint base path (default: <checkpoints>/original).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unlearn the forget split from the original checkpoint.
    Unlearn {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint base path (default: <checkpoints>/unlearned-<method>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate the rejection threshold on forget vs retain-validation
    /// multi-hop uncertainty scores.
    Calibrate {
        #[command(flatten)]
        overrides: Overrides,
        /// Calibration report path (default: <reports>/calibration.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the rejection pipeline over all evaluation multi-hop questions
    /// and write decision traces.
    RunMunch {
        #[command(flatten)]
        overrides: Overrides,
        /// Calibration artifact to read the threshold from.
        #[arg(long)]
        tau_file: Option<PathBuf>,
        /// Trace output path (default: <reports>/traces-munch.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the unlearned checkpoint and write the metrics report.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// How multi-hop questions reach the model.
        #[arg(long, value_enum, default_value = "raw")]
        pipeline: PipelineArg,
        /// Calibration artifact to read the threshold from.
        #[arg(long)]
        tau_file: Option<PathBuf>,
        /// Report base path; writes <base>.tsv and <base>.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the aggregate TSV from per-seed sweep reports.
    Report {
        #[command(flatten)]
        overrides: Overrides,
        /// Aggregate TSV path (default: <reports>/sweep/aggregate.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the forget-fraction x method matrix over all configured seeds and
    /// aggregate the reports.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Aggregate TSV path (default: <reports>/sweep/aggregate.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<PathBuf, ExperimentError> {
    match command {
        Command::GenData { overrides, out } => cmd_gen_data(&overrides.into_config()?, out.as_deref()),
        Command::Train { overrides, out } => cmd_train(&overrides.into_config()?, out.as_deref()),
        Command::Unlearn { overrides, out } => cmd_unlearn(&overrides.into_config()?, out.as_deref()),
        Command::Calibrate { overrides, out } => {
            cmd_calibrate(&overrides.into_config()?, out.as_deref())
        }
        Command::RunMunch { overrides, tau_file, out } => {
            cmd_run_munch(&overrides.into_config()?, tau_file.as_deref(), out.as_deref())
        }
        Command::Eval { overrides, pipeline, tau_file, out } => cmd_eval(
            &overrides.into_config()?,
            pipeline.into(),
            tau_file.as_deref(),
            out.as_deref(),
        ),
        Command::Report { overrides, out } => cmd_report(&overrides.into_config()?, out.as_deref()),
        Command::Sweep { overrides, out } => cmd_sweep(&overrides.into_config()?, out.as_deref()),
    }
}

fn print_error(code: &str, message: &str) {
    let line = serde_json::json!({ "code": code, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            print_error("cli.usage", &e.to_string());
            return ExitCode::from(2);
        }
        // Help and version requests render as normal output.
        Err(e) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            print_error(e.code(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
