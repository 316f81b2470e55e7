//! Command-line pipeline and HTTP chat service.

pub mod commands;
pub mod error;
pub mod repl;
pub mod server;
pub mod settings;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::CliError;
pub use settings::{RuntimeConfig, Settings};

#[derive(Debug, Parser)]
#[command(name = "cwgan", version, about = "Train, evaluate and serve the adversarial dialogue model")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set batch_size=32`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for every random choice in the stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusFormat {
    Cornell,
    Chitchat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw corpus into train/test pair files.
    PrepareData {
        #[arg(long, value_enum)]
        format: CorpusFormat,
        /// Cornell lines file, or the Chit-Chat JSON file.
        #[arg(long)]
        input: PathBuf,
        /// Cornell conversations file.
        #[arg(long)]
        conversations: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build the vocabulary from a training pair file.
    BuildVocab {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// MLE pretraining of the generator.
    Pretrain {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out pairs scored every `eval_every` epochs.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Loss history CSV; defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Adversarial fine-tuning, or one of the training-schedule ablations.
    TrainAdv {
        #[arg(long)]
        train: PathBuf,
        /// Pretrained checkpoint to start from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Needed when starting without a checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// pretrain-only, adversarial-only or combined; starts from fresh weights.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        allow_cold_start: bool,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint on held-out pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Metric JSON; a per-sentence CSV is written next to it.
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        corpus: String,
    },
    /// Interactive chat on stdin/stdout.
    Chat {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL transcript, appended to.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value = "repl")]
        session: String,
    },
    /// HTTP chat service.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Print the effective configuration.
    Config,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match commands::execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
