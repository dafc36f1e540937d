//! The `lslm` command line: one subcommand per pipeline stage.

mod commands;
mod config;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, SubSeeds};

use crate::error::Error;
use crate::eval::Condition;
use crate::model::FusionStrategy;
use crate::train::{ListeningInit, SpeakingInit};
use crate::world::Scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const AFTER_HELP: &str = "\
Configuration: built-in defaults, overridden by the JSON file given with
--config, overridden by flags. Config keys: seed, world, model, tts,
listener, duplex, sampler, checkpoint, data_dir (print the defaults with
`lslm show-config`). Every run writes <subcommand>.manifest.json into --out.

Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 runtime failure.";

#[derive(Debug, Parser)]
#[command(name = "lslm", version, about = "Listen-while-speaking language model over a synthetic token world")]
#[command(after_help = AFTER_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; data, init, shuffle and sampling seeds derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Read the corpus from a make-data directory instead of regenerating it.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// command | voice
    #[arg(long, global = true)]
    pub scenario: Option<Scenario>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Optimizer steps (overrides total_steps).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train/val/test/tts_test corpus.
    MakeData,
    /// Train the vanilla speaking-only model.
    PretrainTts {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Pretrain the streaming listener encoder.
    PretrainListener {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train the duplex model.
    Train {
        #[command(flatten)]
        train: TrainFlags,
        /// early | middle | late
        #[arg(long)]
        fusion: Option<FusionStrategy>,
        /// scratch | frozen | finetune
        #[arg(long, value_parser = parse_speaking)]
        speaking_init: Option<SpeakingInit>,
        /// scratch | frozen | finetune
        #[arg(long, value_parser = parse_listening)]
        listening_init: Option<ListeningInit>,
        /// Pretrained TTS checkpoint.
        #[arg(long)]
        tts: Option<PathBuf>,
        /// Pretrained listener checkpoint.
        #[arg(long)]
        listener: Option<PathBuf>,
    },
    /// Transcript/token error rate of a checkpoint on the TTS test set.
    EvalTts {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Interruption precision/recall/F1 on the interactive test set.
    EvalInteractive {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// clean | noise
        #[arg(long, default_value = "clean")]
        condition: Condition,
    },
    /// Train and score every speaking/listening init combination.
    Ablation {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        fusion: Option<FusionStrategy>,
        #[arg(long)]
        tts: Option<PathBuf>,
        #[arg(long)]
        listener: Option<PathBuf>,
    },
    /// Export per-item IRQ probability traces and their summary.
    TraceIrq {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "clean")]
        condition: Condition,
    },
    /// Serve duplex sessions over WebSocket and newline-delimited JSON.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// HTTP address: /healthz, /manifest, /ws.
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Newline-delimited JSON address.
        #[arg(long, default_value = "127.0.0.1:8081")]
        tcp: SocketAddr,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

fn parse_init<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown init mode {s:?}"))
}

fn parse_speaking(s: &str) -> Result<SpeakingInit, String> {
    parse_init(s)
}

fn parse_listening(s: &str) -> Result<ListeningInit, String> {
    parse_init(s)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
