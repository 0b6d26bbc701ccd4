//! Command-line frontend: `detect` streams events from trajectories,
//! `simulate` renders synthetic scenarios, `eval` scores detector output
//! against ground truth, `bench` times the pipeline.
//!
//! Exit codes: 0 success, 1 bad input data, 2 bad invocation.

mod commands;
mod config;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{detect, eval, simulate};
use commands::{open_input, open_output, CliError};
use config::Overrides;
use formats::Format;

#[derive(Parser)]
#[command(
    name = "crowdwatch",
    version,
    about = "Streaming crowd anomaly detection over 2D trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; unset flags fall back to the config
/// file, then to frame-rate-derived defaults.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Detector threshold, in normalized feature units.
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    /// Local behaviour window, in seconds.
    #[arg(long, value_name = "F")]
    local_window: Option<f64>,
    /// Global behaviour window, in seconds.
    #[arg(long, value_name = "F")]
    global_window: Option<f64>,
    /// Frames per second of the input stream.
    #[arg(long, value_name = "F")]
    fps: Option<f64>,
    /// Behaviour cluster count: 'auto' or a fixed K.
    #[arg(long, value_name = "auto|K")]
    clusters: Option<String>,
    /// Missed frames tolerated before a track is dropped.
    #[arg(long, value_name = "N")]
    coast_frames: Option<u32>,
    /// Seed for every random choice in the run.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            threshold: self.threshold,
            local_window_s: self.local_window,
            global_window_s: self.global_window,
            fps: self.fps,
            clusters: self.clusters.clone(),
            coast_frames: self.coast_frames,
            seed: self.seed,
        }
    }

    fn resolve(&self) -> Result<config::Resolved, CliError> {
        Ok(config::resolve(self.config.as_deref(), &self.overrides())?)
    }
}

fn parse_format(s: &str) -> Result<Format, String> {
    Format::from_flag(s).ok_or_else(|| format!("expected 'csv' or 'jsonl', got '{s}'"))
}

#[derive(Subcommand)]
enum Command {
    /// Read a trajectory stream and emit anomaly events, one JSON object
    /// per line, flushed every frame.
    Detect {
        /// Trajectory file, or '-' for standard input.
        #[arg(long, value_name = "PATH|-", default_value = "-")]
        input: String,
        /// Input encoding.
        #[arg(long, value_name = "csv|jsonl", default_value = "csv", value_parser = parse_format)]
        format: Format,
        /// Also emit every per-agent score, not just events.
        #[arg(long)]
        verbose_scores: bool,
        /// Keep tracked positions out of the output records.
        #[arg(long)]
        retain_events_only: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Render a named synthetic scenario to trajectories plus ground truth.
    Simulate {
        /// Scenario preset name.
        #[arg(long, value_name = "NAME")]
        preset: String,
        /// Trajectory destination, or '-' for standard output.
        #[arg(long, value_name = "PATH|-", default_value = "-")]
        out: String,
        /// Ground-truth label CSV destination.
        #[arg(long, value_name = "PATH")]
        labels_out: Option<PathBuf>,
        /// Output encoding.
        #[arg(long, value_name = "csv|jsonl", default_value = "csv", value_parser = parse_format)]
        format: Format,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Join a score or event stream with labels and report AUC, EER, and
    /// accuracy at the configured threshold.
    Eval {
        /// Score/event records (JSON lines), or '-' for standard input.
        #[arg(long, value_name = "PATH|-", default_value = "-")]
        input: String,
        /// Ground-truth label CSV.
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
        /// Write the ROC curve as CSV (fpr,tpr,threshold).
        #[arg(long, value_name = "PATH")]
        emit_roc: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Time the pipeline over a synthetic stream; per-frame CSV on stdout,
    /// summary on stderr.
    Bench {
        /// Scenario preset name.
        #[arg(long, value_name = "NAME")]
        preset: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect {
            input,
            format,
            verbose_scores,
            retain_events_only,
            common,
        } => {
            let resolved = common.resolve()?;
            let options = detect::DetectOptions {
                format,
                verbose_scores,
                retain_events_only,
            };
            let reader = open_input(&input)?;
            let mut out = std::io::stdout().lock();
            detect::run(reader, &mut out, &resolved, &options)
        }
        Command::Simulate {
            preset,
            out,
            labels_out,
            format,
            common,
        } => {
            let resolved = common.resolve()?;
            let options = simulate::SimulateOptions {
                preset,
                format,
                labels_out,
            };
            let mut writer = open_output(&out)?;
            simulate::run(&mut writer, &resolved, &options)
        }
        Command::Eval {
            input,
            labels,
            emit_roc,
            common,
        } => {
            let resolved = common.resolve()?;
            let options = eval::EvalOptions {
                threshold: resolved.pipeline.detector.threshold,
                emit_roc,
            };
            let scores = open_input(&input)?;
            let labels = open_input(
                labels
                    .to_str()
                    .ok_or_else(|| CliError::Usage("label path is not valid UTF-8".into()))?,
            )?;
            let mut out = std::io::stdout().lock();
            eval::run(scores, labels, &mut out, &options)
        }
        Command::Bench { preset, common } => {
            let resolved = common.resolve()?;
            let mut out = std::io::stdout().lock();
            let mut summary = std::io::stderr().lock();
            commands::bench::run(&mut out, &mut summary, &resolved, &preset)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.is_silent() {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
