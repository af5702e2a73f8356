//! `respiro`: batch entry points for featurization, vocoder training,
//! synthesis, Mixed-N construction and classifier training/evaluation.
//!
//! Only the final JSON report goes to stdout; diagnostics go to stderr.
//! Exit codes: 0 success, 1 usage, 2 data, 3 capacity/integrity, 4 numeric.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use respiro_core::dsp::Pipeline;
use respiro_core::error::Error;
use respiro_core::parallel::{init_thread_cap, Exec};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "respiro", version, about)]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cache features for every record of a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pipeline: Pipeline,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the diffusion vocoder on the real training records.
    TrainVocoder {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize class-conditioned clips from a vocoder checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// e.g. `normal=0,crackle=0,wheeze=0,both=137`
        #[arg(long)]
        per_class_counts: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a Mixed-N manifest.
    Mix {
        #[arg(long)]
        real_manifest: PathBuf,
        #[arg(long)]
        synth_manifest: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the classifier once per seed and aggregate.
    TrainClf(TrainClf),
    /// Evaluate a classifier checkpoint on every record of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the confusion matrix CSV and PGM.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write paired real and generated spectrogram images.
    SpectrogramDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainClf {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, conflicts_with = "no_aft")]
    aft: bool,
    #[arg(long)]
    no_aft: bool,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Train seeds concurrently, each with its own state.
    #[arg(long)]
    parallel_seeds: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Config(_) => 1,
        Error::Integrity(_) | Error::Capacity { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 2,
    }
}

fn thread_cap() -> Result<Option<usize>, Error> {
    match std::env::var("RESPIRO_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "RESPIRO_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    if let Some(n) = thread_cap()? {
        init_thread_cap(n);
    }
    let exec = Exec::default();
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let out_or =
        |out: Option<PathBuf>, name: &str| out.unwrap_or_else(|| cfg.output_dir.join(name));
    match cli.command {
        Command::Featurize {
            manifest,
            pipeline,
            out,
        } => {
            let out = out.unwrap_or_else(|| cfg.feature_dir());
            ensure_dir(&out)?;
            commands::featurize(&cfg, &manifest, pipeline, &out, exec)
        }
        Command::TrainVocoder {
            manifest,
            steps,
            out,
        } => {
            let out = out_or(out, "vocoder.rck");
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            commands::train_vocoder(&cfg, &manifest, steps, &out, exec)
        }
        Command::Generate {
            checkpoint,
            manifest,
            per_class_counts,
            seed,
            out,
        } => {
            let counts = commands::parse_counts(&per_class_counts)?;
            let out = out_or(out, "synthetic");
            commands::generate(&cfg, &checkpoint, &manifest, counts, seed, &out, exec)
        }
        Command::Mix {
            real_manifest,
            synth_manifest,
            n,
            out,
        } => {
            let out = out_or(out, &format!("mixed-{n}.jsonl"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            commands::mix(&cfg, &real_manifest, &synth_manifest, n, &out)
        }
        Command::TrainClf(t) => {
            let aft = match (t.aft, t.no_aft) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            };
            let mode = match aft.unwrap_or(cfg.classifier.train.aft) {
                true => "classifier-aft",
                false => "classifier-ft",
            };
            let out = out_or(t.out, mode);
            ensure_dir(&out)?;
            commands::train_clf(
                &cfg,
                &t.manifest,
                aft,
                t.seeds,
                t.parallel_seeds,
                &out,
                exec,
            )
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
        } => {
            if let Some(dir) = &out {
                ensure_dir(dir)?;
            }
            commands::eval(&cfg, &checkpoint, &manifest, out.as_deref(), exec)
        }
        Command::SpectrogramDump {
            checkpoint,
            manifest,
            ids,
            seed,
            out,
        } => {
            let out = out_or(out, "spectrograms");
            ensure_dir(&out)?;
            commands::spectrogram_dump(&cfg, &checkpoint, &manifest, &ids, seed, &out, exec)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
