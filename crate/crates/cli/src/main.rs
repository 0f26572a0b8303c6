use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dstts_cli::config::{Overrides, RunConfig};
use dstts_cli::eval::{self, EvalRequest, DEFAULT_THRESHOLDS};
use dstts_cli::synth::{self, SynthesisRequest};
use dstts_cli::{exit_code, preprocess, train};
use dstts_core::gradcheck::{tiny_fixture, GradCheckOptions};
use dstts_core::{grad_check, Checkpoint};
use log::info;

/// Zero-shot multi-speaker text-to-speech: preprocessing, training,
/// synthesis and evaluation.
///
/// Settings resolve as built-in defaults, then the `--config` JSON file,
/// then individual flags.
#[derive(Debug, Parser)]
#[command(name = "dstts", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract features for a manifest into the feature directory
    Preprocess,
    /// Train on the feature directory
    Train,
    /// Render phonemes in the voice of a reference recording
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Space-separated phoneme symbols
        #[arg(long, conflicts_with = "phoneme_file")]
        phonemes: Option<String>,
        /// File of whitespace-separated phoneme symbols
        #[arg(long)]
        phoneme_file: Option<PathBuf>,
        #[arg(long)]
        reference: PathBuf,
        /// Output WAV; the mel and image are written next to it
        #[arg(long)]
        wav: PathBuf,
    },
    /// Score reference/synthesis pairs
    Eval {
        /// JSON Lines file with `ref_wav` and `syn_wav`
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of `<clip id>.dstt` speaker embeddings
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value = "DS-TTS")]
        method: String,
    },
    /// Train and evaluate one model per routing threshold
    Ablate {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
        thresholds: Vec<usize>,
    },
    /// Compare tape gradients with finite differences on a tiny model
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 32)]
        entries: usize,
    },
    /// Print the resolved configuration
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let cfg: RunConfig = cli.overrides.resolve()?;
    match cli.command {
        Command::Preprocess => {
            let report = preprocess::preprocess(&cfg.manifest, &cfg.features)?;
            println!("accepted={} rejected={}", report.accepted.len(), report.rejected.len());
            for (id, why) in &report.rejected {
                println!("rejected {id}: {why}");
            }
        }
        Command::Train => {
            let s = train::train(&cfg)?;
            println!(
                "l_rec {} -> {}, total {} -> {}, checkpoint {}",
                s.first.l_rec,
                s.last.l_rec,
                s.first.total,
                s.last.total,
                s.checkpoint.display()
            );
        }
        Command::Synthesize {
            checkpoint,
            phonemes,
            phoneme_file,
            reference,
            wav,
        } => {
            let text = match (phonemes, phoneme_file) {
                (Some(p), _) => p,
                (None, Some(f)) => fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?,
                (None, None) => bail!("give --phonemes or --phoneme-file"),
            };
            let symbols: Vec<String> = text.split_whitespace().map(str::to_string).collect();
            let ck = Checkpoint::load(&checkpoint)?;
            let out = synth::synthesize(
                &ck,
                &SynthesisRequest {
                    phonemes: &symbols,
                    reference: &reference,
                    wav: &wav,
                    seed: cfg.seed,
                    griffin_lim_iterations: cfg.griffin_lim_iterations,
                    dva_threshold: cli.overrides.dva_threshold,
                },
            )?;
            info!("branch={} for {} phonemes", out.decision.branch, symbols.len());
            let sidecar = serde_json::json!({
                "config": cfg,
                "checkpoint": checkpoint,
                "phonemes": symbols,
                "durations": out.durations,
                "branch": out.decision.branch.as_str(),
                "samples": out.samples,
            });
            fs::write(wav.with_extension("json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
            println!("branch={}", out.decision.branch);
            println!("frames={} samples={}", out.durations.iter().sum::<usize>(), out.samples);
            println!("wrote {} {} {}", out.wav.display(), out.mel.display(), out.image.display());
        }
        Command::Eval {
            pairs,
            checkpoint,
            embeddings,
            method,
        } => {
            let report = eval::evaluate(
                &EvalRequest {
                    pairs: &pairs,
                    checkpoint: checkpoint.as_deref(),
                    embeddings: embeddings.as_deref(),
                    method: &method,
                },
                &cfg,
            )?;
            let (json, md) = eval::write_reports(&cfg.output, "eval", std::slice::from_ref(&report))?;
            print!("{}", fs::read_to_string(&md)?);
            println!("wrote {} {}", json.display(), md.display());
        }
        Command::Ablate { thresholds } => {
            fs::create_dir_all(&cfg.output)?;
            fs::write(cfg.output.join(train::CONFIG_FILE), cfg.to_json()?)?;
            eval::ablate(&cfg, &thresholds)?;
            print!("{}", fs::read_to_string(cfg.output.join("ablation.md"))?);
        }
        Command::Gradcheck { tolerance, entries } => {
            let (model, stats, batch) = tiny_fixture(cfg.seed)?;
            let opts = GradCheckOptions {
                tolerance,
                entries_per_tensor: entries,
                seed: cfg.seed,
                ..GradCheckOptions::default()
            };
            let report = grad_check(&model, &stats, &batch, &opts, None)?;
            println!(
                "max_rel_error={:e} strict={:e} floor={:e} worst={} tensors={} kink_skips={}",
                report.max_rel_error,
                report.max_rel_error_strict,
                report.floor,
                report.worst_tensor,
                report.tensors.len(),
                report.skipped_kinks
            );
            // NaN must fail too.
            if report.max_rel_error.is_nan() || report.max_rel_error > tolerance {
                bail!("gradient check failed: {:e} exceeds {tolerance:e}", report.max_rel_error);
            }
        }
        Command::Config => print!("{}", cfg.to_json()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
