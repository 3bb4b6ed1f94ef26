//! Command-line front end: data synthesis, embedder pretraining, the two
//! training stages, evaluation and single-file extraction.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use exformer_core::embedder::pretrain_embedder;
use exformer_core::model::FusionMode;
use exformer_core::signal::{load_wav, save_wav, synth_corpus, CorpusSpec, DEFAULT_SAMPLE_RATE};
use exformer_core::training::{
    build_test_items, evaluate, load_models, write_json, EpochLog, MixtureStream,
};
use exformer_core::{
    Checkpoint32, Corpus, Embedder32, Exformer32, ExformerConfig, Stage, Trainer32,
};

pub use config::RunConfig;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "exformer", version, about = "Target speaker extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `model.fusion_mode=mult`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic multi-speaker corpus and its manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 12)]
        utts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Id of the first speaker, so disjoint corpora can be generated.
        #[arg(long, default_value_t = 0)]
        first_speaker: u64,
        #[arg(long, default_value_t = 2.0)]
        min_dur: f64,
        #[arg(long, default_value_t = 4.5)]
        max_dur: f64,
    },
    /// Pretrain the speaker embedder with the GE2E loss.
    PretrainEmbedder {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus manifest.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// First stage: supervised training on simulated mixtures.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        /// Pretrained embedder checkpoint (required unless resuming).
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fusion: Option<FusionMode>,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Second stage: semi-supervised fine-tuning from a first-stage checkpoint.
    TrainSemi {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        /// Manifest of the unlabeled pool; defaults to the training corpus.
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long, required_unless_present = "resume")]
        stage1: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fail unless the first-stage checkpoint uses this fusion mode.
        #[arg(long)]
        fusion: Option<FusionMode>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Mean SI-SDR and SI-SDRi on mixtures simulated from a test manifest.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract one speaker from a mixture WAV.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
        #[arg(long)]
        out_residual: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData {
            out,
            speakers,
            utts,
            seed,
            first_speaker,
            min_dur,
            max_dur,
        } => {
            let spec = CorpusSpec {
                n_speakers: speakers,
                utts_per_speaker: utts,
                first_speaker,
                min_duration_s: min_dur,
                max_duration_s: max_dur,
                seed,
            };
            let recs = synth_corpus(&out, &spec)?;
            println!(
                "wrote {} utterances to {}",
                recs.len(),
                out.join("manifest.jsonl").display()
            );
            Ok(())
        }
        Command::PretrainEmbedder { cfg, train, out } => {
            let rc = resolve(&cfg, &[])?;
            prepare_out(&out, &rc)?;
            let corpus = load_corpus(&train)?;
            let (emb, report) = pretrain_embedder::<f32>(&corpus, &rc.embedder, &rc.pretrain)?;
            let meta =
                serde_json::json!({ "pretrain": rc.pretrain, "final_loss": report.losses.last() });
            emb.checkpoint(meta)?.save(out.join("embedder.ckpt"))?;
            write_json(&out.join("pretrain_losses.json"), &report.losses)?;
            println!(
                "pretrained embedder: {} steps, final GE2E loss {:.4}",
                report.losses.len(),
                report.losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Train {
            cfg,
            train,
            embedder,
            out,
            fusion,
            resume,
        } => {
            let fusion_set = fusion.map(|f| format!("model.fusion_mode=\"{f}\""));
            let rc = resolve(&cfg, fusion_set.as_slice())?;
            prepare_out(&out, &rc)?;
            let mut trainer = match resume {
                Some(p) => Trainer32::resume(&Checkpoint32::load(&p)?)?,
                None => {
                    let Some(ep) = embedder else {
                        bail!("--embedder is required unless --resume is given");
                    };
                    let emb = Embedder32::from_checkpoint(&Checkpoint32::load(&ep)?)?;
                    let model = Exformer32::new(rc.model.clone(), rc.seed)?;
                    Trainer32::new(model, emb, rc.train.clone(), Stage::Supervised)?
                }
            };
            let corpus = load_corpus(&train)?;
            let (fit, held) = corpus.split_tail(rc.data.val_utts_per_speaker);
            let val = build_test_items(&held, rc.data.val_items, &rc.mix, rc.seed)?;
            let stream = MixtureStream::new(&fit, rc.mix.clone(), trainer.cfg.seed, true)?;
            let report = trainer.run(&stream, None, &val, Some(&out))?;
            print_summary(&report.history, report.best_val);
            Ok(())
        }
        Command::TrainSemi {
            cfg,
            train,
            unlabeled,
            stage1,
            out,
            fusion,
            resume,
        } => {
            let rc = resolve(&cfg, &[])?;
            prepare_out(&out, &rc)?;
            let mut trainer = match (resume, stage1) {
                (Some(p), _) => Trainer32::resume(&Checkpoint32::load(&p)?)?,
                (None, Some(p)) => {
                    let ckpt = Checkpoint32::load(&p)?;
                    let expected = match fusion {
                        Some(f) => {
                            let stored: ExformerConfig = serde_json::from_value(
                                ckpt.meta["model"].clone(),
                            )
                            .context("reading the model config of the first-stage checkpoint")?;
                            Some(ExformerConfig {
                                fusion_mode: f,
                                ..stored
                            })
                        }
                        None => None,
                    };
                    Trainer32::stage2_from(&ckpt, rc.semi.clone(), expected.as_ref())?
                }
                (None, None) => bail!("--stage1 is required unless --resume is given"),
            };
            if trainer.stage != Stage::Semi {
                bail!("checkpoint is not from a semi-supervised run");
            }
            let corpus = load_corpus(&train)?;
            let (fit, held) = corpus.split_tail(rc.data.val_utts_per_speaker);
            let val = build_test_items(&held, rc.data.val_items, &rc.mix, rc.seed)?;
            let pool = match &unlabeled {
                Some(p) => load_corpus(p)?,
                None => fit.clone(),
            };
            let seed = trainer.cfg.seed;
            let labeled = MixtureStream::new(&fit, rc.mix.clone(), seed, true)?;
            let unl = MixtureStream::new(&pool, rc.mix.clone(), seed, false)?;
            let report = trainer.run(&labeled, Some(&unl), &val, Some(&out))?;
            print_summary(&report.history, report.best_val);
            println!("unlabeled draws this run: {}", report.unlabeled_draws);
            Ok(())
        }
        Command::Evaluate {
            cfg,
            ckpt,
            test,
            out,
        } => {
            let rc = resolve(&cfg, &[])?;
            let (model, emb) = load_models(&Checkpoint32::load(&ckpt)?)?;
            let corpus = load_corpus(&test)?;
            let items = build_test_items(&corpus, rc.data.test_items, &rc.mix, rc.seed)?;
            let report = evaluate(&model, &emb, &items)?;
            println!("{}", serde_json::to_string(&report)?);
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            Ok(())
        }
        Command::Extract {
            ckpt,
            mixture,
            enroll,
            out_target,
            out_residual,
        } => {
            let (model, emb) = load_models(&Checkpoint32::load(&ckpt)?)?;
            let mix = load_wav(&mixture)?;
            let enr = load_wav(&enroll)?;
            for (p, w) in [(&mixture, &mix), (&enroll, &enr)] {
                if w.sample_rate() != DEFAULT_SAMPLE_RATE {
                    bail!(
                        "{} is sampled at {} Hz, expected {DEFAULT_SAMPLE_RATE}",
                        p.display(),
                        w.sample_rate()
                    );
                }
            }
            let (t, r) = model.extract(&emb, &mix, &enr)?;
            save_wav(&out_target, &t)?;
            if let Some(p) = out_residual {
                save_wav(&p, &r)?;
            }
            Ok(())
        }
    }
}

fn resolve(args: &ConfigArgs, extra: &[String]) -> Result<RunConfig> {
    let mut all = args.overrides.clone();
    all.extend_from_slice(extra);
    RunConfig::resolve(args.config.as_deref(), &all)
}

/// Creates `out` and records the fully resolved configuration there.
fn prepare_out(out: &Path, rc: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), rc.to_toml()?)?;
    Ok(())
}

fn load_corpus(manifest: &Path) -> Result<Corpus> {
    Corpus::from_manifest(manifest, DEFAULT_SAMPLE_RATE)
        .with_context(|| format!("loading corpus {}", manifest.display()))
}

fn print_summary(history: &[EpochLog], best_val: f64) {
    if let Some(last) = history.last() {
        println!(
            "epoch {}: lr {:.3e}, train {:.3}, val {:.3}, SI-SDRi {:.2} dB (best val {:.3})",
            last.epoch, last.lr, last.train_loss, last.val_loss, last.mean_si_sdri, best_val
        );
    }
}
