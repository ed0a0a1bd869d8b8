//! `lark`: command line front end for the lark-core speech recipe.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lark_core::augment::AugmentConfig;
use lark_core::config::FlatConfig;
use lark_core::ctc::{prefix_beam_decode, TokenSet};
use lark_core::data::{load_utterances, read_manifest, read_token_set, write_manifest, ManifestEntry};
use lark_core::features::{
    lfbe_extract, read_wav_mono, speaker_mean_normalize, stack_frames, write_feature_file,
    FeatureConfig, Utterance,
};
use lark_core::math::{derive_seed, TrainConfig};
use lark_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, TrainableSet};
use lark_core::pipeline::{
    adapt, config_hash, evaluate, labels_to_map, pseudo_label, self_train, train_distill,
    train_supervised, DistillConfig, EvalMode, ExperimentRecord, LabelSource, MetricOutput,
    PseudoLabel, RunConfig,
};
use lark_core::synth::{generate, write_domain, SynthConfig};
use lark_core::wordlm::{parse_arpa, parse_lexicon, word_beam_decode, DecodeConfig, Lexicon, NGramLM};

#[derive(Parser)]
#[command(name = "lark", about = "Low-resource online ASR recipe", version)]
struct Cli {
    /// Key-value config file overriding defaults (features.*, train.*, ...).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the training/generation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecodeMode {
    Phone,
    Word,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Per,
    Wer,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PseudoSource {
    PhoneDecode,
    WordDecode,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepRegime {
    Train,
    Adapt,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic source/target corpus pair.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract LFBE features for every entry of a wav manifest.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Supervised CTC training from a random initialization.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Adapt a pretrained checkpoint to a target domain.
    Adapt {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Insert an identity-initialized LIN with a frozen warmup.
        #[arg(long)]
        lin: bool,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Decode pseudo-labels for an unsupervised pool with a fixed teacher.
    PseudoLabel {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        unsup: PathBuf,
        #[arg(long, value_enum)]
        source: PseudoSource,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-student training on supervised + pseudo-labeled batches.
    Distill {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        unsup: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Self-training with on-the-fly greedy pseudo-labels.
    SelfTrain {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        unsup: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Decode a manifest to phones or words, one JSON line per utterance.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: DecodeMode,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a labelled manifest (PER or WER).
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid sweep over learning rate and dropout, selecting by dev PER.
    Sweep {
        #[arg(long, value_enum)]
        regime: SweepRegime,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        /// Pretrained checkpoint (adapt regime only).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        lin: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Settings {
    flat: FlatConfig,
    fcfg: FeatureConfig,
    aug: AugmentConfig,
    run: RunConfig,
    dcfg: DistillConfig,
    decode: DecodeConfig,
}

impl Settings {
    fn load(config: Option<&Path>, seed: Option<u64>) -> Result<Settings> {
        let flat = match config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                FlatConfig::parse(&text)?
            }
            None => FlatConfig::default(),
        };
        let mut fcfg = FeatureConfig::default();
        flat.apply_features(&mut fcfg)?;
        let mut aug = AugmentConfig::default();
        flat.apply_augment(&mut aug)?;
        let mut run = RunConfig::default();
        flat.apply_run(&mut run)?;
        let mut dcfg = DistillConfig::default();
        flat.apply_distill(&mut dcfg)?;
        let mut decode = DecodeConfig::default();
        flat.apply_decode(&mut decode)?;
        if let Some(s) = seed {
            run.seed = s;
        }
        Ok(Settings {
            flat,
            fcfg,
            aug,
            run,
            dcfg,
            decode,
        })
    }

    fn model_config(&self, input_dim: usize, output_dim: usize) -> Result<ModelConfig> {
        let mut mcfg = ModelConfig {
            input_dim,
            output_dim,
            dropout_rate: self.run.dropout,
            ..ModelConfig::default()
        };
        self.flat.apply_model(&mut mcfg)?;
        Ok(mcfg)
    }
}

fn load_dataset(manifest: &Path, tokens: &TokenSet, fcfg: &FeatureConfig) -> Result<Vec<Utterance>> {
    let mut utts = load_utterances(manifest, tokens, fcfg)
        .with_context(|| format!("loading {}", manifest.display()))?;
    speaker_mean_normalize(&mut utts)?;
    Ok(utts)
}

fn load_word_resources(
    lexicon: Option<&Path>,
    lm: Option<&Path>,
    tokens: &TokenSet,
) -> Result<(Lexicon, NGramLM)> {
    let lex_path = lexicon.context("this mode needs --lexicon")?;
    let lm_path = lm.context("this mode needs --lm")?;
    let lex = parse_lexicon(&fs::read_to_string(lex_path)?, tokens)?;
    let lm = parse_arpa(&fs::read_to_string(lm_path)?)?;
    Ok((lex, lm))
}

fn write_record(
    record: &mut ExperimentRecord,
    checkpoint: &Path,
    path: Option<&Path>,
) -> Result<()> {
    record.best_checkpoint = Some(checkpoint.display().to_string());
    let text = serde_json::to_string_pretty(record)?;
    match path {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let settings = Settings::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::SynthCorpus { out } => {
            // Generate with the active feature geometry so the corpus can be
            // consumed by the other subcommands under the same config.
            let cfg = SynthConfig {
                seed: settings.run.seed,
                mel_bins: settings.fcfg.mel_bins,
                ..SynthConfig::default()
            };
            let (source, target) = generate(&cfg)?;
            write_domain(&out.join("source"), &source)?;
            write_domain(&out.join("target"), &target)?;
            println!(
                "{}",
                serde_json::json!({
                    "out": out.display().to_string(),
                    "source_train": source.train.len(),
                    "target_train": target.train.len(),
                    "target_unsup": target.unsup.len(),
                })
            );
        }
        Command::ExtractFeatures { manifest, out_dir } => {
            fs::create_dir_all(&out_dir)?;
            let base = manifest.parent().unwrap_or_else(|| Path::new("."));
            let entries = read_manifest(&manifest)?;
            let mut out_entries = Vec::with_capacity(entries.len());
            for e in entries {
                let audio = e
                    .audio_path
                    .as_ref()
                    .with_context(|| format!("utterance {} has no audio_path", e.id))?;
                let audio = if Path::new(audio).is_absolute() {
                    PathBuf::from(audio)
                } else {
                    base.join(audio)
                };
                let (pcm, rate) = read_wav_mono(&audio)?;
                if rate != settings.fcfg.sample_rate {
                    bail!(
                        "utterance {}: wav sample rate {rate} != configured {}",
                        e.id,
                        settings.fcfg.sample_rate
                    );
                }
                let feats = lfbe_extract(&pcm, &settings.fcfg)?;
                let rel = format!("{}.lfbe", e.id);
                write_feature_file(&out_dir.join(&rel), &feats)?;
                out_entries.push(ManifestEntry {
                    features_path: Some(rel),
                    audio_path: None,
                    ..e
                });
            }
            write_manifest(&out_dir.join("manifest.jsonl"), &out_entries)?;
        }
        Command::Train {
            train,
            dev,
            tokens,
            out,
            record,
        } => {
            let token_set = read_token_set(&tokens)?;
            let train_utts = load_dataset(&train, &token_set, &settings.fcfg)?;
            let dev_utts = load_dataset(&dev, &token_set, &settings.fcfg)?;
            let mcfg = settings.model_config(settings.fcfg.stacked_dim(), token_set.len())?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(settings.run.seed, "model-init"));
            let init = Model::new(mcfg, token_set, &mut rng)?;
            let trainable: TrainableSet = init.tensor_names().into_iter().collect();
            let (best, mut rec) = train_supervised(
                &init,
                &train_utts,
                &dev_utts,
                &settings.run,
                &settings.aug,
                &settings.fcfg,
                &trainable,
            )?;
            save_checkpoint(&best, &out)?;
            write_record(&mut rec, &out, record.as_deref())?;
        }
        Command::Adapt {
            init,
            train,
            dev,
            tokens,
            out,
            lin,
            record,
        } => {
            let pretrained = load_checkpoint(&init)?;
            let token_set = read_token_set(&tokens)?;
            let train_utts = load_dataset(&train, &token_set, &settings.fcfg)?;
            let dev_utts = load_dataset(&dev, &token_set, &settings.fcfg)?;
            let (best, mut rec) = adapt(
                &pretrained,
                &train_utts,
                &dev_utts,
                token_set,
                lin,
                &settings.run,
                &settings.aug,
                &settings.fcfg,
            )?;
            save_checkpoint(&best, &out)?;
            write_record(&mut rec, &out, record.as_deref())?;
        }
        Command::PseudoLabel {
            teacher,
            unsup,
            source,
            lexicon,
            lm,
            out,
        } => {
            let teacher = load_checkpoint(&teacher)?;
            let utts = load_dataset(&unsup, &teacher.token_set, &settings.fcfg)?;
            let (labels, skipped) = match source {
                PseudoSource::PhoneDecode => pseudo_label(
                    &teacher,
                    &utts,
                    LabelSource::PhoneDecode,
                    settings.decode.beam,
                    None,
                    &settings.fcfg,
                )?,
                PseudoSource::WordDecode => {
                    let (lex, lm) =
                        load_word_resources(lexicon.as_deref(), lm.as_deref(), &teacher.token_set)?;
                    pseudo_label(
                        &teacher,
                        &utts,
                        LabelSource::WordDecode,
                        settings.decode.beam,
                        Some((&lex, &lm, &settings.decode)),
                        &settings.fcfg,
                    )?
                }
            };
            let mut text = String::new();
            for l in &labels {
                text.push_str(&serde_json::to_string(l)?);
                text.push('\n');
            }
            fs::write(&out, text)?;
            println!(
                "{}",
                serde_json::json!({ "labels": labels.len(), "skipped": skipped })
            );
        }
        Command::Distill {
            init,
            train,
            unsup,
            labels,
            dev,
            out,
            record,
        } => {
            let student = load_checkpoint(&init)?;
            let train_utts = load_dataset(&train, &student.token_set, &settings.fcfg)?;
            let dev_utts = load_dataset(&dev, &student.token_set, &settings.fcfg)?;
            let unsup_utts = load_dataset(&unsup, &student.token_set, &settings.fcfg)?;
            let label_text = fs::read_to_string(&labels)?;
            let mut parsed: Vec<PseudoLabel> = Vec::new();
            for (i, line) in label_text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                parsed.push(
                    serde_json::from_str(line)
                        .with_context(|| format!("{}:{}", labels.display(), i + 1))?,
                );
            }
            let label_map = labels_to_map(&parsed, &student.token_set)?;
            // Utterances the teacher skipped have no label and cannot train.
            let usable: Vec<Utterance> = unsup_utts
                .into_iter()
                .filter(|u| label_map.contains_key(&u.id))
                .collect();
            let (best, mut rec) = train_distill(
                &student,
                &train_utts,
                &usable,
                &label_map,
                &dev_utts,
                &settings.dcfg,
                &settings.run,
                &settings.aug,
                &settings.fcfg,
            )?;
            save_checkpoint(&best, &out)?;
            write_record(&mut rec, &out, record.as_deref())?;
        }
        Command::SelfTrain {
            init,
            train,
            unsup,
            dev,
            out,
            record,
        } => {
            let student = load_checkpoint(&init)?;
            let train_utts = load_dataset(&train, &student.token_set, &settings.fcfg)?;
            let dev_utts = load_dataset(&dev, &student.token_set, &settings.fcfg)?;
            let unsup_utts = load_dataset(&unsup, &student.token_set, &settings.fcfg)?;
            let mut dcfg = settings.dcfg.clone();
            dcfg.label_source = LabelSource::SelfLabel;
            let (best, mut rec) = self_train(
                &student,
                &train_utts,
                &unsup_utts,
                &dev_utts,
                &dcfg,
                &settings.run,
                &settings.aug,
                &settings.fcfg,
            )?;
            save_checkpoint(&best, &out)?;
            write_record(&mut rec, &out, record.as_deref())?;
        }
        Command::Decode {
            checkpoint,
            manifest,
            mode,
            lexicon,
            lm,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let utts = load_dataset(&manifest, &model.token_set, &settings.fcfg)?;
            let blank = model.token_set.blank_index();
            let word = match mode {
                DecodeMode::Word => Some(load_word_resources(
                    lexicon.as_deref(),
                    lm.as_deref(),
                    &model.token_set,
                )?),
                DecodeMode::Phone => None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut text = String::new();
            for u in &utts {
                let stacked = stack_frames(&u.features, settings.fcfg.eval_stack_offset, &settings.fcfg)?;
                let cache = model.forward(&stacked, false, &mut rng)?;
                let line = match (&word, mode) {
                    (Some((lex, lm)), DecodeMode::Word) => {
                        let hyp =
                            word_beam_decode(&cache.log_probs, lex, lm, blank, &settings.decode)?;
                        serde_json::json!({
                            "id": u.id, "words": hyp.words, "log_score": hyp.log_score,
                        })
                    }
                    _ => {
                        let hyps =
                            prefix_beam_decode(&cache.log_probs, blank, settings.decode.beam)?;
                        let toks: Vec<&str> = hyps[0]
                            .tokens
                            .iter()
                            .map(|&t| model.token_set.token(t).unwrap())
                            .collect();
                        serde_json::json!({
                            "id": u.id, "tokens": toks, "log_score": hyps[0].log_prob,
                        })
                    }
                };
                text.push_str(&line.to_string());
                text.push('\n');
            }
            fs::write(&out, text)?;
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            metric,
            lexicon,
            lm,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let utts = load_dataset(&manifest, &model.token_set, &settings.fcfg)?;
            let report = match metric {
                Metric::Per => evaluate(
                    &model,
                    &utts,
                    &EvalMode::Phone {
                        beam: settings.decode.beam,
                    },
                    &settings.fcfg,
                )?,
                Metric::Wer => {
                    let (lex, lm) =
                        load_word_resources(lexicon.as_deref(), lm.as_deref(), &model.token_set)?;
                    evaluate(
                        &model,
                        &utts,
                        &EvalMode::Word {
                            lexicon: &lex,
                            lm: &lm,
                            cfg: &settings.decode,
                        },
                        &settings.fcfg,
                    )?
                }
            };
            let snapshot = serde_json::json!({
                "features": settings.fcfg, "decode": settings.decode, "seed": settings.run.seed,
            });
            let output = MetricOutput {
                metric: match metric {
                    Metric::Per => "per".into(),
                    Metric::Wer => "wer".into(),
                },
                value_percent: report.error_rate_percent,
                dataset: manifest.display().to_string(),
                checkpoint: checkpoint.display().to_string(),
                config_hash: config_hash(&snapshot),
            };
            let text = serde_json::to_string(&output)?;
            if let Some(p) = out {
                fs::write(p, &text)?;
            }
            println!("{text}");
        }
        Command::Sweep {
            regime,
            train,
            dev,
            tokens,
            init,
            lin,
            out,
        } => {
            let token_set = read_token_set(&tokens)?;
            let train_utts = load_dataset(&train, &token_set, &settings.fcfg)?;
            let dev_utts = load_dataset(&dev, &token_set, &settings.fcfg)?;
            let lr_grid = match regime {
                SweepRegime::Train => TrainConfig::default().lr_grid,
                SweepRegime::Adapt => TrainConfig::adaptation_lr_grid(),
            };
            let dropout_grid = TrainConfig::default().dropout_grid;
            let pretrained = match regime {
                SweepRegime::Adapt => Some(load_checkpoint(
                    init.as_deref().context("adapt sweep needs --init")?,
                )?),
                SweepRegime::Train => None,
            };
            let mut results = Vec::new();
            let mut best: Option<(f64, Model)> = None;
            for &lr in &lr_grid {
                for &dropout in &dropout_grid {
                    let run = RunConfig {
                        learning_rate: lr,
                        dropout,
                        ..settings.run.clone()
                    };
                    let (model, rec) = match (&pretrained, regime) {
                        (Some(p), SweepRegime::Adapt) => adapt(
                            p,
                            &train_utts,
                            &dev_utts,
                            token_set.clone(),
                            lin,
                            &run,
                            &settings.aug,
                            &settings.fcfg,
                        )?,
                        _ => {
                            let mcfg = settings
                                .model_config(settings.fcfg.stacked_dim(), token_set.len())?;
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                                run.seed,
                                "model-init",
                            ));
                            let m = Model::new(mcfg, token_set.clone(), &mut rng)?;
                            let trainable: TrainableSet =
                                m.tensor_names().into_iter().collect();
                            train_supervised(
                                &m,
                                &train_utts,
                                &dev_utts,
                                &run,
                                &settings.aug,
                                &settings.fcfg,
                                &trainable,
                            )?
                        }
                    };
                    results.push(serde_json::json!({
                        "learning_rate": lr,
                        "dropout": dropout,
                        "best_dev_per": rec.best_dev_per,
                        "best_epoch": rec.best_epoch,
                    }));
                    if best.as_ref().is_none_or(|(per, _)| rec.best_dev_per < *per) {
                        best = Some((rec.best_dev_per, model));
                    }
                }
            }
            let (best_per, best_model) = best.context("empty sweep grid")?;
            save_checkpoint(&best_model, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "results": results,
                    "best_dev_per": best_per,
                    "checkpoint": out.display().to_string(),
                })
            );
        }
    }
    Ok(())
}
