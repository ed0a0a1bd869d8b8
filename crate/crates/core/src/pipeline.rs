//! Training regimes on top of the acoustic model: supervised training,
//! domain adaptation with an optional LIN warmup, offline pseudo-label
//! distillation, on-the-fly self-training, and evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_utterance, AugmentConfig};
use crate::ctc::{ctc_loss, greedy_decode, prefix_beam_decode, TokenSet};
use crate::error::{Error, Result};
use crate::features::{stack_frames, FeatureConfig, Utterance};
use crate::math::{adam_step, derive_seed, AdamState};
use crate::metrics::{filter_for_wer, ErrorRateStats};
use crate::model::{AdaptationPhase, GradStore, Model, TrainableSet};
use crate::wordlm::{word_beam_decode, words_to_phones, DecodeConfig, Lexicon, NGramLM};

/// Where pseudo-labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    PhoneDecode,
    WordDecode,
    #[serde(rename = "self")]
    SelfLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    pub sup_per_step: usize,
    pub unsup_per_step: usize,
    /// Discount factor lambda on the pseudo-label loss term.
    pub discount: f64,
    pub label_source: LabelSource,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            sup_per_step: 8,
            unsup_per_step: 32,
            discount: 1.0,
            label_source: LabelSource::WordDecode,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sup_per_step == 0 {
            return Err(Error::InvalidArg("sup_per_step must be >= 1".into()));
        }
        if self.discount < 0.0 {
            return Err(Error::InvalidArg("discount must be >= 0".into()));
        }
        Ok(())
    }
}

/// Hyperparameters of a single training run (one grid point).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Prefix beam width for per-epoch dev PER.
    pub eval_beam: usize,
    /// LIN warmup length during adaptation.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            learning_rate: 1e-3,
            dropout: 0.1,
            epochs: 50,
            minibatch: 8,
            eval_beam: 20,
            warmup_epochs: 10,
            seed: 0,
        }
    }
}

/// What a training run produced. Entry 0 of the PER curve is the untrained
/// init, so `best_epoch == 0` means no epoch improved on it.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub dev_per_by_epoch: Vec<f64>,
    pub best_epoch: usize,
    pub best_dev_per: f64,
    pub best_checkpoint: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub skipped_utterances: usize,
    pub sup_consumed: usize,
    pub unsup_consumed: usize,
    /// Self-training only: the labels produced per epoch, keyed by
    /// utterance id (diagnostics, not serialized).
    #[serde(skip)]
    pub self_labels_by_epoch: Vec<BTreeMap<String, Vec<usize>>>,
}

#[derive(Debug, Clone)]
pub enum EvalMode<'a> {
    Phone {
        beam: usize,
    },
    Word {
        lexicon: &'a Lexicon,
        lm: &'a NGramLM,
        cfg: &'a DecodeConfig,
    },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalReport {
    pub error_rate_percent: f64,
    pub edits: usize,
    pub ref_len: usize,
}

/// CLI metric output line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricOutput {
    pub metric: String,
    pub value_percent: f64,
    pub dataset: String,
    pub checkpoint: String,
    pub config_hash: String,
}

/// Hex SHA-256 over the canonical JSON of a config snapshot.
pub fn config_hash(snapshot: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(snapshot.to_string().as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// PER or WER over a dataset. Evaluation always stacks at the configured
/// eval offset and never augments.
pub fn evaluate(
    model: &Model,
    utts: &[Utterance],
    mode: &EvalMode,
    fcfg: &FeatureConfig,
) -> Result<EvalReport> {
    if utts.is_empty() {
        return Err(Error::EmptyInput("evaluate dataset"));
    }
    let blank = model.token_set.blank_index();
    let mut stats = ErrorRateStats::default();
    // forward() takes an rng but never draws from it outside training.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for u in utts {
        let stacked = stack_frames(&u.features, fcfg.eval_stack_offset, fcfg)?;
        let cache = model.forward(&stacked, false, &mut rng)?;
        match mode {
            EvalMode::Phone { beam } => {
                let reference = u.transcript.as_ref().ok_or_else(|| {
                    Error::InvalidArg(format!("utterance {} has no phone reference", u.id))
                })?;
                let hyps = prefix_beam_decode(&cache.log_probs, blank, *beam)?;
                stats.add(reference, &hyps[0].tokens);
            }
            EvalMode::Word { lexicon, lm, cfg } => {
                let reference = u.word_transcript.as_ref().ok_or_else(|| {
                    Error::InvalidArg(format!("utterance {} has no word reference", u.id))
                })?;
                let hyp = word_beam_decode(&cache.log_probs, lexicon, lm, blank, cfg)?;
                stats.add(&filter_for_wer(reference), &filter_for_wer(&hyp.words));
            }
        }
    }
    Ok(EvalReport {
        error_rate_percent: stats.percent(),
        edits: stats.edits,
        ref_len: stats.ref_len,
    })
}

/// Augment, stack with a random offset, run forward/backward, and add the
/// scaled parameter gradients. Returns None (and accumulates nothing) when
/// the label cannot be aligned to the utterance's frames.
fn accumulate(
    model: &Model,
    utt: &Utterance,
    label: &[usize],
    scale: f64,
    aug: &AugmentConfig,
    fcfg: &FeatureConfig,
    rng: &mut ChaCha8Rng,
    grads: &mut GradStore,
) -> Result<Option<f64>> {
    let augmented = augment_utterance(utt, aug, rng)?;
    let offset = if fcfg.stack_size > 1 {
        rng.gen_range(0..fcfg.stack_size)
    } else {
        0
    };
    let stacked = stack_frames(&augmented.features, offset, fcfg)?;
    let cache = model.forward(&stacked, true, rng)?;
    match ctc_loss(&cache.log_probs, label, model.token_set.blank_index()) {
        Ok((loss, mut d_logits)) => {
            if scale != 1.0 {
                for v in d_logits.data_mut() {
                    *v *= scale;
                }
            }
            model.backward(&cache, &d_logits, grads);
            Ok(Some(scale * loss))
        }
        Err(Error::InfeasibleLabel { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy)]
struct UnsupArgs<'a> {
    pool: &'a [Utterance],
    /// None means labels are regenerated on the fly (self-training).
    labels: Option<&'a BTreeMap<String, Vec<usize>>>,
    cfg: &'a DistillConfig,
}

/// Without-replacement sampler over the unsupervised pool, reshuffling on
/// exhaustion and persisting across epochs.
struct UnsupPool {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl UnsupPool {
    fn new(len: usize, rng: ChaCha8Rng) -> UnsupPool {
        UnsupPool {
            order: (0..len).collect(),
            pos: len, // force a shuffle on first draw
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// The shared training loop. `phases` partitions the epochs into segments
/// with different trainable sets (used by LIN warmup); `unsup` switches the
/// step structure to sup_per_step + unsup_per_step mixed batches.
#[allow(clippy::too_many_arguments)]
fn fit(
    init: &Model,
    sup: &[Utterance],
    dev: &[Utterance],
    run: &RunConfig,
    aug: &AugmentConfig,
    fcfg: &FeatureConfig,
    phases: &[(usize, TrainableSet)],
    unsup: Option<UnsupArgs>,
    config_snapshot: serde_json::Value,
) -> Result<(Model, ExperimentRecord)> {
    if sup.is_empty() {
        return Err(Error::EmptyInput("supervised training set"));
    }
    if run.minibatch == 0 {
        return Err(Error::InvalidArg("minibatch must be >= 1".into()));
    }
    for u in sup {
        if u.transcript.is_none() {
            return Err(Error::InvalidArg(format!(
                "training utterance {} has no transcript",
                u.id
            )));
        }
    }
    if let Some(args) = &unsup {
        args.cfg.validate()?;
        if let Some(map) = args.labels {
            for u in args.pool {
                match map.get(&u.id) {
                    None => {
                        return Err(Error::InvalidArg(format!(
                            "unsupervised utterance {} has no pseudo-label",
                            u.id
                        )))
                    }
                    Some(l) if l.is_empty() => {
                        return Err(Error::InvalidArg(format!(
                            "unsupervised utterance {} has an empty pseudo-label",
                            u.id
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
    }

    let mut model = init.clone();
    model.config.dropout_rate = run.dropout;
    let blank = model.token_set.blank_index();
    let eval_mode = EvalMode::Phone { beam: run.eval_beam };
    let init_per = evaluate(&model, dev, &eval_mode, fcfg)?.error_rate_percent;
    let mut curve = vec![init_per];
    let mut best_per = init_per;
    let mut best_epoch = 0usize;
    let mut best_model = model.clone();
    let mut skipped = 0usize;
    let mut sup_consumed = 0usize;
    let mut unsup_consumed = 0usize;
    let mut self_labels_by_epoch: Vec<BTreeMap<String, Vec<usize>>> = Vec::new();
    let mut adam: BTreeMap<String, AdamState> = BTreeMap::new();
    let mut pool = unsup
        .as_ref()
        .map(|a| UnsupPool::new(a.pool.len(), rng_for(run.seed, "unsup-order")));
    let sup_chunk = match &unsup {
        Some(args) => args.cfg.sup_per_step,
        None => run.minibatch,
    };

    let mut epoch = 0usize;
    for (phase_epochs, trainable) in phases {
        for _ in 0..*phase_epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..sup.len()).collect();
            order.shuffle(&mut rng_for(run.seed, &format!("shuffle:{epoch}")));
            let mut epoch_self_labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (step, chunk) in order.chunks(sup_chunk).enumerate() {
                let mut grads = model.zero_grads();
                for &idx in chunk {
                    let u = &sup[idx];
                    let label = u.transcript.as_ref().unwrap();
                    let mut urng = rng_for(run.seed, &format!("sup:{epoch}:{}", u.id));
                    if accumulate(&model, u, label, 1.0, aug, fcfg, &mut urng, &mut grads)?
                        .is_none()
                    {
                        skipped += 1;
                        log::warn!("skipping {}: label longer than its frames", u.id);
                    }
                    sup_consumed += 1;
                }
                if let Some(args) = &unsup {
                    let pool = pool.as_mut().unwrap();
                    for _ in 0..args.cfg.unsup_per_step {
                        let u = &args.pool[pool.next()];
                        unsup_consumed += 1;
                        // With a zero discount the pseudo-label term
                        // contributes nothing; skip the compute.
                        if args.cfg.discount == 0.0 {
                            continue;
                        }
                        let label: Vec<usize> = match args.labels {
                            Some(map) => map[&u.id].clone(),
                            None => {
                                // Self-training: greedy-decode the clean
                                // features of the current model.
                                let stacked =
                                    stack_frames(&u.features, fcfg.eval_stack_offset, fcfg)?;
                                let mut dummy = ChaCha8Rng::seed_from_u64(0);
                                let cache = model.forward(&stacked, false, &mut dummy)?;
                                let hyp = greedy_decode(&cache.log_probs, blank);
                                if hyp.tokens.is_empty() {
                                    skipped += 1;
                                    continue;
                                }
                                epoch_self_labels.insert(u.id.clone(), hyp.tokens.clone());
                                hyp.tokens
                            }
                        };
                        let mut urng =
                            rng_for(run.seed, &format!("unsup:{epoch}:{step}:{}", u.id));
                        if accumulate(
                            &model,
                            u,
                            &label,
                            args.cfg.discount,
                            aug,
                            fcfg,
                            &mut urng,
                            &mut grads,
                        )?
                        .is_none()
                        {
                            skipped += 1;
                        }
                    }
                }
                for name in trainable {
                    let g = grads.get(name).ok_or_else(|| {
                        Error::InvalidArg(format!("unknown trainable tensor {name}"))
                    })?;
                    let state = adam
                        .entry(name.clone())
                        .or_insert_with(|| AdamState::new(g.rows(), g.cols(), run.learning_rate));
                    adam_step(model.tensor_mut(name).unwrap(), g, state)?;
                }
            }
            if unsup.as_ref().is_some_and(|a| a.labels.is_none()) {
                self_labels_by_epoch.push(epoch_self_labels);
            }
            let per = evaluate(&model, dev, &eval_mode, fcfg)?.error_rate_percent;
            curve.push(per);
            // Strict comparison keeps the earliest epoch on ties.
            if per < best_per {
                best_per = per;
                best_epoch = epoch;
                best_model = model.clone();
            }
        }
    }

    let record = ExperimentRecord {
        dev_per_by_epoch: curve,
        best_epoch,
        best_dev_per: best_per,
        best_checkpoint: None,
        seed: run.seed,
        config: config_snapshot,
        skipped_utterances: skipped,
        sup_consumed,
        unsup_consumed,
        self_labels_by_epoch,
    };
    Ok((best_model, record))
}

/// Supervised CTC training with per-epoch dev selection.
pub fn train_supervised(
    init: &Model,
    train: &[Utterance],
    dev: &[Utterance],
    run: &RunConfig,
    aug: &AugmentConfig,
    fcfg: &FeatureConfig,
    trainable: &TrainableSet,
) -> Result<(Model, ExperimentRecord)> {
    let snapshot = serde_json::json!({
        "regime": "train_supervised",
        "run": run, "augment": aug, "features": fcfg, "model": init.config,
    });
    fit(
        init,
        train,
        dev,
        run,
        aug,
        fcfg,
        &[(run.epochs, trainable.clone())],
        None,
        snapshot,
    )
}

/// Domain adaptation: replace the head for the target token set, optionally
/// insert an identity LIN and freeze everything but LIN + head for the
/// warmup epochs, then finetune everything.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    pretrained: &Model,
    train: &[Utterance],
    dev: &[Utterance],
    target_tokens: TokenSet,
    use_lin: bool,
    run: &RunConfig,
    aug: &AugmentConfig,
    fcfg: &FeatureConfig,
) -> Result<(Model, ExperimentRecord)> {
    let mut head_rng = rng_for(run.seed, "adapt-head");
    let mut model = pretrained.replace_head(target_tokens, &mut head_rng);
    let phases = if use_lin {
        model = model.insert_lin()?;
        let warm = run.warmup_epochs.min(run.epochs);
        vec![
            (warm, model.set_trainable(AdaptationPhase::LinWarmup)?),
            (run.epochs - warm, model.set_trainable(AdaptationPhase::Full)?),
        ]
    } else {
        vec![(run.epochs, model.set_trainable(AdaptationPhase::Full)?)]
    };
    let snapshot = serde_json::json!({
        "regime": "adapt", "use_lin": use_lin,
        "run": run, "augment": aug, "features": fcfg, "model": model.config,
    });
    fit(&model, train, dev, run, aug, fcfg, &phases, None, snapshot)
}

/// One pseudo-label line of the JSONL label file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub id: String,
    /// Phone symbols (not indices), matching manifest transcripts.
    pub phones: Vec<String>,
    pub source: String,
    pub teacher_logprob: f64,
}

/// Decode pseudo-labels for an unsupervised pool with a fixed teacher.
/// Utterances with empty decodes or incomplete word decodes are skipped;
/// the second return value counts them.
pub fn pseudo_label(
    teacher: &Model,
    unsup: &[Utterance],
    source: LabelSource,
    beam: usize,
    word: Option<(&Lexicon, &NGramLM, &DecodeConfig)>,
    fcfg: &FeatureConfig,
) -> Result<(Vec<PseudoLabel>, usize)> {
    let blank = teacher.token_set.blank_index();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for u in unsup {
        let stacked = stack_frames(&u.features, fcfg.eval_stack_offset, fcfg)?;
        let cache = teacher.forward(&stacked, false, &mut rng)?;
        match source {
            LabelSource::PhoneDecode => {
                let hyps = prefix_beam_decode(&cache.log_probs, blank, beam)?;
                let best = &hyps[0];
                if best.tokens.is_empty() {
                    skipped += 1;
                    log::warn!("skipping {}: empty phone decode", u.id);
                    continue;
                }
                out.push(PseudoLabel {
                    id: u.id.clone(),
                    phones: best
                        .tokens
                        .iter()
                        .map(|&t| teacher.token_set.token(t).unwrap().to_string())
                        .collect(),
                    source: "phone_decode".into(),
                    teacher_logprob: best.log_prob,
                });
            }
            LabelSource::WordDecode => {
                let (lexicon, lm, cfg) = word.ok_or_else(|| {
                    Error::InvalidArg("word_decode labels need a lexicon and LM".into())
                })?;
                let hyp = word_beam_decode(&cache.log_probs, lexicon, lm, blank, cfg)?;
                if hyp.words.is_empty() || !hyp.complete {
                    skipped += 1;
                    log::warn!("skipping {}: empty or incomplete word decode", u.id);
                    continue;
                }
                let phones = match words_to_phones(&hyp.words, lexicon) {
                    Ok(p) => p,
                    Err(Error::Oov(w)) => {
                        skipped += 1;
                        log::warn!("skipping {}: decoded word {w} not in lexicon", u.id);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                out.push(PseudoLabel {
                    id: u.id.clone(),
                    phones: phones
                        .iter()
                        .map(|&t| teacher.token_set.token(t).unwrap().to_string())
                        .collect(),
                    source: "word_decode".into(),
                    teacher_logprob: hyp.log_score,
                });
            }
            LabelSource::SelfLabel => {
                return Err(Error::InvalidArg(
                    "self labels are generated during training, not offline".into(),
                ))
            }
        }
    }
    Ok((out, skipped))
}

/// Index pseudo-labels by utterance id as token indices of `token_set`.
pub fn labels_to_map(
    labels: &[PseudoLabel],
    token_set: &TokenSet,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for l in labels {
        let mut phones = Vec::with_capacity(l.phones.len());
        for p in &l.phones {
            phones.push(
                token_set
                    .index_of(p)
                    .ok_or_else(|| Error::UnknownToken(format!("{p} in label for {}", l.id)))?,
            );
        }
        out.insert(l.id.clone(), phones);
    }
    Ok(out)
}

/// Teacher-student distillation on fixed offline pseudo-labels: each step
/// mixes sup_per_step supervised and unsup_per_step pseudo-labeled
/// utterances, the latter discounted by lambda.
#[allow(clippy::too_many_arguments)]
pub fn train_distill(
    init: &Model,
    sup: &[Utterance],
    unsup: &[Utterance],
    labels: &BTreeMap<String, Vec<usize>>,
    dev: &[Utterance],
    dcfg: &DistillConfig,
    run: &RunConfig,
    aug: &AugmentConfig,
    fcfg: &FeatureConfig,
) -> Result<(Model, ExperimentRecord)> {
    let snapshot = serde_json::json!({
        "regime": "train_distill", "distill": dcfg,
        "run": run, "augment": aug, "features": fcfg, "model": init.config,
    });
    let trainable: TrainableSet = init.tensor_names().into_iter().collect();
    fit(
        init,
        sup,
        dev,
        run,
        aug,
        fcfg,
        &[(run.epochs, trainable)],
        Some(UnsupArgs {
            pool: unsup,
            labels: Some(labels),
            cfg: dcfg,
        }),
        snapshot,
    )
}

/// Self-training: per step, pseudo-labels for the sampled unsupervised
/// utterances are regenerated by greedy decoding the current model on their
/// clean features; the CTC loss is taken on the augmented version.
pub fn self_train(
    init: &Model,
    sup: &[Utterance],
    unsup: &[Utterance],
    dev: &[Utterance],
    dcfg: &DistillConfig,
    run: &RunConfig,
    aug: &AugmentConfig,
    fcfg: &FeatureConfig,
) -> Result<(Model, ExperimentRecord)> {
    let snapshot = serde_json::json!({
        "regime": "self_train", "distill": dcfg,
        "run": run, "augment": aug, "features": fcfg, "model": init.config,
    });
    let trainable: TrainableSet = init.tensor_names().into_iter().collect();
    fit(
        init,
        sup,
        dev,
        run,
        aug,
        fcfg,
        &[(run.epochs, trainable)],
        Some(UnsupArgs {
            pool: unsup,
            labels: None,
            cfg: dcfg,
        }),
        snapshot,
    )
}
