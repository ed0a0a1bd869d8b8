//! Flat `key = value` config files. Keys are dotted per subsystem
//! (`features.mel_bins`, `train.learning_rate`, ...) and mirror the CLI
//! flags; values override the corresponding defaults.

use std::collections::BTreeMap;

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::ModelConfig;
use crate::pipeline::{DistillConfig, LabelSource, RunConfig};
use crate::wordlm::DecodeConfig;

const KNOWN_KEYS: &[&str] = &[
    "features.sample_rate",
    "features.window_ms",
    "features.hop_ms",
    "features.mel_bins",
    "features.stack_size",
    "features.eval_stack_offset",
    "model.num_layers",
    "model.hidden_units",
    "model.bidirectional",
    "augment.enabled",
    "augment.speed_factors",
    "augment.freq_mask_max",
    "augment.time_mask_max",
    "augment.apply_prob",
    "decode.beam",
    "decode.blank_prior",
    "decode.lm_weight",
    "decode.word_insertion_penalty",
    "train.learning_rate",
    "train.dropout",
    "train.epochs",
    "train.minibatch",
    "train.eval_beam",
    "train.warmup_epochs",
    "train.seed",
    "distill.sup_per_step",
    "distill.unsup_per_step",
    "distill.discount",
    "distill.label_source",
];

#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    values: BTreeMap<String, String>,
}

impl FlatConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected with their line number.
    pub fn parse(text: &str) -> Result<FlatConfig> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("unknown config key {key:?}"),
                });
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FlatConfig { values })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidArg(format!("config key {key}: cannot parse {v:?}"))
            }),
        }
    }

    fn get_into<T: std::str::FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn apply_features(&self, cfg: &mut FeatureConfig) -> Result<()> {
        self.get_into("features.sample_rate", &mut cfg.sample_rate)?;
        self.get_into("features.window_ms", &mut cfg.window_ms)?;
        self.get_into("features.hop_ms", &mut cfg.hop_ms)?;
        self.get_into("features.mel_bins", &mut cfg.mel_bins)?;
        self.get_into("features.stack_size", &mut cfg.stack_size)?;
        self.get_into("features.eval_stack_offset", &mut cfg.eval_stack_offset)?;
        Ok(())
    }

    pub fn apply_model(&self, cfg: &mut ModelConfig) -> Result<()> {
        self.get_into("model.num_layers", &mut cfg.num_layers)?;
        self.get_into("model.hidden_units", &mut cfg.hidden_units)?;
        self.get_into("model.bidirectional", &mut cfg.bidirectional)?;
        Ok(())
    }

    pub fn apply_augment(&self, cfg: &mut AugmentConfig) -> Result<()> {
        self.get_into("augment.enabled", &mut cfg.enabled)?;
        if let Some(list) = self.values.get("augment.speed_factors") {
            let mut factors = Vec::new();
            for part in list.split(',') {
                factors.push(part.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidArg(format!("augment.speed_factors: bad entry {part:?}"))
                })?);
            }
            cfg.speed_factors = factors;
        }
        self.get_into("augment.freq_mask_max", &mut cfg.freq_mask_max)?;
        self.get_into("augment.time_mask_max", &mut cfg.time_mask_max)?;
        self.get_into("augment.apply_prob", &mut cfg.apply_prob)?;
        Ok(())
    }

    pub fn apply_decode(&self, cfg: &mut DecodeConfig) -> Result<()> {
        self.get_into("decode.beam", &mut cfg.beam)?;
        self.get_into("decode.blank_prior", &mut cfg.blank_prior)?;
        self.get_into("decode.lm_weight", &mut cfg.lm_weight)?;
        self.get_into("decode.word_insertion_penalty", &mut cfg.word_insertion_penalty)?;
        Ok(())
    }

    pub fn apply_run(&self, cfg: &mut RunConfig) -> Result<()> {
        self.get_into("train.learning_rate", &mut cfg.learning_rate)?;
        self.get_into("train.dropout", &mut cfg.dropout)?;
        self.get_into("train.epochs", &mut cfg.epochs)?;
        self.get_into("train.minibatch", &mut cfg.minibatch)?;
        self.get_into("train.eval_beam", &mut cfg.eval_beam)?;
        self.get_into("train.warmup_epochs", &mut cfg.warmup_epochs)?;
        self.get_into("train.seed", &mut cfg.seed)?;
        Ok(())
    }

    pub fn apply_distill(&self, cfg: &mut DistillConfig) -> Result<()> {
        self.get_into("distill.sup_per_step", &mut cfg.sup_per_step)?;
        self.get_into("distill.unsup_per_step", &mut cfg.unsup_per_step)?;
        self.get_into("distill.discount", &mut cfg.discount)?;
        if let Some(v) = self.values.get("distill.label_source") {
            cfg.label_source = match v.as_str() {
                "phone_decode" => LabelSource::PhoneDecode,
                "word_decode" => LabelSource::WordDecode,
                "self" => LabelSource::SelfLabel,
                other => {
                    return Err(Error::InvalidArg(format!(
                        "distill.label_source: unknown source {other:?}"
                    )))
                }
            };
        }
        Ok(())
    }
}
