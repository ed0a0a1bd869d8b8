//! Dataset IO: JSONL manifests, token inventories, and loading manifests
//! into in-memory utterances.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctc::TokenSet;
use crate::error::{Error, Result};
use crate::features::{lfbe_extract, read_feature_file, read_wav_mono, FeatureConfig, Utterance};

/// One line of a JSONL manifest. Exactly one of `audio_path` /
/// `features_path` should be set; `transcript` is space-separated token
/// symbols and is absent for unsupervised data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    /// Word-level reference transcript, space-separated; used only for WER
    /// scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<String>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Token inventory file: one symbol per line, blank first.
pub fn read_token_set(path: &Path) -> Result<TokenSet> {
    let text = fs::read_to_string(path)?;
    let tokens: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    TokenSet::new(tokens)
}

pub fn write_token_set(path: &Path, token_set: &TokenSet) -> Result<()> {
    let mut text = String::new();
    for t in token_set.tokens() {
        text.push_str(t);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load a manifest into utterances. Relative paths resolve against the
/// manifest's directory. Entries with only audio get features extracted on
/// the fly; transcripts are mapped through `token_set`.
pub fn load_utterances(
    manifest_path: &Path,
    token_set: &TokenSet,
    fcfg: &FeatureConfig,
) -> Result<Vec<Utterance>> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let entries = read_manifest(manifest_path)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let features = match (&e.features_path, &e.audio_path) {
            (Some(fp), _) => read_feature_file(&resolve(&base, fp))?,
            (None, Some(ap)) => {
                let (pcm, rate) = read_wav_mono(&resolve(&base, ap))?;
                if rate != fcfg.sample_rate {
                    return Err(Error::InvalidArg(format!(
                        "utterance {}: wav sample rate {rate} != configured {}",
                        e.id, fcfg.sample_rate
                    )));
                }
                lfbe_extract(&pcm, fcfg)?
            }
            (None, None) => {
                return Err(Error::InvalidArg(format!(
                    "utterance {}: neither audio_path nor features_path set",
                    e.id
                )))
            }
        };
        let transcript = match &e.transcript {
            Some(text) => {
                let mut toks = Vec::new();
                for sym in text.split_whitespace() {
                    let idx = token_set
                        .index_of(sym)
                        .ok_or_else(|| Error::UnknownToken(format!("{} in utterance {}", sym, e.id)))?;
                    toks.push(idx);
                }
                Some(toks)
            }
            None => None,
        };
        let word_transcript = e
            .words
            .as_ref()
            .map(|w| w.split_whitespace().map(String::from).collect());
        out.push(Utterance {
            id: e.id,
            speaker: e.speaker,
            features,
            transcript,
            word_transcript,
        });
    }
    Ok(out)
}
