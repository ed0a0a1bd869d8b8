//! Lexicon-constrained word decoding: posterior-to-likelihood conversion
//! with a tunable blank prior, and token passing over the pronunciation
//! trie with CTC blank/repeat transition rules and n-gram LM rescoring.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

use super::arpa::{lm_score, NGramLM};
use super::lexicon::{Lexicon, TRIE_ROOT};

const LN10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Blank prior beta in (0,1); non-blank symbols share 1-beta uniformly.
    pub blank_prior: f64,
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 20,
            blank_prior: 0.5,
            lm_weight: 1.0,
            word_insertion_penalty: 0.0,
        }
    }
}

/// Divide per-frame posteriors by a class prior: beta for blank, uniform
/// (1-beta)/(V-1) for everything else. Keeps the non-blank ranking intact.
pub fn posterior_to_loglik(log_posteriors: &Matrix, blank: usize, beta: f64) -> Result<Matrix> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::InvalidArg(format!("blank prior {beta} not in (0,1)")));
    }
    let v = log_posteriors.cols();
    let log_blank_prior = beta.ln();
    let log_other_prior = ((1.0 - beta) / (v - 1) as f64).ln();
    let mut out = log_posteriors.clone();
    for t in 0..out.rows() {
        for k in 0..v {
            let prior = if k == blank { log_blank_prior } else { log_other_prior };
            out.set(t, k, out.get(t, k) - prior);
        }
    }
    Ok(out)
}

/// A decoded word sequence with its combined acoustic + LM score.
#[derive(Debug, Clone, PartialEq)]
pub struct WordHypothesis {
    pub words: Vec<String>,
    pub log_score: f64,
    /// False when every surviving beam state ended mid-word and the
    /// partial tail was dropped.
    pub complete: bool,
}

/// Search state: position in the pronunciation trie plus the CTC emission
/// context and the words emitted so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct State {
    node: usize,
    /// Last emitted phone, for the CTC repeat rule.
    last_phone: Option<usize>,
    ends_in_blank: bool,
    words: Vec<usize>,
}

/// Viterbi token passing over (trie node, blank flag, LM history) states.
/// Word-terminal nodes emit the word, add the scaled LM score plus the
/// insertion penalty, and restart at the trie root. Returns the best
/// complete-word sequence; a partial-word tail is dropped.
pub fn word_beam_decode(
    log_posteriors: &Matrix,
    lexicon: &Lexicon,
    lm: &NGramLM,
    blank: usize,
    cfg: &DecodeConfig,
) -> Result<WordHypothesis> {
    if lexicon.is_empty() {
        return Err(Error::EmptyInput("word_beam_decode lexicon"));
    }
    if log_posteriors.rows() == 0 {
        return Err(Error::EmptyInput("word_beam_decode frames"));
    }
    if cfg.beam == 0 {
        return Err(Error::InvalidArg("beam must be >= 1".into()));
    }
    let loglik = posterior_to_loglik(log_posteriors, blank, cfg.blank_prior)?;

    let mut beams: HashMap<State, f64> = HashMap::new();
    beams.insert(
        State {
            node: TRIE_ROOT,
            last_phone: None,
            ends_in_blank: true,
            words: Vec::new(),
        },
        0.0,
    );

    let mut next: HashMap<State, f64> = HashMap::new();
    for t in 0..loglik.rows() {
        let row = loglik.row(t);
        next.clear();
        for (state, score) in beams.iter() {
            // Stay put on a blank frame.
            relax(
                &mut next,
                State {
                    ends_in_blank: true,
                    ..state.clone()
                },
                score + row[blank],
            );
            // Re-emit the last phone without advancing (CTC repeat merge);
            // only legal when no blank intervened.
            if let (Some(p), false) = (state.last_phone, state.ends_in_blank) {
                relax(&mut next, state.clone(), score + row[p]);
            }
            // Advance along a trie edge with a fresh phone token.
            for (&phone, &child) in &lexicon.node(state.node).children {
                if state.last_phone == Some(phone) && !state.ends_in_blank {
                    continue;
                }
                let advanced = State {
                    node: child,
                    last_phone: Some(phone),
                    ends_in_blank: false,
                    words: state.words.clone(),
                };
                let advanced_score = score + row[phone];
                // Word ends here: emit, rescore, restart at the root. The
                // non-emitting state also survives for longer words.
                for &word_id in &lexicon.node(child).words {
                    let word = lexicon.word(word_id);
                    let history: Vec<String> = advanced
                        .words
                        .iter()
                        .map(|&w| lexicon.word(w).to_string())
                        .collect();
                    let lm_log10 = lm_score(lm, &history, word)?;
                    let mut words = advanced.words.clone();
                    words.push(word_id);
                    relax(
                        &mut next,
                        State {
                            node: TRIE_ROOT,
                            last_phone: Some(phone),
                            ends_in_blank: false,
                            words,
                        },
                        advanced_score
                            + cfg.lm_weight * lm_log10 * LN10
                            + cfg.word_insertion_penalty,
                    );
                }
                relax(&mut next, advanced, advanced_score);
            }
        }
        // Prune deterministically: score, then state order.
        let mut states: Vec<(State, f64)> = next.drain().collect();
        states.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        states.truncate(cfg.beam);
        beams = states.into_iter().collect();
    }

    // Prefer states whose frames are fully explained by complete words.
    let complete_best = beams
        .iter()
        .filter(|(s, _)| s.node == TRIE_ROOT)
        .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)));
    let (best, complete) = match complete_best {
        Some(b) => (b, true),
        None => (
            beams
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .expect("beam never empties"),
            false,
        ),
    };
    Ok(WordHypothesis {
        words: best.0.words.iter().map(|&w| lexicon.word(w).to_string()).collect(),
        log_score: *best.1,
        complete,
    })
}

fn relax(map: &mut HashMap<State, f64>, state: State, score: f64) {
    map.entry(state)
        .and_modify(|s| {
            if score > *s {
                *s = score;
            }
        })
        .or_insert(score);
}
