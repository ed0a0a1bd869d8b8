//! Connectionist temporal classification: the blank-augmented
//! forward-backward loss with analytic gradients, greedy decoding, and
//! prefix beam search.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logaddexp, Matrix};

/// Ordered token inventory with a reserved blank. Blank lives at index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSet {
    tokens: Vec<String>,
    blank_index: usize,
}

impl TokenSet {
    /// Build a token set whose first entry is the blank symbol.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("TokenSet::new"));
        }
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if seen.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArg(format!("duplicate token {t:?}")));
            }
        }
        Ok(TokenSet {
            tokens,
            blank_index: 0,
        })
    }

    pub fn blank_index(&self) -> usize {
        self.blank_index
    }

    pub fn blank_symbol(&self) -> &str {
        &self.tokens[self.blank_index]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }
}

/// A scored, blank-free decoding result.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

/// CTC collapse: merge adjacent repeats, then delete blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

fn augmented_label(label: &[usize], blank: usize) -> Vec<usize> {
    let mut aug = Vec::with_capacity(2 * label.len() + 1);
    aug.push(blank);
    for &l in label {
        aug.push(l);
        aug.push(blank);
    }
    aug
}

/// Minimal number of frames needed to emit `label`: one per token plus one
/// blank between each adjacent repeat.
fn min_frames(label: &[usize]) -> usize {
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    label.len() + repeats
}

/// CTC loss over the blank-augmented label, in log space, together with the
/// exact gradient w.r.t. the pre-softmax logits.
///
/// `log_posteriors` is T×V with log_softmax rows; `label` is blank-free.
pub fn ctc_loss(log_posteriors: &Matrix, label: &[usize], blank: usize) -> Result<(f64, Matrix)> {
    let t_len = log_posteriors.rows();
    let v = log_posteriors.cols();
    if t_len == 0 {
        return Err(Error::EmptyInput("ctc_loss"));
    }
    if label.iter().any(|&l| l == blank) {
        return Err(Error::InvalidArg("label contains blank".into()));
    }
    if let Some(&bad) = label.iter().find(|&&l| l >= v) {
        return Err(Error::InvalidArg(format!("label token {bad} out of range for V={v}")));
    }
    if min_frames(label) > t_len {
        return Err(Error::InfeasibleLabel {
            label_len: label.len(),
            frames: t_len,
        });
    }

    let aug = augmented_label(label, blank);
    let s_len = aug.len();
    let y = |t: usize, s: usize| log_posteriors.get(t, aug[s]);

    // Skip from s-2 to s is allowed when l'(s) is a real token different
    // from l'(s-2).
    let skip_ok = |s: usize| s >= 2 && aug[s] != blank && aug[s] != aug[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    let mut beta = vec![ninf; t_len * s_len];
    let idx = |t: usize, s: usize| t * s_len + s;

    alpha[idx(0, 0)] = y(0, 0);
    if s_len > 1 {
        alpha[idx(0, 1)] = y(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[idx(t - 1, s)];
            if s >= 1 {
                a = logaddexp(a, alpha[idx(t - 1, s - 1)]);
            }
            if skip_ok(s) {
                a = logaddexp(a, alpha[idx(t - 1, s - 2)]);
            }
            if a != ninf {
                alpha[idx(t, s)] = a + y(t, s);
            }
        }
    }

    let log_z = logaddexp(
        alpha[idx(t_len - 1, s_len - 1)],
        if s_len >= 2 { alpha[idx(t_len - 1, s_len - 2)] } else { ninf },
    );
    if log_z == ninf {
        return Err(Error::InfeasibleLabel {
            label_len: label.len(),
            frames: t_len,
        });
    }

    // Beta includes the emission at its own frame, like alpha.
    beta[idx(t_len - 1, s_len - 1)] = y(t_len - 1, s_len - 1);
    if s_len >= 2 {
        beta[idx(t_len - 1, s_len - 2)] = y(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[idx(t + 1, s)];
            if s + 1 < s_len {
                b = logaddexp(b, beta[idx(t + 1, s + 1)]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = logaddexp(b, beta[idx(t + 1, s + 2)]);
            }
            if b != ninf {
                beta[idx(t, s)] = b + y(t, s);
            }
        }
    }

    // grad w.r.t. logits: posterior minus label-occupancy.
    let mut grad = Matrix::zeros(t_len, v);
    let mut occ = vec![ninf; v];
    for t in 0..t_len {
        occ.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let a = alpha[idx(t, s)];
            let b = beta[idx(t, s)];
            if a == ninf || b == ninf {
                continue;
            }
            // alpha and beta both include the emission at frame t; divide
            // one copy back out.
            let mass = a + b - y(t, s);
            occ[aug[s]] = logaddexp(occ[aug[s]], mass);
        }
        for k in 0..v {
            let gamma = if occ[k] == ninf { 0.0 } else { (occ[k] - log_z).exp() };
            grad.set(t, k, log_posteriors.get(t, k).exp() - gamma);
        }
    }

    Ok((-log_z, grad))
}

/// Per-frame argmax path, then collapse. Ties go to the lowest token index.
pub fn greedy_decode(log_posteriors: &Matrix, blank: usize) -> Hypothesis {
    let mut path = Vec::with_capacity(log_posteriors.rows());
    let mut log_prob = 0.0;
    for t in 0..log_posteriors.rows() {
        let row = log_posteriors.row(t);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        log_prob += row[best];
        path.push(best);
    }
    Hypothesis {
        tokens: collapse(&path, blank),
        log_prob,
    }
}

/// CTC prefix beam search. Tracks per-prefix ends-in-blank / ends-in-token
/// log mass and returns the top `beam` distinct blank-free label sequences
/// ranked by total mass.
pub fn prefix_beam_decode(log_posteriors: &Matrix, blank: usize, beam: usize) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::InvalidArg("beam must be >= 1".into()));
    }
    let v = log_posteriors.cols();
    let ninf = f64::NEG_INFINITY;

    // prefix -> (log p ending in blank, log p ending in last token)
    let mut beams: Vec<(Vec<usize>, f64, f64)> = vec![(Vec::new(), 0.0, ninf)];

    for t in 0..log_posteriors.rows() {
        let row = log_posteriors.row(t);
        let mut next: HashMap<Vec<usize>, (f64, f64)> = HashMap::new();
        for (prefix, pb, pnb) in &beams {
            let total = logaddexp(*pb, *pnb);
            // Emit blank: prefix unchanged, now ends in blank.
            {
                let e = next.entry(prefix.clone()).or_insert((ninf, ninf));
                e.0 = logaddexp(e.0, row[blank] + total);
            }
            for k in 0..v {
                if k == blank {
                    continue;
                }
                let score = row[k];
                if prefix.last() == Some(&k) {
                    // Repeat of the last token merges unless a blank
                    // intervened.
                    let e = next.entry(prefix.clone()).or_insert((ninf, ninf));
                    e.1 = logaddexp(e.1, score + *pnb);
                    let mut ext = prefix.clone();
                    ext.push(k);
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = logaddexp(e.1, score + *pb);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(k);
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = logaddexp(e.1, score + total);
                }
            }
        }
        let mut candidates: Vec<(Vec<usize>, f64, f64)> =
            next.into_iter().map(|(p, (pb, pnb))| (p, pb, pnb)).collect();
        candidates.sort_by(|a, b| {
            let sa = logaddexp(a.1, a.2);
            let sb = logaddexp(b.1, b.2);
            sb.total_cmp(&sa).then_with(|| a.0.cmp(&b.0))
        });
        candidates.truncate(beam);
        beams = candidates;
    }

    Ok(beams
        .into_iter()
        .map(|(tokens, pb, pnb)| Hypothesis {
            log_prob: logaddexp(pb, pnb),
            tokens,
        })
        .collect())
}
