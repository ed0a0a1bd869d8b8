//! Brute-force oracles shared by the integration tests: exhaustive path
//! enumeration for CTC quantities and decoders, plus finite-difference
//! helpers. Everything here is deliberately exponential-time and only run
//! on tiny instances.

use lark_core::ctc::collapse;
use lark_core::math::{log_softmax, logaddexp, Matrix};
use lark_core::wordlm::{lm_score, posterior_to_loglik, DecodeConfig, Lexicon, NGramLM, TRIE_ROOT};

pub const LN10: f64 = std::f64::consts::LN_10;

/// Random log-posterior matrix: T rows of log_softmax over V logits.
pub fn random_logpost<R: rand::Rng>(rng: &mut R, t: usize, v: usize) -> Matrix {
    let mut data = Vec::with_capacity(t * v);
    for _ in 0..t {
        let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        data.extend(log_softmax(&logits).unwrap());
    }
    Matrix::from_vec(t, v, data).unwrap()
}

fn for_each_path(t: usize, v: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; t];
    loop {
        f(&path);
        let mut i = 0;
        loop {
            if i == t {
                return;
            }
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// CTC loss by enumerating all V^T frame paths: -log of the total mass of
/// paths collapsing to `label`.
pub fn brute_ctc_loss(log_posteriors: &Matrix, label: &[usize], blank: usize) -> f64 {
    let (t, v) = (log_posteriors.rows(), log_posteriors.cols());
    let mut total = f64::NEG_INFINITY;
    for_each_path(t, v, |path| {
        if collapse(path, blank) == label {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(i, &k)| log_posteriors.get(i, k))
                .sum();
            total = logaddexp(total, lp);
        }
    });
    -total
}

/// The collapsed label with the largest total path mass, and that mass.
pub fn brute_best_label(log_posteriors: &Matrix, blank: usize) -> (Vec<usize>, f64) {
    let (t, v) = (log_posteriors.rows(), log_posteriors.cols());
    let mut masses: std::collections::BTreeMap<Vec<usize>, f64> = Default::default();
    for_each_path(t, v, |path| {
        let lp: f64 = path
            .iter()
            .enumerate()
            .map(|(i, &k)| log_posteriors.get(i, k))
            .sum();
        let label = collapse(path, blank);
        let e = masses.entry(label).or_insert(f64::NEG_INFINITY);
        *e = logaddexp(*e, lp);
    });
    masses
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// All ways of segmenting a collapsed phone string into complete lexicon
/// words, as word-name sequences.
fn segmentations(phones: &[usize], lexicon: &Lexicon) -> Vec<Vec<String>> {
    fn go(phones: &[usize], pos: usize, lexicon: &Lexicon, cur: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if pos == phones.len() {
            out.push(cur.clone());
            return;
        }
        let mut node = TRIE_ROOT;
        for (i, &p) in phones[pos..].iter().enumerate() {
            match lexicon.node(node).children.get(&p) {
                Some(&child) => node = child,
                None => return,
            }
            for &word_id in &lexicon.node(node).words {
                cur.push(lexicon.word(word_id).to_string());
                go(phones, pos + i + 1, lexicon, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    let mut cur = Vec::new();
    go(phones, 0, lexicon, &mut cur, &mut out);
    out
}

/// Word decoding by exhaustive search over all frame paths and all complete
/// segmentations of their collapsed phone strings. Returns the best score
/// and every word sequence attaining it (within 1e-9), or None when no path
/// segments completely.
pub fn brute_word_decode(
    log_posteriors: &Matrix,
    lexicon: &Lexicon,
    lm: &NGramLM,
    blank: usize,
    cfg: &DecodeConfig,
) -> Option<(f64, Vec<Vec<String>>)> {
    let loglik = posterior_to_loglik(log_posteriors, blank, cfg.blank_prior).unwrap();
    let (t, v) = (loglik.rows(), loglik.cols());
    let mut best = f64::NEG_INFINITY;
    let mut argmax: Vec<Vec<String>> = Vec::new();
    for_each_path(t, v, |path| {
        let acoustic: f64 = path.iter().enumerate().map(|(i, &k)| loglik.get(i, k)).sum();
        let phones = collapse(path, blank);
        for words in segmentations(&phones, lexicon) {
            let mut score = acoustic;
            for (i, w) in words.iter().enumerate() {
                let history = words[..i].to_vec();
                score += cfg.lm_weight * lm_score(lm, &history, w).unwrap() * LN10
                    + cfg.word_insertion_penalty;
            }
            if score > best + 1e-9 {
                best = score;
                argmax = vec![words];
            } else if (score - best).abs() <= 1e-9 && !argmax.contains(&words) {
                argmax.push(words);
            }
        }
    });
    if argmax.is_empty() {
        None
    } else {
        Some((best, argmax))
    }
}

/// Central finite difference of a scalar function at x.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
