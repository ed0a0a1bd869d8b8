//! Edit distance and error-rate accounting (PER / WER).

/// Tokens removed from both reference and hypothesis before WER scoring.
pub const WER_FILTERED: [&str; 2] = ["<NOISE>", "<UNK>"];

/// Levenshtein distance: minimum insertions + deletions + substitutions
/// turning `hyp` into `reference`.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> usize {
    let (n, m) = (reference.len(), hyp.len());
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Running error-rate tally over a dataset.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorRateStats {
    pub edits: usize,
    pub ref_len: usize,
}

impl ErrorRateStats {
    pub fn add<T: PartialEq>(&mut self, reference: &[T], hyp: &[T]) {
        self.edits += edit_distance(reference, hyp);
        self.ref_len += reference.len();
    }

    /// Error rate in percent; 0 for an empty reference with no errors.
    pub fn percent(&self) -> f64 {
        if self.ref_len == 0 {
            if self.edits == 0 {
                0.0
            } else {
                100.0
            }
        } else {
            self.edits as f64 / self.ref_len as f64 * 100.0
        }
    }
}

/// Drop `<NOISE>` and `<UNK>` before WER scoring.
pub fn filter_for_wer(words: &[String]) -> Vec<String> {
    words
        .iter()
        .filter(|w| !WER_FILTERED.contains(&w.as_str()))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences() {
        assert_eq!(edit_distance(b"abc", b"abc"), 0);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        assert_eq!(edit_distance(b"abc", b""), 3);
        assert_eq!(edit_distance(b"", b"ab"), 2);
    }

    // Independent exponential-time recursion used as an oracle.
    fn edit_oracle(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, None) => 0,
            (None, Some(_)) => b.len(),
            (Some(_), None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = edit_oracle(ra, rb) + usize::from(x != y);
                let del = edit_oracle(ra, b) + 1;
                let ins = edit_oracle(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn kitten_sitting_matches_oracle() {
        assert_eq!(edit_oracle(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn random_instances_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let a: Vec<u8> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(0..3)).collect();
            let b: Vec<u8> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(0..3)).collect();
            assert_eq!(edit_distance(&a, &b), edit_oracle(&a, &b));
        }
    }

    #[test]
    fn error_rate_arithmetic() {
        let mut stats = ErrorRateStats::default();
        stats.add(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], &[1, 2, 99, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!(stats.percent(), 10.0);
    }

    #[test]
    fn wer_filter_rule() {
        let reference: Vec<String> = ["A", "<NOISE>", "B"].iter().map(|s| s.to_string()).collect();
        let hyp: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let mut stats = ErrorRateStats::default();
        stats.add(&filter_for_wer(&reference), &filter_for_wer(&hyp));
        assert_eq!(stats.percent(), 0.0);
    }
}
