//! ARPA back-off n-gram language models: parsing, serialization, and
//! back-off scoring. Probabilities stay in log10, the format's native base.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

/// Back-off n-gram LM of order 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    /// tables[k] maps a (k+1)-gram to (log10 prob, optional log10 backoff).
    tables: Vec<BTreeMap<Vec<String>, (f64, Option<f64>)>>,
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.tables[0].keys().map(|k| k[0].as_str())
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.tables[0].contains_key(&vec![word.to_string()])
    }

    pub fn table_len(&self, order: usize) -> usize {
        self.tables[order - 1].len()
    }

    pub fn lookup(&self, gram: &[String]) -> Option<(f64, Option<f64>)> {
        self.tables.get(gram.len() - 1)?.get(gram).copied()
    }
}

fn parse_count_line(line: &str, lineno: usize) -> Result<(usize, usize)> {
    // "ngram N=count"
    let rest = line.trim_start_matches("ngram").trim();
    let mut parts = rest.splitn(2, '=');
    let err = || Error::Parse {
        line: lineno,
        msg: format!("malformed count line {line:?}"),
    };
    let order: usize = parts.next().ok_or_else(err)?.trim().parse().map_err(|_| err())?;
    let count: usize = parts.next().ok_or_else(err)?.trim().parse().map_err(|_| err())?;
    Ok((order, count))
}

/// Parse the standard ARPA exchange format.
pub fn parse_arpa(text: &str) -> Result<NGramLM> {
    let mut counts: Vec<usize> = Vec::new();
    let mut tables: Vec<BTreeMap<Vec<String>, (f64, Option<f64>)>> = Vec::new();
    let mut section: Option<usize> = None;
    let mut in_data = false;
    let mut saw_end = false;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\data\\" {
            in_data = true;
            continue;
        }
        if line == "\\end\\" {
            saw_end = true;
            section = None;
            continue;
        }
        if let Some(order_str) = line.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
            let order: usize = order_str.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("malformed section header {line:?}"),
            })?;
            if order == 0 || order > counts.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("section order {order} not declared in \\data\\"),
                });
            }
            section = Some(order);
            in_data = false;
            continue;
        }
        if in_data {
            if line.starts_with("ngram") {
                let (order, count) = parse_count_line(line, lineno)?;
                if order != counts.len() + 1 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("orders in \\data\\ must be consecutive from 1, got {order}"),
                    });
                }
                counts.push(count);
                tables.push(BTreeMap::new());
            }
            continue;
        }
        let Some(order) = section else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("entry outside any section: {line:?}"),
            });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        // logp + N words, optionally followed by a backoff weight.
        if fields.len() != order + 1 && fields.len() != order + 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} or {} fields, got {}", order + 1, order + 2, fields.len()),
            });
        }
        let prob: f64 = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad probability {:?}", fields[0]),
        })?;
        let words: Vec<String> = fields[1..=order].iter().map(|s| s.to_string()).collect();
        let backoff = if fields.len() == order + 2 {
            Some(fields[order + 1].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad backoff {:?}", fields[order + 1]),
            })?)
        } else {
            None
        };
        tables[order - 1].insert(words, (prob, backoff));
    }

    if !saw_end {
        return Err(Error::Parse {
            line: 0,
            msg: "missing \\end\\".into(),
        });
    }
    if counts.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "missing \\data\\ section".into(),
        });
    }
    for (i, (count, table)) in counts.iter().zip(tables.iter()).enumerate() {
        if *count != table.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "\\data\\ declares {} {}-grams but {} were present",
                    count,
                    i + 1,
                    table.len()
                ),
            });
        }
    }
    Ok(NGramLM {
        order: counts.len(),
        tables,
    })
}

/// Serialize back to ARPA text. Probabilities use Rust's shortest exact
/// float formatting so a parse round trip is table-identical.
pub fn serialize_arpa(lm: &NGramLM) -> String {
    let mut out = String::from("\\data\\\n");
    for (i, table) in lm.tables.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", i + 1, table.len());
    }
    for (i, table) in lm.tables.iter().enumerate() {
        let _ = writeln!(out, "\n\\{}-grams:", i + 1);
        for (words, (p, bo)) in table {
            let _ = write!(out, "{p}\t{}", words.join(" "));
            if let Some(bo) = bo {
                let _ = write!(out, "\t{bo}");
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

/// Back-off score of `word` after `history`, in log10. Unknown words map to
/// `<unk>` when the LM has one, otherwise they are a hard error.
pub fn lm_score(lm: &NGramLM, history: &[String], word: &str) -> Result<f64> {
    let word = if lm.contains_word(word) {
        word
    } else if lm.contains_word(UNK) {
        UNK
    } else {
        return Err(Error::Oov(word.to_string()));
    };
    // Only the last order-1 history words can matter.
    let start = history.len().saturating_sub(lm.order - 1);
    Ok(score_recursive(lm, &history[start..], word))
}

fn score_recursive(lm: &NGramLM, history: &[String], word: &str) -> f64 {
    let mut gram: Vec<String> = history.to_vec();
    gram.push(word.to_string());
    if let Some((p, _)) = lm.lookup(&gram) {
        return p;
    }
    // Back off: weight of the history context (0 when absent), plus the
    // score with a shortened history.
    debug_assert!(!history.is_empty(), "unigram for {word} must exist");
    let backoff = lm
        .lookup(&history.to_vec())
        .and_then(|(_, bo)| bo)
        .unwrap_or(0.0);
    backoff + score_recursive(lm, &history[1..], word)
}
