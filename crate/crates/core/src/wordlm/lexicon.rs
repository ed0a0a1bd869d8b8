//! Pronunciation lexicon and the phone-index prefix trie the word decoder
//! searches over.

use std::collections::BTreeMap;

use crate::ctc::TokenSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct TrieNode {
    pub children: BTreeMap<usize, usize>,
    /// Word ids emitted when a pronunciation ends here (homophones share
    /// the terminal).
    pub words: Vec<usize>,
}

/// word -> pronunciations, plus a prefix trie over phone indices.
#[derive(Debug, Clone)]
pub struct Lexicon {
    words: Vec<String>,
    pronunciations: Vec<Vec<Vec<usize>>>,
    nodes: Vec<TrieNode>,
}

pub const TRIE_ROOT: usize = 0;

impl Lexicon {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn node(&self, id: usize) -> &TrieNode {
        &self.nodes[id]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// All pronunciations of a word, first-listed first.
    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<usize>]> {
        self.word_id(word).map(|id| self.pronunciations[id].as_slice())
    }

    fn insert(&mut self, word_id: usize, phones: &[usize]) {
        let mut node = TRIE_ROOT;
        for &p in phones {
            node = match self.nodes[node].children.get(&p) {
                Some(&n) => n,
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(p, n);
                    n
                }
            };
        }
        if !self.nodes[node].words.contains(&word_id) {
            self.nodes[node].words.push(word_id);
        }
    }
}

/// Parse a kaldi-style lexicon: one "WORD phone phone ..." per line.
/// Duplicate (word, pronunciation) pairs are deduplicated.
pub fn parse_lexicon(text: &str, token_set: &TokenSet) -> Result<Lexicon> {
    let mut lex = Lexicon {
        words: Vec::new(),
        pronunciations: Vec::new(),
        nodes: vec![TrieNode::default()],
    };
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap().to_string();
        let mut phones = Vec::new();
        for ph in fields {
            match token_set.index_of(ph) {
                Some(idx) if idx != token_set.blank_index() => phones.push(idx),
                Some(_) => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("pronunciation uses the blank symbol {ph:?}"),
                    })
                }
                None => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unknown phone {ph:?} in pronunciation of {word:?}"),
                    })
                }
            }
        }
        if phones.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("empty pronunciation for {word:?}"),
            });
        }
        let word_id = match lex.word_id(&word) {
            Some(id) => id,
            None => {
                lex.words.push(word.clone());
                lex.pronunciations.push(Vec::new());
                lex.words.len() - 1
            }
        };
        if !lex.pronunciations[word_id].contains(&phones) {
            lex.pronunciations[word_id].push(phones.clone());
            lex.insert(word_id, &phones);
        }
    }
    Ok(lex)
}

/// Concatenate each word's first-listed pronunciation.
pub fn words_to_phones(words: &[String], lexicon: &Lexicon) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for w in words {
        let prons = lexicon
            .pronunciations(w)
            .ok_or_else(|| Error::Oov(w.clone()))?;
        out.extend_from_slice(&prons[0]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens() -> TokenSet {
        TokenSet::new(
            ["<blank>", "k", "ae", "t", "s"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_word_trie() {
        let lex = parse_lexicon("CAT k ae t\n", &tokens()).unwrap();
        // Root plus one node per phone.
        assert_eq!(lex.num_nodes(), 4);
        let mut node = TRIE_ROOT;
        for ph in ["k", "ae", "t"] {
            let idx = tokens().index_of(ph).unwrap();
            node = *lex.node(node).children.get(&idx).unwrap();
        }
        assert_eq!(lex.node(node).words, vec![lex.word_id("CAT").unwrap()]);
    }

    #[test]
    fn homophones_share_a_terminal() {
        let lex = parse_lexicon("CAT k ae t\nKAT k ae t\n", &tokens()).unwrap();
        assert_eq!(lex.num_nodes(), 4);
        let mut node = TRIE_ROOT;
        for ph in ["k", "ae", "t"] {
            node = *lex.node(node).children.get(&tokens().index_of(ph).unwrap()).unwrap();
        }
        assert_eq!(lex.node(node).words.len(), 2);
    }

    #[test]
    fn empty_pronunciation_rejected() {
        assert!(parse_lexicon("CAT\n", &tokens()).is_err());
    }

    #[test]
    fn unknown_phone_names_line_and_phone() {
        match parse_lexicon("CAT k ae t\nDOG d ao g\n", &tokens()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("\"d\""), "msg: {msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_pronunciations_dedup() {
        let lex = parse_lexicon("CAT k ae t\nCAT k ae t\n", &tokens()).unwrap();
        assert_eq!(lex.pronunciations("CAT").unwrap().len(), 1);
    }

    #[test]
    fn words_to_phones_uses_first_pronunciation() {
        let lex = parse_lexicon("CATS k ae t s\nCATS k ae s\nCAT k ae t\n", &tokens()).unwrap();
        let out = words_to_phones(&["CATS".into(), "CAT".into()], &lex).unwrap();
        assert_eq!(out, vec![1, 2, 3, 4, 1, 2, 3]);
        assert_eq!(words_to_phones(&[], &lex).unwrap(), Vec::<usize>::new());
        assert!(matches!(
            words_to_phones(&["DOG".into()], &lex),
            Err(Error::Oov(_))
        ));
    }
}
