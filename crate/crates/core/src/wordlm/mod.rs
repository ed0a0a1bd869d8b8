//! Word-level decoding: ARPA n-gram language models, pronunciation
//! lexicons, posterior-to-likelihood conversion, and lexicon-constrained
//! beam search.

mod arpa;
mod decode;
mod lexicon;

pub use arpa::{lm_score, parse_arpa, serialize_arpa, NGramLM, UNK};
pub use decode::{posterior_to_loglik, word_beam_decode, DecodeConfig, WordHypothesis};
pub use lexicon::{parse_lexicon, words_to_phones, Lexicon, TrieNode, TRIE_ROOT};
