//! Synthetic two-domain corpus generator used by the end-to-end experiment
//! suite. Phones are Gaussian channel patterns that drift from a start shape
//! to an end shape over the phone's duration; the target domain differs from
//! the source by a per-channel gain and offset, a different noise level, and
//! a disjoint word inventory. Phones come in confusable pairs sharing the
//! same start shape, so word-level constraints carry real information.
//! Utterances vary in tempo, and every split except the small transcribed
//! target set spans the full tempo range and picks up capture glitches
//! (zeroed frame bursts and dead channel bands).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::TokenSet;
use crate::data::{write_manifest, write_token_set, ManifestEntry};
use crate::error::{Error, Result};
use crate::features::{write_feature_file, Utterance};
use crate::math::{derive_seed, Matrix};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub mel_bins: usize,
    /// Inclusive range of frames per phone instance.
    pub frames_per_phone: (usize, usize),
    /// Per-utterance tempo multiplier for the supervised target training
    /// split. Narrow by construction: a small transcribed set records only
    /// careful, read speech.
    pub train_tempo: (f64, f64),
    /// Tempo multiplier everywhere else (source data, dev/test, and the
    /// unsupervised pool), which covers the full range found in the wild.
    pub wild_tempo: (f64, f64),
    /// Probability that a wild utterance picks up capture glitches: a burst
    /// of dropped frames and a dead channel band, both zeroed. The clean
    /// read-speech training split never has them.
    pub wild_dropout_prob: f64,
    /// Maximum dropped-frame burst length in wild utterances.
    pub wild_time_dropout_max: usize,
    /// Maximum dead channel band width in wild utterances.
    pub wild_freq_dropout_max: usize,
    /// Inclusive range of phones per word.
    pub word_len: (usize, usize),
    /// Inclusive range of words per utterance.
    pub utt_words: (usize, usize),
    pub source_phones: usize,
    pub target_phones: usize,
    pub source_words: usize,
    pub target_words: usize,
    /// How strongly a confusable pair's end shapes are pulled together:
    /// 0 keeps them fully distinct, 1 makes the pair acoustically identical.
    /// Intermediate values leave subtle cues that word-level constraints can
    /// compensate for.
    pub confusable_end_blend: f64,
    pub speakers: usize,
    pub speaker_offset_sigma: f64,
    pub source_noise: f64,
    pub target_noise: f64,
    /// Target per-channel gain drawn from [1 - jitter, 1 + jitter].
    pub target_gain_jitter: f64,
    /// Target per-channel offset drawn from [-shift, shift].
    pub target_channel_shift: f64,
    /// Sentences sampled (disjointly from the audio) to estimate the bigram LM.
    pub lm_sentences: usize,
    pub source_train: usize,
    pub source_dev: usize,
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub target_unsup: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mel_bins: 16,
            frames_per_phone: (5, 10),
            train_tempo: (0.95, 1.05),
            wild_tempo: (0.8, 1.25),
            wild_dropout_prob: 0.7,
            wild_time_dropout_max: 6,
            wild_freq_dropout_max: 3,
            word_len: (2, 4),
            utt_words: (3, 8),
            source_phones: 24,
            target_phones: 16,
            source_words: 24,
            target_words: 14,
            confusable_end_blend: 0.65,
            speakers: 6,
            speaker_offset_sigma: 0.4,
            source_noise: 0.25,
            target_noise: 0.5,
            target_gain_jitter: 0.35,
            target_channel_shift: 1.5,
            lm_sentences: 3000,
            source_train: 240,
            source_dev: 32,
            target_train: 48,
            target_dev: 24,
            target_test: 24,
            target_unsup: 160,
            seed: 0,
        }
    }
}

/// Everything one domain needs: audio-free utterances with phone and word
/// references, plus the lexicon and bigram LM as interchange text.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub name: String,
    pub token_set: TokenSet,
    pub lexicon_text: String,
    pub arpa_text: String,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
    /// The unsupervised pool. References are kept here so pseudo-label
    /// quality can be scored; strip them with [`strip_supervision`] before
    /// feeding the pool to a trainer.
    pub unsup: Vec<Utterance>,
}

/// Drop phone and word references, turning a split into unsupervised data.
pub fn strip_supervision(utts: &[Utterance]) -> Vec<Utterance> {
    utts.iter()
        .map(|u| Utterance {
            id: u.id.clone(),
            speaker: u.speaker.clone(),
            features: u.features.clone(),
            transcript: None,
            word_transcript: None,
        })
        .collect()
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn bump<R: Rng>(mel_bins: usize, rng: &mut R) -> Vec<f64> {
    let center = rng.gen_range(0.0..mel_bins as f64);
    let amp = rng.gen_range(2.5..4.0);
    let width = rng.gen_range(1.2..2.5);
    (0..mel_bins)
        .map(|ch| {
            let d = ch as f64 - center;
            amp * (-d * d / (2.0 * width * width)).exp()
        })
        .collect()
}

/// Shared phone shapes: phones 2k and 2k+1 have the same start pattern and
/// differ only in how they end.
struct World {
    starts: Vec<Vec<f64>>,
    ends: Vec<Vec<f64>>,
}

impl World {
    fn new(cfg: &SynthConfig, n_phones: usize) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "world"));
        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(n_phones);
        let mut ends = Vec::with_capacity(n_phones);
        for p in 0..n_phones {
            let mut end = bump(cfg.mel_bins, &mut rng);
            if p % 2 == 1 {
                starts.push(starts[p - 1].clone());
                // Pull the pair's ends together so the distinction is subtle.
                let b = cfg.confusable_end_blend;
                for (e, prev) in end.iter_mut().zip(&ends[p - 1]) {
                    *e = (1.0 - b) * *e + b * prev;
                }
            } else {
                starts.push(bump(cfg.mel_bins, &mut rng));
            }
            ends.push(end);
        }
        World { starts, ends }
    }
}

struct Domain {
    name: String,
    /// Token index -> world phone id, skipping blank at 0.
    phones: Vec<usize>,
    token_set: TokenSet,
    word_names: Vec<String>,
    /// Pronunciations as token indices (1-based; 0 is blank).
    prons: Vec<Vec<usize>>,
    /// Bigram transition weights between words, rows normalized.
    trans: Vec<Vec<f64>>,
    initial: Vec<f64>,
    gain: Vec<f64>,
    shift: Vec<f64>,
    noise: f64,
    speaker_offsets: Vec<Vec<f64>>,
}

fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn build_words<R: Rng>(
    cfg: &SynthConfig,
    n_words: usize,
    n_phones: usize,
    prefix: &str,
    rng: &mut R,
) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut prons: Vec<Vec<usize>> = Vec::new();
    while prons.len() < n_words {
        let pron = if prons.len() % 2 == 1 {
            // Minimal pair: previous word with one phone swapped for its
            // confusable partner (same start shape, different end).
            let mut p = prons[prons.len() - 1].clone();
            let pos = rng.gen_range(0..p.len());
            let phone = p[pos] - 1; // 0-based local phone
            let partner = if phone % 2 == 0 { phone + 1 } else { phone - 1 };
            if partner < n_phones {
                p[pos] = partner + 1;
            }
            p
        } else {
            let len = rng.gen_range(cfg.word_len.0..=cfg.word_len.1);
            (0..len).map(|_| rng.gen_range(0..n_phones) + 1).collect()
        };
        if !prons.contains(&pron) {
            prons.push(pron);
        }
    }
    let names = (0..n_words).map(|i| format!("{prefix}{i:02}")).collect();
    (names, prons)
}

fn build_domain(cfg: &SynthConfig, name: &str, is_target: bool) -> Domain {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("domain:{name}")));
    let (n_phones, n_words, sym_prefix, word_prefix) = if is_target {
        (cfg.target_phones, cfg.target_words, "t", "TW")
    } else {
        (cfg.source_phones, cfg.source_words, "s", "SW")
    };
    // The target inventory is a prefix of the world inventory: domains
    // share acoustics but not symbols.
    let phones: Vec<usize> = (0..n_phones).collect();
    let mut tokens = vec!["<blank>".to_string()];
    tokens.extend((0..n_phones).map(|i| format!("{sym_prefix}{i}")));
    let token_set = TokenSet::new(tokens).expect("valid synth token set");
    let (word_names, prons) = build_words(cfg, n_words, n_phones, word_prefix, &mut rng);
    let mut trans = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let mut row = vec![1.0; n_words];
        for _ in 0..3 {
            row[rng.gen_range(0..n_words)] = 8.0;
        }
        let total: f64 = row.iter().sum();
        for w in row.iter_mut() {
            *w /= total;
        }
        trans.push(row);
    }
    let mut initial = vec![1.0; n_words];
    for _ in 0..3 {
        initial[rng.gen_range(0..n_words)] = 8.0;
    }
    let itotal: f64 = initial.iter().sum();
    for w in initial.iter_mut() {
        *w /= itotal;
    }
    let (gain, shift, noise) = if is_target {
        let g = cfg.target_gain_jitter;
        let s = cfg.target_channel_shift;
        (
            (0..cfg.mel_bins).map(|_| rng.gen_range(1.0 - g..1.0 + g)).collect(),
            (0..cfg.mel_bins).map(|_| rng.gen_range(-s..s)).collect(),
            cfg.target_noise,
        )
    } else {
        (vec![1.0; cfg.mel_bins], vec![0.0; cfg.mel_bins], cfg.source_noise)
    };
    let speaker_offsets = (0..cfg.speakers)
        .map(|_| {
            (0..cfg.mel_bins)
                .map(|_| gauss(&mut rng) * cfg.speaker_offset_sigma)
                .collect()
        })
        .collect();
    Domain {
        name: name.to_string(),
        phones,
        token_set,
        word_names,
        prons,
        trans,
        initial,
        gain,
        shift,
        noise,
        speaker_offsets,
    }
}

fn sample_sentence<R: Rng>(cfg: &SynthConfig, dom: &Domain, rng: &mut R) -> Vec<usize> {
    let n = rng.gen_range(cfg.utt_words.0..=cfg.utt_words.1);
    let mut words = Vec::with_capacity(n);
    let mut prev: Option<usize> = None;
    for _ in 0..n {
        let w = match prev {
            None => sample_categorical(&dom.initial, rng),
            Some(p) => sample_categorical(&dom.trans[p], rng),
        };
        words.push(w);
        prev = Some(w);
    }
    words
}

fn synth_utterance<R: Rng>(
    cfg: &SynthConfig,
    world: &World,
    dom: &Domain,
    id: String,
    tempo_range: (f64, f64),
    wild: bool,
    rng: &mut R,
) -> Utterance {
    let words = sample_sentence(cfg, dom, rng);
    let speaker_idx = rng.gen_range(0..cfg.speakers);
    let tempo = rng.gen_range(tempo_range.0..=tempo_range.1);
    let mut phones: Vec<usize> = Vec::new();
    for &w in &words {
        phones.extend_from_slice(&dom.prons[w]);
    }
    let mut frames: Vec<f64> = Vec::new();
    let mut t = 0;
    for &tok in &phones {
        let wp = dom.phones[tok - 1];
        let start = &world.starts[wp];
        let end = &world.ends[wp];
        let base_d = rng.gen_range(cfg.frames_per_phone.0..=cfg.frames_per_phone.1);
        let d = ((base_d as f64 * tempo).round() as usize).max(1);
        for i in 0..d {
            let alpha = if d > 1 { i as f64 / (d - 1) as f64 } else { 0.5 };
            for ch in 0..cfg.mel_bins {
                let base = (1.0 - alpha) * start[ch] + alpha * end[ch];
                let v = dom.gain[ch] * base
                    + dom.shift[ch]
                    + dom.speaker_offsets[speaker_idx][ch]
                    + gauss(rng) * dom.noise;
                frames.push(v);
            }
            t += 1;
        }
    }
    let mut features = Matrix::from_vec(t, cfg.mel_bins, frames).expect("consistent frame shape");
    if wild && rng.gen::<f64>() < cfg.wild_dropout_prob {
        // Capture glitches: a dropped-frame burst and a dead channel band.
        let burst = rng.gen_range(0..=cfg.wild_time_dropout_max.min(t));
        let b0 = rng.gen_range(0..=t - burst);
        for row in b0..b0 + burst {
            for ch in 0..cfg.mel_bins {
                features.set(row, ch, 0.0);
            }
        }
        let band = rng.gen_range(0..=cfg.wild_freq_dropout_max.min(cfg.mel_bins));
        let c0 = rng.gen_range(0..=cfg.mel_bins - band);
        for row in 0..t {
            for ch in c0..c0 + band {
                features.set(row, ch, 0.0);
            }
        }
    }
    Utterance {
        id,
        speaker: format!("{}-spk{speaker_idx}", dom.name),
        features,
        transcript: Some(phones),
        word_transcript: Some(words.iter().map(|&w| dom.word_names[w].clone()).collect()),
    }
}

fn lexicon_text(dom: &Domain) -> String {
    let mut out = String::new();
    for (name, pron) in dom.word_names.iter().zip(dom.prons.iter()) {
        out.push_str(name);
        for &tok in pron {
            out.push(' ');
            out.push_str(dom.token_set.token(tok).unwrap());
        }
        out.push('\n');
    }
    out
}

/// Estimate an add-one-smoothed bigram LM from sentences sampled off the
/// same word chain, and render it as ARPA text. Every bigram is listed
/// explicitly, so unigram backoff weights are never consulted.
fn estimate_arpa(cfg: &SynthConfig, dom: &Domain) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("lmtext:{}", dom.name)));
    let v = dom.word_names.len();
    let mut uni = vec![0usize; v];
    let mut bi = vec![vec![0usize; v]; v];
    let mut total = 0usize;
    for _ in 0..cfg.lm_sentences {
        let sent = sample_sentence(cfg, dom, &mut rng);
        for (i, &w) in sent.iter().enumerate() {
            uni[w] += 1;
            total += 1;
            if i > 0 {
                bi[sent[i - 1]][w] += 1;
            }
        }
    }
    let mut out = String::new();
    out.push_str("\\data\\\n");
    out.push_str(&format!("ngram 1={v}\n"));
    out.push_str(&format!("ngram 2={}\n\n", v * v));
    out.push_str("\\1-grams:\n");
    for w in 0..v {
        let p = (uni[w] + 1) as f64 / (total + v) as f64;
        out.push_str(&format!("{:.6}\t{}\t0\n", p.log10(), dom.word_names[w]));
    }
    out.push_str("\n\\2-grams:\n");
    for w1 in 0..v {
        // Condition on occurrences that actually have a successor.
        let follow: usize = bi[w1].iter().sum();
        for w2 in 0..v {
            let p = (bi[w1][w2] + 1) as f64 / (follow + v) as f64;
            out.push_str(&format!(
                "{:.6}\t{} {}\n",
                p.log10(),
                dom.word_names[w1],
                dom.word_names[w2]
            ));
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

fn make_split<R: Rng>(
    cfg: &SynthConfig,
    world: &World,
    dom: &Domain,
    split: &str,
    n: usize,
    tempo_range: (f64, f64),
    wild: bool,
    rng: &mut R,
) -> Vec<Utterance> {
    (0..n)
        .map(|i| {
            let id = format!("{}-{split}-{i:04}", dom.name);
            synth_utterance(cfg, world, dom, id, tempo_range, wild, rng)
        })
        .collect()
}

/// Generate the source and target domains from one config.
pub fn generate(cfg: &SynthConfig) -> Result<(DomainData, DomainData)> {
    if cfg.mel_bins == 0 || cfg.target_phones < 2 || cfg.source_phones < 2 {
        return Err(Error::InvalidArg("synth config needs mel bins and >= 2 phones".into()));
    }
    if cfg.target_phones > cfg.source_phones {
        return Err(Error::InvalidArg(
            "target phone inventory cannot exceed the world inventory".into(),
        ));
    }
    let world = World::new(cfg, cfg.source_phones.max(cfg.target_phones));
    let mut out = Vec::new();
    for (name, is_target) in [("source", false), ("target", true)] {
        let dom = build_domain(cfg, name, is_target);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("audio:{name}")));
        let (n_train, n_dev, n_test, n_unsup) = if is_target {
            (cfg.target_train, cfg.target_dev, cfg.target_test, cfg.target_unsup)
        } else {
            (cfg.source_train, cfg.source_dev, 0, 0)
        };
        // Only the small transcribed target set is clean read speech;
        // everything else spans the wild tempo range and picks up glitches.
        let (train_tempo, train_wild) = if is_target {
            (cfg.train_tempo, false)
        } else {
            (cfg.wild_tempo, true)
        };
        let train = make_split(cfg, &world, &dom, "train", n_train, train_tempo, train_wild, &mut rng);
        let dev = make_split(cfg, &world, &dom, "dev", n_dev, cfg.wild_tempo, true, &mut rng);
        let test = make_split(cfg, &world, &dom, "test", n_test, cfg.wild_tempo, true, &mut rng);
        let unsup = make_split(cfg, &world, &dom, "unsup", n_unsup, cfg.wild_tempo, true, &mut rng);
        out.push(DomainData {
            name: name.to_string(),
            token_set: dom.token_set.clone(),
            lexicon_text: lexicon_text(&dom),
            arpa_text: estimate_arpa(cfg, &dom),
            train,
            dev,
            test,
            unsup,
        });
    }
    let target = out.pop().unwrap();
    let source = out.pop().unwrap();
    Ok((source, target))
}

/// Write one domain to disk: tokens, lexicon, LM, per-split manifests, and
/// feature files. The unsupervised pool is written twice: `unsup.jsonl`
/// without transcripts (training input) and `unsup-ref.jsonl` with them
/// (held-out scoring only).
pub fn write_domain(dir: &Path, dom: &DomainData) -> Result<()> {
    fs::create_dir_all(dir.join("feats"))?;
    write_token_set(&dir.join("tokens.txt"), &dom.token_set)?;
    fs::write(dir.join("lexicon.txt"), &dom.lexicon_text)?;
    fs::write(dir.join("lm.arpa"), &dom.arpa_text)?;
    let splits: [(&str, &[Utterance], bool); 5] = [
        ("train", &dom.train, true),
        ("dev", &dom.dev, true),
        ("test", &dom.test, true),
        ("unsup", &dom.unsup, false),
        ("unsup-ref", &dom.unsup, true),
    ];
    for (split, utts, with_refs) in splits {
        if utts.is_empty() {
            continue;
        }
        let mut entries = Vec::with_capacity(utts.len());
        for u in utts {
            let feat_rel = format!("feats/{}.lfbe", u.id);
            // unsup and unsup-ref share the same feature files.
            let feat_path = dir.join(&feat_rel);
            if !feat_path.exists() {
                write_feature_file(&feat_path, &u.features)?;
            }
            let transcript = if with_refs {
                u.transcript.as_ref().map(|t| {
                    t.iter()
                        .map(|&i| dom.token_set.token(i).unwrap().to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
            } else {
                None
            };
            let words = if with_refs {
                u.word_transcript.as_ref().map(|w| w.join(" "))
            } else {
                None
            };
            entries.push(ManifestEntry {
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                audio_path: None,
                features_path: Some(feat_rel),
                transcript,
                words,
            });
        }
        write_manifest(&dir.join(format!("{split}.jsonl")), &entries)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_utterances, read_token_set};
    use crate::wordlm::{parse_arpa, parse_lexicon, words_to_phones};

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            lm_sentences: 200,
            source_train: 6,
            source_dev: 3,
            target_train: 6,
            target_dev: 3,
            target_test: 3,
            target_unsup: 5,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let (s1, t1) = generate(&cfg).unwrap();
        let (s2, t2) = generate(&cfg).unwrap();
        assert_eq!(s1.arpa_text, s2.arpa_text);
        assert_eq!(t1.lexicon_text, t2.lexicon_text);
        for (a, b) in t1.train.iter().zip(t2.train.iter()) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.transcript, b.transcript);
        }
        assert_ne!(s1.train[0].features, t1.train[0].features);
    }

    #[test]
    fn transcripts_match_lexicon_expansion() {
        let cfg = small_cfg();
        let (_, target) = generate(&cfg).unwrap();
        let lex = parse_lexicon(&target.lexicon_text, &target.token_set).unwrap();
        for u in target.train.iter().chain(target.unsup.iter()) {
            let words = u.word_transcript.as_ref().unwrap();
            let phones = words_to_phones(words, &lex).unwrap();
            assert_eq!(&phones, u.transcript.as_ref().unwrap(), "utterance {}", u.id);
        }
    }

    #[test]
    fn arpa_text_parses_and_normalizes() {
        let cfg = small_cfg();
        let (_, target) = generate(&cfg).unwrap();
        let lm = parse_arpa(&target.arpa_text).unwrap();
        // Bigram rows sum to 1 under add-one smoothing.
        let w0 = "TW00".to_string();
        let mut mass = 0.0;
        for i in 0..cfg.target_words {
            let w = format!("TW{i:02}");
            mass += 10f64.powf(crate::wordlm::lm_score(&lm, &[w0.clone()], &w).unwrap());
        }
        assert!((mass - 1.0).abs() < 1e-6, "bigram mass {mass}");
    }

    #[test]
    fn domains_differ_and_shapes_hold() {
        let cfg = small_cfg();
        let (source, target) = generate(&cfg).unwrap();
        assert_eq!(source.token_set.len(), cfg.source_phones + 1);
        assert_eq!(target.token_set.len(), cfg.target_phones + 1);
        assert_eq!(target.unsup.len(), cfg.target_unsup);
        for u in &target.train {
            assert_eq!(u.features.cols(), cfg.mel_bins);
            assert!(u.features.rows() >= 1);
            assert!(u.is_supervised());
        }
        let stripped = strip_supervision(&target.unsup);
        assert!(stripped.iter().all(|u| !u.is_supervised()));
        assert!(stripped.iter().all(|u| u.word_transcript.is_none()));
    }

    #[test]
    fn write_domain_round_trips_through_manifests() {
        let cfg = small_cfg();
        let (_, target) = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_domain(dir.path(), &target).unwrap();
        let tokens = read_token_set(&dir.path().join("tokens.txt")).unwrap();
        assert_eq!(tokens.tokens(), target.token_set.tokens());
        let fcfg = crate::features::FeatureConfig::default();
        let train = load_utterances(&dir.path().join("train.jsonl"), &tokens, &fcfg).unwrap();
        assert_eq!(train.len(), target.train.len());
        assert_eq!(train[0].transcript, target.train[0].transcript);
        // Feature files store f32; compare with matching precision.
        for (a, b) in train[0].features.data().iter().zip(target.train[0].features.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let unsup = load_utterances(&dir.path().join("unsup.jsonl"), &tokens, &fcfg).unwrap();
        assert!(unsup.iter().all(|u| !u.is_supervised()));
        let refs = load_utterances(&dir.path().join("unsup-ref.jsonl"), &tokens, &fcfg).unwrap();
        assert!(refs.iter().all(|u| u.is_supervised()));
    }
}
