//! LFBE front end: Hann-windowed power spectra, triangular mel filterbank,
//! per-speaker mean normalization and frame stacking.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

/// A spectrogram is a time × channel matrix of log filterbank energies.
pub type Spectrogram = Matrix;

pub const LOG_ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub mel_bins: usize,
    pub stack_size: usize,
    pub eval_stack_offset: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            window_ms: 25.0,
            hop_ms: 10.0,
            mel_bins: 40,
            stack_size: 3,
            eval_stack_offset: 0,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    /// Power-of-two FFT size covering the window, at least 512.
    pub fn fft_size(&self) -> usize {
        let mut n = 512;
        while n < self.window_samples() {
            n *= 2;
        }
        n
    }

    /// Model input dimensionality after frame stacking.
    pub fn stacked_dim(&self) -> usize {
        self.mel_bins * self.stack_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_ms <= self.hop_ms || self.hop_ms <= 0.0 {
            return Err(Error::InvalidArg("need window_ms > hop_ms > 0".into()));
        }
        if self.mel_bins == 0 || self.stack_size == 0 {
            return Err(Error::InvalidArg("mel_bins and stack_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One utterance: features plus optional transcript. An utterance is
/// supervised exactly when it carries a transcript.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub features: Spectrogram,
    pub transcript: Option<Vec<usize>>,
    /// Word-level reference, when known; used for WER scoring only.
    pub word_transcript: Option<Vec<String>>,
}

impl Utterance {
    pub fn is_supervised(&self) -> bool {
        self.transcript.is_some()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies of the triangular mel filters, spanning 20 Hz to
/// Nyquist.
pub fn mel_filter_centers(cfg: &FeatureConfig) -> Vec<f64> {
    let lo = hz_to_mel(20.0);
    let hi = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    (1..=cfg.mel_bins)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect()
}

/// Triangular filterbank as a mel_bins × (nfft/2 + 1) weight matrix.
fn mel_filterbank(cfg: &FeatureConfig) -> Matrix {
    let nfft = cfg.fft_size();
    let n_bins = nfft / 2 + 1;
    let lo = hz_to_mel(20.0);
    let hi = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    let points: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    let hz_per_bin = cfg.sample_rate as f64 / nfft as f64;
    let mut fb = Matrix::zeros(cfg.mel_bins, n_bins);
    for m in 0..cfg.mel_bins {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * hz_per_bin;
            let w = if f >= left && f <= center && center > left {
                (f - left) / (center - left)
            } else if f > center && f <= right && right > center {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb.set(m, b, w);
        }
    }
    fb
}

/// Extract log mel filterbank energies from 16-bit mono PCM.
pub fn lfbe_extract(pcm: &[i16], cfg: &FeatureConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    if pcm.len() < win {
        return Err(Error::InvalidArg(format!(
            "audio of {} samples is shorter than one {win}-sample window",
            pcm.len()
        )));
    }
    let n_frames = 1 + (pcm.len() - win) / hop;
    let nfft = cfg.fft_size();
    let n_bins = nfft / 2 + 1;

    let hann: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (win - 1) as f64).cos())
        .collect();
    let fb = mel_filterbank(cfg);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut out = Matrix::zeros(n_frames, cfg.mel_bins);
    let mut buf = vec![Complex::new(0.0f64, 0.0); nfft];
    let mut power = vec![0.0f64; n_bins];
    for fi in 0..n_frames {
        let start = fi * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let s = if i < win {
                pcm[start + i] as f64 / 32768.0 * hann[i]
            } else {
                0.0
            };
            *c = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        for (b, p) in power.iter_mut().enumerate() {
            *p = buf[b].norm_sqr();
        }
        for m in 0..cfg.mel_bins {
            let mut e = 0.0;
            let row = fb.row(m);
            for (w, p) in row.iter().zip(power.iter()) {
                e += w * p;
            }
            out.set(fi, m, e.max(LOG_ENERGY_FLOOR).ln());
        }
    }
    Ok(out)
}

/// Subtract the per-speaker per-channel mean, pooled over all of each
/// speaker's utterances.
pub fn speaker_mean_normalize(utterances: &mut [Utterance]) -> Result<()> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("speaker_mean_normalize"));
    }
    if let Some(u) = utterances.iter().find(|u| u.speaker.is_empty()) {
        return Err(Error::InvalidArg(format!("utterance {} has no speaker id", u.id)));
    }
    let dim = utterances[0].features.cols();
    // speaker -> (per-channel sum, frame count); BTreeMap for determinism.
    let mut stats: std::collections::BTreeMap<String, (Vec<f64>, usize)> = Default::default();
    for u in utterances.iter() {
        let entry = stats
            .entry(u.speaker.clone())
            .or_insert_with(|| (vec![0.0; dim], 0));
        for t in 0..u.features.rows() {
            for (s, v) in entry.0.iter_mut().zip(u.features.row(t).iter()) {
                *s += v;
            }
        }
        entry.1 += u.features.rows();
    }
    for u in utterances.iter_mut() {
        let (sum, count) = &stats[&u.speaker];
        let n = *count as f64;
        for t in 0..u.features.rows() {
            for (v, s) in u.features.row_mut(t).iter_mut().zip(sum.iter()) {
                *v -= s / n;
            }
        }
    }
    Ok(())
}

/// Stack every `stack_size` consecutive frames starting at `offset`.
///
/// If fewer than `stack_size` frames remain after the offset, the final
/// frame is repeated to complete exactly one stacked frame, so no utterance
/// is ever dropped.
pub fn stack_frames(spec: &Spectrogram, offset: usize, cfg: &FeatureConfig) -> Result<Spectrogram> {
    let k = cfg.stack_size;
    if offset >= k {
        return Err(Error::InvalidArg(format!(
            "stack offset {offset} must be < stack_size {k}"
        )));
    }
    let t = spec.rows();
    let dim = spec.cols();
    if t == 0 {
        return Err(Error::EmptyInput("stack_frames"));
    }
    let avail = t.saturating_sub(offset);
    let out_len = std::cmp::max(1, avail / k);
    let mut out = Matrix::zeros(out_len, dim * k);
    for j in 0..out_len {
        for i in 0..k {
            // Clamp pads short utterances by repeating the last frame.
            let src = std::cmp::min(offset + j * k + i, t - 1);
            out.row_mut(j)[i * dim..(i + 1) * dim].copy_from_slice(spec.row(src));
        }
    }
    Ok(out)
}

/// Read a mono PCM-16 WAV file.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<i16>, u32)> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!(
            "{}: expected mono audio, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    Ok((samples.map_err(Error::from)?, spec.sample_rate))
}

pub fn write_wav_mono(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

const FEATURE_MAGIC: &[u8; 4] = b"LFBE";

/// Write a feature matrix: magic "LFBE", u32 T, u32 dim, then T×dim
/// little-endian f32.
pub fn write_feature_file(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(spec.rows() as u32).to_le_bytes())?;
    w.write_all(&(spec.cols() as u32).to_le_bytes())?;
    for v in spec.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Spectrogram> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: format!("{}: bad feature-file magic", path.display()),
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let t = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    let mut data = Vec::with_capacity(t * dim);
    let mut f32buf = [0u8; 4];
    for _ in 0..t * dim {
        r.read_exact(&mut f32buf)?;
        data.push(f32::from_le_bytes(f32buf) as f64);
    }
    Matrix::from_vec(t, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn lfbe_single_window_yields_one_frame() {
        let pcm = vec![1000i16; 400];
        let out = lfbe_extract(&pcm, &cfg()).unwrap();
        assert_eq!(out.rows(), 1);
        assert_eq!(out.cols(), 40);
    }

    #[test]
    fn lfbe_frame_count_formula() {
        let pcm = vec![0i16; 400 + 160 * 7 + 5];
        let out = lfbe_extract(&pcm, &cfg()).unwrap();
        assert_eq!(out.rows(), 8);
    }

    #[test]
    fn lfbe_rejects_short_audio() {
        assert!(lfbe_extract(&[0i16; 399], &cfg()).is_err());
    }

    #[test]
    fn lfbe_zero_audio_hits_floor() {
        let out = lfbe_extract(&[0i16; 800], &cfg()).unwrap();
        let floor = LOG_ENERGY_FLOOR.ln();
        for v in out.data() {
            assert!((v - floor).abs() < 1e-12);
        }
    }

    #[test]
    fn lfbe_sine_peaks_at_nearest_mel_center() {
        let c = cfg();
        let freq = 1000.0;
        let pcm: Vec<i16> = (0..1600)
            .map(|n| {
                (20000.0 * (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin()) as i16
            })
            .collect();
        let out = lfbe_extract(&pcm, &c).unwrap();
        let centers = mel_filter_centers(&c);
        let expect_bin = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - freq).abs().total_cmp(&(b.1 - freq).abs()))
            .unwrap()
            .0;
        for t in 0..out.rows() {
            let row = out.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, expect_bin, "frame {t}");
        }
    }

    #[test]
    fn lfbe_is_deterministic() {
        let pcm: Vec<i16> = (0..2000).map(|n| ((n * 37) % 4001 - 2000) as i16).collect();
        let a = lfbe_extract(&pcm, &cfg()).unwrap();
        let b = lfbe_extract(&pcm, &cfg()).unwrap();
        assert_eq!(a, b);
    }

    fn utt(id: &str, speaker: &str, rows: &[Vec<f64>]) -> Utterance {
        let dim = rows[0].len();
        let data: Vec<f64> = rows.iter().flatten().cloned().collect();
        Utterance {
            id: id.into(),
            speaker: speaker.into(),
            features: Matrix::from_vec(rows.len(), dim, data).unwrap(),
            transcript: None,
            word_transcript: None,
        }
    }

    #[test]
    fn normalize_constant_utterance_to_zero() {
        let mut utts = vec![utt("u1", "spk", &[vec![3.5, 3.5], vec![3.5, 3.5]])];
        speaker_mean_normalize(&mut utts).unwrap();
        for v in utts[0].features.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_speakers_are_independent() {
        let mut utts = vec![
            utt("u1", "a", &[vec![1.0], vec![3.0]]),
            utt("u2", "b", &[vec![10.0]]),
        ];
        speaker_mean_normalize(&mut utts).unwrap();
        assert!((utts[0].features.get(0, 0) + 1.0).abs() < 1e-12);
        assert!((utts[0].features.get(1, 0) - 1.0).abs() < 1e-12);
        assert!(utts[1].features.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut utts = vec![
            utt("u1", "a", &[vec![1.0, -2.0], vec![3.0, 0.5]]),
            utt("u2", "a", &[vec![0.2, 7.0]]),
        ];
        speaker_mean_normalize(&mut utts).unwrap();
        let snapshot: Vec<Matrix> = utts.iter().map(|u| u.features.clone()).collect();
        speaker_mean_normalize(&mut utts).unwrap();
        for (u, s) in utts.iter().zip(snapshot.iter()) {
            for (a, b) in u.features.data().iter().zip(s.data().iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_rejects_empty_list() {
        assert!(speaker_mean_normalize(&mut []).is_err());
    }

    #[test]
    fn stack_formula_examples() {
        let c = cfg();
        let spec = Matrix::from_vec(7, 1, (0..7).map(|v| v as f64).collect()).unwrap();
        let out = stack_frames(&spec, 0, &c).unwrap();
        assert_eq!(out.rows(), 2);
        assert_eq!(out.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(out.row(1), &[3.0, 4.0, 5.0]);
        let out2 = stack_frames(&spec, 2, &c).unwrap();
        assert_eq!(out2.rows(), 1);
        assert_eq!(out2.row(0), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn stack_pads_short_utterances() {
        let c = cfg();
        let spec = Matrix::from_vec(2, 1, vec![5.0, 6.0]).unwrap();
        let out = stack_frames(&spec, 0, &c).unwrap();
        assert_eq!(out.rows(), 1);
        assert_eq!(out.row(0), &[5.0, 6.0, 6.0]);
    }

    #[test]
    fn stack_length_exhaustive() {
        let c = cfg();
        for t in 1..=30usize {
            let spec = Matrix::zeros(t, 2);
            for offset in 0..3 {
                let out = stack_frames(&spec, offset, &c).unwrap();
                let expect = std::cmp::max(1, t.saturating_sub(offset) / 3);
                assert_eq!(out.rows(), expect, "T={t} offset={offset}");
                assert_eq!(out.cols(), 6);
            }
        }
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lfbe");
        let spec = Matrix::from_vec(3, 2, vec![0.5, -1.25, 3.0, 0.0, -7.5, 2.25]).unwrap();
        write_feature_file(&path, &spec).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn feature_file_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lfbe");
        std::fs::write(&path, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_feature_file(&path).is_err());
    }
}
