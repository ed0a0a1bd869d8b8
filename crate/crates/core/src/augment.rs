//! On-the-fly spectrogram augmentation: speed perturbation via linear
//! interpolation on the time axis, and zero masks over random channel and
//! frame ranges. Both run before frame stacking.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Spectrogram, Utterance};
use crate::math::Matrix;

static AUGMENT_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide count of `augment_utterance` invocations. Lets tests assert
/// that evaluation paths never augment.
pub fn augment_call_count() -> usize {
    AUGMENT_CALLS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub speed_factors: Vec<f64>,
    pub freq_mask_max: usize,
    pub time_mask_max: usize,
    pub apply_prob: f64,
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            speed_factors: vec![0.9, 1.0, 1.1],
            freq_mask_max: 8,
            time_mask_max: 16,
            apply_prob: 0.5,
            enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, mel_bins: usize) -> Result<()> {
        if self.speed_factors.iter().any(|f| *f <= 0.0) {
            return Err(Error::InvalidArg("speed factors must be positive".into()));
        }
        if self.freq_mask_max > mel_bins {
            return Err(Error::InvalidArg(format!(
                "freq_mask_max {} exceeds mel_bins {mel_bins}",
                self.freq_mask_max
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::InvalidArg("apply_prob must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Resize the spectrogram on the time axis by `factor` using linear
/// interpolation; factor > 1 shortens the utterance (faster speech).
pub fn speed_perturb(spec: &Spectrogram, factor: f64) -> Result<Spectrogram> {
    if factor <= 0.0 {
        return Err(Error::InvalidArg(format!("speed factor {factor} must be > 0")));
    }
    let t = spec.rows();
    let dim = spec.cols();
    let t_out = std::cmp::max(1, (t as f64 / factor).round() as usize);
    if t_out == t && (factor - 1.0).abs() < 1e-12 {
        return Ok(spec.clone());
    }
    let mut out = Matrix::zeros(t_out, dim);
    for j in 0..t_out {
        // Map output index j to a continuous input position; a length-1
        // output takes the temporal midpoint.
        let pos = if t_out == 1 {
            (t - 1) as f64 / 2.0
        } else {
            j as f64 * (t - 1) as f64 / (t_out - 1) as f64
        };
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if frac == 0.0 || lo + 1 >= t {
            out.row_mut(j).copy_from_slice(spec.row(lo));
        } else {
            let (a, b) = (spec.row(lo), spec.row(lo + 1));
            for (o, (x, y)) in out.row_mut(j).iter_mut().zip(a.iter().zip(b.iter())) {
                *o = x * (1.0 - frac) + y * frac;
            }
        }
    }
    Ok(out)
}

/// Footprint of the two rectangles zeroed by one spec_mask call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskFootprint {
    pub freq_start: usize,
    pub freq_len: usize,
    pub time_start: usize,
    pub time_len: usize,
}

/// Apply one frequency mask and one time mask of uniformly drawn width and
/// position; masked entries become exactly 0, everything else is untouched.
pub fn spec_mask<R: Rng>(spec: &Spectrogram, cfg: &AugmentConfig, rng: &mut R) -> Result<(Spectrogram, MaskFootprint)> {
    let t = spec.rows();
    let dim = spec.cols();
    cfg.validate(dim)?;

    let f = rng.gen_range(0..=cfg.freq_mask_max.min(dim));
    let f0 = rng.gen_range(0..=dim - f);
    let tm_max = cfg.time_mask_max.min(t);
    let tm = rng.gen_range(0..=tm_max);
    let t0 = rng.gen_range(0..=t - tm);

    let mut out = spec.clone();
    for row in 0..t {
        for c in f0..f0 + f {
            out.set(row, c, 0.0);
        }
    }
    for row in t0..t0 + tm {
        for c in 0..dim {
            out.set(row, c, 0.0);
        }
    }
    Ok((
        out,
        MaskFootprint {
            freq_start: f0,
            freq_len: f,
            time_start: t0,
            time_len: tm,
        },
    ))
}

/// Augment one utterance: speed perturbation with a uniformly drawn factor,
/// then spectral masking with probability `apply_prob`. The transcript is
/// carried over unchanged; frame stacking happens strictly afterward.
pub fn augment_utterance<R: Rng>(utt: &Utterance, cfg: &AugmentConfig, rng: &mut R) -> Result<Utterance> {
    AUGMENT_CALLS.fetch_add(1, Ordering::Relaxed);
    if !cfg.enabled {
        return Ok(utt.clone());
    }
    let factor = if cfg.speed_factors.is_empty() {
        1.0
    } else {
        cfg.speed_factors[rng.gen_range(0..cfg.speed_factors.len())]
    };
    let mut features = speed_perturb(&utt.features, factor)?;
    if rng.gen::<f64>() < cfg.apply_prob {
        features = spec_mask(&features, cfg, rng)?.0;
    }
    Ok(Utterance {
        id: utt.id.clone(),
        speaker: utt.speaker.clone(),
        features,
        transcript: utt.transcript.clone(),
        word_transcript: utt.word_transcript.clone(),
    })
}
