//! Numerically-stable primitives shared by every training regime: the
//! matrix type, log-softmax, inverted dropout and the Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64. All training math runs in 64-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "Matrix::from_vec".into(),
                expected: format!("{} values", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Identity matrix of size n.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// out += self * x, with self of shape (rows × cols) and x of length cols.
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x.iter()) {
                acc += w * xv;
            }
            out[r] += acc;
        }
    }

    /// out += selfᵀ * x, with x of length rows and out of length cols.
    pub fn matvec_t_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let xv = x[r];
            if xv == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += xv * w;
            }
        }
    }

    /// self += a ⊗ b (outer product), with a of length rows and b of length cols.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for r in 0..self.rows {
            let av = a[r];
            if av == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (o, bv) in row.iter_mut().zip(b.iter()) {
                *o += av * bv;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }
}

/// Stable 64-bit FNV-1a over a tag, folded with a seed. Used to derive
/// independent deterministic RNG streams from one master seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x0100_0000_01b3);
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// log(Σ exp(xs)) without overflow; -inf for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Two-argument logsumexp, the common case in the CTC recursions.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Shift-invariant log-softmax over a vector of logits.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("log_softmax"));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("log_softmax"));
    }
    let z = logsumexp(logits);
    Ok(logits.iter().map(|v| v - z).collect())
}

/// Backward pass of log_softmax: given the output log-probabilities and the
/// upstream gradient, returns the gradient w.r.t. the logits.
pub fn log_softmax_backward(log_probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    debug_assert_eq!(log_probs.len(), upstream.len());
    let sum: f64 = upstream.iter().sum();
    log_probs
        .iter()
        .zip(upstream.iter())
        .map(|(lp, u)| u - lp.exp() * sum)
        .collect()
}

/// Bias-corrected Adam state for one parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update. Mutates the parameter in place and advances the state.
pub fn adam_step(param: &mut Matrix, grad: &Matrix, state: &mut AdamState) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(&state.first_moment) {
        return Err(Error::ShapeMismatch {
            context: "adam_step".into(),
            expected: format!("{}x{}", param.rows(), param.cols()),
            got: format!("{}x{}", grad.rows(), grad.cols()),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    let p = param.data_mut();
    for i in 0..p.len() {
        let g = grad.data()[i];
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// 1/(1-rate). Multiplying by the mask keeps the expected activation equal
/// to the input.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArg(format!("dropout rate {rate} not in [0,1)")));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut().iter_mut() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { keep_scale };
    }
    Ok(m)
}

/// Inverted dropout: identity in eval mode, masked and rescaled in training.
pub fn dropout_apply<R: Rng>(
    activations: &Matrix,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArg(format!("dropout rate {rate} not in [0,1)")));
    }
    if !training || rate == 0.0 {
        return Ok(activations.clone());
    }
    let mask = dropout_mask(activations.rows(), activations.cols(), rate, rng)?;
    let mut out = activations.clone();
    for (o, m) in out.data_mut().iter_mut().zip(mask.data().iter()) {
        *o *= m;
    }
    Ok(out)
}

/// Optimization protocol knobs shared by every regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub minibatch_size: usize,
    pub lr_grid: Vec<f64>,
    pub dropout_grid: Vec<f64>,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            minibatch_size: 8,
            // Scratch-training grid; adaptation uses the 10x smaller one.
            lr_grid: vec![2e-4, 5e-4, 1e-3, 2e-3],
            dropout_grid: vec![0.0, 0.1, 0.2, 0.4],
            max_epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The adaptation learning-rate grid (smaller rates matter when
    /// finetuning a pretrained model).
    pub fn adaptation_lr_grid() -> Vec<f64> {
        vec![2e-5, 5e-5, 1e-4, 2e-4]
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::InvalidArg("minibatch_size must be >= 1".into()));
        }
        if self.lr_grid.is_empty() || self.dropout_grid.is_empty() {
            return Err(Error::InvalidArg("hyperparameter grids must be non-empty".into()));
        }
        Ok(())
    }
}
