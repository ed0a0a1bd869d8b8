//! Single-direction LSTM forward and backward passes, written out by hand
//! so the full training path stays in 64-bit and checkable against finite
//! differences.

use rand::Rng;

use crate::math::Matrix;

/// Gate order inside the fused 4H blocks: input, forget, candidate, output.
const GATES: usize = 4;

/// Parameters for one LSTM direction.
#[derive(Debug, Clone)]
pub struct LstmDirection {
    /// 4H × input_dim
    pub wx: Matrix,
    /// 4H × H
    pub wh: Matrix,
    /// 1 × 4H
    pub b: Matrix,
}

impl LstmDirection {
    pub fn random<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        LstmDirection {
            wx: random_uniform(GATES * hidden, input_dim, rng),
            wh: random_uniform(GATES * hidden, hidden, rng),
            b: Matrix::zeros(1, GATES * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.cols()
    }
}

/// Uniform ±1/sqrt(fan_in) init, fan_in = cols.
pub fn random_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
    }
    m
}

/// Activations recorded during one direction's forward pass, as needed by
/// backprop through time.
#[derive(Debug, Clone)]
pub struct DirectionCache {
    pub i: Matrix,
    pub f: Matrix,
    pub g: Matrix,
    pub o: Matrix,
    pub c: Matrix,
    pub tanh_c: Matrix,
    pub h: Matrix,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward pass over `input` (T × input_dim) in presentation order. Callers
/// reverse the rows for the backward direction.
pub fn lstm_forward(dir: &LstmDirection, input: &Matrix) -> DirectionCache {
    let t_len = input.rows();
    let h_dim = dir.hidden();
    let mut cache = DirectionCache {
        i: Matrix::zeros(t_len, h_dim),
        f: Matrix::zeros(t_len, h_dim),
        g: Matrix::zeros(t_len, h_dim),
        o: Matrix::zeros(t_len, h_dim),
        c: Matrix::zeros(t_len, h_dim),
        tanh_c: Matrix::zeros(t_len, h_dim),
        h: Matrix::zeros(t_len, h_dim),
    };
    let mut z = vec![0.0; GATES * h_dim];
    let mut h_prev = vec![0.0; h_dim];
    let mut c_prev = vec![0.0; h_dim];
    for t in 0..t_len {
        z.copy_from_slice(dir.b.row(0));
        dir.wx.matvec_add(input.row(t), &mut z);
        dir.wh.matvec_add(&h_prev, &mut z);
        for k in 0..h_dim {
            let iv = sigmoid(z[k]);
            let fv = sigmoid(z[h_dim + k]);
            let gv = z[2 * h_dim + k].tanh();
            let ov = sigmoid(z[3 * h_dim + k]);
            let cv = fv * c_prev[k] + iv * gv;
            let tc = cv.tanh();
            let hv = ov * tc;
            cache.i.set(t, k, iv);
            cache.f.set(t, k, fv);
            cache.g.set(t, k, gv);
            cache.o.set(t, k, ov);
            cache.c.set(t, k, cv);
            cache.tanh_c.set(t, k, tc);
            cache.h.set(t, k, hv);
        }
        h_prev.copy_from_slice(cache.h.row(t));
        c_prev.copy_from_slice(cache.c.row(t));
    }
    cache
}

/// Gradients for one direction's parameters.
#[derive(Debug, Clone)]
pub struct DirectionGrads {
    pub wx: Matrix,
    pub wh: Matrix,
    pub b: Matrix,
}

impl DirectionGrads {
    pub fn zeros_like(dir: &LstmDirection) -> Self {
        DirectionGrads {
            wx: Matrix::zeros(dir.wx.rows(), dir.wx.cols()),
            wh: Matrix::zeros(dir.wh.rows(), dir.wh.cols()),
            b: Matrix::zeros(1, dir.b.cols()),
        }
    }
}

/// BPTT for one direction. `d_h` is the upstream gradient on the hidden
/// states (T × H, in the same presentation order as the forward input).
/// Parameter gradients accumulate into `grads`; the returned matrix is the
/// gradient w.r.t. the direction's input.
pub fn lstm_backward(
    dir: &LstmDirection,
    input: &Matrix,
    cache: &DirectionCache,
    d_h_upstream: &Matrix,
    grads: &mut DirectionGrads,
) -> Matrix {
    let t_len = input.rows();
    let h_dim = dir.hidden();
    let mut d_input = Matrix::zeros(t_len, input.cols());
    let mut dh_next = vec![0.0; h_dim];
    let mut dc_next = vec![0.0; h_dim];
    let mut dz = vec![0.0; GATES * h_dim];
    for t in (0..t_len).rev() {
        for k in 0..h_dim {
            let dh = d_h_upstream.get(t, k) + dh_next[k];
            let ov = cache.o.get(t, k);
            let tc = cache.tanh_c.get(t, k);
            let d_o = dh * tc;
            let dc = dc_next[k] + dh * ov * (1.0 - tc * tc);
            let iv = cache.i.get(t, k);
            let fv = cache.f.get(t, k);
            let gv = cache.g.get(t, k);
            let c_prev = if t > 0 { cache.c.get(t - 1, k) } else { 0.0 };
            let d_i = dc * gv;
            let d_f = dc * c_prev;
            let d_g = dc * iv;
            dc_next[k] = dc * fv;
            dz[k] = d_i * iv * (1.0 - iv);
            dz[h_dim + k] = d_f * fv * (1.0 - fv);
            dz[2 * h_dim + k] = d_g * (1.0 - gv * gv);
            dz[3 * h_dim + k] = d_o * ov * (1.0 - ov);
        }
        grads.wx.add_outer(&dz, input.row(t));
        if t > 0 {
            grads.wh.add_outer(&dz, cache.h.row(t - 1));
        }
        for (bg, d) in grads.b.row_mut(0).iter_mut().zip(dz.iter()) {
            *bg += d;
        }
        dir.wx.matvec_t_add(&dz, d_input.row_mut(t));
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dir.wh.matvec_t_add(&dz, &mut dh_next);
    }
    d_input
}

/// Reverse the row order of a matrix (used for the backward direction).
pub fn reverse_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for t in 0..m.rows() {
        out.row_mut(t).copy_from_slice(m.row(m.rows() - 1 - t));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar transcription of the LSTM recurrence, independent of the
    /// vectorized implementation above.
    fn scalar_lstm(
        wx: &[f64; 4],
        wh: &[f64; 4],
        b: &[f64; 4],
        xs: &[f64],
    ) -> Vec<f64> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut out = Vec::new();
        for &x in xs {
            let i = sig(wx[0] * x + wh[0] * h + b[0]);
            let f = sig(wx[1] * x + wh[1] * h + b[1]);
            let g = (wx[2] * x + wh[2] * h + b[2]).tanh();
            let o = sig(wx[3] * x + wh[3] * h + b[3]);
            c = f * c + i * g;
            h = o * c.tanh();
            out.push(h);
        }
        out
    }

    #[test]
    fn forward_matches_scalar_recurrence() {
        let wx = [0.5, -0.3, 0.8, 0.1];
        let wh = [0.2, 0.4, -0.5, 0.7];
        let b = [0.05, -0.1, 0.0, 0.2];
        let dir = LstmDirection {
            wx: Matrix::from_vec(4, 1, wx.to_vec()).unwrap(),
            wh: Matrix::from_vec(4, 1, wh.to_vec()).unwrap(),
            b: Matrix::from_vec(1, 4, b.to_vec()).unwrap(),
        };
        let xs = [0.3, -0.9];
        let input = Matrix::from_vec(2, 1, xs.to_vec()).unwrap();
        let cache = lstm_forward(&dir, &input);
        let expect = scalar_lstm(&wx, &wh, &b, &xs);
        for (t, e) in expect.iter().enumerate() {
            assert!((cache.h.get(t, 0) - e).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (in_dim, hidden, t_len) = (3, 4, 5);
        let dir = LstmDirection::random(in_dim, hidden, &mut rng);
        let mut input = Matrix::zeros(t_len, in_dim);
        for v in input.data_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        // Loss = weighted sum of hidden states with fixed weights.
        let mut weights = Matrix::zeros(t_len, hidden);
        for v in weights.data_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let loss = |d: &LstmDirection, inp: &Matrix| -> f64 {
            let c = lstm_forward(d, inp);
            c.h.data().iter().zip(weights.data().iter()).map(|(a, b)| a * b).sum()
        };
        let cache = lstm_forward(&dir, &input);
        let mut grads = DirectionGrads::zeros_like(&dir);
        let d_input = lstm_backward(&dir, &input, &cache, &weights, &mut grads);

        let h = 1e-3;
        // Input gradient.
        for idx in 0..input.data().len() {
            let mut ip = input.clone();
            let mut im = input.clone();
            ip.data_mut()[idx] += h;
            im.data_mut()[idx] -= h;
            let num = (loss(&dir, &ip) - loss(&dir, &im)) / (2.0 * h);
            assert!((d_input.data()[idx] - num).abs() < 1e-4, "input idx {idx}");
        }
        // Parameter gradients.
        for (name, analytic) in [("wx", &grads.wx), ("wh", &grads.wh), ("b", &grads.b)] {
            for idx in 0..analytic.data().len() {
                let perturb = |delta: f64| {
                    let mut d2 = dir.clone();
                    let m = match name {
                        "wx" => &mut d2.wx,
                        "wh" => &mut d2.wh,
                        _ => &mut d2.b,
                    };
                    m.data_mut()[idx] += delta;
                    loss(&d2, &input)
                };
                let num = (perturb(h) - perturb(-h)) / (2.0 * h);
                assert!(
                    (analytic.data()[idx] - num).abs() < 1e-4,
                    "{name} idx {idx}: {} vs {num}",
                    analytic.data()[idx]
                );
            }
        }
    }
}
