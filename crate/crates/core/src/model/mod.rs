//! The acoustic model: an optional identity-initialized linear input layer
//! (LIN), a stack of uni- or bi-directional LSTM layers with dropout, and a
//! softmax head producing per-frame log-posteriors.

mod checkpoint;
mod lstm;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use lstm::{random_uniform, LstmDirection};

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::TokenSet;
use crate::error::{Error, Result};
use crate::math::{dropout_mask, log_softmax, Matrix};

use lstm::{lstm_backward, lstm_forward, reverse_rows, DirectionCache, DirectionGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_units: usize,
    pub bidirectional: bool,
    pub input_dim: usize,
    pub output_dim: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 5,
            hidden_units: 512,
            bidirectional: false,
            input_dim: 120,
            output_dim: 2,
            dropout_rate: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim < 2 {
            return Err(Error::InvalidArg("output_dim must be >= 2 (blank + 1 token)".into()));
        }
        if self.input_dim == 0 || self.num_layers == 0 || self.hidden_units == 0 {
            return Err(Error::InvalidArg("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArg("dropout_rate must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Width of each LSTM layer's output (directions concatenate).
    pub fn layer_output_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden_units
        } else {
            self.hidden_units
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// out × in
    pub weight: Matrix,
    /// 1 × out
    pub bias: Matrix,
}

impl Linear {
    fn random<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        Linear {
            weight: random_uniform(out_dim, in_dim, rng),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    fn identity(dim: usize) -> Self {
        Linear {
            weight: Matrix::identity(dim),
            bias: Matrix::zeros(1, dim),
        }
    }

    /// Apply to every row of `input`.
    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.weight.rows());
        for t in 0..input.rows() {
            out.row_mut(t).copy_from_slice(self.bias.row(0));
            self.weight.matvec_add(input.row(t), out.row_mut(t));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub fwd: LstmDirection,
    pub bwd: Option<LstmDirection>,
}

/// The model doubles as the in-memory checkpoint: a named-tensor store
/// plus its config snapshot and token set.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub token_set: TokenSet,
    pub lin: Option<Linear>,
    pub layers: Vec<LstmLayer>,
    pub head: Linear,
}

/// Which parameters receive optimizer updates.
pub type TrainableSet = BTreeSet<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptationPhase {
    /// Only the LIN layer and the softmax head are updated.
    LinWarmup,
    /// Every parameter is updated.
    Full,
}

/// Per-utterance activations retained for the backward pass.
pub struct ForwardCache {
    pub input: Matrix,
    layer_inputs: Vec<Matrix>,
    caches_fwd: Vec<DirectionCache>,
    caches_bwd: Vec<Option<DirectionCache>>,
    rev_inputs: Vec<Option<Matrix>>,
    dropout_masks: Vec<Option<Matrix>>,
    layer_outputs: Vec<Matrix>,
    pub logits: Matrix,
    /// T × output_dim log-posteriors (log_softmax rows).
    pub log_probs: Matrix,
}

/// Named parameter gradients, keyed like the checkpoint tensors.
pub type GradStore = std::collections::BTreeMap<String, Matrix>;

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, token_set: TokenSet, rng: &mut R) -> Result<Model> {
        config.validate()?;
        if token_set.len() != config.output_dim {
            return Err(Error::ShapeMismatch {
                context: "Model::new token set".into(),
                expected: format!("{} tokens", config.output_dim),
                got: format!("{}", token_set.len()),
            });
        }
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut in_dim = config.input_dim;
        for _ in 0..config.num_layers {
            let fwd = LstmDirection::random(in_dim, config.hidden_units, rng);
            let bwd = config
                .bidirectional
                .then(|| LstmDirection::random(in_dim, config.hidden_units, rng));
            layers.push(LstmLayer { fwd, bwd });
            in_dim = config.layer_output_dim();
        }
        let head = Linear::random(config.output_dim, in_dim, rng);
        Ok(Model {
            config,
            token_set,
            lin: None,
            layers,
            head,
        })
    }

    /// Names of every parameter tensor, in deterministic order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.lin.is_some() {
            names.push("lin.weight".to_string());
            names.push("lin.bias".to_string());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for part in ["wx", "wh", "b"] {
                names.push(format!("lstm{i}.fwd.{part}"));
            }
            if layer.bwd.is_some() {
                for part in ["wx", "wh", "b"] {
                    names.push(format!("lstm{i}.bwd.{part}"));
                }
            }
        }
        names.push("head.weight".to_string());
        names.push("head.bias".to_string());
        names
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        let mut parts = name.split('.');
        match (parts.next()?, parts.next(), parts.next()) {
            ("lin", Some("weight"), None) => self.lin.as_ref().map(|l| &l.weight),
            ("lin", Some("bias"), None) => self.lin.as_ref().map(|l| &l.bias),
            ("head", Some("weight"), None) => Some(&self.head.weight),
            ("head", Some("bias"), None) => Some(&self.head.bias),
            (layer, Some(dir), Some(part)) if layer.starts_with("lstm") => {
                let idx: usize = layer[4..].parse().ok()?;
                let l = self.layers.get(idx)?;
                let d = match dir {
                    "fwd" => &l.fwd,
                    "bwd" => l.bwd.as_ref()?,
                    _ => return None,
                };
                match part {
                    "wx" => Some(&d.wx),
                    "wh" => Some(&d.wh),
                    "b" => Some(&d.b),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let mut parts = name.split('.');
        match (parts.next()?, parts.next(), parts.next()) {
            ("lin", Some("weight"), None) => self.lin.as_mut().map(|l| &mut l.weight),
            ("lin", Some("bias"), None) => self.lin.as_mut().map(|l| &mut l.bias),
            ("head", Some("weight"), None) => Some(&mut self.head.weight),
            ("head", Some("bias"), None) => Some(&mut self.head.bias),
            (layer, Some(dir), Some(part)) if layer.starts_with("lstm") => {
                let idx: usize = layer[4..].parse().ok()?;
                let l = self.layers.get_mut(idx)?;
                let d = match dir {
                    "fwd" => &mut l.fwd,
                    "bwd" => l.bwd.as_mut()?,
                    _ => return None,
                };
                match part {
                    "wx" => Some(&mut d.wx),
                    "wh" => Some(&mut d.wh),
                    "b" => Some(&mut d.b),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Zeroed gradient store covering every tensor.
    pub fn zero_grads(&self) -> GradStore {
        self.tensor_names()
            .into_iter()
            .map(|n| {
                let t = self.tensor(&n).unwrap();
                let z = Matrix::zeros(t.rows(), t.cols());
                (n, z)
            })
            .collect()
    }

    /// Forward pass for one utterance (T × input_dim stacked features).
    pub fn forward<R: Rng>(&self, input: &Matrix, training: bool, rng: &mut R) -> Result<ForwardCache> {
        if input.cols() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                context: "model forward input".into(),
                expected: format!("dim {}", self.config.input_dim),
                got: format!("dim {}", input.cols()),
            });
        }
        if input.rows() == 0 {
            return Err(Error::EmptyInput("model forward"));
        }
        let t_len = input.rows();
        let mut cur = match &self.lin {
            Some(l) => l.forward(input),
            None => input.clone(),
        };

        let n = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n);
        let mut caches_fwd = Vec::with_capacity(n);
        let mut caches_bwd = Vec::with_capacity(n);
        let mut rev_inputs = Vec::with_capacity(n);
        let mut dropout_masks = Vec::with_capacity(n);
        let mut layer_outputs = Vec::with_capacity(n);

        for layer in &self.layers {
            layer_inputs.push(cur.clone());
            let cache_f = lstm_forward(&layer.fwd, &cur);
            let mut out = if let Some(bwd) = &layer.bwd {
                let rev = reverse_rows(&cur);
                let cache_b = lstm_forward(bwd, &rev);
                let h_b = reverse_rows(&cache_b.h);
                let h_dim = self.config.hidden_units;
                let mut merged = Matrix::zeros(t_len, 2 * h_dim);
                for t in 0..t_len {
                    merged.row_mut(t)[..h_dim].copy_from_slice(cache_f.h.row(t));
                    merged.row_mut(t)[h_dim..].copy_from_slice(h_b.row(t));
                }
                caches_bwd.push(Some(cache_b));
                rev_inputs.push(Some(rev));
                merged
            } else {
                caches_bwd.push(None);
                rev_inputs.push(None);
                cache_f.h.clone()
            };
            caches_fwd.push(cache_f);
            layer_outputs.push(out.clone());
            let mask = if training && self.config.dropout_rate > 0.0 {
                let m = dropout_mask(out.rows(), out.cols(), self.config.dropout_rate, rng)?;
                for (o, mv) in out.data_mut().iter_mut().zip(m.data().iter()) {
                    *o *= mv;
                }
                Some(m)
            } else {
                None
            };
            dropout_masks.push(mask);
            cur = out;
        }

        let logits = self.head.forward(&cur);
        let mut log_probs = Matrix::zeros(t_len, self.config.output_dim);
        for t in 0..t_len {
            let row = log_softmax(logits.row(t))?;
            log_probs.row_mut(t).copy_from_slice(&row);
        }
        Ok(ForwardCache {
            input: input.clone(),
            layer_inputs,
            caches_fwd,
            caches_bwd,
            rev_inputs,
            dropout_masks,
            layer_outputs,
            logits,
            log_probs,
        })
    }

    /// Log-posteriors for a batch of utterances.
    pub fn forward_batch<R: Rng>(
        &self,
        batch: &[&Matrix],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Matrix>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("model forward batch"));
        }
        batch
            .iter()
            .map(|m| self.forward(m, training, rng).map(|c| c.log_probs))
            .collect()
    }

    /// Backward pass from the gradient w.r.t. the pre-softmax logits.
    /// Accumulates into `grads` (as produced by `zero_grads`).
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Matrix, grads: &mut GradStore) {
        let t_len = cache.input.rows();
        let h_dim = self.config.hidden_units;

        // Head.
        let last_out = {
            // Output of the final layer after dropout.
            let mut out = cache.layer_outputs.last().unwrap().clone();
            if let Some(mask) = cache.dropout_masks.last().unwrap() {
                for (o, m) in out.data_mut().iter_mut().zip(mask.data().iter()) {
                    *o *= m;
                }
            }
            out
        };
        let mut d_cur = Matrix::zeros(t_len, last_out.cols());
        {
            let gw = grads.get_mut("head.weight").unwrap();
            for t in 0..t_len {
                gw.add_outer(d_logits.row(t), last_out.row(t));
            }
            let gb = grads.get_mut("head.bias").unwrap();
            for t in 0..t_len {
                for (b, d) in gb.row_mut(0).iter_mut().zip(d_logits.row(t).iter()) {
                    *b += d;
                }
            }
            for t in 0..t_len {
                self.head.matvec_t(d_logits.row(t), d_cur.row_mut(t));
            }
        }

        // LSTM stack, top down.
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.dropout_masks[i] {
                for (d, m) in d_cur.data_mut().iter_mut().zip(mask.data().iter()) {
                    *d *= m;
                }
            }
            let input = &cache.layer_inputs[i];
            let mut d_input_total = Matrix::zeros(t_len, input.cols());
            // Forward direction reads the left columns of d_cur.
            let width = if layer.bwd.is_some() { h_dim } else { d_cur.cols() };
            let mut d_h_fwd = Matrix::zeros(t_len, width);
            for t in 0..t_len {
                d_h_fwd.row_mut(t).copy_from_slice(&d_cur.row(t)[..width]);
            }
            let mut dg = DirectionGrads::zeros_like(&layer.fwd);
            let d_in = lstm_backward(&layer.fwd, input, &cache.caches_fwd[i], &d_h_fwd, &mut dg);
            d_input_total.add_scaled(&d_in, 1.0);
            accumulate_direction(grads, i, "fwd", dg);

            if let Some(bwd) = &layer.bwd {
                let mut d_h_bwd = Matrix::zeros(t_len, h_dim);
                for t in 0..t_len {
                    d_h_bwd.row_mut(t).copy_from_slice(&d_cur.row(t)[h_dim..]);
                }
                let d_h_rev = reverse_rows(&d_h_bwd);
                let rev_in = cache.rev_inputs[i].as_ref().unwrap();
                let mut dgb = DirectionGrads::zeros_like(bwd);
                let d_in_rev = lstm_backward(
                    bwd,
                    rev_in,
                    cache.caches_bwd[i].as_ref().unwrap(),
                    &d_h_rev,
                    &mut dgb,
                );
                d_input_total.add_scaled(&reverse_rows(&d_in_rev), 1.0);
                accumulate_direction(grads, i, "bwd", dgb);
            }
            d_cur = d_input_total;
        }

        // LIN.
        if self.lin.is_some() {
            let gw = grads.get_mut("lin.weight").unwrap();
            for t in 0..t_len {
                gw.add_outer(d_cur.row(t), cache.input.row(t));
            }
            let gb = grads.get_mut("lin.bias").unwrap();
            for t in 0..t_len {
                for (b, d) in gb.row_mut(0).iter_mut().zip(d_cur.row(t).iter()) {
                    *b += d;
                }
            }
        }
    }

    /// Re-dimension and randomly re-initialize the softmax head for a new
    /// token set; every other tensor is carried over bit-identically.
    pub fn replace_head<R: Rng>(&self, new_token_set: TokenSet, rng: &mut R) -> Model {
        let mut out = self.clone();
        let in_dim = self.head.weight.cols();
        out.head = Linear::random(new_token_set.len(), in_dim, rng);
        out.config.output_dim = new_token_set.len();
        out.token_set = new_token_set;
        out
    }

    /// Insert an identity-initialized linear input layer. Until trained it
    /// leaves the model's outputs unchanged.
    pub fn insert_lin(&self) -> Result<Model> {
        if self.lin.is_some() {
            return Err(Error::InvalidArg("model already has a LIN layer".into()));
        }
        let mut out = self.clone();
        out.lin = Some(Linear::identity(self.config.input_dim));
        Ok(out)
    }

    /// The set of tensors updated in the given adaptation phase.
    pub fn set_trainable(&self, phase: AdaptationPhase) -> Result<TrainableSet> {
        match phase {
            AdaptationPhase::LinWarmup => {
                if self.lin.is_none() {
                    return Err(Error::InvalidArg(
                        "lin_warmup phase requested but the model has no LIN layer".into(),
                    ));
                }
                Ok(["lin.weight", "lin.bias", "head.weight", "head.bias"]
                    .into_iter()
                    .map(String::from)
                    .collect())
            }
            AdaptationPhase::Full => Ok(self.tensor_names().into_iter().collect()),
        }
    }
}

impl Linear {
    fn matvec_t(&self, d_out: &[f64], d_in: &mut [f64]) {
        self.weight.matvec_t_add(d_out, d_in);
    }
}

fn accumulate_direction(grads: &mut GradStore, layer: usize, dir: &str, dg: DirectionGrads) {
    for (part, g) in [("wx", dg.wx), ("wh", dg.wh), ("b", dg.b)] {
        grads
            .get_mut(&format!("lstm{layer}.{dir}.{part}"))
            .unwrap()
            .add_scaled(&g, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_tokens(n: usize) -> TokenSet {
        let mut toks = vec!["<blank>".to_string()];
        for i in 1..n {
            toks.push(format!("p{i}"));
        }
        TokenSet::new(toks).unwrap()
    }

    fn tiny_config(bidirectional: bool) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_units: 4,
            bidirectional,
            input_dim: 3,
            output_dim: 3,
            dropout_rate: 0.0,
        }
    }

    fn random_input<R: Rng>(t: usize, dim: usize, rng: &mut R) -> Matrix {
        let mut m = Matrix::zeros(t, dim);
        for v in m.data_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        m
    }

    #[test]
    fn forward_rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(tiny_config(true), tiny_tokens(3), &mut rng).unwrap();
        let input = random_input(6, 3, &mut rng);
        let cache = model.forward(&input, false, &mut rng).unwrap();
        for t in 0..6 {
            let sum: f64 = cache.log_probs.row(t).iter().map(|v| v.exp()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unidirectional_forward_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::new(tiny_config(false), tiny_tokens(3), &mut rng).unwrap();
        let input = random_input(8, 3, &mut rng);
        let full = model.forward(&input, false, &mut rng).unwrap();
        // Truncate to 5 frames; earlier rows must be bit-identical.
        let head = Matrix::from_vec(5, 3, input.data()[..15].to_vec()).unwrap();
        let part = model.forward(&head, false, &mut rng).unwrap();
        for t in 0..5 {
            assert_eq!(full.log_probs.row(t), part.log_probs.row(t));
        }
        // Mutating a future frame leaves earlier outputs untouched.
        let mut mutated = input.clone();
        mutated.set(7, 0, 99.0);
        let m = model.forward(&mutated, false, &mut rng).unwrap();
        for t in 0..7 {
            assert_eq!(full.log_probs.row(t), m.log_probs.row(t));
        }
    }

    #[test]
    fn bidirectional_output_depends_on_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(tiny_config(true), tiny_tokens(3), &mut rng).unwrap();
        let input = random_input(6, 3, &mut rng);
        let full = model.forward(&input, false, &mut rng).unwrap();
        let mut mutated = input.clone();
        mutated.set(5, 1, 50.0);
        let m = model.forward(&mutated, false, &mut rng).unwrap();
        assert_ne!(full.log_probs.row(0), m.log_probs.row(0));
    }

    #[test]
    fn replace_head_leaves_lstm_tensors_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::new(tiny_config(false), tiny_tokens(3), &mut rng).unwrap();
        let new_tokens = tiny_tokens(5);
        let replaced = model.replace_head(new_tokens, &mut rng);
        assert_eq!(replaced.head.weight.rows(), 5);
        assert_eq!(replaced.config.output_dim, 5);
        for name in model.tensor_names() {
            if name.starts_with("head.") {
                continue;
            }
            assert_eq!(model.tensor(&name).unwrap(), replaced.tensor(&name).unwrap(), "{name}");
        }
        // Same-size head is still re-randomized.
        let same = model.replace_head(tiny_tokens(3), &mut rng);
        assert_ne!(model.head.weight, same.head.weight);
    }

    #[test]
    fn insert_lin_is_transparent_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::new(tiny_config(false), tiny_tokens(3), &mut rng).unwrap();
        let with_lin = model.insert_lin().unwrap();
        assert_eq!(with_lin.lin.as_ref().unwrap().weight, Matrix::identity(3));
        let input = random_input(5, 3, &mut rng);
        let a = model.forward(&input, false, &mut rng).unwrap();
        let b = with_lin.forward(&input, false, &mut rng).unwrap();
        for (x, y) in a.log_probs.data().iter().zip(b.log_probs.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(with_lin.insert_lin().is_err());
    }

    #[test]
    fn trainable_sets_by_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = Model::new(tiny_config(false), tiny_tokens(3), &mut rng).unwrap();
        assert!(model.set_trainable(AdaptationPhase::LinWarmup).is_err());
        let with_lin = model.insert_lin().unwrap();
        let warm = with_lin.set_trainable(AdaptationPhase::LinWarmup).unwrap();
        assert!(warm.iter().all(|n| n.starts_with("lin.") || n.starts_with("head.")));
        assert_eq!(warm.len(), 4);
        let full = with_lin.set_trainable(AdaptationPhase::Full).unwrap();
        assert_eq!(full.len(), with_lin.tensor_names().len());
    }

    #[test]
    fn full_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ModelConfig {
            num_layers: 1,
            hidden_units: 4,
            bidirectional: false,
            input_dim: 3,
            output_dim: 3,
            dropout_rate: 0.0,
        };
        let model = Model::new(cfg, tiny_tokens(3), &mut rng).unwrap().insert_lin().unwrap();
        let input = random_input(3, 3, &mut rng);
        // Scalar loss: fixed random weighting of the logits.
        let mut w = Matrix::zeros(3, 3);
        for v in w.data_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let loss = |m: &Model| -> f64 {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let c = m.forward(&input, false, &mut r).unwrap();
            c.logits.data().iter().zip(w.data().iter()).map(|(a, b)| a * b).sum()
        };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let cache = model.forward(&input, false, &mut r).unwrap();
        let mut grads = model.zero_grads();
        model.backward(&cache, &w, &mut grads);

        let h = 1e-3;
        for name in model.tensor_names() {
            let n = model.tensor(&name).unwrap().data().len();
            for idx in 0..n {
                let mut mp = model.clone();
                mp.tensor_mut(&name).unwrap().data_mut()[idx] += h;
                let mut mm = model.clone();
                mm.tensor_mut(&name).unwrap().data_mut()[idx] -= h;
                let num = (loss(&mp) - loss(&mm)) / (2.0 * h);
                let ana = grads[&name].data()[idx];
                assert!((ana - num).abs() < 1e-4, "{name}[{idx}]: {ana} vs {num}");
            }
        }
    }
}
