//! Minimal feed-forward network: dense layers with tanh hidden activations,
//! a softmax output, cross-entropy loss, and seeded mini-batch SGD.
//!
//! Every layer's parameters live in one flat vector (row-major weights
//! followed by biases), which is the unit the compression pipeline operates
//! on. All operations are pure functions of their inputs; randomness enters
//! only through explicit seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    Hidden,
    Output,
}

/// One dense layer as a flat parameter block: `out_dim * in_dim` row-major
/// weights followed by `out_dim` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub in_dim: usize,
    pub out_dim: usize,
    pub role: LayerRole,
    pub values: Vec<f64>,
}

impl LayerBlock {
    pub fn zeros(in_dim: usize, out_dim: usize, role: LayerRole) -> Self {
        Self {
            in_dim,
            out_dim,
            role,
            values: vec![0.0; out_dim * (in_dim + 1)],
        }
    }

    /// Number of parameters in this block (the layer's G_k).
    pub fn param_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    /// The flat parameter vector.
    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Rebuild a block from a flat vector and its shape.
    pub fn from_flat(in_dim: usize, out_dim: usize, role: LayerRole, values: Vec<f64>) -> Result<Self> {
        let expected = out_dim * (in_dim + 1);
        if values.len() != expected {
            return Err(Error::shape(expected, values.len(), "layer block from_flat"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            role,
            values,
        })
    }

    #[inline]
    fn bias(&self, o: usize) -> f64 {
        self.values[self.out_dim * self.in_dim + o]
    }

    /// Affine map `W x + b` without activation.
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let mut sum = self.bias(o);
            let row = o * self.in_dim;
            for (i, &x) in input.iter().enumerate() {
                sum += self.values[row + i] * x;
            }
            out[o] = sum;
        }
    }
}

/// An ordered stack of layer blocks; the last layer is the softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerBlock>,
}

/// Nonnegative cross-entropy in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue(f64);

impl LossValue {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::usage(format!("loss must be finite and >= 0, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Seeded SGD settings. The paper-specified pieces are the learning rate and
/// epoch count; batch size and shuffling are artifact defaults.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 1,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Fraction of argmax-correct predictions, ties broken toward class 0.
    pub accuracy: f64,
    pub mean_loss: LossValue,
}

impl ModelParams {
    /// Build an MLP from layer widths, e.g. `[10, 32, 5]` for a 10-feature,
    /// 32-hidden, 5-class model. Weights and biases are uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, seeded.
    pub fn new_mlp(dims: &[usize], seed: u64) -> Result<Self> {
        Self::validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let role = if layers.len() == dims.len() - 2 {
                LayerRole::Output
            } else {
                LayerRole::Hidden
            };
            let limit = 1.0 / (in_dim as f64).sqrt();
            let values = (0..out_dim * (in_dim + 1))
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(LayerBlock {
                in_dim,
                out_dim,
                role,
                values,
            });
        }
        Ok(Self { layers })
    }

    /// All-zero model with the given widths.
    pub fn zeros_mlp(dims: &[usize]) -> Result<Self> {
        Self::validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let role = if k == dims.len() - 2 {
                    LayerRole::Output
                } else {
                    LayerRole::Hidden
                };
                LayerBlock::zeros(w[0], w[1], role)
            })
            .collect();
        Ok(Self { layers })
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 3 {
            return Err(Error::usage("model needs at least one hidden layer (q >= 2)"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::usage("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Layers below the output (the part that is compressed and aggregated).
    pub fn body(&self) -> &[LayerBlock] {
        &self.layers[..self.layers.len() - 1]
    }

    /// The private output layer.
    pub fn head(&self) -> &LayerBlock {
        self.layers.last().expect("model has layers")
    }

    /// Replace all non-output layers, keeping the head.
    pub fn set_body(&mut self, body: &[LayerBlock]) -> Result<()> {
        if body.len() != self.layers.len() - 1 {
            return Err(Error::shape(
                self.layers.len() - 1,
                body.len(),
                "body layer count",
            ));
        }
        for (slot, new) in self.layers.iter_mut().zip(body) {
            if slot.in_dim != new.in_dim || slot.out_dim != new.out_dim {
                return Err(Error::shape(
                    slot.param_count(),
                    new.param_count(),
                    "body layer shape",
                ));
            }
            slot.values = new.values.clone();
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::usage("model needs at least 2 layers"));
        }
        let outs = self.layers.iter().filter(|l| l.role == LayerRole::Output).count();
        if outs != 1 || self.layers.last().unwrap().role != LayerRole::Output {
            return Err(Error::usage("exactly one output layer, in final position"));
        }
        for w in self.layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::shape(w[0].out_dim, w[1].in_dim, "layer width chain"));
            }
        }
        Ok(())
    }

    /// Pre-softmax logits for one sample.
    fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check()?;
        if features.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), features.len(), "input features"));
        }
        let mut activ = features.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(&activ, &mut z);
            if layer.role == LayerRole::Hidden {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            activ = z;
        }
        Ok(activ)
    }

    /// Class probabilities for one sample (softmax over the output logits).
    ///
    /// The result is nonnegative and sums to 1 within 1e-9.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(features)?;
        Ok(softmax(&z))
    }
}

/// Numerically stable softmax (max subtraction).
fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// log(sum(exp(z))) with max subtraction.
fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy loss and its gradient over the given samples.
///
/// The gradient is returned as one flat vector per layer, aligned with the
/// layer's parameter layout. `indices` selects the mini-batch.
pub fn loss_and_gradient(
    model: &ModelParams,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    model.check()?;
    if indices.is_empty() {
        return Err(Error::usage("gradient requested over an empty batch"));
    }
    let q = model.layers.len();
    let mut grads: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.param_count()]).collect();
    let mut total_loss = 0.0;

    for &idx in indices {
        let x = &data.features[idx];
        let y = data.labels[idx];
        if x.len() != model.input_dim() {
            return Err(Error::shape(model.input_dim(), x.len(), "input features"));
        }

        // Forward pass, keeping every layer's post-activation output.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(q + 1);
        activations.push(x.clone());
        for layer in &model.layers {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(activations.last().unwrap(), &mut z);
            if layer.role == LayerRole::Hidden {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        let logits = activations.last().unwrap();
        total_loss += log_sum_exp(logits) - logits[y];

        // Backward pass: softmax + cross-entropy gives dL/dz = p - onehot(y).
        let mut dz = softmax(logits);
        dz[y] -= 1.0;
        for (k, layer) in model.layers.iter().enumerate().rev() {
            let input = &activations[k];
            let grad = &mut grads[k];
            let bias_base = layer.out_dim * layer.in_dim;
            for o in 0..layer.out_dim {
                let g = dz[o];
                let row = o * layer.in_dim;
                for (i, &a) in input.iter().enumerate() {
                    grad[row + i] += g * a;
                }
                grad[bias_base + o] += g;
            }
            if k > 0 {
                let mut d_in = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let g = dz[o];
                    let row = o * layer.in_dim;
                    for (i, v) in d_in.iter_mut().enumerate() {
                        *v += layer.values[row + i] * g;
                    }
                }
                // Through tanh: dz = d_in * (1 - a^2), a = tanh(z).
                for (v, &a) in d_in.iter_mut().zip(input) {
                    *v *= 1.0 - a * a;
                }
                dz = d_in;
            }
        }
    }

    let scale = 1.0 / indices.len() as f64;
    for g in grads.iter_mut() {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok((total_loss * scale, grads))
}

/// Mini-batch SGD: per batch, `params <- params - lr * grad(mean batch loss)`.
///
/// Shuffling is reseeded per call from `cfg.seed`; identical inputs give a
/// bit-identical result. A non-finite batch loss aborts with a divergence
/// error naming the epoch.
pub fn train_local(model: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    model.check()?;
    if data.is_empty() {
        return Err(Error::usage("train_local requires a nonempty dataset"));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::usage(format!("learning rate must be finite and >= 0, got {}", cfg.lr)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::usage("batch size must be positive"));
    }
    let mut out = model.clone();
    if cfg.lr == 0.0 || cfg.epochs == 0 {
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        // Seeded Fisher-Yates, fresh each epoch.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_gradient(&out, data, batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            for (layer, grad) in out.layers.iter_mut().zip(&grads) {
                for (v, &g) in layer.values.iter_mut().zip(grad) {
                    *v -= cfg.lr * g;
                }
            }
        }
    }
    Ok(out)
}

/// Accuracy and mean loss over a dataset. Deterministic; argmax ties break
/// toward the lowest class index.
pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<EvalReport> {
    model.check()?;
    if data.is_empty() {
        return Err(Error::usage("evaluate requires a nonempty dataset"));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let logits = model.logits(x)?;
        loss_sum += log_sum_exp(&logits) - logits[y];
        let mut best = 0usize;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        correct += usize::from(best == y);
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / n,
        mean_loss: LossValue::new(loss_sum / n)?,
    })
}
