//! Feed-forward classifier: ReLU hidden layers, softmax output, plain SGD.
//!
//! Parameters live in one flat `f64` vector. For every layer the weight
//! matrix comes first (shape `n_out x n_in`, row-major) followed by its
//! `n_out` biases. That layout is also the payload of the canonical byte
//! encoding, which is what content identifiers are computed over.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::ModelError;

/// Format version written as the first byte of every encoded model.
pub const ENCODING_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, ModelError> {
        if layer_sizes.len() < 2 {
            return Err(ModelError::InvalidArchitecture(format!(
                "need at least an input and an output layer, got {} sizes",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(ModelError::InvalidArchitecture(format!(
                "layer {pos} has size 0"
            )));
        }
        Ok(Self { layer_sizes })
    }

    /// 784-128-10, the default MNIST classifier.
    pub fn mnist() -> Self {
        Self {
            layer_sizes: vec![784, 128, 10],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    /// `(n_in, n_out)` for every weight layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| i * o + o).sum()
    }

    /// Offsets of each layer's weight block and bias block in the flat vector.
    fn offsets(&self) -> Vec<LayerOffsets> {
        let mut at = 0;
        self.layers()
            .map(|(n_in, n_out)| {
                let l = LayerOffsets {
                    n_in,
                    n_out,
                    weights: at,
                    biases: at + n_in * n_out,
                };
                at += n_in * n_out + n_out;
                l
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    n_in: usize,
    n_out: usize,
    weights: usize,
    biases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    weights: Vec<f64>,
}

impl ModelParams {
    pub fn from_parts(arch: Architecture, weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() != arch.param_count() {
            return Err(ModelError::ParamCount {
                expected: arch.param_count(),
                actual: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite { index: i });
        }
        Ok(Self { arch, weights })
    }

    /// All-zero parameters. Its softmax output is uniform for every input.
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            weights: vec![0.0; n],
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Bias entries of every layer, in layer order.
    pub fn biases(&self) -> impl Iterator<Item = f64> + '_ {
        self.arch
            .offsets()
            .into_iter()
            .flat_map(move |l| self.weights[l.biases..l.biases + l.n_out].iter().copied())
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Class probabilities for a single input.
    pub fn predict(&self, input: &[u8]) -> Result<Vec<f64>, ModelError> {
        if input.len() != self.arch.input_dim() {
            return Err(ModelError::DimensionMismatch {
                model: self.arch.input_dim(),
                data: input.len(),
            });
        }
        let mut ws = Workspace::new(&self.arch);
        let logits = ws.forward(self, input);
        let mut p = logits.to_vec();
        softmax_in_place(&mut p);
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            epochs_per_round: 1,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidConfig(what.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be positive");
        }
        if self.epochs_per_round == 0 {
            return bad("epochs_per_round must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be a finite non-negative number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Mean cross-entropy in nats.
    pub loss: f64,
    pub accuracy: f64,
}

/// Seeded Glorot-uniform weights, zero biases.
pub fn init_model(arch: &Architecture, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; arch.param_count()];
    for l in arch.offsets() {
        let bound = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
        for w in &mut weights[l.weights..l.biases] {
            *w = rng.random_range(-bound..bound);
        }
    }
    ModelParams {
        arch: arch.clone(),
        weights,
    }
}

/// Runs `cfg.epochs_per_round` epochs of mini-batch SGD on mean
/// cross-entropy, starting from `params`. Batch order is a permutation
/// drawn from `round_seed`.
pub fn train_local(
    params: &ModelParams,
    data: &Dataset,
    cfg: &TrainingConfig,
    round_seed: u64,
) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    check_dims(&params.arch, data)?;

    let mut model = params.clone();
    let mut grad = vec![0.0; model.weights.len()];
    let mut ws = Workspace::new(&model.arch);
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..cfg.epochs_per_round {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let loss = ws.accumulate_gradient(&model, data.image(i), data.label(i), &mut grad);
                if !loss.is_finite() {
                    return Err(ModelError::Diverged);
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return Err(ModelError::Diverged);
    }
    Ok(model)
}

/// Gradient of the mean cross-entropy over `data` with respect to every
/// parameter, together with that mean loss.
pub fn loss_gradient(params: &ModelParams, data: &Dataset) -> Result<(f64, Vec<f64>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    check_dims(&params.arch, data)?;
    let mut grad = vec![0.0; params.weights.len()];
    let mut ws = Workspace::new(&params.arch);
    let mut total = 0.0;
    for i in 0..data.len() {
        total += ws.accumulate_gradient(params, data.image(i), data.label(i), &mut grad);
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<EvalResult, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    check_dims(&params.arch, data)?;
    let mut ws = Workspace::new(&params.arch);
    let mut total = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let label = data.label(i) as usize;
        let logits = ws.forward(params, data.image(i));
        total += log_sum_exp(logits) - logits[label];
        if argmax(logits) == label {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok(EvalResult {
        loss: total / n,
        accuracy: correct as f64 / n,
    })
}

/// Canonical encoding: version byte, layer count and layer sizes as `u32`
/// little-endian, then every parameter as little-endian binary64.
pub fn serialize(params: &ModelParams) -> Vec<u8> {
    let sizes = params.arch.layer_sizes();
    let mut out = Vec::with_capacity(1 + 4 * (sizes.len() + 1) + 8 * params.weights.len());
    out.push(ENCODING_VERSION);
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &n in sizes {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for w in &params.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    let malformed = |msg: String| ModelError::Malformed(msg);
    let (&version, rest) = bytes
        .split_first()
        .ok_or_else(|| malformed("empty payload".into()))?;
    if version != ENCODING_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let mut words = rest.chunks_exact(4);
    let mut next_u32 = |what: &str| {
        words
            .next()
            .map(|w| u32::from_le_bytes(w.try_into().expect("chunk of 4")))
            .ok_or(ModelError::Truncated(format!("missing {what}")))
    };
    let count = next_u32("layer count")? as usize;
    if count < 2 {
        return Err(malformed(format!("layer count {count}")));
    }
    let header_len = 4 * (count + 1);
    if rest.len() < header_len {
        return Err(ModelError::Truncated(format!(
            "header declares {count} layers but only {} bytes follow",
            rest.len()
        )));
    }
    let sizes: Vec<usize> = (0..count)
        .map(|_| next_u32("layer size").map(|n| n as usize))
        .collect::<Result<_, _>>()?;
    let arch = Architecture::new(sizes).map_err(|e| malformed(e.to_string()))?;

    let payload = &rest[header_len..];
    let expected = 8 * arch.param_count();
    if payload.len() < expected {
        return Err(ModelError::Truncated(format!(
            "expected {expected} parameter bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(malformed(format!(
            "{} trailing bytes after parameters",
            payload.len() - expected
        )));
    }
    let weights: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ModelParams::from_parts(arch, weights)
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_dims(arch: &Architecture, data: &Dataset) -> Result<(), ModelError> {
    if data.dim() != arch.input_dim() {
        return Err(ModelError::DimensionMismatch {
            model: arch.input_dim(),
            data: data.dim(),
        });
    }
    if let Some(bad) = data
        .labels()
        .iter()
        .find(|&&l| l as usize >= arch.num_classes())
    {
        return Err(ModelError::LabelOutOfRange {
            label: *bad,
            classes: arch.num_classes(),
        });
    }
    Ok(())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Reusable activation and delta buffers for one architecture.
struct Workspace {
    offsets: Vec<LayerOffsets>,
    /// Non-zero input pixels as `(index, value)`; MNIST is mostly background.
    sparse_input: Vec<(usize, f64)>,
    /// Output of every layer: ReLU activations for hidden layers, logits last.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(arch: &Architecture) -> Self {
        let offsets = arch.offsets();
        let acts = offsets.iter().map(|l| vec![0.0; l.n_out]).collect();
        let deltas = offsets.iter().map(|l| vec![0.0; l.n_out]).collect();
        Self {
            offsets,
            sparse_input: Vec::with_capacity(arch.input_dim()),
            acts,
            deltas,
        }
    }

    fn forward(&mut self, params: &ModelParams, input: &[u8]) -> &[f64] {
        let w = &params.weights;
        self.sparse_input.clear();
        self.sparse_input.extend(
            input
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0)
                .map(|(i, &p)| (i, p as f64 / 255.0)),
        );
        let last = self.offsets.len() - 1;
        for (k, l) in self.offsets.iter().enumerate() {
            let (before, after) = self.acts.split_at_mut(k);
            let out = &mut after[0];
            for (o, z) in out.iter_mut().enumerate() {
                let row = &w[l.weights + o * l.n_in..l.weights + (o + 1) * l.n_in];
                let mut acc = w[l.biases + o];
                if k == 0 {
                    for &(i, x) in &self.sparse_input {
                        acc += row[i] * x;
                    }
                } else {
                    acc += dot(row, &before[k - 1]);
                }
                *z = if k < last { acc.max(0.0) } else { acc };
            }
        }
        &self.acts[last]
    }

    /// Adds the per-sample cross-entropy gradient into `grad`, returning the
    /// sample's loss.
    fn accumulate_gradient(
        &mut self,
        params: &ModelParams,
        input: &[u8],
        label: u8,
        grad: &mut [f64],
    ) -> f64 {
        let logits = self.forward(params, input);
        let loss = log_sum_exp(logits) - logits[label as usize];

        let last = self.offsets.len() - 1;
        self.deltas[last].copy_from_slice(&self.acts[last]);
        softmax_in_place(&mut self.deltas[last]);
        self.deltas[last][label as usize] -= 1.0;

        let w = &params.weights;
        for k in (0..=last).rev() {
            let l = self.offsets[k];
            let (lower, upper) = self.deltas.split_at_mut(k);
            let delta = &upper[0];
            for (o, &d) in delta.iter().enumerate() {
                grad[l.biases + o] += d;
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[l.weights + o * l.n_in..l.weights + (o + 1) * l.n_in];
                if k == 0 {
                    for &(i, x) in &self.sparse_input {
                        g_row[i] += d * x;
                    }
                } else {
                    axpy(d, &self.acts[k - 1], g_row);
                }
            }
            if k > 0 {
                let prev = &mut lower[k - 1];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(
                            d,
                            &w[l.weights + o * l.n_in..l.weights + (o + 1) * l.n_in],
                            prev,
                        );
                    }
                }
                // ReLU derivative; activations are exactly zero where inactive.
                for (p, &a) in prev.iter_mut().zip(&self.acts[k - 1]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
        loss
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
