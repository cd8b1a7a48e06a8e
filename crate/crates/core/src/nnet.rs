//! Feedforward network with an entity-embedding input layer.
//!
//! The network maps `(x, one_hot(leaf))` to a scalar prediction. The one-hot
//! vector is multiplied by the embedding matrix, concatenated after the
//! covariates, pushed through the dense hidden layers and finally through a
//! single output neuron. After training, column `s` of the embedding matrix is
//! the embedding of leaf `s`.
//!
//! Training is mini-batch Adam on the mean per-observation loss. Everything is
//! deterministic given `NetConfig::seed`: the initial weights and the per-epoch
//! shuffle order come from one seeded ChaCha stream, and reductions run in a
//! fixed order.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Family};
use crate::embedding::EmbeddingTable;
use crate::hierarchy::{Hierarchy, NodeId};

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite training loss at epoch {epoch}; try a lower learning_rate")]
    NonFiniteLoss { epoch: usize },
    #[error("prediction {0} is not positive")]
    NonPositivePrediction(f64),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Exponential,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::Exponential => z.exp(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
            Activation::Exponential => a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            "exponential" | "exp" => Ok(Activation::Exponential),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    PoissonDeviance,
}

impl Loss {
    /// Per-observation loss.
    #[inline]
    pub fn unit(self, y: f64, y_hat: f64) -> f64 {
        match self {
            Loss::Mse => (y - y_hat).powi(2),
            Loss::PoissonDeviance => {
                let log_term = if y == 0.0 { 0.0 } else { y * (y / y_hat).ln() };
                2.0 * (log_term - (y - y_hat))
            }
        }
    }

    #[inline]
    fn d_unit(self, y: f64, y_hat: f64) -> f64 {
        match self {
            Loss::Mse => 2.0 * (y_hat - y),
            Loss::PoissonDeviance => 2.0 * (1.0 - y / y_hat),
        }
    }
}

/// Total Poisson deviance `2 Σ [y ln(y/ŷ) − (y − ŷ)]`.
pub fn poisson_deviance(y: &[f64], y_hat: &[f64]) -> Result<f64, NnetError> {
    if y.len() != y_hat.len() {
        return Err(NnetError::ShapeMismatch(format!(
            "{} responses vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if let Some(&bad) = y_hat.iter().find(|v| !(**v > 0.0)) {
        return Err(NnetError::NonPositivePrediction(bad));
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&a, &b)| Loss::PoissonDeviance.unit(a, b))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub embedding_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub loss: Loss,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Stop after this many consecutive epochs without improvement of at least `early_stop_tol`.
    pub early_stop_patience: usize,
    pub early_stop_tol: f64,
    /// Start the output bias at the link of the mean response instead of zero.
    pub init_output_bias: bool,
}

impl NetConfig {
    /// Single linear hidden layer of two neurons and a two-dimensional
    /// embedding; identity output with MSE for Gaussian data, exponential
    /// output with Poisson deviance for counts. Adam at 3e-3 on batches of 64
    /// for 200 epochs, no early stopping.
    pub fn for_family(family: Family) -> Self {
        let (output_activation, loss) = match family {
            Family::Gaussian => (Activation::Identity, Loss::Mse),
            Family::Poisson => (Activation::Exponential, Loss::PoissonDeviance),
        };
        Self {
            embedding_dim: 2,
            hidden_sizes: vec![2],
            hidden_activation: Activation::Identity,
            output_activation,
            loss,
            epochs: 200,
            batch_size: 64,
            learning_rate: 3e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            early_stop_patience: 0,
            early_stop_tol: 1e-6,
            init_output_bias: true,
        }
    }

    fn check(&self, num_leaves: usize) -> Result<(), NnetError> {
        if self.embedding_dim == 0 || self.embedding_dim >= num_leaves {
            return Err(NnetError::InvalidConfig(format!(
                "embedding dimension {} must be in 1..{} (number of leaf classes)",
                self.embedding_dim, num_leaves
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(NnetError::InvalidConfig("hidden layer of width 0".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(NnetError::InvalidConfig(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayout {
    inputs: usize,
    outputs: usize,
    w_offset: usize,
    b_offset: usize,
    activation: Activation,
}

/// A network with all parameters in one flat vector.
///
/// Layout: embedding block (leaf-major, `num_leaves * embedding_dim`), then for
/// every dense layer its row-major weights followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetConfig,
    num_leaves: usize,
    num_covariates: usize,
    layers: Vec<DenseLayout>,
    params: Vec<f64>,
}

/// Per-observation activations kept for the backward pass.
struct Cache {
    /// Input vector followed by each layer's pre-activation and activation.
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-observation loss for every completed epoch.
    pub epoch_loss: Vec<f64>,
    pub stopped_early: bool,
}

impl Network {
    /// A network with every parameter set to zero.
    pub fn zeros(config: NetConfig, num_leaves: usize, num_covariates: usize) -> Result<Self, NnetError> {
        config.check(num_leaves)?;
        let mut layers = Vec::new();
        let mut offset = num_leaves * config.embedding_dim;
        let mut width = num_covariates + config.embedding_dim;
        let widths = config.hidden_sizes.iter().copied().chain(std::iter::once(1));
        let n_hidden = config.hidden_sizes.len();
        for (i, out) in widths.enumerate() {
            let activation = if i < n_hidden {
                config.hidden_activation
            } else {
                config.output_activation
            };
            layers.push(DenseLayout {
                inputs: width,
                outputs: out,
                w_offset: offset,
                b_offset: offset + width * out,
                activation,
            });
            offset += width * out + out;
            width = out;
        }
        Ok(Self {
            config,
            num_leaves,
            num_covariates,
            layers,
            params: vec![0.0; offset],
        })
    }

    /// Glorot-uniform dense weights, U(-0.05, 0.05) embeddings, zero biases.
    pub fn init(
        config: NetConfig,
        num_leaves: usize,
        num_covariates: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnetError> {
        let mut net = Self::zeros(config, num_leaves, num_covariates)?;
        let emb = net.num_leaves * net.config.embedding_dim;
        for p in &mut net.params[..emb] {
            *p = rng.random_range(-0.05..0.05);
        }
        for layer in net.layers.clone() {
            let a = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for p in &mut net.params[layer.w_offset..layer.b_offset] {
                *p = rng.random_range(-a..a);
            }
        }
        Ok(net)
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Embedding of leaf `s` (column `s` of the embedding matrix).
    pub fn embedding(&self, leaf: usize) -> &[f64] {
        let q = self.config.embedding_dim;
        &self.params[leaf * q..(leaf + 1) * q]
    }

    /// Overwrites the embedding matrix; `matrix[u][s]` is entry `(u, s)` of the `q_e × n_R` matrix.
    pub fn set_embedding_matrix(&mut self, matrix: &[Vec<f64>]) -> Result<(), NnetError> {
        let q = self.config.embedding_dim;
        if matrix.len() != q || matrix.iter().any(|r| r.len() != self.num_leaves) {
            return Err(NnetError::ShapeMismatch("embedding matrix must be q_e x n_R".into()));
        }
        for (u, row) in matrix.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                self.params[s * q + u] = v;
            }
        }
        Ok(())
    }

    /// Output of the embedding layer for an arbitrary (one-hot) input vector.
    pub fn embed(&self, leaf_onehot: &[f64]) -> Result<Vec<f64>, NnetError> {
        if leaf_onehot.len() != self.num_leaves {
            return Err(NnetError::ShapeMismatch(format!(
                "one-hot length {} but {} leaf classes",
                leaf_onehot.len(),
                self.num_leaves
            )));
        }
        let q = self.config.embedding_dim;
        let mut out = vec![0.0; q];
        for (s, &w) in leaf_onehot.iter().enumerate() {
            if w != 0.0 {
                for (o, e) in out.iter_mut().zip(self.embedding(s)) {
                    *o += w * e;
                }
            }
        }
        Ok(out)
    }

    /// Prediction for covariates `x` and a one-hot leaf vector.
    pub fn forward(&self, x: &[f64], leaf_onehot: &[f64]) -> Result<f64, NnetError> {
        if x.len() != self.num_covariates {
            return Err(NnetError::ShapeMismatch(format!(
                "{} covariates but network expects {}",
                x.len(),
                self.num_covariates
            )));
        }
        let e = self.embed(leaf_onehot)?;
        let mut input = x.to_vec();
        input.extend_from_slice(&e);
        Ok(self.run(input).post.last().expect("output layer")[0])
    }

    /// Prediction when the leaf index is known.
    pub fn predict_leaf(&self, x: &[f64], leaf: usize) -> f64 {
        let mut input = x.to_vec();
        input.extend_from_slice(self.embedding(leaf));
        self.run(input).post.last().expect("output layer")[0]
    }

    pub fn predict(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len())
            .map(|i| self.predict_leaf(data.row(i), data.leaf[i]))
            .collect()
    }

    fn run(&self, input: Vec<f64>) -> Cache {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a_in: &[f64] = post.last().map(Vec::as_slice).unwrap_or(&input);
            let w = &self.params[layer.w_offset..layer.b_offset];
            let b = &self.params[layer.b_offset..layer.b_offset + layer.outputs];
            let z: Vec<f64> = (0..layer.outputs)
                .map(|u| {
                    let row = &w[u * layer.inputs..(u + 1) * layer.inputs];
                    b[u] + row.iter().zip(a_in).map(|(w, a)| w * a).sum::<f64>()
                })
                .collect();
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        Cache { input, pre, post }
    }

    /// Adds `scale * d loss / d params` for one observation into `grad`; returns the unit loss.
    fn accumulate(&self, x: &[f64], leaf: usize, y: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let mut input = x.to_vec();
        input.extend_from_slice(self.embedding(leaf));
        let cache = self.run(input);
        let y_hat = cache.post.last().expect("output")[0];
        let loss = self.config.loss.unit(y, y_hat);

        let last = self.layers.len() - 1;
        let out_layer = &self.layers[last];
        let mut delta = vec![
            scale * self.config.loss.d_unit(y, y_hat) * out_layer.activation.derivative(cache.pre[last][0], y_hat),
        ];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_in: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            for u in 0..layer.outputs {
                let d = delta[u];
                if d == 0.0 {
                    continue;
                }
                let w_row = layer.w_offset + u * layer.inputs;
                for (g, a) in grad[w_row..w_row + layer.inputs].iter_mut().zip(a_in) {
                    *g += d * a;
                }
                grad[layer.b_offset + u] += d;
            }
            // delta with respect to this layer's input
            let mut back = vec![0.0; layer.inputs];
            let w = &self.params[layer.w_offset..layer.b_offset];
            for u in 0..layer.outputs {
                let d = delta[u];
                if d == 0.0 {
                    continue;
                }
                for (b, wv) in back.iter_mut().zip(&w[u * layer.inputs..(u + 1) * layer.inputs]) {
                    *b += d * wv;
                }
            }
            if l == 0 {
                let q = self.config.embedding_dim;
                let e_grad = &mut grad[leaf * q..(leaf + 1) * q];
                for (g, b) in e_grad.iter_mut().zip(&back[self.num_covariates..]) {
                    *g += b;
                }
            } else {
                let prev = &self.layers[l - 1];
                delta = back
                    .iter()
                    .zip(cache.pre[l - 1].iter().zip(&cache.post[l - 1]))
                    .map(|(b, (&z, &a))| b * prev.activation.derivative(z, a))
                    .collect();
            }
        }
        loss
    }

    /// Mean loss over `data` and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, data: &Dataset) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / data.len() as f64;
        let mut total = 0.0;
        for i in 0..data.len() {
            total += self.accumulate(data.row(i), data.leaf[i], data.y[i], scale, &mut grad);
        }
        (total * scale, grad)
    }

    /// Mean per-observation loss over `data`.
    pub fn mean_loss(&self, data: &Dataset) -> f64 {
        let total: f64 = (0..data.len())
            .map(|i| {
                self.config
                    .loss
                    .unit(data.y[i], self.predict_leaf(data.row(i), data.leaf[i]))
            })
            .sum();
        total / data.len() as f64
    }

    /// Leaf-level embedding table (one vector per leaf of `hierarchy`).
    pub fn leaf_embeddings(&self, hierarchy: &Hierarchy) -> Result<EmbeddingTable, NnetError> {
        if hierarchy.num_leaves() != self.num_leaves {
            return Err(NnetError::ShapeMismatch(format!(
                "hierarchy has {} leaves, network {}",
                hierarchy.num_leaves(),
                self.num_leaves
            )));
        }
        let mut table = EmbeddingTable::new(self.config.embedding_dim);
        for leaf in hierarchy.leaves() {
            table
                .insert(leaf, self.embedding(leaf.index).to_vec())
                .map_err(|e| NnetError::ShapeMismatch(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let q = self.config.embedding_dim;
        let embedding = (0..q)
            .map(|u| (0..self.num_leaves).map(|s| self.params[s * q + u]).collect())
            .collect();
        let layers = self
            .layers
            .iter()
            .map(|l| CheckpointLayer {
                weights: (0..l.outputs)
                    .map(|u| self.params[l.w_offset + u * l.inputs..l.w_offset + (u + 1) * l.inputs].to_vec())
                    .collect(),
                bias: self.params[l.b_offset..l.b_offset + l.outputs].to_vec(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            num_leaves: self.num_leaves,
            num_covariates: self.num_covariates,
            embedding,
            layers,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnetError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnetError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut net = Self::zeros(ck.config.clone(), ck.num_leaves, ck.num_covariates)?;
        net.set_embedding_matrix(&ck.embedding)?;
        if ck.layers.len() != net.layers.len() {
            return Err(NnetError::Checkpoint("layer count mismatch".into()));
        }
        for (layout, layer) in net.layers.clone().iter().zip(&ck.layers) {
            if layer.weights.len() != layout.outputs
                || layer.bias.len() != layout.outputs
                || layer.weights.iter().any(|r| r.len() != layout.inputs)
            {
                return Err(NnetError::Checkpoint("layer shape mismatch".into()));
            }
            for (u, row) in layer.weights.iter().enumerate() {
                let start = layout.w_offset + u * layout.inputs;
                net.params[start..start + layout.inputs].copy_from_slice(row);
            }
            net.params[layout.b_offset..layout.b_offset + layout.outputs].copy_from_slice(&layer.bias);
        }
        Ok(net)
    }

    fn output_bias_mut(&mut self) -> &mut f64 {
        let last = self.layers.last().expect("output layer");
        &mut self.params[last.b_offset]
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// JSON checkpoint: configuration plus every weight array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: NetConfig,
    pub num_leaves: usize,
    pub num_covariates: usize,
    /// `q_e × n_R`; column `s` is the embedding of leaf `s`.
    pub embedding: Vec<Vec<f64>>,
    pub layers: Vec<CheckpointLayer>,
}

impl Checkpoint {
    pub fn write_json<W: Write>(&self, w: W) -> Result<(), NnetError> {
        serde_json::to_writer_pretty(w, self).map_err(|e| NnetError::Checkpoint(e.to_string()))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &NetConfig, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Trains a freshly initialised network on `data` with mini-batch Adam.
pub fn train(config: &NetConfig, data: &Dataset, hierarchy: &Hierarchy) -> Result<(Network, TrainReport), NnetError> {
    data.check_bound(hierarchy)
        .map_err(|e| NnetError::ShapeMismatch(e.to_string()))?;
    if data.is_empty() {
        return Err(NnetError::ShapeMismatch("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Network::init(config.clone(), hierarchy.num_leaves(), data.num_covariates(), &mut rng)?;
    if config.init_output_bias {
        let mean = data.y.iter().sum::<f64>() / data.len() as f64;
        *net.output_bias_mut() = match config.output_activation {
            Activation::Exponential => mean.max(1e-8).ln(),
            _ => mean,
        };
    }

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(net.params.len());
    let mut grad = vec![0.0; net.params.len()];
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stall = 0usize;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += net.accumulate(data.row(i), data.leaf[i], data.y[i], scale, &mut grad);
            }
            adam.step(config, &mut net.params, &grad);
        }
        let mean = total / n as f64;
        if !mean.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(NnetError::NonFiniteLoss { epoch });
        }
        epoch_loss.push(mean);
        if mean < best - config.early_stop_tol {
            best = mean;
            stall = 0;
        } else {
            stall += 1;
            if config.early_stop_patience > 0 && stall >= config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    log::debug!(
        "trained {} epochs, final loss {:?}",
        epoch_loss.len(),
        epoch_loss.last()
    );
    Ok((
        net,
        TrainReport {
            epoch_loss,
            stopped_early,
        },
    ))
}

/// Embedding vector of a leaf as produced by the embedding layer.
pub fn leaf_embedding(net: &Network, hierarchy: &Hierarchy, leaf: NodeId) -> Result<Vec<f64>, NnetError> {
    let onehot = crate::dataset::one_hot(leaf, hierarchy).map_err(|e| NnetError::ShapeMismatch(e.to_string()))?;
    net.embed(&onehot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hierarchy(n: usize) -> Hierarchy {
        let paths: Vec<Vec<String>> = (0..n).map(|i| vec!["top".into(), format!("l{i}")]).collect();
        Hierarchy::from_leaf_paths(&paths).unwrap()
    }

    fn cfg(output: Activation, loss: Loss) -> NetConfig {
        NetConfig {
            hidden_activation: Activation::Identity,
            output_activation: output,
            loss,
            ..NetConfig::for_family(Family::Gaussian)
        }
    }

    #[test]
    fn zero_network_outputs() {
        let net = Network::zeros(cfg(Activation::Identity, Loss::Mse), 3, 2).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let net = Network::zeros(cfg(Activation::Exponential, Loss::Mse), 3, 2).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            net.forward(&[1.0], &[0.0, 1.0, 0.0]),
            Err(NnetError::ShapeMismatch(_))
        ));
        assert!(matches!(
            net.forward(&[1.0, 2.0], &[1.0]),
            Err(NnetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn embedding_columns() {
        let mut c = cfg(Activation::Identity, Loss::Mse);
        c.embedding_dim = 2;
        let mut net = Network::zeros(c, 3, 0).unwrap();
        net.set_embedding_matrix(&[vec![1.0, 2.0, 5.0], vec![3.0, 4.0, 6.0]])
            .unwrap();
        let h = tiny_hierarchy(3);
        let t = net.leaf_embeddings(&h).unwrap();
        assert_eq!(t.get(NodeId::new(1, 0)).unwrap(), &[1.0, 3.0]);
        assert_eq!(t.get(NodeId::new(1, 1)).unwrap(), &[2.0, 4.0]);

        let zero = Network::zeros(cfg(Activation::Identity, Loss::Mse), 3, 0).unwrap();
        for leaf in h.leaves() {
            assert_eq!(zero.leaf_embeddings(&h).unwrap().get(leaf).unwrap(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn compression_is_enforced() {
        let mut c = cfg(Activation::Identity, Loss::Mse);
        c.embedding_dim = 3;
        assert!(matches!(Network::zeros(c, 3, 1), Err(NnetError::InvalidConfig(_))));
    }

    #[test]
    fn deviance_values() {
        assert_eq!(poisson_deviance(&[2.0], &[2.0]).unwrap(), 0.0);
        assert!((poisson_deviance(&[0.0], &[1.0]).unwrap() - 2.0).abs() < 1e-15);
        let expected = 2.0 * (4.0 * 2f64.ln() - 2.0);
        assert!((poisson_deviance(&[4.0], &[2.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.5451774444795623).abs() < 1e-12);
        assert!(matches!(
            poisson_deviance(&[1.0], &[0.0]),
            Err(NnetError::NonPositivePrediction(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::init(cfg(Activation::Identity, Loss::Mse), 4, 2, &mut rng).unwrap();
        let ck = net.to_checkpoint();
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(Network::from_checkpoint(&back).unwrap(), net);
    }

    #[test]
    fn constant_target_loss_decreases() {
        let h = tiny_hierarchy(4);
        let n = 64;
        let data = Dataset::new(
            vec![3.0; n],
            (0..n).map(|i| i % 4).collect(),
            (0..n).map(|i| (i as f64 * 0.37).sin()).collect(),
            vec!["x".into()],
            Family::Gaussian,
        )
        .unwrap();
        let mut c = NetConfig::for_family(Family::Gaussian);
        c.init_output_bias = false;
        c.epochs = 300;
        c.batch_size = 16;
        c.learning_rate = 0.01;
        let (_, report) = train(&c, &data, &h).unwrap();
        assert!(report.epoch_loss.last().unwrap() < &report.epoch_loss[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let h = tiny_hierarchy(4);
        let n = 32;
        let data = Dataset::new(
            (0..n).map(|i| 1e200 * i as f64).collect(),
            (0..n).map(|i| i % 4).collect(),
            vec![],
            vec![],
            Family::Gaussian,
        )
        .unwrap();
        let mut c = NetConfig::for_family(Family::Gaussian);
        c.init_output_bias = false;
        c.epochs = 5;
        assert!(matches!(train(&c, &data, &h), Err(NnetError::NonFiniteLoss { .. })));
    }
}
