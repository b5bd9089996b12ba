//! Hand-written backpropagation for every classifier variant, Adam
//! optimization, balanced batch construction with positive oversampling,
//! and the training loop.
//!
//! Instance-level variants are trained with single-instance learning:
//! every instance inherits its bag's label and batches are balanced by
//! partitioning the negatives once per epoch while sampling positives
//! uniformly with replacement. The set variant trains on whole bags,
//! balanced the same way, in fixed batches of eight bags.
//!
//! Model selection runs inside `train`: 20% of the training patients are
//! held out (stratified), scored after every epoch, and the parameters of
//! the best validation-AUC epoch are returned, with early stopping after
//! a configurable number of epochs without improvement.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::aggregate::{self, AggregateError, AggregatorSpec};
use crate::eval;
use crate::instances::{HorizonLabel, InstanceBag};
use crate::model::{
    self, ArchitectureDescriptor, CnnCache, CnnTrunkCache, FcCache, InstanceCache, LayerKind,
    LayerParams, ModelError, ModelParams, SetCache, Variant,
};
use crate::rng;
use crate::stats;

/// Bags scored per batch when training the set variant.
const SET_BAG_BATCH_SIZE: usize = 8;
/// Fraction of training patients held out for epoch selection.
const VALIDATION_FRACTION: f64 = 0.2;

/// Optimizer and loop settings. Defaults are the canonical Adam constants
/// with batches of 128 instances.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            max_epochs: 30,
            early_stop_patience: 5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig { reason: "learning rate must be positive" });
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(TrainError::InvalidConfig { reason: "beta1 must lie in (0, 1)" });
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(TrainError::InvalidConfig { reason: "beta2 must lie in (0, 1)" });
        }
        if !(self.epsilon > 0.0) {
            return Err(TrainError::InvalidConfig { reason: "epsilon must be positive" });
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(TrainError::InvalidConfig {
                reason: "batch size must be even and at least 2",
            });
        }
        if self.early_stop_patience == 0 {
            return Err(TrainError::InvalidConfig { reason: "patience must be at least 1" });
        }
        Ok(())
    }
}

/// Failure modes of batching and training.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    OneClassOnly { n_pos: usize, n_neg: usize },
    NonFiniteLoss { epoch: usize },
    InvalidConfig { reason: &'static str },
    Model(ModelError),
    Aggregate(AggregateError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OneClassOnly { n_pos, n_neg } => write!(
                f,
                "training needs both classes, got {n_pos} positive and {n_neg} negative"
            ),
            Self::NonFiniteLoss { epoch } => {
                write!(f, "loss became non-finite during epoch {epoch}")
            }
            Self::InvalidConfig { reason } => write!(f, "invalid training config: {reason}"),
            Self::Model(e) => write!(f, "model failure during training: {e}"),
            Self::Aggregate(e) => write!(f, "validation scoring failed: {e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

impl From<AggregateError> for TrainError {
    fn from(e: AggregateError) -> Self {
        Self::Aggregate(e)
    }
}

/// Binary cross-entropy with the probability clamped to
/// [1e-12, 1 - 1e-12] (a no-op for the clamped sigmoid outputs).
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
}

/// Per-layer gradient arrays, congruent to the corresponding LayerParams.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradients congruent to a ModelParams, accumulated across a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|g| *g = 0.0);
            layer.biases.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Adam moment estimates, congruent to the parameters, plus the step
/// counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    layers: Vec<LayerMoments>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerMoments {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            t: 0,
            layers: params
                .layers
                .iter()
                .map(|l| LayerMoments {
                    m_w: vec![0.0; l.weights.len()],
                    v_w: vec![0.0; l.weights.len()],
                    m_b: vec![0.0; l.biases.len()],
                    v_b: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }
}

fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        theta[i] -= lr * m_hat / (libm::sqrt(v_hat) + epsilon);
    }
}

/// One Adam step with bias correction; increments the step counter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.layers.len() != params.layers.len()
        || state.layers.len() != params.layers.len()
        || grads
            .layers
            .iter()
            .zip(&params.layers)
            .any(|(g, p)| g.weights.len() != p.weights.len() || g.biases.len() != p.biases.len())
    {
        return Err(TrainError::Model(ModelError::ShapeMismatch {
            expected: params.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum(),
            got: grads.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum(),
        }));
    }
    state.t += 1;
    let bias1 = 1.0 - libm::pow(config.beta1, state.t as f64);
    let bias2 = 1.0 - libm::pow(config.beta2, state.t as f64);
    for ((layer, grad), mom) in params.layers.iter_mut().zip(&grads.layers).zip(&mut state.layers)
    {
        adam_update(
            &mut layer.weights,
            &grad.weights,
            &mut mom.m_w,
            &mut mom.v_w,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
            bias1,
            bias2,
        );
        adam_update(
            &mut layer.biases,
            &grad.biases,
            &mut mom.m_b,
            &mut mom.v_b,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
            bias1,
            bias2,
        );
    }
    Ok(())
}

/// Gradient of a same-padding convolution. Accumulates weight and bias
/// gradients into `grads`; returns the input gradient when requested.
fn conv_backward(
    inputs: &[Vec<f64>],
    params: &LayerParams,
    in_channels: usize,
    filters: usize,
    kernel: usize,
    stride: usize,
    d_out: &[Vec<f64>],
    grads: &mut LayerGrads,
    want_d_in: bool,
) -> Option<Vec<Vec<f64>>> {
    let in_len = inputs[0].len();
    let out_len = d_out[0].len();
    let pad_left = (kernel - 1) / 2;
    let mut d_in = if want_d_in {
        Some(vec![vec![0.0f64; in_len]; in_channels])
    } else {
        None
    };
    for f in 0..filters {
        for o in 0..out_len {
            let g = d_out[f][o];
            if g == 0.0 {
                continue;
            }
            grads.biases[f] += g;
            let base = o * stride;
            let t_lo = pad_left.saturating_sub(base);
            let t_hi = kernel.min(in_len + pad_left - base);
            if t_lo >= t_hi {
                continue;
            }
            let x_lo = base + t_lo - pad_left;
            let x_hi = base + t_hi - pad_left;
            for c in 0..in_channels {
                let row = (f * in_channels + c) * kernel;
                let dw = &mut grads.weights[row + t_lo..row + t_hi];
                for (dwv, xv) in dw.iter_mut().zip(&inputs[c][x_lo..x_hi]) {
                    *dwv += g * xv;
                }
                if let Some(d_in) = d_in.as_mut() {
                    let w = &params.weights[row + t_lo..row + t_hi];
                    for (div, wv) in d_in[c][x_lo..x_hi].iter_mut().zip(w) {
                        *div += g * wv;
                    }
                }
            }
        }
    }
    d_in
}

/// Routes pooled gradients back to each window's argmax position.
fn maxpool_backward(
    argmax: &[Vec<usize>],
    d_out: &[Vec<f64>],
    in_len: usize,
) -> Vec<Vec<f64>> {
    let mut d_in = vec![vec![0.0f64; in_len]; d_out.len()];
    for ((args, douts), d_in_c) in argmax.iter().zip(d_out).zip(&mut d_in) {
        for (&a, &g) in args.iter().zip(douts) {
            d_in_c[a] += g;
        }
    }
    d_in
}

/// Gradient of a dense layer. Accumulates into `grads`; returns the input
/// gradient when requested.
fn dense_backward(
    input: &[f64],
    params: &LayerParams,
    d_out: &[f64],
    grads: &mut LayerGrads,
    want_d_in: bool,
) -> Option<Vec<f64>> {
    let n = input.len();
    let mut d_in = if want_d_in { Some(vec![0.0f64; n]) } else { None };
    for (j, &g) in d_out.iter().enumerate() {
        grads.biases[j] += g;
        let w_row = &params.weights[j * n..(j + 1) * n];
        let dw_row = &mut grads.weights[j * n..(j + 1) * n];
        for ((dw, &x), &w) in dw_row.iter_mut().zip(input).zip(w_row) {
            *dw += g * x;
            let _ = w;
        }
        if let Some(d_in) = d_in.as_mut() {
            for (di, &w) in d_in.iter_mut().zip(w_row) {
                *di += g * w;
            }
        }
    }
    d_in
}

fn conv_kind(descriptor: &ArchitectureDescriptor, idx: usize) -> (usize, usize, usize, usize) {
    match descriptor.layers[idx] {
        LayerKind::Conv { in_channels, filters, kernel, stride } => {
            (in_channels, filters, kernel, stride)
        }
        _ => unreachable!("layer {idx} is convolutional by construction"),
    }
}

fn unflatten(flat: &[f64], channels: usize) -> Vec<Vec<f64>> {
    let len = flat.len() / channels;
    (0..channels).map(|c| flat[c * len..(c + 1) * len].to_vec()).collect()
}

/// Backpropagates `d_flat` (gradient at the flattened trunk output) of one
/// trunk pass through both pooling and conv layers, accumulating conv
/// parameter gradients. The gradient with respect to the raw input is
/// never needed, so the first conv layer skips it.
fn trunk_backward(
    params: &ModelParams,
    values: &[f64],
    trunk: &CnnTrunkCache,
    d_flat: &[f64],
    grads: &mut Gradients,
) {
    let (c1_in, c1_f, c1_k, c1_s) = conv_kind(&params.descriptor, 0);
    let (c2_in, c2_f, c2_k, c2_s) = conv_kind(&params.descriptor, 2);

    let d_pool2 = unflatten(d_flat, c2_f);
    let d_conv2 = maxpool_backward(&trunk.pool2_argmax, &d_pool2, trunk.conv2[0].len());
    let d_pool1 = conv_backward(
        &trunk.pool1,
        &params.layers[2],
        c2_in,
        c2_f,
        c2_k,
        c2_s,
        &d_conv2,
        &mut grads.layers[2],
        true,
    )
    .expect("input gradient requested");
    let d_conv1 = maxpool_backward(&trunk.pool1_argmax, &d_pool1, trunk.conv1[0].len());
    let input = vec![values.to_vec()];
    conv_backward(
        &input,
        &params.layers[0],
        c1_in,
        c1_f,
        c1_k,
        c1_s,
        &d_conv1,
        &mut grads.layers[0],
        false,
    );
}

fn cnn_backward(
    params: &ModelParams,
    values: &[f64],
    cache: &CnnCache,
    y: f64,
    scale: f64,
    grads: &mut Gradients,
) {
    let dlogit = scale * (cache.prob - y);
    let d_flat = dense_backward(
        &cache.trunk.flat,
        &params.layers[4],
        &[dlogit],
        &mut grads.layers[4],
        true,
    )
    .expect("input gradient requested");
    trunk_backward(params, values, &cache.trunk, &d_flat, grads);
}

fn lr_backward(
    params: &ModelParams,
    values: &[f64],
    prob: f64,
    y: f64,
    scale: f64,
    grads: &mut Gradients,
) {
    let _ = params;
    let dlogit = scale * (prob - y);
    grads.layers[0].biases[0] += dlogit;
    for (dw, &x) in grads.layers[0].weights.iter_mut().zip(values) {
        *dw += dlogit * x;
    }
}

fn fc_backward(
    params: &ModelParams,
    values: &[f64],
    cache: &FcCache,
    y: f64,
    scale: f64,
    grads: &mut Gradients,
) {
    let dlogit = scale * (cache.prob - y);
    let d_hidden = dense_backward(
        &cache.hidden,
        &params.layers[2],
        &[dlogit],
        &mut grads.layers[2],
        true,
    )
    .expect("input gradient requested");
    // tanh'(z) = 1 - tanh(z)^2, with tanh(z) cached in `hidden`.
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&cache.hidden)
        .map(|(&dh, &h)| dh * (1.0 - h * h))
        .collect();
    dense_backward(values, &params.layers[0], &d_pre, &mut grads.layers[0], false);
}

/// Accumulates `scale` times the loss gradient of one instance into
/// `grads`. The cache must come from a forward pass of the same instance
/// under the same parameters.
pub fn instance_backward(
    params: &ModelParams,
    values: &[f64],
    cache: &InstanceCache,
    y: f64,
    scale: f64,
    grads: &mut Gradients,
) {
    match cache {
        InstanceCache::Cnn(c) => cnn_backward(params, values, c, y, scale, grads),
        InstanceCache::Lr(c) => lr_backward(params, values, c.prob, y, scale, grads),
        InstanceCache::Fc(c) => fc_backward(params, values, c, y, scale, grads),
    }
}

/// Accumulates `scale` times the loss gradient of one bag through the set
/// variant: dense head on the pooled embedding, then every instance's
/// trunk with the pooled gradient divided evenly.
pub fn set_backward(
    params: &ModelParams,
    bag: &InstanceBag,
    cache: &SetCache,
    y: f64,
    scale: f64,
    grads: &mut Gradients,
) {
    let dlogit = scale * (cache.prob - y);
    let d_pooled = dense_backward(
        &cache.pooled,
        &params.layers[4],
        &[dlogit],
        &mut grads.layers[4],
        true,
    )
    .expect("input gradient requested");
    let n = cache.trunks.len() as f64;
    let d_flat_each: Vec<f64> = d_pooled.iter().map(|&g| g / n).collect();
    for (&bag_idx, trunk) in cache.order.iter().zip(&cache.trunks) {
        trunk_backward(params, &bag.instances[bag_idx].values, trunk, &d_flat_each, grads);
    }
}

/// Seeded balanced batches of example indices: the negative pool is
/// shuffled and partitioned so every negative appears exactly once per
/// epoch, and each chunk is completed with an equal number of positives
/// drawn uniformly with replacement (negatives first within a batch).
/// Full batches hold batch_size/2 of each class; a final partial chunk of
/// r negatives is matched by r positives.
pub fn balanced_batches(
    labels: &[bool],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, TrainError> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(TrainError::InvalidConfig {
            reason: "batch size must be even and at least 2",
        });
    }
    let positives: Vec<usize> =
        labels.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i).collect();
    let mut negatives: Vec<usize> =
        labels.iter().enumerate().filter(|(_, &l)| !l).map(|(i, _)| i).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(TrainError::OneClassOnly {
            n_pos: positives.len(),
            n_neg: negatives.len(),
        });
    }
    let mut rng = rng::stream(seed);
    negatives.shuffle(&mut rng);
    let half = batch_size / 2;
    let mut batches = Vec::with_capacity(negatives.len().div_ceil(half));
    for chunk in negatives.chunks(half) {
        let mut batch = Vec::with_capacity(chunk.len() * 2);
        batch.extend_from_slice(chunk);
        for _ in 0..chunk.len() {
            batch.push(positives[rng.gen_range(0..positives.len())]);
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Loss and validation AUC of one epoch. The AUC is absent when the inner
/// validation split cannot host both classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

/// Trained parameters plus the per-epoch history that selected them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// Stratified 20% holdout of each class, at least one and at most all but
/// one per class; classes with a single patient stay in the fit side.
/// Keeping one holdout patient even from a two-member class matters: the
/// holdout AUC, however coarse, is what picks the returned epoch, and
/// dropping it lets long runs overfit tiny cohorts unchecked.
fn split_validation(
    pos: &mut Vec<usize>,
    neg: &mut Vec<usize>,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::stream(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let take = |n: usize| -> usize {
        if n >= 2 {
            stats::round_half_up(VALIDATION_FRACTION * n as f64).clamp(1, n - 1)
        } else {
            0
        }
    };
    let n_val_pos = take(pos.len());
    let n_val_neg = take(neg.len());
    let mut val = Vec::with_capacity(n_val_pos + n_val_neg);
    val.extend(pos.drain(..n_val_pos));
    val.extend(neg.drain(..n_val_neg));
    let mut fit = Vec::with_capacity(pos.len() + neg.len());
    fit.extend(pos.iter().copied());
    fit.extend(neg.iter().copied());
    (fit, val)
}

struct ValScorer<'a> {
    bags: &'a [InstanceBag],
    patients: Vec<usize>,
    labels: Vec<bool>,
    spec: AggregatorSpec,
}

impl ValScorer<'_> {
    /// Validation AUC under the current parameters, or None when the
    /// holdout lacks a class.
    fn auc(&self, params: &ModelParams) -> Result<Option<f64>, TrainError> {
        if !self.labels.iter().any(|&l| l) || !self.labels.iter().any(|&l| !l) {
            return Ok(None);
        }
        let mut scores = Vec::with_capacity(self.patients.len());
        for &b in &self.patients {
            let bag = &self.bags[b];
            let score = if params.descriptor.variant == Variant::Set {
                model::set_forward(params, bag)?.0
            } else {
                let probs = aggregate::instance_probabilities(bag, params)?;
                aggregate::aggregate_scores(&probs, &self.spec)?
            };
            scores.push(score);
        }
        match eval::roc_auc(&scores, &self.labels) {
            Ok(auc) => Ok(Some(auc)),
            Err(_) => Ok(None),
        }
    }
}

/// Trains `variant` on the bags labeled at `horizon_days`, returning the
/// best-validation-epoch parameters and the full history. Pure function
/// of its arguments: reruns give bitwise-identical results.
pub fn train(
    variant: Variant,
    bags: &[InstanceBag],
    horizon_days: u32,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;

    let mut pos_patients: Vec<usize> = Vec::new();
    let mut neg_patients: Vec<usize> = Vec::new();
    for (i, bag) in bags.iter().enumerate() {
        match bag.labels.get(&horizon_days) {
            Some(HorizonLabel::Positive) => pos_patients.push(i),
            Some(HorizonLabel::Negative) => neg_patients.push(i),
            Some(HorizonLabel::Excluded) | None => {}
        }
    }
    if pos_patients.is_empty() || neg_patients.is_empty() {
        return Err(TrainError::OneClassOnly {
            n_pos: pos_patients.len(),
            n_neg: neg_patients.len(),
        });
    }

    let (fit_patients, val_patients) = split_validation(
        &mut pos_patients,
        &mut neg_patients,
        rng::child_seed(config.rng_seed, "val-split", 0),
    );
    let label_of = |b: usize| matches!(bags[b].labels.get(&horizon_days), Some(HorizonLabel::Positive));

    let input_length = bags[fit_patients[0]].instances[0].values.len();
    let descriptor = ArchitectureDescriptor::new(variant, input_length)?;
    let mut params = model::init_params(&descriptor, rng::child_seed(config.rng_seed, "init", 0));

    if config.max_epochs == 0 {
        return Ok(TrainOutput { params, history: Vec::new() });
    }

    // Training examples: (bag, instance) pairs for instance-level
    // variants, whole bags for the set variant.
    let mut example_bags: Vec<usize> = Vec::new();
    let mut example_instances: Vec<usize> = Vec::new();
    let mut example_labels: Vec<bool> = Vec::new();
    for &b in &fit_patients {
        let y = label_of(b);
        if variant.is_instance_level() {
            for j in 0..bags[b].instances.len() {
                example_bags.push(b);
                example_instances.push(j);
                example_labels.push(y);
            }
        } else {
            example_bags.push(b);
            example_instances.push(usize::MAX);
            example_labels.push(y);
        }
    }

    let batch_size = if variant.is_instance_level() {
        config.batch_size
    } else {
        SET_BAG_BATCH_SIZE
    };

    let scorer = ValScorer {
        bags,
        labels: val_patients.iter().map(|&b| label_of(b)).collect(),
        patients: val_patients,
        spec: AggregatorSpec::default(),
    };

    let mut opt = OptimizerState::new(&params);
    let mut grads = Gradients::zeros_like(&params);
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best_params = params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let batch_seed = rng::child_seed(config.rng_seed, "batches", epoch as u64);
        let batches = balanced_batches(&example_labels, batch_size, batch_seed)?;
        let mut loss_sum = 0.0f64;
        let mut n_seen = 0usize;
        for batch in &batches {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0f64;
            for &e in batch {
                let y = if example_labels[e] { 1.0 } else { 0.0 };
                let bag = &bags[example_bags[e]];
                if variant.is_instance_level() {
                    let values = &bag.instances[example_instances[e]].values;
                    let (prob, cache) = model::instance_forward(&params, values)?;
                    batch_loss += bce_loss(prob, y);
                    instance_backward(&params, values, &cache, y, scale, &mut grads);
                } else {
                    let (prob, cache) = model::set_forward(&params, bag)?;
                    batch_loss += bce_loss(prob, y);
                    set_backward(&params, bag, &cache, y, scale, &mut grads);
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            loss_sum += batch_loss;
            n_seen += batch.len();
            adam_step(&mut params, &grads, &mut opt, config)?;
        }
        let train_loss = loss_sum / n_seen as f64;
        let val_auc = scorer.auc(&params)?;
        // Early-stopping metric: validation AUC when available, otherwise
        // falling training loss.
        let metric = val_auc.unwrap_or(-train_loss);
        history.push(EpochStats { epoch, train_loss, val_auc });
        if metric > best_metric {
            best_metric = metric;
            best_params = params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.early_stop_patience {
                break;
            }
        }
    }

    Ok(TrainOutput { params: best_params, history })
}
