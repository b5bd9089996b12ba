//! The instance classifiers: a compact 1D CNN, logistic regression, two
//! tiny fully connected networks, and a set-pooling variant that shares the
//! CNN trunk, all as explicit parameter records with deterministic forward
//! passes.
//!
//! The CNN is conv(128 taps, stride 2, same padding, 2 filters) → maxpool
//! (width 4, stride 1) → conv(64 taps, stride 2, same padding, 2 filters)
//! → maxpool → flatten → dense(1) → sigmoid. Pooling is the only
//! nonlinearity between the input and the sigmoid head. The set variant
//! runs the trunk per instance, mean-pools the flattened embeddings over
//! the bag, and applies the dense head once to the pooled embedding.
//!
//! All arithmetic is f64. Forward passes cache every intermediate
//! activation the training module needs for backpropagation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::instances::InstanceBag;
use crate::rng;

const CONV_FILTERS: usize = 2;
const CONV1_KERNEL: usize = 128;
const CONV2_KERNEL: usize = 64;
const CONV_STRIDE: usize = 2;
const POOL_WIDTH: usize = 4;
const POOL_STRIDE: usize = 1;
const FC2_HIDDEN: usize = 2;
const FC3_HIDDEN: usize = 3;

/// Pre-activations are clamped to this magnitude before the sigmoid.
const LOGIT_CLAMP: f64 = 40.0;
/// Probabilities are clamped to [PROB_FLOOR, 1 - PROB_FLOOR].
const PROB_FLOOR: f64 = 1e-12;

/// Classifier variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Cnn,
    Lr,
    Fc2,
    Fc3,
    Set,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Cnn,
        Variant::Lr,
        Variant::Fc2,
        Variant::Fc3,
        Variant::Set,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cnn => "mil-cnn",
            Self::Lr => "mil-lr",
            Self::Fc2 => "mil-fc2",
            Self::Fc3 => "mil-fc3",
            Self::Set => "mil-set",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Stable tag used in the model file format.
    pub fn tag(self) -> u8 {
        match self {
            Self::Cnn => 0,
            Self::Lr => 1,
            Self::Fc2 => 2,
            Self::Fc3 => 3,
            Self::Set => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }

    /// Whether the variant scores one instance at a time (the set variant
    /// scores whole bags instead).
    pub fn is_instance_level(self) -> bool {
        !matches!(self, Self::Set)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Structural description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 1D convolution with same padding.
    Conv { in_channels: usize, filters: usize, kernel: usize, stride: usize },
    /// Valid max pooling.
    MaxPool { width: usize, stride: usize },
    Dense { inputs: usize, outputs: usize },
    /// Elementwise tanh (no parameters).
    Tanh,
}

impl LayerKind {
    /// Output length given `input_len`, or None when the layer cannot
    /// accept that length.
    fn output_len(&self, input_len: usize) -> Option<usize> {
        match *self {
            Self::Conv { stride, .. } => Some(input_len.div_ceil(stride)),
            Self::MaxPool { width, stride } => {
                if input_len < width {
                    None
                } else {
                    Some((input_len - width) / stride + 1)
                }
            }
            Self::Dense { inputs, outputs } => {
                if inputs == input_len {
                    Some(outputs)
                } else {
                    None
                }
            }
            Self::Tanh => Some(input_len),
        }
    }

    /// Weight and bias counts, zero for parameterless layers.
    fn parameter_counts(&self) -> (usize, usize) {
        match *self {
            Self::Conv { in_channels, filters, kernel, .. } => {
                (filters * in_channels * kernel, filters)
            }
            Self::Dense { inputs, outputs } => (outputs * inputs, outputs),
            Self::MaxPool { .. } | Self::Tanh => (0, 0),
        }
    }
}

/// A variant plus its concrete layer stack for one input length. The final
/// dense layer always feeds a sigmoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureDescriptor {
    pub variant: Variant,
    pub input_length: usize,
    pub layers: Vec<LayerKind>,
}

impl ArchitectureDescriptor {
    /// Builds the layer stack for `variant` on instances of `input_length`
    /// samples, validating that the shape chain is consistent.
    pub fn new(variant: Variant, input_length: usize) -> Result<Self, ModelError> {
        let layers = match variant {
            Variant::Cnn | Variant::Set => {
                let l1 = input_length.div_ceil(CONV_STRIDE);
                let l2 = l1
                    .checked_sub(POOL_WIDTH - 1)
                    .ok_or(ModelError::InvalidArchitecture {
                        reason: "input too short for the first pooling layer",
                    })?;
                let l3 = l2.div_ceil(CONV_STRIDE);
                let l4 = l3
                    .checked_sub(POOL_WIDTH - 1)
                    .ok_or(ModelError::InvalidArchitecture {
                        reason: "input too short for the second pooling layer",
                    })?;
                vec![
                    LayerKind::Conv {
                        in_channels: 1,
                        filters: CONV_FILTERS,
                        kernel: CONV1_KERNEL,
                        stride: CONV_STRIDE,
                    },
                    LayerKind::MaxPool { width: POOL_WIDTH, stride: POOL_STRIDE },
                    LayerKind::Conv {
                        in_channels: CONV_FILTERS,
                        filters: CONV_FILTERS,
                        kernel: CONV2_KERNEL,
                        stride: CONV_STRIDE,
                    },
                    LayerKind::MaxPool { width: POOL_WIDTH, stride: POOL_STRIDE },
                    LayerKind::Dense { inputs: CONV_FILTERS * l4, outputs: 1 },
                ]
            }
            Variant::Lr => vec![LayerKind::Dense { inputs: input_length, outputs: 1 }],
            Variant::Fc2 => vec![
                LayerKind::Dense { inputs: input_length, outputs: FC2_HIDDEN },
                LayerKind::Tanh,
                LayerKind::Dense { inputs: FC2_HIDDEN, outputs: 1 },
            ],
            Variant::Fc3 => vec![
                LayerKind::Dense { inputs: input_length, outputs: FC3_HIDDEN },
                LayerKind::Tanh,
                LayerKind::Dense { inputs: FC3_HIDDEN, outputs: 1 },
            ],
        };
        let descriptor = Self { variant, input_length, layers };
        descriptor.validate_chain()?;
        Ok(descriptor)
    }

    /// Walks the layer stack, returning each layer's output length. The
    /// convolutional layers track per-channel lengths; dense layers consume
    /// the flattened channel-major vector.
    fn validate_chain(&self) -> Result<(), ModelError> {
        let mut len = self.input_length;
        let mut channels = 1usize;
        for layer in &self.layers {
            match layer {
                LayerKind::Conv { in_channels, filters, .. } => {
                    if *in_channels != channels {
                        return Err(ModelError::InvalidArchitecture {
                            reason: "conv input channels disagree with the chain",
                        });
                    }
                    len = layer
                        .output_len(len)
                        .ok_or(ModelError::InvalidArchitecture { reason: "conv too large" })?;
                    channels = *filters;
                }
                LayerKind::MaxPool { .. } => {
                    len = layer.output_len(len).ok_or(ModelError::InvalidArchitecture {
                        reason: "pooling window exceeds its input",
                    })?;
                }
                LayerKind::Dense { inputs, outputs } => {
                    if *inputs != channels * len {
                        return Err(ModelError::InvalidArchitecture {
                            reason: "dense input width disagrees with the chain",
                        });
                    }
                    len = *outputs;
                    channels = 1;
                }
                LayerKind::Tanh => {}
            }
        }
        Ok(())
    }
}

/// Learnable arrays of one layer. `shape` describes the weight array:
/// [filters, in_channels, kernel] for conv, [outputs, inputs] for dense.
/// Parameterless layers carry empty arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub shape: Vec<usize>,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// All learnable state of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub descriptor: ArchitectureDescriptor,
    /// Parallel to `descriptor.layers`.
    pub layers: Vec<LayerParams>,
    /// Seed the weights were initialized from (zero when unknown, e.g.
    /// after loading from a file).
    pub rng_seed: u64,
}

/// Failure modes of descriptor construction and forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelError {
    ShapeMismatch { expected: usize, got: usize },
    InvalidArchitecture { reason: &'static str },
    EmptyBag,
    UnsupportedVariant { variant: Variant, operation: &'static str },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { expected, got } => {
                write!(f, "input length {got} does not match the model's expected {expected}")
            }
            Self::InvalidArchitecture { reason } => write!(f, "invalid architecture: {reason}"),
            Self::EmptyBag => write!(f, "bag contains no instances"),
            Self::UnsupportedVariant { variant, operation } => {
                write!(f, "variant {variant} does not support {operation}")
            }
        }
    }
}

impl core::error::Error for ModelError {}

/// Draws initial parameters: weights uniform in ±sqrt(6/(fan_in+fan_out))
/// per layer, biases zero, fully determined by `seed`. Weights are drawn
/// row-major, layer by layer.
pub fn init_params(descriptor: &ArchitectureDescriptor, seed: u64) -> ModelParams {
    let mut rng = rng::stream(seed);
    let layers = descriptor
        .layers
        .iter()
        .map(|layer| {
            let (n_weights, n_biases) = layer.parameter_counts();
            let (shape, fan_in, fan_out) = match *layer {
                LayerKind::Conv { in_channels, filters, kernel, .. } => (
                    vec![filters, in_channels, kernel],
                    in_channels * kernel,
                    filters * kernel,
                ),
                LayerKind::Dense { inputs, outputs } => {
                    (vec![outputs, inputs], inputs, outputs)
                }
                LayerKind::MaxPool { .. } | LayerKind::Tanh => (Vec::new(), 0, 0),
            };
            let weights = if n_weights == 0 {
                Vec::new()
            } else {
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                (0..n_weights)
                    .map(|_| limit * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect()
            };
            LayerParams { shape, weights, biases: vec![0.0; n_biases] }
        })
        .collect();
    ModelParams { descriptor: descriptor.clone(), layers, rng_seed: seed }
}

/// Numerically stable sigmoid with the documented clamps: the logit is
/// clamped to ±40 and the output to [1e-12, 1 - 1e-12], so results are
/// always strictly inside (0, 1).
pub fn sigmoid(logit: f64) -> f64 {
    let z = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let p = if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Same-padding 1D convolution. Padding totals kernel-1, split floor on
/// the left and the remainder on the right.
pub(crate) fn conv_forward(
    inputs: &[Vec<f64>],
    params: &LayerParams,
    in_channels: usize,
    filters: usize,
    kernel: usize,
    stride: usize,
) -> Vec<Vec<f64>> {
    let in_len = inputs[0].len();
    let out_len = in_len.div_ceil(stride);
    let pad_left = (kernel - 1) / 2;
    let mut out = vec![vec![0.0f64; out_len]; filters];
    for (f, out_f) in out.iter_mut().enumerate() {
        for (o, slot) in out_f.iter_mut().enumerate() {
            let base = o * stride;
            let mut acc = params.biases[f];
            let t_lo = pad_left.saturating_sub(base);
            let t_hi = kernel.min(in_len + pad_left - base);
            for (c, x) in inputs.iter().enumerate().take(in_channels) {
                let w = &params.weights[(f * in_channels + c) * kernel..];
                if t_lo < t_hi {
                    let x_window = &x[base + t_lo - pad_left..base + t_hi - pad_left];
                    acc += w[t_lo..t_hi]
                        .iter()
                        .zip(x_window)
                        .map(|(wv, xv)| wv * xv)
                        .sum::<f64>();
                }
            }
            *slot = acc;
        }
    }
    out
}

/// Valid max pooling; returns pooled values and the absolute input index
/// of each window maximum (first index on ties).
pub(crate) fn maxpool_forward(
    inputs: &[Vec<f64>],
    width: usize,
    stride: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let in_len = inputs[0].len();
    let out_len = (in_len - width) / stride + 1;
    let mut out = Vec::with_capacity(inputs.len());
    let mut argmax = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut vals = Vec::with_capacity(out_len);
        let mut args = Vec::with_capacity(out_len);
        for o in 0..out_len {
            let base = o * stride;
            let mut best = base;
            for i in base + 1..base + width {
                if x[i] > x[best] {
                    best = i;
                }
            }
            vals.push(x[best]);
            args.push(best);
        }
        out.push(vals);
        argmax.push(args);
    }
    (out, argmax)
}

pub(crate) fn dense_forward(input: &[f64], params: &LayerParams) -> Vec<f64> {
    let inputs = input.len();
    params
        .biases
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            b + params.weights[j * inputs..(j + 1) * inputs]
                .iter()
                .zip(input)
                .map(|(w, x)| w * x)
                .sum::<f64>()
        })
        .collect()
}

/// Flattens channel-major: channel 0's samples, then channel 1's, ...
pub(crate) fn flatten(channels: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(channels.len() * channels[0].len());
    for c in channels {
        out.extend_from_slice(c);
    }
    out
}

/// Activations of the shared CNN trunk (everything before the dense head).
#[derive(Debug, Clone)]
pub struct CnnTrunkCache {
    pub(crate) conv1: Vec<Vec<f64>>,
    pub(crate) pool1: Vec<Vec<f64>>,
    pub(crate) pool1_argmax: Vec<Vec<usize>>,
    pub(crate) conv2: Vec<Vec<f64>>,
    pub(crate) pool2_argmax: Vec<Vec<usize>>,
    pub(crate) flat: Vec<f64>,
}

/// Cached activations of one CNN forward pass.
#[derive(Debug, Clone)]
pub struct CnnCache {
    pub(crate) trunk: CnnTrunkCache,
    pub prob: f64,
}

/// Cached state of one logistic-regression forward pass.
#[derive(Debug, Clone)]
pub struct LrCache {
    pub prob: f64,
}

/// Cached activations of one fully connected forward pass.
#[derive(Debug, Clone)]
pub struct FcCache {
    pub(crate) hidden: Vec<f64>,
    pub prob: f64,
}

/// Cached activations of one set-variant forward pass over a whole bag.
#[derive(Debug, Clone)]
pub struct SetCache {
    /// Bag instance indices in pooling order (sorted by start ordinal).
    pub(crate) order: Vec<usize>,
    /// Trunk caches parallel to `order`.
    pub(crate) trunks: Vec<CnnTrunkCache>,
    pub(crate) pooled: Vec<f64>,
    pub prob: f64,
}

/// Cache of any instance-level variant.
#[derive(Debug, Clone)]
pub enum InstanceCache {
    Cnn(CnnCache),
    Lr(LrCache),
    Fc(FcCache),
}

impl InstanceCache {
    pub fn prob(&self) -> f64 {
        match self {
            Self::Cnn(c) => c.prob,
            Self::Lr(c) => c.prob,
            Self::Fc(c) => c.prob,
        }
    }
}

fn check_length(params: &ModelParams, got: usize) -> Result<(), ModelError> {
    let expected = params.descriptor.input_length;
    if got != expected {
        return Err(ModelError::ShapeMismatch { expected, got });
    }
    Ok(())
}

fn cnn_trunk(params: &ModelParams, values: &[f64]) -> CnnTrunkCache {
    let (c1_in, c1_f, c1_k, c1_s) = match params.descriptor.layers[0] {
        LayerKind::Conv { in_channels, filters, kernel, stride } => {
            (in_channels, filters, kernel, stride)
        }
        _ => unreachable!("cnn descriptor starts with conv"),
    };
    let (c2_in, c2_f, c2_k, c2_s) = match params.descriptor.layers[2] {
        LayerKind::Conv { in_channels, filters, kernel, stride } => {
            (in_channels, filters, kernel, stride)
        }
        _ => unreachable!("cnn descriptor's third layer is conv"),
    };
    let input = vec![values.to_vec()];
    let conv1 = conv_forward(&input, &params.layers[0], c1_in, c1_f, c1_k, c1_s);
    let (pool1, pool1_argmax) = maxpool_forward(&conv1, POOL_WIDTH, POOL_STRIDE);
    let conv2 = conv_forward(&pool1, &params.layers[2], c2_in, c2_f, c2_k, c2_s);
    let (pool2, pool2_argmax) = maxpool_forward(&conv2, POOL_WIDTH, POOL_STRIDE);
    let flat = flatten(&pool2);
    CnnTrunkCache { conv1, pool1, pool1_argmax, conv2, pool2_argmax, flat }
}

/// CNN forward pass over one instance's values.
pub fn cnn_forward(params: &ModelParams, values: &[f64]) -> Result<(f64, CnnCache), ModelError> {
    if params.descriptor.variant != Variant::Cnn {
        return Err(ModelError::UnsupportedVariant {
            variant: params.descriptor.variant,
            operation: "cnn_forward",
        });
    }
    check_length(params, values.len())?;
    let trunk = cnn_trunk(params, values);
    let logit = dense_forward(&trunk.flat, &params.layers[4])[0];
    let prob = sigmoid(logit);
    Ok((prob, CnnCache { trunk, prob }))
}

/// Logistic regression forward pass: sigmoid(w·x + b).
pub fn lr_forward(params: &ModelParams, values: &[f64]) -> Result<(f64, LrCache), ModelError> {
    if params.descriptor.variant != Variant::Lr {
        return Err(ModelError::UnsupportedVariant {
            variant: params.descriptor.variant,
            operation: "lr_forward",
        });
    }
    check_length(params, values.len())?;
    let logit = dense_forward(values, &params.layers[0])[0];
    let prob = sigmoid(logit);
    Ok((prob, LrCache { prob }))
}

/// Fully connected forward pass: dense → tanh → dense → sigmoid.
pub fn fc_forward(params: &ModelParams, values: &[f64]) -> Result<(f64, FcCache), ModelError> {
    if !matches!(params.descriptor.variant, Variant::Fc2 | Variant::Fc3) {
        return Err(ModelError::UnsupportedVariant {
            variant: params.descriptor.variant,
            operation: "fc_forward",
        });
    }
    check_length(params, values.len())?;
    let pre = dense_forward(values, &params.layers[0]);
    let hidden: Vec<f64> = pre.iter().map(|&z| libm::tanh(z)).collect();
    let logit = dense_forward(&hidden, &params.layers[2])[0];
    let prob = sigmoid(logit);
    Ok((prob, FcCache { hidden, prob }))
}

/// Set-variant forward pass over a whole bag: trunk per instance, mean
/// pooling of the flattened embeddings, dense head, sigmoid. Instances are
/// pooled in ascending start-ordinal order, so the output is invariant to
/// the order instances appear in the bag, bit for bit.
pub fn set_forward(params: &ModelParams, bag: &InstanceBag) -> Result<(f64, SetCache), ModelError> {
    if params.descriptor.variant != Variant::Set {
        return Err(ModelError::UnsupportedVariant {
            variant: params.descriptor.variant,
            operation: "set_forward",
        });
    }
    if bag.instances.is_empty() {
        return Err(ModelError::EmptyBag);
    }
    for inst in &bag.instances {
        check_length(params, inst.values.len())?;
    }

    let mut order: Vec<usize> = (0..bag.instances.len()).collect();
    order.sort_by_key(|&i| (bag.instances[i].start_beat_ordinal, i));

    let trunks: Vec<CnnTrunkCache> = order
        .iter()
        .map(|&i| cnn_trunk(params, &bag.instances[i].values))
        .collect();
    let dim = trunks[0].flat.len();
    let n = trunks.len() as f64;
    let mut pooled = vec![0.0f64; dim];
    for trunk in &trunks {
        for (p, &v) in pooled.iter_mut().zip(&trunk.flat) {
            *p += v;
        }
    }
    for p in pooled.iter_mut() {
        *p /= n;
    }

    let logit = dense_forward(&pooled, &params.layers[4])[0];
    let prob = sigmoid(logit);
    Ok((prob, SetCache { order, trunks, pooled, prob }))
}

/// Forward pass of any instance-level variant.
pub fn instance_forward(
    params: &ModelParams,
    values: &[f64],
) -> Result<(f64, InstanceCache), ModelError> {
    match params.descriptor.variant {
        Variant::Cnn => cnn_forward(params, values).map(|(p, c)| (p, InstanceCache::Cnn(c))),
        Variant::Lr => lr_forward(params, values).map(|(p, c)| (p, InstanceCache::Lr(c))),
        Variant::Fc2 | Variant::Fc3 => {
            fc_forward(params, values).map(|(p, c)| (p, InstanceCache::Fc(c)))
        }
        Variant::Set => Err(ModelError::UnsupportedVariant {
            variant: Variant::Set,
            operation: "instance_forward",
        }),
    }
}
