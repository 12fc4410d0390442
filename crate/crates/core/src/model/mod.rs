//! A small differentiable image classifier.
//!
//! The network is `[conv3x3 -> act -> avgpool2x2] -> (dense -> act)* -> dense -> softmax`,
//! where the convolution stage is optional. Everything is `f64` so that
//! finite-difference checks can be run at tight tolerances.
//!
//! Dense weights are stored `(fan_in, fan_out)` so a batch `X` of shape
//! `(n, fan_in)` maps to `X · W + b`. A convolution stage stores its kernels as
//! a `(channels, 9)` matrix, one row per 3x3 kernel in row-major tap order.

mod backward;
mod io;
mod loss;
mod optim;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub use backward::{backward, gradient_check, gradient_check_params, Gradients, LayerGrad};
pub use io::{load_params, save_params, ParamFormat};
pub use loss::{
    euclidean_loss, soft_cross_entropy, weighted_cross_entropy, weighted_euclidean_loss,
    ClassWeights, Loss, PROB_FLOOR,
};
pub use optim::{sgd_step, sgd_step_in_place, OptimState};

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// The shape-defining part of a classifier. Its string form is the
/// architecture tag stored alongside serialized parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_height: usize,
    pub input_width: usize,
    /// Number of 3x3 kernels in the optional convolution stage; 0 disables it.
    pub conv_channels: usize,
    pub hidden_sizes: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn input_len(&self) -> usize {
        self.input_height * self.input_width
    }

    fn pooled_dims(&self) -> (usize, usize) {
        (self.input_height / 2, self.input_width / 2)
    }

    /// Width of the vector fed into the first dense layer.
    fn dense_input_len(&self) -> usize {
        if self.conv_channels > 0 {
            let (ph, pw) = self.pooled_dims();
            self.conv_channels * ph * pw
        } else {
            self.input_len()
        }
    }

    /// `(rows, cols)` of every weight matrix, in layer order.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        if self.conv_channels > 0 {
            shapes.push((self.conv_channels, 9));
        }
        let mut fan_in = self.dense_input_len();
        for &h in self.hidden_sizes.iter().chain(std::iter::once(&self.num_classes)) {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::config("hidden_sizes must be nonempty"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden sizes must be positive"));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::config("input dimensions must be positive"));
        }
        if self.conv_channels > 0 && (self.input_height < 2 || self.input_width < 2) {
            return Err(Error::config("convolution stage needs inputs of at least 2x2"));
        }
        self.input_height
            .checked_mul(self.input_width)
            .and_then(|n| n.checked_mul(self.conv_channels.max(1)))
            .ok_or_else(|| Error::config("parameter count overflows"))?;
        let mut total: usize = 0;
        for (r, c) in self.weight_shapes() {
            let n = r
                .checked_mul(c)
                .and_then(|w| w.checked_add(c))
                .ok_or_else(|| Error::config("parameter count overflows"))?;
            total = total
                .checked_add(n)
                .ok_or_else(|| Error::config("parameter count overflows"))?;
        }
        if total > (1 << 31) {
            return Err(Error::config(format!("{total} parameters is beyond desk scale")));
        }
        Ok(())
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden_sizes.iter().map(|h| h.to_string()).collect();
        write!(
            f,
            "in{}x{}-conv{}-h{}-c{}-{}",
            self.input_height,
            self.input_width,
            self.conv_channels,
            hidden.join("_"),
            self.num_classes,
            self.activation.name()
        )
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(tag: &str) -> Result<Self> {
        let bad = || Error::contract(format!("malformed architecture tag {tag:?}"));
        let parts: Vec<&str> = tag.split('-').collect();
        if parts.len() != 5 {
            return Err(bad());
        }
        let (h, w) = parts[0]
            .strip_prefix("in")
            .and_then(|s| s.split_once('x'))
            .ok_or_else(bad)?;
        let conv = parts[1].strip_prefix("conv").ok_or_else(bad)?;
        let hidden = parts[2].strip_prefix('h').ok_or_else(bad)?;
        let classes = parts[3].strip_prefix('c').ok_or_else(bad)?;
        let activation = match parts[4] {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            _ => return Err(bad()),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let arch = Architecture {
            input_height: num(h)?,
            input_width: num(w)?,
            conv_channels: num(conv)?,
            hidden_sizes: hidden.split('_').map(num).collect::<Result<_>>()?,
            num_classes: num(classes)?,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Everything needed to build a fresh classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub hidden_sizes: Vec<usize>,
    pub num_classes: usize,
    pub init_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub conv_channels: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ClassifierConfig {
    pub fn mlp(input_height: usize, input_width: usize, hidden_sizes: Vec<usize>) -> Self {
        ClassifierConfig {
            input_height,
            input_width,
            hidden_sizes,
            num_classes: 2,
            init_scale: 1.0,
            seed: 0,
            conv_channels: 0,
            activation: Activation::Tanh,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_height: self.input_height,
            input_width: self.input_width,
            conv_channels: self.conv_channels,
            hidden_sizes: self.hidden_sizes.clone(),
            num_classes: self.num_classes,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::config("init_scale must be finite and nonnegative"));
        }
        self.architecture().validate()
    }
}

/// One weight matrix and its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Classifier weights bound to the architecture that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    architecture: Architecture,
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// Assemble parameters, checking that every shape chains.
    pub fn from_layers(architecture: Architecture, layers: Vec<Layer>) -> Result<Self> {
        architecture.validate()?;
        let shapes = architecture.weight_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::contract(format!(
                "architecture {architecture} has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((r, c), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.weights.dim() != (*r, *c) {
                return Err(Error::contract(format!(
                    "layer {i}: expected weights {r}x{c}, got {:?}",
                    layer.weights.dim()
                )));
            }
            let bias_len = if architecture.conv_channels > 0 && i == 0 { *r } else { *c };
            if layer.bias.len() != bias_len {
                return Err(Error::contract(format!(
                    "layer {i}: expected bias of length {bias_len}, got {}",
                    layer.bias.len()
                )));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("layer {i} has non-finite values")));
            }
        }
        Ok(ModelParams {
            architecture,
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn architecture_tag(&self) -> String {
        self.architecture.to_string()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn has_conv(&self) -> bool {
        self.architecture.conv_channels > 0
    }
}

/// Build a fresh network: weights uniform in `±init_scale/√fan_in`, zero biases.
pub fn init_model(config: &ClassifierConfig) -> Result<ModelParams> {
    config.validate()?;
    let architecture = config.architecture();
    let mut rng = rng::stream(config.seed, Stream::Init);
    let has_conv = architecture.conv_channels > 0;
    let layers = architecture
        .weight_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, (rows, cols))| {
            let conv = has_conv && i == 0;
            let fan_in = if conv { cols } else { rows };
            let scale = config.init_scale / (fan_in as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((rows, cols), || {
                scale * rng.random_range(-1.0..=1.0)
            });
            let bias = Array1::zeros(if conv { rows } else { cols });
            Layer { weights, bias }
        })
        .collect();
    ModelParams::from_layers(architecture, layers)
}

/// Cached activations of one forward pass.
///
/// `pre[i]` is the pre-activation of layer `i` and `post[i]` its output (for a
/// convolution stage, the pooled activation). The last `post` holds the
/// softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn probs(&self) -> &Array2<f64> {
        self.post.last().expect("trace has at least one layer")
    }

    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("trace has at least one layer")
    }

    pub fn batch_len(&self) -> usize {
        self.probs().nrows()
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Extract 3x3 zero-padded patches: row `(b, y, x)` holds the 9 taps around pixel `(y, x)`.
pub(crate) fn im2col(inputs: &Array2<f64>, height: usize, width: usize) -> Array2<f64> {
    let n = inputs.nrows();
    let mut patches = Array2::zeros((n * height * width, 9));
    for b in 0..n {
        let img = inputs.row(b);
        for y in 0..height {
            for x in 0..width {
                let mut row = patches.row_mut((b * height + y) * width + x);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= width as isize {
                            continue;
                        }
                        row[ky * 3 + kx] = img[sy as usize * width + sx as usize];
                    }
                }
            }
        }
    }
    patches
}

fn check_inputs(params: &ModelParams, inputs: &Array2<f64>) -> Result<()> {
    let expected = params.architecture.input_len();
    if inputs.ncols() != expected {
        return Err(Error::contract(format!(
            "batch rows have {} values, model {} expects {expected}",
            inputs.ncols(),
            params.architecture
        )));
    }
    if inputs.nrows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("batch contains non-finite values"));
    }
    Ok(())
}

/// Run the network on a batch whose rows are flattened row-major images.
pub fn forward(params: &ModelParams, inputs: &Array2<f64>) -> Result<ForwardTrace> {
    check_inputs(params, inputs)?;
    let arch = &params.architecture;
    let n = inputs.nrows();
    let act = arch.activation;
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post = Vec::with_capacity(params.layers.len());

    let mut layers = params.layers.iter();
    if params.has_conv() {
        let conv = layers.next().expect("conv layer present");
        let (h, w) = (arch.input_height, arch.input_width);
        let (ph, pw) = arch.pooled_dims();
        let channels = arch.conv_channels;
        let patches = im2col(inputs, h, w);
        // (n*h*w, channels)
        let responses = patches.dot(&conv.weights.t()) + &conv.bias;
        let mut conv_pre = Array2::zeros((n, channels * h * w));
        let mut pooled = Array2::zeros((n, channels * ph * pw));
        for b in 0..n {
            for c in 0..channels {
                for y in 0..h {
                    for x in 0..w {
                        let z = responses[[(b * h + y) * w + x, c]];
                        conv_pre[[b, (c * h + y) * w + x]] = z;
                        if y / 2 < ph && x / 2 < pw {
                            pooled[[b, (c * ph + y / 2) * pw + x / 2]] += 0.25 * act.apply(z);
                        }
                    }
                }
            }
        }
        pre.push(conv_pre);
        post.push(pooled);
    }

    let dense: Vec<&Layer> = layers.collect();
    for (i, layer) in dense.iter().enumerate() {
        let input = post.last().unwrap_or(inputs);
        let z = input.dot(&layer.weights) + &layer.bias;
        let a = if i + 1 == dense.len() {
            softmax_rows(&z)
        } else {
            z.mapv(|v| act.apply(v))
        };
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardTrace { pre, post })
}

/// Class probabilities only.
pub fn predict_proba(params: &ModelParams, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    forward(params, inputs).map(|mut t| t.post.pop().expect("nonempty trace"))
}

/// Activations of the last hidden layer, one row per input.
pub fn extract_penultimate(params: &ModelParams, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    let mut trace = forward(params, inputs)?;
    let idx = trace.post.len() - 2;
    Ok(trace.post.swap_remove(idx))
}

/// Arg-max of each row (first index wins on ties).
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Stack equally long rows into a matrix.
pub fn stack_rows(rows: &[&[f64]]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::contract("rows have differing lengths"));
    }
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        out.slice_mut(s![i, ..]).assign(&ndarray::ArrayView1::from(*r));
    }
    Ok(out)
}
