use ndarray::{Array1, Array2, Axis};

use super::{forward, im2col, init_model, ClassWeights, ClassifierConfig, ForwardTrace, Loss, ModelParams};
use crate::error::{Error, Result};

/// Gradient of one layer; shapes mirror [`super::Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients for every layer of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// All entries in layer order, weights before bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }
}

/// Exact gradient of `loss` with respect to every parameter.
///
/// `trace` must come from `forward(params, inputs)`.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    inputs: &Array2<f64>,
    loss: &Loss<'_>,
) -> Result<Gradients> {
    let arch = params.architecture();
    let n_layers = params.layers.len();
    let stale = trace.pre.len() != n_layers
        || trace.post.len() != n_layers
        || trace.batch_len() != inputs.nrows()
        || inputs.ncols() != arch.input_len()
        || trace.probs().ncols() != arch.num_classes
        || params
            .layers
            .iter()
            .zip(&trace.pre)
            .skip(usize::from(arch.conv_channels > 0))
            .any(|(l, z)| z.ncols() != l.weights.ncols());
    if stale {
        return Err(Error::contract("trace does not match parameters and inputs"));
    }

    let act = arch.activation;
    let has_conv = arch.conv_channels > 0;
    let mut grads = Vec::with_capacity(n_layers);
    let mut delta = loss.logit_gradient(trace.probs())?;

    for i in (0..n_layers).rev() {
        let layer = &params.layers[i];
        if has_conv && i == 0 {
            let (h, w) = (arch.input_height, arch.input_width);
            let channels = arch.conv_channels;
            let n = inputs.nrows();
            // delta: (n, channels*h*w) w.r.t. conv pre-activations
            let mut per_pixel = Array2::zeros((n * h * w, channels));
            for b in 0..n {
                for c in 0..channels {
                    for p in 0..h * w {
                        per_pixel[[b * h * w + p, c]] = delta[[b, c * h * w + p]];
                    }
                }
            }
            let patches = im2col(inputs, h, w);
            grads.push(LayerGrad {
                weights: per_pixel.t().dot(&patches),
                bias: per_pixel.sum_axis(Axis(0)),
            });
            continue;
        }

        let input = if i == 0 { inputs } else { &trace.post[i - 1] };
        grads.push(LayerGrad {
            weights: input.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        if i == 0 {
            break;
        }

        let upstream = delta.dot(&layer.weights.t());
        let prev_pre = &trace.pre[i - 1];
        delta = if has_conv && i == 1 {
            // Undo the 2x2 average pool, then the activation.
            let (h, w) = (arch.input_height, arch.input_width);
            let (ph, pw) = (h / 2, w / 2);
            let mut d = Array2::zeros(prev_pre.dim());
            for b in 0..upstream.nrows() {
                for c in 0..arch.conv_channels {
                    for y in 0..2 * ph {
                        for x in 0..2 * pw {
                            let k = (c * h + y) * w + x;
                            d[[b, k]] = 0.25
                                * upstream[[b, (c * ph + y / 2) * pw + x / 2]]
                                * act.derivative(prev_pre[[b, k]]);
                        }
                    }
                }
            }
            d
        } else {
            let mut d = upstream;
            d.zip_mut_with(prev_pre, |g, &z| *g *= act.derivative(z));
            d
        };
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// Worst relative error between analytic and central-difference gradients.
///
/// Relative error per entry is `|a − f| / max(|a|, |f|, 1e-6)`; the floor
/// keeps vanishing gradients from turning round-off into large ratios.
pub fn gradient_check_params(
    params: &ModelParams,
    inputs: &Array2<f64>,
    loss: &Loss<'_>,
    eps: f64,
) -> Result<f64> {
    let trace = forward(params, inputs)?;
    let analytic = backward(params, &trace, inputs, loss)?;
    let eval = |p: &ModelParams| -> Result<f64> { loss.value(forward(p, inputs)?.probs()) };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (li, grad) in analytic.layers.iter().enumerate() {
        for (idx, &a) in grad.weights.indexed_iter() {
            let orig = probe.layers[li].weights[idx];
            probe.layers[li].weights[idx] = orig + eps;
            let up = eval(&probe)?;
            probe.layers[li].weights[idx] = orig - eps;
            let down = eval(&probe)?;
            probe.layers[li].weights[idx] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
        }
        for (idx, &a) in grad.bias.indexed_iter() {
            let orig = probe.layers[li].bias[idx];
            probe.layers[li].bias[idx] = orig + eps;
            let up = eval(&probe)?;
            probe.layers[li].bias[idx] = orig - eps;
            let down = eval(&probe)?;
            probe.layers[li].bias[idx] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Build a network from `config` and check its cross-entropy gradient on a
/// labelled batch with central differences (`ε = 1e-4`).
pub fn gradient_check(config: &ClassifierConfig, inputs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let params = init_model(config)?;
    let weights = ClassWeights::uniform(config.num_classes);
    let loss = Loss::CrossEntropy {
        targets: labels,
        weights: &weights,
    };
    gradient_check_params(&params, inputs, &loss, 1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, len: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, len), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let cfg = ClassifierConfig {
            seed: 3,
            ..ClassifierConfig::mlp(4, 4, vec![8])
        };
        let x = random_batch(4, 16, 11);
        let err = gradient_check(&cfg, &x, &[0, 1, 1, 0]).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let cfg = ClassifierConfig {
            seed: 5,
            conv_channels: 2,
            ..ClassifierConfig::mlp(6, 5, vec![6, 4])
        };
        let x = random_batch(3, 30, 12);
        let err = gradient_check(&cfg, &x, &[1, 0, 1]).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn soft_and_euclidean_gradients_match_finite_differences() {
        let cfg = ClassifierConfig {
            seed: 9,
            init_scale: 2.0,
            ..ClassifierConfig::mlp(3, 3, vec![5])
        };
        let params = init_model(&cfg).unwrap();
        let x = random_batch(3, 9, 4);
        let targets = array![[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]];
        let w = ClassWeights::new(vec![0.7, 4.0]).unwrap();
        let soft = Loss::SoftCrossEntropy {
            targets: &targets,
            weights: &w,
        };
        assert!(gradient_check_params(&params, &x, &soft, 1e-4).unwrap() < 1e-4);
        let v = [1.0, 3.0, 0.5];
        let euclid = Loss::Euclidean {
            targets: &targets,
            example_weights: Some(&v),
        };
        assert!(gradient_check_params(&params, &x, &euclid, 1e-4).unwrap() < 1e-4);
    }

    #[test]
    fn relu_gradients_match_away_from_kinks() {
        let cfg = ClassifierConfig {
            seed: 21,
            activation: Activation::Relu,
            ..ClassifierConfig::mlp(3, 3, vec![6])
        };
        let x = random_batch(4, 9, 8);
        let err = gradient_check(&cfg, &x, &[0, 1, 0, 1]).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_scale_check_is_finite_and_repeatable() {
        let cfg = ClassifierConfig {
            init_scale: 0.0,
            ..ClassifierConfig::mlp(4, 4, vec![8])
        };
        let x = random_batch(4, 16, 1);
        let a = gradient_check(&cfg, &x, &[0, 1, 0, 1]).unwrap();
        let b = gradient_check(&cfg, &x, &[0, 1, 0, 1]).unwrap();
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn stale_trace_is_rejected() {
        let cfg = ClassifierConfig::mlp(4, 4, vec![8]);
        let params = init_model(&cfg).unwrap();
        let x = random_batch(4, 16, 1);
        let trace = forward(&params, &x).unwrap();
        let w = ClassWeights::uniform(2);
        let labels = [0, 1, 0];
        let loss = Loss::CrossEntropy {
            targets: &labels,
            weights: &w,
        };
        let fewer = random_batch(3, 16, 2);
        assert!(matches!(
            backward(&params, &trace, &fewer, &loss),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit() {
        // Huge output weights drive the softmax to a one-hot that matches the target.
        let cfg = ClassifierConfig {
            seed: 1,
            ..ClassifierConfig::mlp(2, 2, vec![2])
        };
        let mut params = init_model(&cfg).unwrap();
        params.layers[0].weights.fill(0.0);
        params.layers[0].bias = array![1.0, -1.0];
        params.layers[1].weights = array![[40.0, -40.0], [-40.0, 40.0]];
        let x = Array2::zeros((2, 4));
        let trace = forward(&params, &x).unwrap();
        let w = ClassWeights::uniform(2);
        let labels = [0, 0];
        let loss = Loss::CrossEntropy {
            targets: &labels,
            weights: &w,
        };
        let g = backward(&params, &trace, &x, &loss).unwrap();
        assert!(g.norm() <= 1e-6, "norm {}", g.norm());
    }
}
