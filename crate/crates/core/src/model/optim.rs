use serde::{Deserialize, Serialize};

use super::{Gradients, ModelParams};
use crate::error::{Error, Result};

/// Plain SGD state with L2 weight decay; `step` counts applied updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub step: u64,
}

impl Default for OptimState {
    fn default() -> Self {
        OptimState {
            learning_rate: 0.00002,
            weight_decay: 0.001,
            step: 0,
        }
    }
}

impl OptimState {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Result<Self> {
        let s = OptimState {
            learning_rate,
            weight_decay,
            step: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning rate must be finite and nonnegative"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// `w ← w − lr·(g + weight_decay·w)` on every parameter, in place.
pub fn sgd_step_in_place(
    params: &mut ModelParams,
    grads: &Gradients,
    optim: &mut OptimState,
) -> Result<()> {
    if grads.layers.len() != params.layers.len()
        || grads.layers.iter().zip(&params.layers).any(|(g, l)| {
            g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len()
        })
    {
        return Err(Error::contract("gradient shapes do not match parameters"));
    }
    if !grads.is_finite() {
        return Err(Error::Training {
            step: optim.step,
            message: "non-finite gradient".into(),
        });
    }
    let lr = optim.learning_rate;
    let wd = optim.weight_decay;
    for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
        layer
            .weights
            .zip_mut_with(&g.weights, |w, &gw| *w -= lr * (gw + wd * *w));
        layer
            .bias
            .zip_mut_with(&g.bias, |b, &gb| *b -= lr * (gb + wd * *b));
    }
    optim.step += 1;
    Ok(())
}

/// Functional form of [`sgd_step_in_place`].
pub fn sgd_step(params: &ModelParams, grads: &Gradients, optim: &mut OptimState) -> Result<ModelParams> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, optim)?;
    Ok(next)
}
