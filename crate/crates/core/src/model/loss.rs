use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Positive per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::contract("class weights must be nonempty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::contract(format!(
                "class weights must be positive and finite, got {weights:?}"
            )));
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights(vec![1.0; num_classes])
    }

    /// `w_c = N / (C · max(N_c, 1))`.
    pub fn inverse_frequency(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::contract("inverse-frequency weights need a nonzero total"));
        }
        let c = counts.len() as f64;
        Self::new(
            counts
                .iter()
                .map(|&n| total as f64 / (c * n.max(1) as f64))
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for ClassWeights {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ClassWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ClassWeights::new(v)
    }
}

impl From<ClassWeights> for Vec<f64> {
    fn from(w: ClassWeights) -> Self {
        w.0
    }
}

fn check_weights(probs: &Array2<f64>, weights: &ClassWeights) -> Result<()> {
    if weights.len() != probs.ncols() {
        return Err(Error::contract(format!(
            "{} class weights for {} classes",
            weights.len(),
            probs.ncols()
        )));
    }
    Ok(())
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    Ok(())
}

/// Mean over the batch of `−w[y_i] · ln p[i, y_i]`.
pub fn weighted_cross_entropy(
    probs: &Array2<f64>,
    targets: &[usize],
    weights: &ClassWeights,
) -> Result<f64> {
    if probs.nrows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    if targets.len() != probs.nrows() {
        return Err(Error::contract(format!(
            "{} targets for {} prediction rows",
            targets.len(),
            probs.nrows()
        )));
    }
    check_weights(probs, weights)?;
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        if y >= probs.ncols() {
            return Err(Error::contract(format!("label {y} out of range")));
        }
        total -= weights[y] * probs[[i, y]].max(PROB_FLOOR).ln();
    }
    Ok(total / targets.len() as f64)
}

/// Mean over the batch of `−Σ_c w_c · y_ic · ln p_ic` for soft targets.
pub fn soft_cross_entropy(
    probs: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &ClassWeights,
) -> Result<f64> {
    check_same_shape(probs, targets)?;
    check_weights(probs, weights)?;
    let mut total = 0.0;
    for ((i, c), &y) in targets.indexed_iter() {
        if y != 0.0 {
            total -= weights[c] * y * probs[[i, c]].max(PROB_FLOOR).ln();
        }
    }
    Ok(total / probs.nrows() as f64)
}

/// Mean over the batch of the squared L2 distance between rows.
pub fn euclidean_loss(probs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    check_same_shape(probs, targets)?;
    let sq: f64 = probs
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sq / probs.nrows() as f64)
}

/// Like [`euclidean_loss`] with a weight per example: `(1/n) Σ_i v_i ‖p_i − t_i‖²`.
pub fn weighted_euclidean_loss(
    probs: &Array2<f64>,
    targets: &Array2<f64>,
    example_weights: &[f64],
) -> Result<f64> {
    check_same_shape(probs, targets)?;
    if example_weights.len() != probs.nrows() {
        return Err(Error::contract("one weight per example required"));
    }
    let mut total = 0.0;
    for (i, v) in example_weights.iter().enumerate() {
        let d: f64 = probs
            .row(i)
            .iter()
            .zip(targets.row(i))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        total += v * d;
    }
    Ok(total / probs.nrows() as f64)
}

/// A differentiable objective over softmax outputs.
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    CrossEntropy {
        targets: &'a [usize],
        weights: &'a ClassWeights,
    },
    SoftCrossEntropy {
        targets: &'a Array2<f64>,
        weights: &'a ClassWeights,
    },
    Euclidean {
        targets: &'a Array2<f64>,
        /// `None` weighs every example by 1.
        example_weights: Option<&'a [f64]>,
    },
}

impl Loss<'_> {
    pub fn value(&self, probs: &Array2<f64>) -> Result<f64> {
        match *self {
            Loss::CrossEntropy { targets, weights } => {
                weighted_cross_entropy(probs, targets, weights)
            }
            Loss::SoftCrossEntropy { targets, weights } => {
                soft_cross_entropy(probs, targets, weights)
            }
            Loss::Euclidean {
                targets,
                example_weights: Some(v),
            } => weighted_euclidean_loss(probs, targets, v),
            Loss::Euclidean {
                targets,
                example_weights: None,
            } => euclidean_loss(probs, targets),
        }
    }

    /// Gradient of the loss with respect to the logits feeding the softmax.
    pub fn logit_gradient(&self, probs: &Array2<f64>) -> Result<Array2<f64>> {
        // Validate shapes once through the value path.
        self.value(probs)?;
        let n = probs.nrows() as f64;
        let k = probs.ncols();
        let mut grad = Array2::zeros(probs.dim());
        match *self {
            Loss::CrossEntropy { targets, weights } => {
                for (i, &y) in targets.iter().enumerate() {
                    if probs[[i, y]] < PROB_FLOOR {
                        continue;
                    }
                    let scale = weights[y] / n;
                    for c in 0..k {
                        let onehot = if c == y { 1.0 } else { 0.0 };
                        grad[[i, c]] = scale * (probs[[i, c]] - onehot);
                    }
                }
            }
            Loss::SoftCrossEntropy { targets, weights } => {
                // dL/dz_ik = (1/n) Σ_c w_c y_ic (p_ik − δ_ck), skipping clamped terms.
                for i in 0..probs.nrows() {
                    let mut mass = 0.0;
                    for c in 0..k {
                        if probs[[i, c]] >= PROB_FLOOR {
                            mass += weights[c] * targets[[i, c]];
                        }
                    }
                    for c in 0..k {
                        let own = if probs[[i, c]] >= PROB_FLOOR {
                            weights[c] * targets[[i, c]]
                        } else {
                            0.0
                        };
                        grad[[i, c]] = (probs[[i, c]] * mass - own) / n;
                    }
                }
            }
            Loss::Euclidean {
                targets,
                example_weights,
            } => {
                for i in 0..probs.nrows() {
                    let v = example_weights.map_or(1.0, |w| w[i]);
                    // g = dL/dp, then back through the softmax Jacobian.
                    let g: Vec<f64> = (0..k)
                        .map(|c| 2.0 * v * (probs[[i, c]] - targets[[i, c]]) / n)
                        .collect();
                    let dot: f64 = (0..k).map(|c| g[c] * probs[[i, c]]).sum();
                    for c in 0..k {
                        grad[[i, c]] = probs[[i, c]] * (g[c] - dot);
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn perfect_predictions_cost_nothing() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let w = ClassWeights::new(vec![3.0, 7.0]).unwrap();
        let l = weighted_cross_entropy(&p, &[0, 1], &w).unwrap();
        assert!(l.abs() <= 1e-11);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let p = array![[0.5, 0.5]];
        let l = weighted_cross_entropy(&p, &[0], &ClassWeights::uniform(2)).unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn weighted_example() {
        let p = array![[0.8, 0.2]];
        let w = ClassWeights::new(vec![1.0, 10.0]).unwrap();
        let l = weighted_cross_entropy(&p, &[1], &w).unwrap();
        assert_abs_diff_eq!(l, 10.0 * -(0.2f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 16.0944, epsilon = 1e-4);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = array![[1.0, 0.0]];
        let l = weighted_cross_entropy(&p, &[1], &ClassWeights::uniform(2)).unwrap();
        assert_abs_diff_eq!(l, -(PROB_FLOOR.ln()), epsilon = 1e-9);
    }

    #[test]
    fn empty_and_mismatched_batches_error() {
        let p = Array2::<f64>::zeros((0, 2));
        assert!(weighted_cross_entropy(&p, &[], &ClassWeights::uniform(2)).is_err());
        let p = array![[0.5, 0.5]];
        assert!(weighted_cross_entropy(&p, &[0, 1], &ClassWeights::uniform(2)).is_err());
        assert!(weighted_cross_entropy(&p, &[2], &ClassWeights::uniform(2)).is_err());
        assert!(euclidean_loss(&p, &array![[0.5, 0.5], [0.5, 0.5]]).is_err());
    }

    #[test]
    fn euclidean_examples() {
        let a = array![[0.7, 0.3]];
        assert_eq!(euclidean_loss(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(
            euclidean_loss(&array![[1.0, 0.0]], &array![[0.0, 1.0]]).unwrap(),
            2.0
        );
        assert_abs_diff_eq!(
            euclidean_loss(&a, &array![[0.5, 0.5]]).unwrap(),
            0.08,
            epsilon = 1e-15
        );
    }

    #[test]
    fn soft_ce_matches_hard_ce_on_onehot_targets() {
        let p = array![[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]];
        let w = ClassWeights::new(vec![0.6, 3.0]).unwrap();
        let hard = weighted_cross_entropy(&p, &[0, 1, 1], &w).unwrap();
        let soft = soft_cross_entropy(&p, &array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], &w).unwrap();
        assert_abs_diff_eq!(hard, soft, epsilon = 1e-15);
    }

    #[test]
    fn euclidean_gradient_vanishes_at_target() {
        let p = array![[0.7, 0.3], [0.1, 0.9]];
        let loss = Loss::Euclidean {
            targets: &p,
            example_weights: None,
        };
        let g = loss.logit_gradient(&p).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inverse_frequency_weights() {
        let w = ClassWeights::inverse_frequency(&[95, 5]).unwrap();
        assert_abs_diff_eq!(w[0], 100.0 / 190.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 10.0, epsilon = 1e-15);
        let w = ClassWeights::inverse_frequency(&[40, 0]).unwrap();
        assert!(w[1].is_finite() && w[1] > 0.0);
        assert!(ClassWeights::inverse_frequency(&[0, 0]).is_err());
        assert!(ClassWeights::new(vec![1.0, 0.0]).is_err());
    }
}
