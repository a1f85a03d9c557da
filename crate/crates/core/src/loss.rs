//! Exponential-family losses and their signed residuals.
//!
//! Both supported losses share one gradient structure: the loss gradient with
//! respect to parameters (or inputs) is the sum of per-logit network
//! gradients weighted by the signed residual `ε = response(logits) − target`.
//! MSE carries a factor ½ so that the residual *is* the gradient of the loss
//! in the logits, with no stray constants.

use crate::linalg::Vector;
use crate::net::{GradientBundle, NetError, Network};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("target dimension {got} does not match output dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss kind {kind:?} does not accept this target variant")]
    TargetKindMismatch { kind: LossKind },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Loss selector: mean squared error pairs with the identity response,
/// softmax cross-entropy with the softmax response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SoftmaxCe,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::SoftmaxCe => "softmax_ce",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "softmax_ce" | "ce" => Ok(LossKind::SoftmaxCe),
            other => Err(format!("unknown loss kind '{other}'")),
        }
    }
}

/// Regression vector or class index; class targets are one-hot encoded
/// internally when a residual is formed.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Regression(Vector),
    Class(usize),
}

/// Response head `g(logits)`: identity for MSE, numerically-stable
/// (max-shifted) softmax for cross-entropy.
pub fn response(kind: LossKind, logits: &Vector) -> Vector {
    match kind {
        LossKind::Mse => logits.clone(),
        LossKind::SoftmaxCe => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            Vector::from_vec(exps.into_iter().map(|e| e / sum).collect())
        }
    }
}

/// Per-example loss. MSE: `½‖logits − y‖²`. Cross-entropy:
/// `logsumexp(logits) − logits[class]`, computed max-shifted.
pub fn loss_value(kind: LossKind, logits: &Vector, target: &Target) -> Result<f64, LossError> {
    match (kind, target) {
        (LossKind::Mse, Target::Regression(y)) => {
            if y.len() != logits.len() {
                return Err(LossError::DimensionMismatch { expected: logits.len(), got: y.len() });
            }
            let sq: f64 = logits
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok(0.5 * sq)
        }
        (LossKind::SoftmaxCe, Target::Class(c)) => {
            if *c >= logits.len() {
                return Err(LossError::ClassOutOfRange { index: *c, classes: logits.len() });
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            Ok(lse - logits[*c])
        }
        (kind, _) => Err(LossError::TargetKindMismatch { kind }),
    }
}

/// Signed residual `ε = response(logits) − y`, with `y` the transformed
/// (one-hot for classes) target. For cross-entropy the entries sum to zero.
pub fn residual(kind: LossKind, logits: &Vector, target: &Target) -> Result<Vector, LossError> {
    let mut r = response(kind, logits);
    match (kind, target) {
        (LossKind::Mse, Target::Regression(y)) => {
            if y.len() != logits.len() {
                return Err(LossError::DimensionMismatch { expected: logits.len(), got: y.len() });
            }
            r.add_scaled(y, -1.0);
            Ok(r)
        }
        (LossKind::SoftmaxCe, Target::Class(c)) => {
            if *c >= logits.len() {
                return Err(LossError::ClassOutOfRange { index: *c, classes: logits.len() });
            }
            r[*c] -= 1.0;
            Ok(r)
        }
        (kind, _) => Err(LossError::TargetKindMismatch { kind }),
    }
}

/// `∇_θ L(x, y, θ) = Σ_i ε^i ∇_θ f^i_θ(x)`, assembled by a single reverse
/// pass with the residual as upstream vector.
pub fn loss_param_gradient(
    kind: LossKind,
    net: &Network,
    x: &Vector,
    target: &Target,
) -> Result<GradientBundle, LossError> {
    let trace = net.forward(x)?;
    let eps = residual(kind, trace.output(), target)?;
    Ok(net.param_gradients_from_trace(&trace, &eps)?)
}

/// `acc += scale · ∇_θ L(x, y, θ)`, fused into the accumulator; returns the
/// per-example loss so batch loops get it for free.
pub fn accumulate_loss_gradient(
    kind: LossKind,
    net: &Network,
    x: &Vector,
    target: &Target,
    scale: f64,
    acc: &mut GradientBundle,
) -> Result<f64, LossError> {
    let trace = net.forward(x)?;
    let eps = residual(kind, trace.output(), target)?;
    let value = loss_value(kind, trace.output(), target)?;
    net.accumulate_param_gradients(&trace, &eps, scale, acc)?;
    Ok(value)
}

/// `∇_x L(x, y, θ) = Σ_i ε^i ∇_x f^i_θ(x)`, i.e. the input-Jacobian
/// transpose applied to the residual, evaluated in one reverse pass.
pub fn loss_input_gradient(
    kind: LossKind,
    net: &Network,
    x: &Vector,
    target: &Target,
) -> Result<Vector, LossError> {
    let trace = net.forward(x)?;
    let eps = residual(kind, trace.output(), target)?;
    Ok(net.input_gradient_from_trace(&trace, &eps)?)
}
