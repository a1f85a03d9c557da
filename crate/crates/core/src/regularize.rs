//! Loss-augmenting penalties: L2 on weights, spectral norm, flatness
//! (gradient-norm penalty), and the Jacobian/geometric-complexity penalty.
//!
//! Every penalty returns its scalar value together with a parameter-gradient
//! bundle, so the trainer composes them additively:
//! `total objective = L_B + Σ λ_j · penalty_j`.

use crate::complexity::ComplexityError;
use crate::data::Dataset;
use crate::linalg::{Matrix, SpectralNonConvergence, Vector};
use crate::loss::{LossError, LossKind};
use crate::net::{Activation, GradientBundle, LayerGrad, NetError, Network};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegError {
    #[error("penalty batch must be nonempty")]
    EmptyBatch,
    #[error(transparent)]
    Spectral(#[from] SpectralNonConvergence),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error("activation patterns kept flipping during finite-difference validation after {retries} retries")]
    PatternUnstable { retries: usize },
}

/// Which penalty a [`Penalty`] instance applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L2,
    Spectral,
    Flatness,
    Gc,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::L2 => "l2",
            PenaltyKind::Spectral => "spectral",
            PenaltyKind::Flatness => "flatness",
            PenaltyKind::Gc => "gc",
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l2" => Ok(PenaltyKind::L2),
            "spectral" => Ok(PenaltyKind::Spectral),
            "flatness" => Ok(PenaltyKind::Flatness),
            "gc" | "jacobian" => Ok(PenaltyKind::Gc),
            other => Err(format!("unknown penalty kind '{other}'")),
        }
    }
}

/// A penalty with its rate and any persistent state. The spectral penalty
/// keeps per-layer power-iteration vectors warm across steps; the state is
/// owned by one trainer (single writer).
#[derive(Debug, Clone)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub rate: f64,
    spectral_state: Vec<Option<Vector>>,
}

impl Penalty {
    pub fn new(kind: PenaltyKind, rate: f64) -> Self {
        assert!(rate >= 0.0, "penalty rate must be nonnegative");
        Penalty { kind, rate, spectral_state: Vec::new() }
    }

    /// Penalty value and gradient (not yet scaled by the rate).
    pub fn evaluate(
        &mut self,
        net: &Network,
        loss_kind: LossKind,
        batch: &Dataset,
    ) -> Result<(f64, GradientBundle), RegError> {
        match self.kind {
            PenaltyKind::L2 => Ok(l2_penalty(net)),
            PenaltyKind::Spectral => {
                if self.spectral_state.len() != net.num_layers() {
                    self.spectral_state = vec![None; net.num_layers()];
                }
                Ok(spectral_penalty_lenient(net, &mut self.spectral_state))
            }
            PenaltyKind::Flatness => {
                let eval = flatness_penalty(net, loss_kind, batch)?;
                Ok((eval.value, eval.grad))
            }
            PenaltyKind::Gc => gc_penalty(net, batch),
        }
    }
}

/// Sum of squared Frobenius norms of the weight matrices (biases excluded);
/// gradient is `2W` per layer.
pub fn l2_penalty(net: &Network) -> (f64, GradientBundle) {
    let mut value = 0.0;
    let mut layers = Vec::with_capacity(net.num_layers());
    for layer in net.layers() {
        value += layer.weights.frobenius_norm_sq();
        let mut dw = layer.weights.clone();
        dw.scale(2.0);
        layers.push(LayerGrad { dw, db: Vector::zeros(layer.bias.len()) });
    }
    (value, GradientBundle::from_layers(layers))
}

/// `½ Σ_l σmax(W_l)²` with gradient `σmax·u vᵀ` per layer, where `(u, v)` is
/// the top singular pair from power iteration (run to tolerance 1e-8 and
/// treated as constants, valid where the top singular value is simple).
pub fn spectral_penalty(net: &Network) -> Result<(f64, GradientBundle), RegError> {
    let mut value = 0.0;
    let mut layers = Vec::with_capacity(net.num_layers());
    for layer in net.layers() {
        let (sigma, v, u) = layer.weights.top_singular_pair(
            SPECTRAL_PENALTY_TOL,
            crate::linalg::SPECTRAL_MAX_ITERS,
            None,
        )?;
        value += 0.5 * sigma * sigma;
        layers.push(LayerGrad {
            dw: scaled_outer(sigma, &u, &v),
            db: Vector::zeros(layer.bias.len()),
        });
    }
    Ok((value, GradientBundle::from_layers(layers)))
}

const SPECTRAL_PENALTY_TOL: f64 = 1e-8;

/// Training-loop variant with persistent warm-start vectors: best-effort in
/// the degenerate regime (where the penalty itself drives the top singular
/// values together and the pair is no longer unique).
fn spectral_penalty_lenient(net: &Network, state: &mut [Option<Vector>]) -> (f64, GradientBundle) {
    let mut value = 0.0;
    let mut layers = Vec::with_capacity(net.num_layers());
    for (layer, warm) in net.layers().iter().zip(state.iter_mut()) {
        let (sigma, v, u) = layer.weights.top_singular_pair_lenient(
            SPECTRAL_PENALTY_TOL,
            crate::linalg::SPECTRAL_MAX_ITERS,
            warm.as_ref(),
        );
        *warm = Some(v.clone());
        value += 0.5 * sigma * sigma;
        layers.push(LayerGrad {
            dw: scaled_outer(sigma, &u, &v),
            db: Vector::zeros(layer.bias.len()),
        });
    }
    (value, GradientBundle::from_layers(layers))
}

fn scaled_outer(sigma: f64, u: &Vector, v: &Vector) -> Matrix {
    let mut dw = Matrix::outer(u, v);
    dw.scale(sigma);
    dw
}

/// Result of the flatness penalty; a zero batch gradient makes the
/// Hessian-vector direction undefined, which is flagged rather than failed.
#[derive(Debug, Clone)]
pub struct FlatnessEval {
    pub value: f64,
    pub grad: GradientBundle,
    pub zero_gradient: bool,
}

/// Mean batch loss gradient `∇_θ L_B`.
fn batch_loss_gradient(
    net: &Network,
    kind: LossKind,
    batch: &Dataset,
) -> Result<GradientBundle, RegError> {
    if batch.is_empty() {
        return Err(RegError::EmptyBatch);
    }
    let mut acc = GradientBundle::zeros_like(net);
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        crate::loss::accumulate_loss_gradient(kind, net, &batch.point(i), batch.target(i), scale, &mut acc)?;
    }
    Ok(acc)
}

/// Gradient-norm penalty `‖∇_θ L_B(θ)‖²`. Its parameter gradient `2·H·g` is
/// approximated by a central finite-difference Hessian-vector product along
/// the gradient direction:
/// `(g(θ+εv̂) − g(θ−εv̂))·‖g‖/ε` with `ε = √(machine ε)·(1+‖θ‖)`.
pub fn flatness_penalty(
    net: &Network,
    kind: LossKind,
    batch: &Dataset,
) -> Result<FlatnessEval, RegError> {
    let g = batch_loss_gradient(net, kind, batch)?;
    let norm_sq = g.norm_sq();
    if norm_sq == 0.0 {
        return Ok(FlatnessEval { value: 0.0, grad: GradientBundle::zeros_like(net), zero_gradient: true });
    }
    let norm = norm_sq.sqrt();
    let mut direction = g.clone();
    direction.scale(1.0 / norm);
    let eps = f64::EPSILON.sqrt() * (1.0 + net.param_norm_sq().sqrt());

    let mut plus = net.clone();
    plus.apply_step(&direction, eps);
    let mut minus = net.clone();
    minus.apply_step(&direction, -eps);
    let g_plus = batch_loss_gradient(&plus, kind, batch)?;
    let g_minus = batch_loss_gradient(&minus, kind, batch)?;

    let mut grad = g_plus;
    grad.add_scaled(&g_minus, -1.0);
    grad.scale(norm / eps);
    Ok(FlatnessEval { value: norm_sq, grad, zero_gradient: false })
}

/// Jacobian (geometric-complexity) penalty `(1/B) Σ_x ‖∇_x f_θ(x)‖²_F`.
///
/// For piecewise-linear networks the gradient is exact: with the relu masks
/// frozen, the per-point Jacobian is the masked weight product
/// `A = M_l⋯M_1`, and `∂‖A‖²_F/∂W_i = 2·D_i Pᵀ A Qᵀ` where `P`/`Q` are the
/// partial products above/below layer `i`. Biases do not enter `A`, so their
/// gradient is zero almost everywhere. Smooth networks fall back to a
/// central finite-difference of the per-logit parameter gradients over the
/// input coordinates.
pub fn gc_penalty(net: &Network, batch: &Dataset) -> Result<(f64, GradientBundle), RegError> {
    if batch.is_empty() {
        return Err(RegError::EmptyBatch);
    }
    let piecewise = net.layers().iter().all(|l| l.activation.is_piecewise_linear());
    if piecewise {
        gc_penalty_exact(net, batch)
    } else {
        gc_penalty_fd(net, batch)
    }
}

fn gc_penalty_exact(net: &Network, batch: &Dataset) -> Result<(f64, GradientBundle), RegError> {
    use rayon::prelude::*;
    let results: Vec<(f64, GradientBundle)> = (0..batch.len())
        .into_par_iter()
        .map(|p| gc_point_exact(net, &batch.point(p)))
        .collect::<Result<_, RegError>>()?;
    let mut value = 0.0;
    let mut grad = GradientBundle::zeros_like(net);
    for (v, g) in &results {
        value += v;
        grad.add_scaled(g, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.scale(scale);
    Ok((value * scale, grad))
}

fn gc_point_exact(net: &Network, x: &Vector) -> Result<(f64, GradientBundle), RegError> {
    let trace = net.forward(x)?;
    let l = net.num_layers();

    // Masked per-layer factors M_i = D_i W_i with D from the frozen trace.
    let mut factors = Vec::with_capacity(l);
    let mut masks: Vec<Option<Vec<bool>>> = Vec::with_capacity(l);
    for (i, layer) in net.layers().iter().enumerate() {
        match layer.activation {
            Activation::Relu => {
                let alive: Vec<bool> = trace.pre_activation(i).iter().map(|&z| z > 0.0).collect();
                let mut w = layer.weights.clone();
                for (r, &keep) in alive.iter().enumerate() {
                    if !keep {
                        for v in w.row_mut(r) {
                            *v = 0.0;
                        }
                    }
                }
                factors.push(w);
                masks.push(Some(alive));
            }
            Activation::Identity => {
                factors.push(layer.weights.clone());
                masks.push(None);
            }
            _ => unreachable!("exact path requires piecewise-linear activations"),
        }
    }

    // Prefix products Q_i = M_{i-1}⋯M_1 (Q_0 = I_d) and suffix products
    // P_i = M_l⋯M_{i+1} (P_{l-1} = I_k), in layer index order.
    let d = net.input_dim();
    let k = net.output_dim();
    let mut prefixes = Vec::with_capacity(l);
    let mut q = Matrix::identity(d);
    for factor in factors.iter().take(l) {
        prefixes.push(q.clone());
        q = factor.matmul(&q);
    }
    let full = q; // A = M_l ⋯ M_1
    let mut suffixes = vec![Matrix::identity(k); l];
    let mut p = Matrix::identity(k);
    for i in (0..l).rev() {
        suffixes[i] = p.clone();
        p = p.matmul(&factors[i]);
    }

    let mut layer_grads = Vec::with_capacity(l);
    for i in 0..l {
        let mut dw = suffixes[i].transpose().matmul(&full).matmul(&prefixes[i].transpose());
        dw.scale(2.0);
        if let Some(alive) = &masks[i] {
            for (r, &keep) in alive.iter().enumerate() {
                if !keep {
                    for v in dw.row_mut(r) {
                        *v = 0.0;
                    }
                }
            }
        }
        layer_grads.push(LayerGrad { dw, db: Vector::zeros(net.layer(i).bias.len()) });
    }
    Ok((full.frobenius_norm_sq(), GradientBundle::from_layers(layer_grads)))
}

/// Smooth-activation fallback: `∇_θ ‖J‖²_F = 2 Σ_{i,j} J_ij ∇_θ J_ij`, with
/// `∇_θ J_ij` estimated by central differences of the per-logit gradients
/// over the input coordinate `x_j`.
fn gc_penalty_fd(net: &Network, batch: &Dataset) -> Result<(f64, GradientBundle), RegError> {
    let d = net.input_dim();
    let k = net.output_dim();
    let mut value = 0.0;
    let mut grad = GradientBundle::zeros_like(net);
    for p in 0..batch.len() {
        let x = batch.point(p);
        let jac = net.input_jacobian(&x)?;
        value += jac.frobenius_norm_sq();
        for j in 0..d {
            let eps = 6e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += eps;
            let mut xm = x.clone();
            xm[j] -= eps;
            let tp = net.forward(&xp)?;
            let tm = net.forward(&xm)?;
            let gp = net.per_logit_gradients(&tp)?;
            let gm = net.per_logit_gradients(&tm)?;
            for i in 0..k {
                let mut diff = gp[i].clone();
                diff.add_scaled(&gm[i], -1.0);
                // 2 · J_ij · (g_i(x+εe_j) − g_i(x−εe_j)) / (2ε)
                grad.add_scaled(&diff, jac[(i, j)] / eps);
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    value *= scale;
    grad.scale(scale);
    Ok((value, grad))
}

/// Central finite-difference check of the exact relu gc-penalty gradient at
/// one parameter coordinate, guarded against activation-pattern flips: if
/// any batch point changes pattern at `θ ± step`, the step shrinks 10× and
/// the check retries, erroring out after `max_retries`.
pub fn gc_penalty_fd_check_coord(
    net: &Network,
    batch: &Dataset,
    coord: usize,
    initial_step: f64,
    max_retries: usize,
) -> Result<f64, RegError> {
    let patterns: Vec<_> = (0..batch.len())
        .map(|i| net.forward(&batch.point(i)).and_then(|t| t.activation_pattern()))
        .collect::<Result<_, _>>()?;
    let theta = net.param(coord);
    let mut step = initial_step * (1.0 + theta.abs());
    for _ in 0..=max_retries {
        let mut plus = net.clone();
        plus.set_param(coord, theta + step);
        let mut minus = net.clone();
        minus.set_param(coord, theta - step);
        let mut stable = true;
        for (i, pattern) in patterns.iter().enumerate() {
            let pp = plus.forward(&batch.point(i))?.activation_pattern()?;
            let pm = minus.forward(&batch.point(i))?.activation_pattern()?;
            if &pp != pattern || &pm != pattern {
                stable = false;
                break;
            }
        }
        if !stable {
            step /= 10.0;
            continue;
        }
        let vp = crate::complexity::geometric_complexity(&plus, batch)?;
        let vm = crate::complexity::geometric_complexity(&minus, batch)?;
        return Ok((vp - vm) / (2.0 * step));
    }
    Err(RegError::PatternUnstable { retries: max_retries })
}
