//! Implicit-gradient-regularization diagnostics.
//!
//! Discrete gradient descent with step `h` implicitly follows a modified loss
//! `L̃_B = L_B + (h/4)·‖∇_θ L_B‖²`. The squared batch-gradient norm expands
//! exactly into three parts: a per-logit term weighted by squared residuals,
//! a label-alignment term `A_B` (cross-logit inner products within one
//! example), and a batch-alignment term `C_B` (inner products across example
//! pairs). [`igr_decomposition`] computes all four quantities through two
//! independent arithmetic routes and reports the identity residual.
//!
//! [`transfer_report`] evaluates, per layer, the transfer function that
//! relates parameter-space gradient norms to input-space gradient norms, and
//! checks the inequality `‖∇_x f‖²_F ≤ ‖∇_θ f‖²_F / Σᵢ Tᵢ²`.

use crate::data::Dataset;
use crate::linalg::{Matrix, SpectralNonConvergence, Vector};
use crate::loss::{loss_param_gradient, loss_value, residual, LossError, LossKind};
use crate::net::{GradientBundle, NetError, Network};
use thiserror::Error;

/// Partial input-Jacobians below this spectral norm make a layer's transfer
/// function undefined (dead path); such layers are skipped, which only
/// loosens the bound.
const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum IgrError {
    #[error("batch must be nonempty")]
    EmptyBatch,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Spectral(#[from] SpectralNonConvergence),
    #[error("every transfer function is undefined yet the point complexity is {gc_point}; the inequality cannot hold")]
    BoundViolation { gc_point: f64 },
}

/// The expanded modified-loss quantities for one batch.
#[derive(Debug, Clone)]
pub struct IgrReport {
    /// `‖∇_θ L_B‖²`, from one fused backprop over the batch-mean loss.
    pub grad_norm_sq: f64,
    /// `(1/B²) Σ_{x,i} ε_i² ‖∇_θ f^i‖²`.
    pub per_logit_term: f64,
    /// Label gradient alignment `A_B`: cross-logit inner products.
    pub label_alignment: f64,
    /// Batch gradient alignment `C_B`: cross-example inner products.
    pub batch_alignment: f64,
    /// `|grad_norm_sq − (per_logit_term + A_B + C_B)|`.
    pub identity_residual: f64,
}

/// Computes the decomposition. The left side `‖∇_θ L_B‖²` comes from
/// accumulating one residual-weighted reverse pass per example; the right
/// side is assembled term-by-term from per-example per-logit gradients, so
/// the two routes share no arithmetic.
pub fn igr_decomposition(
    net: &Network,
    kind: LossKind,
    batch: &Dataset,
) -> Result<IgrReport, IgrError> {
    let b = batch.len();
    if b == 0 {
        return Err(IgrError::EmptyBatch);
    }
    let b_f = b as f64;

    // Route 1: batch-mean gradient by direct backprop.
    let mut mean_grad = GradientBundle::zeros_like(net);
    // Route 2 ingredients: per-example loss gradients and per-logit pieces.
    let mut example_grads: Vec<GradientBundle> = Vec::with_capacity(b);
    let mut per_logit_term = 0.0;
    let mut label_alignment = 0.0;

    for idx in 0..b {
        let x = batch.point(idx);
        let target = batch.target(idx);
        let direct = loss_param_gradient(kind, net, &x, target)?;
        mean_grad.add_scaled(&direct, 1.0 / b_f);

        let trace = net.forward(&x)?;
        let eps = residual(kind, trace.output(), target)?;
        let per_logit = net.per_logit_gradients(&trace)?;
        let k = eps.len();
        for i in 0..k {
            per_logit_term += eps[i] * eps[i] * per_logit[i].norm_sq();
        }
        // Gram matrix of per-logit gradients, off-diagonal terms only.
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    label_alignment += eps[i] * eps[j] * per_logit[i].dot(&per_logit[j]);
                }
            }
        }
        // Assemble this example's loss gradient from the per-logit pieces
        // (independent of `direct`, which came from a single reverse pass).
        let mut gx = GradientBundle::zeros_like(net);
        for i in 0..k {
            gx.add_scaled(&per_logit[i], eps[i]);
        }
        example_grads.push(gx);
    }

    per_logit_term /= b_f * b_f;
    label_alignment /= b_f * b_f;

    let mut batch_alignment = 0.0;
    for i in 0..b {
        for j in 0..i {
            // ordered pairs (i, j) and (j, i) contribute symmetrically
            batch_alignment += 2.0 * example_grads[i].dot(&example_grads[j]);
        }
    }
    batch_alignment /= b_f * b_f;

    let grad_norm_sq = mean_grad.norm_sq();
    let identity_residual =
        (grad_norm_sq - (per_logit_term + label_alignment + batch_alignment)).abs();
    Ok(IgrReport {
        grad_norm_sq,
        per_logit_term,
        label_alignment,
        batch_alignment,
        identity_residual,
    })
}

/// Mean loss over the batch.
pub fn batch_loss(net: &Network, kind: LossKind, batch: &Dataset) -> Result<f64, IgrError> {
    if batch.is_empty() {
        return Err(IgrError::EmptyBatch);
    }
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let out = net.forward(&batch.point(i))?;
        acc += loss_value(kind, out.output(), batch.target(i))?;
    }
    Ok(acc / batch.len() as f64)
}

/// The modified loss `L̃_B = L_B + (h/4)·‖∇_θ L_B‖²` that a discrete
/// gradient step of size `h` implicitly minimizes.
pub fn modified_loss(
    net: &Network,
    kind: LossKind,
    batch: &Dataset,
    h: f64,
) -> Result<f64, IgrError> {
    let base = batch_loss(net, kind, batch)?;
    let report = igr_decomposition(net, kind, batch)?;
    Ok(base + h / 4.0 * report.grad_norm_sq)
}

/// Per-layer transfer quantities at one input point.
#[derive(Debug, Clone)]
pub struct TransferReport {
    /// `T_i` per layer; `None` marks a skipped (degenerate) layer.
    pub per_layer: Vec<Option<f64>>,
    /// `‖∇_x f‖²_F` at the point.
    pub gc_point: f64,
    /// `‖∇_θ f‖²_F = Σᵢ (‖∇_{wᵢ}f‖²_F + ‖∇_{bᵢ}f‖²_F)`.
    pub param_grad_sq: f64,
    /// `param_grad_sq / Σ Tᵢ²`; infinite when every layer is skipped.
    pub bound: f64,
    pub skipped_layers: Vec<usize>,
}

/// Per-layer geometry shared by [`transfer_report`] and
/// [`per_layer_lemma_check`].
struct LayerGeometry {
    /// `‖h_{i−1}(x)‖²`
    h_prev_norm_sq: f64,
    /// `σmax(w_i)`
    sigma_w: f64,
    /// `σmax(∇_x h_{i−1}(x))`; 1 for the first layer by the `h_0 = x`
    /// convention (identity Jacobian).
    sigma_jac_prev: f64,
    /// Rows of the flattened `∇_{wᵢ}f` matrix (one per logit), for operator
    /// norms; built lazily by the lemma check.
    dw_rows: Vec<Vec<f64>>,
    db_rows: Vec<Vec<f64>>,
    /// `‖∇_{wᵢ}f‖²_F + ‖∇_{bᵢ}f‖²_F`
    frob_sq: f64,
}

fn layer_geometry(net: &Network, x: &Vector) -> Result<(Vec<LayerGeometry>, Matrix), IgrError> {
    let trace = net.forward(x)?;
    let per_logit = net.per_logit_gradients(&trace)?;
    let d = net.input_dim();

    let mut geoms = Vec::with_capacity(net.num_layers());
    let mut jac_prev = Matrix::identity(d);
    for (i, layer) in net.layers().iter().enumerate() {
        let sigma_jac_prev = if i == 0 { 1.0 } else { jac_prev.spectral_norm_default()? };
        let sigma_w = layer.weights.spectral_norm_default()?;
        let h_prev_norm_sq = trace.hidden(i).norm_sq();

        let mut dw_rows = Vec::with_capacity(per_logit.len());
        let mut db_rows = Vec::with_capacity(per_logit.len());
        let mut frob_sq = 0.0;
        for g in &per_logit {
            let lg = g.layer(i);
            frob_sq += lg.dw.frobenius_norm_sq() + lg.db.norm_sq();
            dw_rows.push(lg.dw.as_slice().to_vec());
            db_rows.push(lg.db.as_slice().to_vec());
        }
        geoms.push(LayerGeometry { h_prev_norm_sq, sigma_w, sigma_jac_prev, dw_rows, db_rows, frob_sq });

        // Advance the partial Jacobian: ∇_x h_i = diag(a'(z_i)) · W_i · ∇_x h_{i-1}.
        let mut next = layer.weights.matmul(&jac_prev);
        for r in 0..next.rows() {
            let dz = layer.activation.derivative(trace.pre_activation(i)[r]);
            for v in next.row_mut(r) {
                *v *= dz;
            }
        }
        jac_prev = next;
    }
    Ok((geoms, jac_prev))
}

/// Evaluates the per-layer transfer functions
/// `T_i = (1/√min(d,k)) · √(1+‖h_{i−1}‖²) / (σmax(w_i)·σmax(∇_x h_{i−1}))`
/// and the inequality bound at one input point.
pub fn transfer_report(net: &Network, x: &Vector) -> Result<TransferReport, IgrError> {
    let (geoms, jac_full) = layer_geometry(net, x)?;
    let gc_point = jac_full.frobenius_norm_sq();
    let min_dk = net.input_dim().min(net.output_dim()) as f64;

    let mut per_layer = Vec::with_capacity(geoms.len());
    let mut skipped = Vec::new();
    let mut t_sq_sum = 0.0;
    let mut param_grad_sq = 0.0;
    for (i, g) in geoms.iter().enumerate() {
        param_grad_sq += g.frob_sq;
        if g.sigma_w < DEGENERATE_SIGMA || g.sigma_jac_prev < DEGENERATE_SIGMA {
            per_layer.push(None);
            skipped.push(i);
            continue;
        }
        let t = (1.0 / min_dk.sqrt()) * (1.0 + g.h_prev_norm_sq).sqrt()
            / (g.sigma_w * g.sigma_jac_prev);
        t_sq_sum += t * t;
        per_layer.push(Some(t));
    }

    if t_sq_sum == 0.0 {
        if gc_point > DEGENERATE_SIGMA {
            return Err(IgrError::BoundViolation { gc_point });
        }
        return Ok(TransferReport {
            per_layer,
            gc_point,
            param_grad_sq,
            bound: f64::INFINITY,
            skipped_layers: skipped,
        });
    }
    Ok(TransferReport {
        per_layer,
        gc_point,
        param_grad_sq,
        bound: param_grad_sq / t_sq_sum,
        skipped_layers: skipped,
    })
}

/// Outcome of the per-layer operator-norm inequalities behind the transfer
/// bound: the weight form
/// `‖∇_x f‖²₂·(‖h_{i−1}‖/(‖w_i‖₂·‖∇_x h_{i−1}‖₂))² ≤ ‖∇_{wᵢ}f‖²₂`
/// and the bias form with numerator 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LemmaStatus {
    Holds,
    Violated,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct LemmaCheck {
    pub layer: usize,
    pub weight: LemmaStatus,
    pub bias: LemmaStatus,
}

impl LemmaCheck {
    pub fn holds(&self) -> bool {
        self.weight != LemmaStatus::Violated && self.bias != LemmaStatus::Violated
    }
}

const LEMMA_SLACK: f64 = 1e-9;

pub fn per_layer_lemma_check(net: &Network, x: &Vector) -> Result<Vec<LemmaCheck>, IgrError> {
    let (geoms, jac_full) = layer_geometry(net, x)?;
    let sigma_x_sq = {
        let s = jac_full.spectral_norm_default()?;
        s * s
    };
    let mut out = Vec::with_capacity(geoms.len());
    for (i, g) in geoms.iter().enumerate() {
        if g.sigma_w < DEGENERATE_SIGMA || g.sigma_jac_prev < DEGENERATE_SIGMA {
            out.push(LemmaCheck { layer: i, weight: LemmaStatus::Skipped, bias: LemmaStatus::Skipped });
            continue;
        }
        let denom_sq = (g.sigma_w * g.sigma_jac_prev).powi(2);
        let weight_lhs = sigma_x_sq * g.h_prev_norm_sq / denom_sq;
        let bias_lhs = sigma_x_sq / denom_sq;

        let weight_rhs = operator_norm_sq_of_rows(&g.dw_rows)?;
        let bias_rhs = operator_norm_sq_of_rows(&g.db_rows)?;

        let weight = if weight_lhs <= weight_rhs * (1.0 + LEMMA_SLACK) + LEMMA_SLACK {
            LemmaStatus::Holds
        } else {
            LemmaStatus::Violated
        };
        let bias = if bias_lhs <= bias_rhs * (1.0 + LEMMA_SLACK) + LEMMA_SLACK {
            LemmaStatus::Holds
        } else {
            LemmaStatus::Violated
        };
        out.push(LemmaCheck { layer: i, weight, bias });
    }
    Ok(out)
}

/// Squared operator norm of the `k × p` matrix whose rows are given.
fn operator_norm_sq_of_rows(rows: &[Vec<f64>]) -> Result<f64, SpectralNonConvergence> {
    let k = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    let mut m = Matrix::zeros(k, p);
    for (i, row) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(row);
    }
    let s = m.spectral_norm_default()?;
    Ok(s * s)
}
