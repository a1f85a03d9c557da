//! Dense MLP definition, forward evaluation with per-layer intermediates,
//! reverse-mode parameter gradients, and exact input-Jacobians.
//!
//! A [`Network`] is the *logit* function: a stack of dense layers whose final
//! activation is normally the identity. Response heads (softmax, identity)
//! live in [`crate::loss`], because the complexity measures are defined on
//! logits.

mod init;
mod io;

pub use init::{init_network, mlp_specs, InitScheme};
pub use io::ModelIoError;

use crate::linalg::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    #[error("network must contain at least one layer")]
    EmptyNetwork,
    #[error("layer {layer} does not chain: previous output dim {prev_out}, weight matrix expects {in_dim}")]
    BrokenChain { layer: usize, prev_out: usize, in_dim: usize },
    #[error("non-finite parameter in layer {layer}")]
    NonFiniteParam { layer: usize },
    #[error("activation pattern requested on smooth activation {0:?}")]
    SmoothPattern(Activation),
}

/// Elementwise activation applied after each affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at the pre-activation `z`. For relu this is the almost-
    /// everywhere derivative with the convention `relu'(0) = 0`, which keeps
    /// region grouping and reverse-mode gradients in exact agreement.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// True for activations that parameterize piecewise-linear functions.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::Relu | Activation::Identity)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// One dense layer: `h = a(W z + b)` with `W` of shape `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// A stack of dense layers; the logit function `f_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Validates that layer dimensions chain and all parameters are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::EmptyNetwork);
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(NetError::DimensionMismatch {
                    context: "layer bias",
                    expected: layer.out_dim(),
                    got: layer.bias.len(),
                });
            }
            if i > 0 {
                let prev_out = layers[i - 1].out_dim();
                if prev_out != layer.in_dim() {
                    return Err(NetError::BrokenChain { layer: i, prev_out, in_dim: layer.in_dim() });
                }
            }
            if !layer.weights.all_finite() || !layer.bias.all_finite() {
                return Err(NetError::NonFiniteParam { layer: i });
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec { in_dim: l.in_dim(), out_dim: l.out_dim(), activation: l.activation })
            .collect()
    }

    /// Total number of scalar parameters (weights and biases).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum()
    }

    /// Flat parameter access in layer order, weights row-major then bias.
    /// Shared with [`GradientBundle::param`] so finite-difference oracles can
    /// line up coordinates.
    pub fn param(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            let w = layer.weights.rows() * layer.weights.cols();
            if idx < w {
                return layer.weights.as_slice()[idx];
            }
            idx -= w;
            if idx < layer.bias.len() {
                return layer.bias[idx];
            }
            idx -= layer.bias.len();
        }
        panic!("param index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for layer in &mut self.layers {
            let w = layer.weights.rows() * layer.weights.cols();
            if idx < w {
                let cols = layer.weights.cols();
                layer.weights[(idx / cols, idx % cols)] = value;
                return;
            }
            idx -= w;
            if idx < layer.bias.len() {
                layer.bias[idx] = value;
                return;
            }
            idx -= layer.bias.len();
        }
        panic!("param index out of range");
    }

    pub fn params_all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.all_finite() && l.bias.all_finite())
    }

    pub fn param_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.frobenius_norm_sq() + l.bias.norm_sq())
            .sum()
    }

    /// `θ += scale · g`. The trainer passes `scale = -h`.
    pub fn apply_step(&mut self, g: &GradientBundle, scale: f64) {
        assert_eq!(self.layers.len(), g.layers.len(), "apply_step: layer count mismatch");
        for (layer, grad) in self.layers.iter_mut().zip(&g.layers) {
            layer.weights.axpy(scale, &grad.dw);
            layer.bias.add_scaled(&grad.db, scale);
        }
    }

    /// Forward pass recording every pre-activation and layer output.
    pub fn forward(&self, x: &Vector) -> Result<ForwardTrace, NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                context: "forward input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = layer.weights.matvec(&h);
            z.add_scaled(&layer.bias, 1.0);
            let out: Vector = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            activations.push(layer.activation);
            h = out.clone();
            post.push(out);
        }
        Ok(ForwardTrace { input: x.clone(), pre, post, activations })
    }

    /// Exact gradient of the scalar `⟨upstream, f_θ(x)⟩` with respect to
    /// every parameter, by one reverse pass.
    pub fn param_gradients(&self, x: &Vector, upstream: &Vector) -> Result<GradientBundle, NetError> {
        let trace = self.forward(x)?;
        self.param_gradients_from_trace(&trace, upstream)
    }

    pub fn param_gradients_from_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &Vector,
    ) -> Result<GradientBundle, NetError> {
        let deltas = self.backward_deltas(trace, upstream)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, delta) in deltas.iter().enumerate() {
            let h_prev = trace.hidden(i);
            grads.push(LayerGrad { dw: Matrix::outer(delta, h_prev), db: delta.clone() });
        }
        Ok(GradientBundle { layers: grads })
    }

    /// `acc += scale · ∇_θ⟨upstream, f_θ(x)⟩` without materializing a fresh
    /// bundle; the hot path for batch-gradient accumulation.
    pub fn accumulate_param_gradients(
        &self,
        trace: &ForwardTrace,
        upstream: &Vector,
        scale: f64,
        acc: &mut GradientBundle,
    ) -> Result<(), NetError> {
        let deltas = self.backward_deltas(trace, upstream)?;
        assert_eq!(acc.layers.len(), self.layers.len(), "accumulate: layer count mismatch");
        for (i, delta) in deltas.iter().enumerate() {
            let h_prev = trace.hidden(i);
            let grad = &mut acc.layers[i];
            for r in 0..delta.len() {
                let dr = scale * delta[r];
                if dr == 0.0 {
                    continue;
                }
                for (g, h) in grad.dw.row_mut(r).iter_mut().zip(h_prev.as_slice()) {
                    *g += dr * h;
                }
                grad.db[r] += dr;
            }
        }
        Ok(())
    }

    /// Gradient of `⟨upstream, f_θ(x)⟩` with respect to the input `x`.
    pub fn input_gradient_from_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &Vector,
    ) -> Result<Vector, NetError> {
        let deltas = self.backward_deltas(trace, upstream)?;
        Ok(self.layers[0].weights.matvec_transpose(&deltas[0]))
    }

    /// Exact Jacobian `∇_x f_θ(x)` of shape `k × d`, assembled from `k`
    /// reverse passes (one per output coordinate).
    pub fn input_jacobian(&self, x: &Vector) -> Result<Matrix, NetError> {
        let trace = self.forward(x)?;
        self.input_jacobian_from_trace(&trace)
    }

    pub fn input_jacobian_from_trace(&self, trace: &ForwardTrace) -> Result<Matrix, NetError> {
        let k = self.output_dim();
        let d = self.input_dim();
        let mut jac = Matrix::zeros(k, d);
        let mut upstream = Vector::zeros(k);
        for i in 0..k {
            upstream[i] = 1.0;
            let row = self.input_gradient_from_trace(trace, &upstream)?;
            jac.row_mut(i).copy_from_slice(row.as_slice());
            upstream[i] = 0.0;
        }
        Ok(jac)
    }

    /// One gradient bundle per output coordinate, from a single trace.
    pub fn per_logit_gradients(&self, trace: &ForwardTrace) -> Result<Vec<GradientBundle>, NetError> {
        let k = self.output_dim();
        let mut out = Vec::with_capacity(k);
        let mut upstream = Vector::zeros(k);
        for i in 0..k {
            upstream[i] = 1.0;
            out.push(self.param_gradients_from_trace(trace, &upstream)?);
            upstream[i] = 0.0;
        }
        Ok(out)
    }

    /// `∂⟨upstream, f⟩/∂z_i` for every layer, back to front.
    fn backward_deltas(&self, trace: &ForwardTrace, upstream: &Vector) -> Result<Vec<Vector>, NetError> {
        let l = self.layers.len();
        if upstream.len() != self.output_dim() {
            return Err(NetError::DimensionMismatch {
                context: "upstream vector",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if trace.pre.len() != l {
            return Err(NetError::DimensionMismatch {
                context: "trace layers",
                expected: l,
                got: trace.pre.len(),
            });
        }
        let mut deltas = vec![Vector::zeros(0); l];
        let mut delta: Vector = trace.pre[l - 1]
            .iter()
            .zip(upstream.iter())
            .map(|(&z, &u)| u * self.layers[l - 1].activation.derivative(z))
            .collect();
        deltas[l - 1] = delta.clone();
        for i in (0..l - 1).rev() {
            let back = self.layers[i + 1].weights.matvec_transpose(&delta);
            delta = trace.pre[i]
                .iter()
                .zip(back.iter())
                .map(|(&z, &b)| b * self.layers[i].activation.derivative(z))
                .collect();
            deltas[i] = delta.clone();
        }
        Ok(deltas)
    }
}

/// Per-layer intermediates of one forward pass: pre-activations `z_i` and
/// layer outputs `h_i(x)`, with `h_0 = x`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vector,
    pre: Vec<Vector>,
    post: Vec<Vector>,
    activations: Vec<Activation>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Vector {
        &self.input
    }

    /// `h_i(x)`; `hidden(0)` is the input itself.
    pub fn hidden(&self, i: usize) -> &Vector {
        if i == 0 {
            &self.input
        } else {
            &self.post[i - 1]
        }
    }

    pub fn pre_activation(&self, layer: usize) -> &Vector {
        &self.pre[layer]
    }

    pub fn output(&self) -> &Vector {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }

    /// On/off bitmask of every relu unit, identifying the linear region the
    /// input falls in: one bit per relu unit, `1` iff the pre-activation is
    /// strictly positive. Identity layers contribute no bits; smooth
    /// activations are an error.
    pub fn activation_pattern(&self) -> Result<ActivationPattern, NetError> {
        let mut bits = Vec::new();
        for (z, act) in self.pre.iter().zip(&self.activations) {
            match act {
                Activation::Relu => bits.extend(z.iter().map(|&v| v > 0.0)),
                Activation::Identity => {}
                other => return Err(NetError::SmoothPattern(*other)),
            }
        }
        Ok(ActivationPattern { bits })
    }
}

/// On/off bitmask of relu units; hashable so datasets can be grouped by
/// linear region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    bits: Vec<bool>,
}

impl ActivationPattern {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Per-layer parameter gradients, shape-mirroring a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub dw: Matrix,
    pub db: Vector,
}

impl GradientBundle {
    pub fn zeros_like(net: &Network) -> Self {
        GradientBundle {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    dw: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    db: Vector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerGrad {
        &self.layers[i]
    }

    pub fn from_layers(layers: Vec<LayerGrad>) -> Self {
        GradientBundle { layers }
    }

    /// `self += c · other`
    pub fn add_scaled(&mut self, other: &GradientBundle, c: f64) {
        assert_eq!(self.layers.len(), other.layers.len(), "add_scaled: layer count mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.dw.axpy(c, &b.dw);
            a.db.add_scaled(&b.db, c);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.dw.scale(c);
            l.db.scale(c);
        }
    }

    /// Frobenius inner product over all parameters.
    pub fn dot(&self, other: &GradientBundle) -> f64 {
        assert_eq!(self.layers.len(), other.layers.len(), "dot: layer count mismatch");
        let mut acc = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            acc += a
                .dw
                .as_slice()
                .iter()
                .zip(b.dw.as_slice())
                .map(|(x, y)| x * y)
                .sum::<f64>();
            acc += a.db.dot(&b.db);
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.dw.frobenius_norm_sq() + l.db.norm_sq())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.dw.all_finite() && l.db.all_finite())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.dw.rows() * l.dw.cols() + l.db.len())
            .sum()
    }

    /// Flat access in the same coordinate order as [`Network::param`].
    pub fn param(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            let w = layer.dw.rows() * layer.dw.cols();
            if idx < w {
                return layer.dw.as_slice()[idx];
            }
            idx -= w;
            if idx < layer.db.len() {
                return layer.db[idx];
            }
            idx -= layer.db.len();
        }
        panic!("param index out of range");
    }
}
