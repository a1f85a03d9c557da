//! Randomized identity and inequality suites, plus the finite-difference
//! oracles they rely on. The `gcx check` command runs every suite and the
//! acceptance tests assert them individually.
//!
//! The finite-difference oracles evaluate the objective directly through
//! forward passes and flat parameter access; they share no code with the
//! reverse-mode path they validate.

use crate::complexity::{geometric_complexity, lipschitz_gc_bound, relu_region_gc};
use crate::data::{make_blobs, make_hypercube_uniform, Dataset};
use crate::igr::{igr_decomposition, per_layer_lemma_check, transfer_report};
use crate::linalg::{Matrix, Vector};
use crate::loss::{
    loss_input_gradient, loss_param_gradient, loss_value, residual, LossKind, Target,
};
use crate::net::{mlp_specs, Activation, GradientBundle, Layer, Network};
use crate::regularize::{
    flatness_penalty, gc_penalty, gc_penalty_fd_check_coord, l2_penalty, spectral_penalty,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one named suite.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &str, detail: String) -> Self {
        CheckResult { name: name.into(), passed: true, detail }
    }

    fn fail(name: &str, detail: String) -> Self {
        CheckResult { name: name.into(), passed: false, detail }
    }
}

#[derive(Debug, Clone)]
pub struct CheckConfig {
    /// Number of randomized instances for the transfer-bound suite.
    pub trials: usize,
    pub seed: u64,
    /// Deliberately perturbs the decomposition identity so the failure path
    /// is exercisable end to end.
    pub inject_fault: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { trials: 100, seed: 0, inject_fault: false }
    }
}

/// Builds a network with uniform random weights in `[-scale, scale]` and an
/// identity output layer.
pub fn random_net(rng: &mut ChaCha8Rng, dims: &[usize], hidden: Activation, scale: f64) -> Network {
    let specs = mlp_specs(dims, hidden);
    let layers = specs
        .iter()
        .map(|s| Layer {
            weights: Matrix::from_fn(s.out_dim, s.in_dim, |_, _| rng.random_range(-scale..scale)),
            bias: Vector::from_vec((0..s.out_dim).map(|_| rng.random_range(-scale / 2.0..scale / 2.0)).collect()),
            activation: s.activation,
        })
        .collect();
    Network::from_layers(layers).expect("random specs are valid")
}

/// Central finite-difference gradient of `f` over the flat parameter vector,
/// with per-coordinate step `rel_step·(1+|θ_j|)`.
pub fn fd_param_gradient(
    net: &Network,
    rel_step: f64,
    mut f: impl FnMut(&Network) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(net.param_count());
    for idx in 0..net.param_count() {
        let theta = net.param(idx);
        let eps = rel_step * (1.0 + theta.abs());
        let mut plus = net.clone();
        plus.set_param(idx, theta + eps);
        let mut minus = net.clone();
        minus.set_param(idx, theta - eps);
        out.push((f(&plus) - f(&minus)) / (2.0 * eps));
    }
    out
}

/// Central finite-difference gradient of `f` over the input coordinates.
pub fn fd_input_gradient(x: &Vector, rel_step: f64, mut f: impl FnMut(&Vector) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let eps = rel_step * (1.0 + x[j].abs());
        let mut xp = x.clone();
        xp[j] += eps;
        let mut xm = x.clone();
        xm[j] -= eps;
        out.push((f(&xp) - f(&xm)) / (2.0 * eps));
    }
    out
}

fn max_rel_err(got: impl Iterator<Item = f64>, want: &[f64], floor: f64) -> f64 {
    got.zip(want)
        .map(|(g, &w)| (g - w).abs() / w.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Linear networks: geometric complexity equals the squared Frobenius norm
/// of the slope, independent of the dataset.
pub fn check_linear_gc(seed: u64, cases: usize) -> CheckResult {
    let name = "linear_gc_exactness";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=8);
        let net = random_net(&mut rng, &[d, k], Activation::Identity, 1.0);
        let ds = make_hypercube_uniform(50, d, -2.0, 2.0, rng.random()).unwrap();
        let gc = geometric_complexity(&net, &ds).unwrap();
        let expect = net.layer(0).weights.frobenius_norm_sq();
        worst = worst.max((gc - expect).abs());
    }
    if worst < 1e-10 {
        CheckResult::pass(name, format!("{cases} affine nets, worst |gc − ‖A‖²_F| = {worst:.3e}"))
    } else {
        CheckResult::fail(name, format!("worst deviation {worst:.3e} exceeds 1e-10"))
    }
}

/// Region grouping reproduces the autodiff geometric complexity on relu nets.
pub fn check_region_equivalence(seed: u64, cases: usize) -> CheckResult {
    let name = "relu_region_equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for case in 0..cases {
        let net = random_net(&mut rng, &[2, 16, 16, 3], Activation::Relu, 0.9);
        let ds = make_hypercube_uniform(200, 2, -1.0, 1.0, rng.random()).unwrap();
        let direct = geometric_complexity(&net, &ds).unwrap();
        let report = relu_region_gc(&net, &ds).unwrap();
        let counts: usize = report.region_breakdown.as_ref().unwrap().iter().map(|r| r.count).sum();
        if counts != 200 {
            return CheckResult::fail(name, format!("case {case}: region counts sum to {counts}, not 200"));
        }
        worst = worst.max((report.gc - direct).abs() / direct.abs().max(1e-12));
    }
    if worst < 1e-9 {
        CheckResult::pass(name, format!("{cases} relu nets, worst relative gap {worst:.3e}"))
    } else {
        CheckResult::fail(name, format!("worst relative gap {worst:.3e} exceeds 1e-9"))
    }
}

/// Loss gradients (parameters and inputs) against finite differences.
pub fn check_loss_gradients_fd(seed: u64, cases_per_kind: usize) -> CheckResult {
    let name = "loss_gradient_fd";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for kind in [LossKind::Mse, LossKind::SoftmaxCe] {
        for _ in 0..cases_per_kind {
            let d = rng.random_range(2..5);
            let k = rng.random_range(2..5);
            let hidden = rng.random_range(3..7);
            let net = random_net(&mut rng, &[d, hidden, k], Activation::Tanh, 0.8);
            let x = Vector::from_vec((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let target = match kind {
                LossKind::Mse => Target::Regression(Vector::from_vec(
                    (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )),
                LossKind::SoftmaxCe => Target::Class(rng.random_range(0..k)),
            };
            let g = loss_param_gradient(kind, &net, &x, &target).unwrap();
            let fd = fd_param_gradient(&net, 1e-6, |n| {
                loss_value(kind, n.forward(&x).unwrap().output(), &target).unwrap()
            });
            worst = worst.max(max_rel_err(
                (0..g.param_count()).map(|i| g.param(i)),
                &fd,
                1e-5,
            ));

            let gx = loss_input_gradient(kind, &net, &x, &target).unwrap();
            let fdx = fd_input_gradient(&x, 1e-6, |p| {
                loss_value(kind, net.forward(p).unwrap().output(), &target).unwrap()
            });
            worst = worst.max(max_rel_err(gx.iter().cloned(), &fdx, 1e-5));
        }
    }
    if worst < 1e-5 {
        CheckResult::pass(name, format!("worst per-coordinate relative error {worst:.3e}"))
    } else {
        CheckResult::fail(name, format!("worst relative error {worst:.3e} exceeds 1e-5"))
    }
}

/// The residual-weighted assembly of per-logit gradients equals direct
/// backprop of the loss, to near machine precision.
pub fn check_gradient_structure(seed: u64, cases: usize) -> CheckResult {
    let name = "residual_weighted_gradient_structure";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for case in 0..cases {
        let kind = if case % 2 == 0 { LossKind::SoftmaxCe } else { LossKind::Mse };
        let d = rng.random_range(2..5);
        let k = rng.random_range(2..5);
        let net = random_net(&mut rng, &[d, 6, k], Activation::Relu, 0.8);
        let x = Vector::from_vec((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let target = match kind {
            LossKind::Mse => Target::Regression(Vector::from_vec(
                (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )),
            LossKind::SoftmaxCe => Target::Class(rng.random_range(0..k)),
        };
        let trace = net.forward(&x).unwrap();
        let eps = residual(kind, trace.output(), &target).unwrap();
        let direct = loss_param_gradient(kind, &net, &x, &target).unwrap();
        let per_logit = net.per_logit_gradients(&trace).unwrap();
        let mut assembled = GradientBundle::zeros_like(&net);
        for (i, g) in per_logit.iter().enumerate() {
            assembled.add_scaled(g, eps[i]);
        }
        for idx in 0..direct.param_count() {
            worst = worst.max((direct.param(idx) - assembled.param(idx)).abs());
        }
    }
    if worst < 1e-12 {
        CheckResult::pass(name, format!("{cases} cases, worst coordinate gap {worst:.3e}"))
    } else {
        CheckResult::fail(name, format!("worst coordinate gap {worst:.3e} exceeds 1e-12"))
    }
}

/// The modified-loss decomposition identity across batch sizes, output dims
/// and loss kinds.
pub fn check_igr_identity(seed: u64, cases: usize, inject_fault: bool) -> CheckResult {
    let name = "igr_decomposition_identity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let batch_sizes = [2usize, 8, 32];
    let ks = [1usize, 4];
    for case in 0..cases {
        let b = batch_sizes[case % batch_sizes.len()];
        let k = ks[(case / batch_sizes.len()) % ks.len()];
        let kind = if case % 2 == 0 { LossKind::SoftmaxCe } else { LossKind::Mse };
        // CE is only defined for k >= 2 logits.
        let k = if kind == LossKind::SoftmaxCe { k.max(2) } else { k };
        let d = rng.random_range(2..4);
        let net = random_net(&mut rng, &[d, 6, k], Activation::Tanh, 0.8);
        let ds = match kind {
            LossKind::SoftmaxCe => make_blobs(b.max(2), k.max(2), d, 2.0, rng.random()).unwrap(),
            LossKind::Mse => {
                let features = Matrix::from_fn(b, d, |_, _| rng.random_range(-1.0..1.0));
                let targets = (0..b)
                    .map(|_| {
                        Target::Regression(Vector::from_vec(
                            (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        ))
                    })
                    .collect();
                Dataset::new(features, targets, "mse-batch").unwrap()
            }
        };
        let report = igr_decomposition(&net, kind, &ds).unwrap();
        let mut residual_val = report.identity_residual;
        if inject_fault {
            residual_val += 1e-3;
        }
        worst = worst.max(residual_val / report.grad_norm_sq.max(1.0));
    }
    if worst < 1e-8 {
        CheckResult::pass(name, format!("{cases} batches, worst relative residual {worst:.3e}"))
    } else {
        CheckResult::fail(name, format!("worst relative residual {worst:.3e} exceeds 1e-8"))
    }
}

/// Transfer inequality and both per-layer lemmas on random nets, plus the
/// closed-form single-linear-layer fixture.
pub fn check_transfer_bound(seed: u64, trials: usize) -> CheckResult {
    let name = "transfer_bound";
    // Closed form: identity single layer at x = (1, 0).
    let fixture = Network::from_layers(vec![Layer {
        weights: Matrix::identity(2),
        bias: Vector::zeros(2),
        activation: Activation::Identity,
    }])
    .unwrap();
    let report = transfer_report(&fixture, &Vector::from_vec(vec![1.0, 0.0])).unwrap();
    let t1 = report.per_layer[0].unwrap_or(f64::NAN);
    if (report.gc_point - 2.0).abs() > 1e-10
        || (t1 * t1 - 1.0).abs() > 1e-10
        || (report.param_grad_sq - 4.0).abs() > 1e-10
        || (report.bound - 4.0).abs() > 1e-10
    {
        return CheckResult::fail(
            name,
            format!(
                "closed-form fixture mismatch: gc {} T1² {} param {} bound {}",
                report.gc_point,
                t1 * t1,
                report.param_grad_sq,
                report.bound
            ),
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_slack = 0.0_f64;
    for trial in 0..trials {
        let depth = 1 + trial % 4;
        let act = if trial % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let mut dims = vec![rng.random_range(1..5)];
        for _ in 0..depth {
            dims.push(rng.random_range(1..7));
        }
        let net = random_net(&mut rng, &dims, act, 0.9);
        let x = Vector::from_vec((0..dims[0]).map(|_| rng.random_range(-1.5..1.5)).collect());
        let report = transfer_report(&net, &x).unwrap();
        if report.bound.is_finite() {
            worst_slack = worst_slack.max((report.gc_point - report.bound) / report.bound.max(1e-12));
        }
        for check in per_layer_lemma_check(&net, &x).unwrap() {
            if !check.holds() {
                return CheckResult::fail(name, format!("trial {trial}: lemma violated at layer {}", check.layer));
            }
        }
    }
    if worst_slack <= 1e-9 {
        CheckResult::pass(name, format!("{trials} instances, worst inequality slack {worst_slack:.3e}"))
    } else {
        CheckResult::fail(name, format!("inequality violated with slack {worst_slack:.3e}"))
    }
}

/// Spectral Lipschitz bound dominates the geometric complexity on relu nets.
pub fn check_lipschitz_bound(seed: u64, cases: usize) -> CheckResult {
    let name = "lipschitz_gc_bound";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..cases {
        let d = rng.random_range(1..5);
        let k = rng.random_range(1..5);
        let hidden = rng.random_range(4..12);
        let net = random_net(&mut rng, &[d, hidden, hidden, k], Activation::Relu, 0.9);
        let ds = make_hypercube_uniform(50, d, -1.5, 1.5, rng.random()).unwrap();
        let gc = geometric_complexity(&net, &ds).unwrap();
        let bound = lipschitz_gc_bound(&net).unwrap();
        worst = worst.max(gc - bound * (1.0 + 1e-9));
    }
    if worst <= 0.0 {
        CheckResult::pass(name, format!("{cases} relu nets, max(gc − bound) = {worst:.3e}"))
    } else {
        CheckResult::fail(name, format!("bound violated by {worst:.3e}"))
    }
}

/// All four penalty gradients against their finite-difference oracles, at
/// the tolerances each approximation supports.
pub fn check_penalty_gradients(seed: u64) -> CheckResult {
    let name = "penalty_gradient_fd";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut details = Vec::new();

    // L2: per-coordinate at 1e-6.
    {
        let net = random_net(&mut rng, &[3, 5, 2], Activation::Relu, 0.8);
        let (_, g) = l2_penalty(&net);
        let fd = fd_param_gradient(&net, 1e-6, |n| l2_penalty(n).0);
        let err = max_rel_err((0..g.param_count()).map(|i| g.param(i)), &fd, 1e-6);
        if err >= 1e-6 {
            return CheckResult::fail(name, format!("l2 error {err:.3e} exceeds 1e-6"));
        }
        details.push(format!("l2 {err:.1e}"));
    }

    // Spectral: directional derivative at 1e-4.
    {
        let net = random_net(&mut rng, &[4, 5, 3], Activation::Relu, 0.8);
        let (_, g) = spectral_penalty(&net).unwrap();
        let dir_src = random_net(&mut rng, &[4, 5, 3], Activation::Relu, 0.8);
        let mut dir = l2_penalty(&dir_src).1;
        dir.scale(1.0 / dir.norm_sq().sqrt());
        let eps = 1e-6;
        let mut plus = net.clone();
        plus.apply_step(&dir, eps);
        let mut minus = net.clone();
        minus.apply_step(&dir, -eps);
        let fd = (spectral_penalty(&plus).unwrap().0 - spectral_penalty(&minus).unwrap().0) / (2.0 * eps);
        let err = (g.dot(&dir) - fd).abs() / fd.abs().max(1e-8);
        if err >= 1e-4 {
            return CheckResult::fail(name, format!("spectral directional error {err:.3e} exceeds 1e-4"));
        }
        details.push(format!("spectral {err:.1e}"));
    }

    // Flatness HVP: directional derivative at 1e-3 on a smooth net.
    {
        let net = random_net(&mut rng, &[2, 6, 2], Activation::Tanh, 0.8);
        let features = Matrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let targets = (0..5)
            .map(|_| Target::Regression(Vector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])))
            .collect();
        let batch = Dataset::new(features, targets, "flat").unwrap();
        let eval = flatness_penalty(&net, LossKind::Mse, &batch).unwrap();
        let mut dir = eval.grad.clone();
        dir.scale(1.0 / dir.norm_sq().sqrt());
        let eps = 1e-5;
        let mut plus = net.clone();
        plus.apply_step(&dir, eps);
        let mut minus = net.clone();
        minus.apply_step(&dir, -eps);
        let vp = flatness_penalty(&plus, LossKind::Mse, &batch).unwrap().value;
        let vm = flatness_penalty(&minus, LossKind::Mse, &batch).unwrap().value;
        let fd = (vp - vm) / (2.0 * eps);
        let err = (eval.grad.dot(&dir) - fd).abs() / fd.abs().max(1e-8);
        if err >= 1e-3 {
            return CheckResult::fail(name, format!("flatness directional error {err:.3e} exceeds 1e-3"));
        }
        details.push(format!("flatness {err:.1e}"));
    }

    // GC penalty: per-coordinate with the pattern-stability guard.
    {
        let net = random_net(&mut rng, &[2, 6, 6, 2], Activation::Relu, 0.8);
        let batch = make_hypercube_uniform(8, 2, -1.0, 1.0, rng.random()).unwrap();
        let (_, g) = gc_penalty(&net, &batch).unwrap();
        let mut worst = 0.0_f64;
        for idx in 0..net.param_count() {
            let fd = match gc_penalty_fd_check_coord(&net, &batch, idx, 1e-5, 3) {
                Ok(v) => v,
                Err(e) => return CheckResult::fail(name, format!("gc guard failed at coord {idx}: {e}")),
            };
            worst = worst.max((g.param(idx) - fd).abs() / fd.abs().max(1e-4));
        }
        if worst >= 1e-4 {
            return CheckResult::fail(name, format!("gc per-coordinate error {worst:.3e} exceeds 1e-4"));
        }
        details.push(format!("gc {worst:.1e}"));
    }

    CheckResult::pass(name, details.join(", "))
}

/// Runs every suite with per-suite seeds derived from the config seed.
pub fn run_all(config: &CheckConfig) -> Vec<CheckResult> {
    let s = config.seed;
    vec![
        check_linear_gc(s.wrapping_add(1), 20),
        check_region_equivalence(s.wrapping_add(2), 20),
        check_loss_gradients_fd(s.wrapping_add(3), 10),
        check_gradient_structure(s.wrapping_add(4), 20),
        check_igr_identity(s.wrapping_add(5), 50, config.inject_fault),
        check_transfer_bound(s.wrapping_add(6), config.trials),
        check_lipschitz_bound(s.wrapping_add(7), 50),
        check_penalty_gradients(s.wrapping_add(8)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_with_default_seeds() {
        let results = run_all(&CheckConfig { trials: 25, ..CheckConfig::default() });
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn injected_fault_fails_the_identity_suite() {
        let results = run_all(&CheckConfig { trials: 5, inject_fault: true, ..CheckConfig::default() });
        let identity = results.iter().find(|r| r.name == "igr_decomposition_identity").unwrap();
        assert!(!identity.passed);
    }

    #[test]
    fn fd_param_gradient_on_quadratic() {
        // f(θ) = Σ θ² has gradient 2θ
        let net = random_net(&mut ChaCha8Rng::seed_from_u64(0), &[2, 3, 1], Activation::Identity, 1.0);
        let fd = fd_param_gradient(&net, 1e-6, |n| {
            (0..n.param_count()).map(|i| n.param(i) * n.param(i)).sum()
        });
        for (idx, g) in fd.iter().enumerate() {
            let expect = 2.0 * net.param(idx);
            assert!((g - expect).abs() < 1e-7 * (1.0 + expect.abs()));
        }
    }
}
