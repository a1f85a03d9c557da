//! Deterministic SGD trainer with penalty composition, metric schedule, and
//! sweep execution.
//!
//! One trainer mutates one network. Given a config and seed, every emitted
//! number is reproducible: the evaluation subset, batch order, and any
//! penalty state all derive from the trial seed. Sweep trials run in
//! parallel with independent seed streams (`base_seed + trial_index`,
//! derived by the recipe that builds the sweep) and results keep trial
//! order regardless of completion order.

use crate::complexity::{geometric_complexity, lipschitz_gc_bound_lenient, ComplexityError};
use crate::data::{BatchIterator, DataError, Dataset, DatasetSpec};
use crate::igr::{igr_decomposition, IgrError};

use crate::loss::{accumulate_loss_gradient, loss_value, LossError, LossKind, Target};
use crate::net::{init_network, GradientBundle, InitScheme, LayerSpec, NetError, Network};
use crate::regularize::{Penalty, PenaltyKind, RegError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: non-finite loss, gradient, or parameter")]
    Diverged { step: usize },
    #[error("unsupported optimizer '{0}': only \"sgd\" is accepted")]
    UnsupportedOptimizer(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Penalty(#[from] RegError),
    #[error(transparent)]
    Igr(#[from] IgrError),
}

/// Full training configuration. `h` is the learning rate of the discrete
/// update `θ' = θ − h∇L_B`; together with the batch size it sets the
/// implicit regularization strength `h/B`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub loss: LossKind,
    pub penalties: Vec<(PenaltyKind, f64)>,
    pub seed: u64,
    pub eval_every: usize,
    /// Extra steps to record beyond the `eval_every` grid (snapshots).
    #[serde(default)]
    pub extra_eval_steps: Vec<usize>,
    /// Steps at which to keep a copy of the network.
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
    /// Only "sgd" is accepted; the field exists so config files stay
    /// forward-compatible.
    pub optimizer: String,
    /// Complexity metrics are computed on a fixed subset of the training set
    /// of at most this size, sampled once per trial.
    pub gc_eval_points: usize,
    /// Gradient-norm and alignment diagnostics use the first
    /// `alignment_points` points of the evaluation subset; 0 disables them.
    pub alignment_points: usize,
    pub record_lipschitz: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 64,
            steps: 1000,
            loss: LossKind::SoftmaxCe,
            penalties: Vec::new(),
            seed: 0,
            eval_every: 100,
            extra_eval_steps: Vec::new(),
            snapshot_steps: Vec::new(),
            optimizer: "sgd".to_string(),
            gc_eval_points: 1000,
            alignment_points: 16,
            record_lipschitz: true,
        }
    }
}

/// One row of the metric time series. Empty (`None`) cells mark metrics that
/// do not apply to the run.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub gc: f64,
    pub grad_norm_sq: Option<f64>,
    pub lipschitz_bound: Option<f64>,
    pub a_b: Option<f64>,
    pub c_b: Option<f64>,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        use crate::csvio::{fmt_opt, fmt_sig};
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            fmt_sig(self.train_loss),
            fmt_opt(self.test_loss),
            fmt_opt(self.test_accuracy),
            fmt_sig(self.gc),
            fmt_opt(self.grad_norm_sq),
            fmt_opt(self.lipschitz_bound),
            fmt_opt(self.a_b),
            fmt_opt(self.c_b),
        )
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub rows: Vec<MetricRow>,
    pub net: Network,
    pub config: TrainConfig,
    pub snapshots: Vec<(usize, Network)>,
}

/// One SGD step over the given batch indices:
/// `θ ← θ − h·(∇_θ L_B + Σ λ_j ∇penalty_j)`.
pub fn sgd_step(
    net: &mut Network,
    kind: LossKind,
    ds: &Dataset,
    batch_indices: &[usize],
    h: f64,
    penalties: &mut [Penalty],
) -> Result<(), TrainError> {
    let b = batch_indices.len();
    if b == 0 {
        return Err(TrainError::BadConfig("empty batch".into()));
    }
    let mut grad = GradientBundle::zeros_like(net);
    for &i in batch_indices {
        accumulate_loss_gradient(kind, net, &ds.point(i), ds.target(i), 1.0 / b as f64, &mut grad)?;
    }
    if !penalties.is_empty() {
        let batch = ds.subset(batch_indices)?;
        for penalty in penalties.iter_mut() {
            if penalty.rate == 0.0 {
                continue;
            }
            let (_, pg) = penalty.evaluate(net, kind, &batch)?;
            grad.add_scaled(&pg, penalty.rate);
        }
    }
    if !grad.all_finite() {
        return Err(TrainError::Diverged { step: 0 });
    }
    net.apply_step(&grad, -h);
    if !net.params_all_finite() {
        return Err(TrainError::Diverged { step: 0 });
    }
    Ok(())
}

fn mean_loss(net: &Network, kind: LossKind, ds: &Dataset) -> Result<f64, TrainError> {
    let mut acc = 0.0;
    for i in 0..ds.len() {
        let out = net.forward(&ds.point(i))?;
        acc += loss_value(kind, out.output(), ds.target(i))?;
    }
    Ok(acc / ds.len() as f64)
}

/// Fraction of points whose argmax logit matches the class label. Ties go to
/// the lowest index, deterministically.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<Option<f64>, TrainError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..ds.len() {
        let Target::Class(label) = ds.target(i) else {
            return Ok(None);
        };
        let out = net.forward(&ds.point(i))?;
        let logits = out.output();
        let mut best = 0;
        for j in 1..logits.len() {
            if logits[j] > logits[best] {
                best = j;
            }
        }
        if best == *label {
            correct += 1;
        }
        total += 1;
    }
    Ok(Some(correct as f64 / total as f64))
}

struct Evaluator<'a> {
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    gc_subset: Dataset,
    alignment_subset: Option<Dataset>,
    config: &'a TrainConfig,
}

impl<'a> Evaluator<'a> {
    fn new(
        train: &'a Dataset,
        test: Option<&'a Dataset>,
        config: &'a TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        let n = train.len();
        let take = config.gc_eval_points.min(n).max(1);
        let indices = if take == n {
            (0..n).collect::<Vec<_>>()
        } else {
            let mut idx = rand::seq::index::sample(rng, n, take).into_vec();
            idx.sort_unstable();
            idx
        };
        let gc_subset = train.subset(&indices)?;
        let alignment_subset = if config.alignment_points > 0 {
            let take = config.alignment_points.min(gc_subset.len());
            Some(gc_subset.subset(&(0..take).collect::<Vec<_>>())?)
        } else {
            None
        };
        Ok(Evaluator { train, test, gc_subset, alignment_subset, config })
    }

    fn row(&self, net: &Network, step: usize) -> Result<MetricRow, TrainError> {
        let train_loss = mean_loss(net, self.config.loss, self.train)?;
        let (test_loss, test_accuracy) = match self.test {
            Some(test) => (
                Some(mean_loss(net, self.config.loss, test)?),
                accuracy(net, test)?,
            ),
            None => (None, None),
        };
        let gc = geometric_complexity(net, &self.gc_subset)?;
        let lipschitz_bound = if self.config.record_lipschitz {
            Some(lipschitz_gc_bound_lenient(net))
        } else {
            None
        };
        let (grad_norm_sq, a_b, c_b) = match &self.alignment_subset {
            Some(batch) => {
                let report = igr_decomposition(net, self.config.loss, batch)?;
                (Some(report.grad_norm_sq), Some(report.label_alignment), Some(report.batch_alignment))
            }
            None => (None, None, None),
        };
        if !train_loss.is_finite() || !gc.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        Ok(MetricRow {
            step,
            train_loss,
            test_loss,
            test_accuracy,
            gc,
            grad_norm_sq,
            lipschitz_bound,
            a_b,
            c_b,
        })
    }
}

/// Runs the training loop. Metrics are recorded at step 0, every
/// `eval_every` steps, at every step in `extra_eval_steps`, and at the final
/// step. Divergence (any non-finite loss, gradient, or parameter) halts the
/// run and is reported with its step index.
pub fn train(
    config: &TrainConfig,
    mut net: Network,
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
) -> Result<TrialResult, TrainError> {
    if config.optimizer != "sgd" {
        return Err(TrainError::UnsupportedOptimizer(config.optimizer.clone()));
    }
    if config.learning_rate <= 0.0 {
        return Err(TrainError::BadConfig("learning rate must be positive".into()));
    }
    if config.batch_size == 0 {
        return Err(TrainError::BadConfig("batch size must be >= 1".into()));
    }
    if config.eval_every == 0 {
        return Err(TrainError::BadConfig("eval_every must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eval_seed: u64 = rng.random();
    let batch_seed: u64 = rng.random();
    let mut eval_rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let evaluator = Evaluator::new(train_ds, test_ds, config, &mut eval_rng)?;

    let mut penalties: Vec<Penalty> =
        config.penalties.iter().map(|&(kind, rate)| Penalty::new(kind, rate)).collect();
    let mut batches = BatchIterator::new(train_ds.len(), config.batch_size, batch_seed, false)?;

    let record_due = |step: usize| -> bool {
        step == 0
            || step == config.steps
            || step.is_multiple_of(config.eval_every)
            || config.extra_eval_steps.contains(&step)
    };
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    rows.push(evaluator.row(&net, 0)?);
    if config.snapshot_steps.contains(&0) {
        snapshots.push((0, net.clone()));
    }

    for step in 1..=config.steps {
        let batch = batches.next_batch();
        sgd_step(&mut net, config.loss, train_ds, &batch, config.learning_rate, &mut penalties)
            .map_err(|e| match e {
                TrainError::Diverged { .. } => TrainError::Diverged { step },
                other => other,
            })?;
        if record_due(step) {
            rows.push(evaluator.row(&net, step)?);
        }
        if config.snapshot_steps.contains(&step) {
            snapshots.push((step, net.clone()));
        }
    }
    if config.snapshot_steps.iter().any(|&s| s >= config.steps)
        && !snapshots.iter().any(|(s, _)| *s == config.steps)
    {
        snapshots.push((config.steps, net.clone()));
    }

    Ok(TrialResult { rows, net, config: config.clone(), snapshots })
}

/// One cell of a sweep: everything needed to reproduce the trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSpec {
    /// `(axis, value)` tags identifying the cell, echoed into summaries.
    pub tags: Vec<(String, String)>,
    pub layers: Vec<LayerSpec>,
    pub init: InitScheme,
    pub data: DatasetSpec,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    pub trials: Vec<TrialSpec>,
}

/// Outcome of one sweep trial; divergence is recorded, not fatal.
pub struct SweepTrialOutcome {
    pub spec: TrialSpec,
    pub result: Result<TrialResult, TrainError>,
}

/// Executes every trial. Trials are independent and run in parallel; the
/// returned list is ordered by trial index.
pub fn run_sweep(spec: &SweepSpec) -> Vec<SweepTrialOutcome> {
    spec.trials
        .par_iter()
        .map(|trial| {
            let result = run_trial(trial);
            SweepTrialOutcome { spec: trial.clone(), result }
        })
        .collect()
}

pub fn run_trial(trial: &TrialSpec) -> Result<TrialResult, TrainError> {
    let (train_ds, test_ds) = trial.data.build()?;
    let net = init_network(&trial.layers, trial.init, trial.config.seed);
    train(&trial.config, net, &train_ds, test_ds.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, make_parabola};
    use crate::linalg::{Matrix, Vector};
    use crate::net::{mlp_specs, Activation, Layer};
    use approx::assert_abs_diff_eq;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 4,
            steps: 20,
            loss: LossKind::SoftmaxCe,
            eval_every: 10,
            gc_eval_points: 16,
            alignment_points: 4,
            seed: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_batch_leaves_parameters_unchanged() {
        // Perfect-fit mse batch: gradient is exactly zero.
        let net = Network::from_layers(vec![Layer {
            weights: Matrix::from_rows(&[vec![2.0]]),
            bias: Vector::zeros(1),
            activation: Activation::Identity,
        }])
        .unwrap();
        let features = Matrix::from_rows(&[vec![1.0], vec![-3.0]]);
        let targets = vec![
            Target::Regression(Vector::from_vec(vec![2.0])),
            Target::Regression(Vector::from_vec(vec![-6.0])),
        ];
        let ds = Dataset::new(features, targets, "fit").unwrap();
        let mut trained = net.clone();
        sgd_step(&mut trained, LossKind::Mse, &ds, &[0, 1], 0.1, &mut []).unwrap();
        assert_eq!(trained, net);
    }

    #[test]
    fn single_example_linear_mse_step_is_closed_form() {
        // f(x) = wx, loss ½(wx−y)²: one step gives w − h·ε·x.
        let w0 = 1.5;
        let x = 2.0;
        let y = 1.0;
        let h = 0.05;
        let net = Network::from_layers(vec![Layer {
            weights: Matrix::from_rows(&[vec![w0]]),
            bias: Vector::zeros(1),
            activation: Activation::Identity,
        }])
        .unwrap();
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![x]]),
            vec![Target::Regression(Vector::from_vec(vec![y]))],
            "one",
        )
        .unwrap();
        let mut trained = net;
        sgd_step(&mut trained, LossKind::Mse, &ds, &[0], h, &mut []).unwrap();
        let eps = w0 * x - y;
        // bias also moves by -h·ε
        assert_abs_diff_eq!(trained.layer(0).weights[(0, 0)], w0 - h * eps * x, epsilon = 1e-15);
        assert_abs_diff_eq!(trained.layer(0).bias[0], -h * eps, epsilon = 1e-15);
    }

    #[test]
    fn pure_weight_decay_with_zero_data_gradient() {
        // Perfect fit + l2 penalty: θ_W ← θ_W(1 − 2hλ), biases untouched.
        let w0 = 2.0;
        let net = Network::from_layers(vec![Layer {
            weights: Matrix::from_rows(&[vec![w0]]),
            bias: Vector::zeros(1),
            activation: Activation::Identity,
        }])
        .unwrap();
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![1.0]]),
            vec![Target::Regression(Vector::from_vec(vec![w0]))],
            "fit",
        )
        .unwrap();
        let h = 0.1;
        let lambda = 0.01;
        let mut penalties = vec![Penalty::new(PenaltyKind::L2, lambda)];
        let mut trained = net;
        sgd_step(&mut trained, LossKind::Mse, &ds, &[0], h, &mut penalties).unwrap();
        assert_abs_diff_eq!(
            trained.layer(0).weights[(0, 0)],
            w0 * (1.0 - 2.0 * h * lambda),
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_steps_yields_only_step_zero_row() {
        let ds = make_blobs(32, 2, 2, 4.0, 3).unwrap();
        let config = TrainConfig { steps: 0, ..tiny_config() };
        let net = init_network(&mlp_specs(&[2, 8, 2], Activation::Relu), InitScheme::Standard, 5);
        let result = train(&config, net, &ds, None).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.rows[0].step, 0);
    }

    #[test]
    fn same_config_same_seed_identical_series() {
        let ds = make_blobs(64, 2, 2, 4.0, 3).unwrap();
        let config = tiny_config();
        let run = |seed: u64| {
            let mut c = config.clone();
            c.seed = seed;
            let net = init_network(&mlp_specs(&[2, 8, 2], Activation::Relu), InitScheme::Standard, seed);
            train(&c, net, &ds, Some(&ds)).unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.to_csv(), rb.to_csv());
        }
        let c = run(8);
        assert_ne!(a.rows.last().unwrap().to_csv(), c.rows.last().unwrap().to_csv());
    }

    #[test]
    fn gc_at_step_zero_matches_fresh_network() {
        let ds = make_blobs(40, 2, 2, 4.0, 9).unwrap();
        let config = TrainConfig { gc_eval_points: 1000, ..tiny_config() };
        let net = init_network(&mlp_specs(&[2, 6, 2], Activation::Relu), InitScheme::Standard, 11);
        let fresh_gc = geometric_complexity(&net, &ds).unwrap();
        let result = train(&config, net, &ds, None).unwrap();
        // gc_eval_points >= |train| means the subset is the whole set, in order
        assert_eq!(result.rows[0].gc, fresh_gc);
    }

    #[test]
    fn full_batch_loss_nonincreasing_on_parabola() {
        let ds = make_parabola(10).unwrap();
        let config = TrainConfig {
            learning_rate: 0.001,
            batch_size: 10,
            steps: 1000,
            loss: LossKind::Mse,
            eval_every: 100,
            gc_eval_points: 10,
            alignment_points: 4,
            seed: 0,
            ..TrainConfig::default()
        };
        let net = init_network(&mlp_specs(&[1, 32, 1], Activation::Relu), InitScheme::Standard, 0);
        let result = train(&config, net, &ds, None).unwrap();
        for pair in result.rows.windows(2) {
            assert!(
                pair[1].train_loss <= pair[0].train_loss + 1e-12,
                "loss rose from {} to {} at step {}",
                pair[0].train_loss,
                pair[1].train_loss,
                pair[1].step
            );
        }
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let ds = make_parabola(10).unwrap();
        let config = TrainConfig {
            learning_rate: 1e6,
            batch_size: 10,
            steps: 200,
            loss: LossKind::Mse,
            eval_every: 50,
            gc_eval_points: 10,
            alignment_points: 0,
            seed: 0,
            ..TrainConfig::default()
        };
        let net = init_network(&mlp_specs(&[1, 16, 1], Activation::Relu), InitScheme::Standard, 1);
        match train(&config, net, &ds, None) {
            Err(TrainError::Diverged { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn non_sgd_optimizer_rejected() {
        let ds = make_parabola(4).unwrap();
        let config = TrainConfig { optimizer: "adam".into(), ..tiny_config() };
        let net = init_network(&mlp_specs(&[1, 4, 1], Activation::Relu), InitScheme::Standard, 0);
        assert!(matches!(
            train(&config, net, &ds, None),
            Err(TrainError::UnsupportedOptimizer(_))
        ));
    }

    #[test]
    fn sweep_runs_cartesian_trials_in_order() {
        let mut trials = Vec::new();
        let base_seed = 100;
        for (i, rate) in [0.0, 0.01].iter().enumerate() {
            for s in 0..3u64 {
                let trial_index = i as u64 * 3 + s;
                trials.push(TrialSpec {
                    tags: vec![("l2".into(), format!("{rate}")), ("seed".into(), format!("{s}"))],
                    layers: mlp_specs(&[2, 6, 2], Activation::Relu),
                    init: InitScheme::Standard,
                    data: DatasetSpec::Blobs {
                        n: 32,
                        d: 2,
                        k: 2,
                        separation: 4.0,
                        seed: 3,
                        label_noise: 0.0,
                        noise_seed: 0,
                        test_n: 0,
                        test_seed: 0,
                    },
                    config: TrainConfig {
                        penalties: vec![(PenaltyKind::L2, *rate)],
                        seed: base_seed + trial_index,
                        steps: 10,
                        ..tiny_config()
                    },
                });
            }
        }
        let spec = SweepSpec { name: "t".into(), trials: trials.clone() };
        let outcomes = run_sweep(&spec);
        assert_eq!(outcomes.len(), 6);
        for (outcome, trial) in outcomes.iter().zip(&trials) {
            assert_eq!(outcome.spec.tags, trial.tags);
            assert!(outcome.result.is_ok());
        }
        // trial seeds derive from base + index
        for (i, outcome) in outcomes.iter().enumerate() {
            assert_eq!(outcome.spec.config.seed, base_seed + i as u64);
        }
        // rerun reproduces results regardless of scheduling
        let again = run_sweep(&spec);
        for (a, b) in outcomes.iter().zip(&again) {
            let ra = a.result.as_ref().unwrap();
            let rb = b.result.as_ref().unwrap();
            assert_eq!(ra.rows.last().unwrap().to_csv(), rb.rows.last().unwrap().to_csv());
        }
    }

    #[test]
    fn snapshots_recorded_at_requested_steps() {
        let ds = make_parabola(10).unwrap();
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 10,
            steps: 30,
            loss: LossKind::Mse,
            eval_every: 10,
            snapshot_steps: vec![0, 5, 30],
            gc_eval_points: 10,
            alignment_points: 0,
            seed: 2,
            ..TrainConfig::default()
        };
        let net = init_network(&mlp_specs(&[1, 8, 1], Activation::Relu), InitScheme::Standard, 2);
        let result = train(&config, net, &ds, None).unwrap();
        let steps: Vec<usize> = result.snapshots.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, vec![0, 5, 30]);
    }
}
