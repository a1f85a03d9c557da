//! Named experiment recipes with desk-scale parameters and trend assertions.
//!
//! Each recipe binds a fixed configuration (network, data, optimizer
//! settings, seeds) to the CSV files it emits and, where meaningful, a trend
//! assertion over those files. Assertions are evaluated on the same summary
//! rows that get written, so they can be re-checked offline from the CSVs
//! alone. Desk-scale deltas from the full-scale setups (smaller nets,
//! synthetic data, fewer steps, fewer seeds) are listed per recipe in its
//! description.

use crate::complexity::{arc_length_1d, dirichlet_energy_1d, geometric_complexity, ComplexityError};
use crate::csvio::{fmt_opt, fmt_sig, write_csv, METRIC_HEADER};
use crate::data::{diagonal_probe_scaled, make_hypercube_uniform, DataError, DatasetSpec};
use crate::linalg::Vector;
use crate::loss::LossKind;
use crate::net::{init_network, mlp_specs, Activation, InitScheme, NetError};
use crate::regularize::PenaltyKind;
use crate::train::{run_sweep, run_trial, SweepSpec, TrainConfig, TrainError, TrialSpec};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("recipe error: {0}")]
    Recipe(String),
}

/// Direction a median trend must follow along a sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendDirection {
    Decreasing,
    Increasing,
}

/// Outcome of a recipe's trend assertion.
#[derive(Debug, Clone)]
pub struct TrendReport {
    pub passed: bool,
    pub detail: String,
}

/// A named, versioned experiment recipe.
pub struct Recipe {
    pub name: &'static str,
    pub description: &'static str,
    pub exploratory: bool,
    pub kind: RecipeKind,
}

pub enum RecipeKind {
    Parabola {
        trial: TrialSpec,
        trace_points: usize,
        /// Ceiling on the final mean squared error, `2×` the ½-mse loss.
        final_mse_max: f64,
        init_gc_max: f64,
    },
    InitDepth(InitDepthSpec),
    Sweep {
        sweep: SweepSpec,
        axis: &'static str,
        /// Axis values in grid order (tag strings).
        values: Vec<String>,
        trend: Option<TrendDirection>,
    },
}

/// Depth sweep of freshly initialized networks.
pub struct InitDepthSpec {
    pub depths: Vec<usize>,
    pub width: usize,
    pub d: usize,
    pub k: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub data_seed: u64,
    pub n_points: usize,
    pub probe_points: usize,
    pub large_half_width: f64,
    /// Schemes whose relu depth trend must be strictly decreasing.
    pub assert_schemes: Vec<InitScheme>,
}

/// 1D regression fixture: an overparameterized relu MLP fit to ten points on
/// a parabola with full-batch gradient descent.
pub fn recipe_parabola() -> Recipe {
    let steps = 20_000;
    let snapshots = vec![0, 10, 1000, steps];
    let trial = TrialSpec {
        tags: vec![("fixture".into(), "parabola".into())],
        layers: mlp_specs(&[1, 300, 300, 300, 1], Activation::Relu),
        init: InitScheme::Standard,
        data: DatasetSpec::Parabola { n: 10 },
        config: TrainConfig {
            learning_rate: 0.02,
            batch_size: 10,
            steps,
            loss: LossKind::Mse,
            penalties: Vec::new(),
            seed: 0,
            eval_every: 1000,
            extra_eval_steps: vec![10],
            snapshot_steps: snapshots,
            optimizer: "sgd".into(),
            gc_eval_points: 10,
            alignment_points: 10,
            record_lipschitz: true,
        },
    };
    Recipe {
        name: "parabola",
        description: "Full-batch regression of 10 parabola points with a 3x300 relu MLP at \
                      h=0.02; desk-scale delta: 20k steps instead of 100k, single seed. Emits \
                      the learning curve (with arc-length and Dirichlet-energy columns at \
                      snapshot steps) and the function trace over [-1,1].",
        exploratory: false,
        kind: RecipeKind::Parabola {
            trial,
            trace_points: 201,
            final_mse_max: 1e-3,
            init_gc_max: 0.1,
        },
    }
}

/// Initialization complexity versus depth for relu/sigmoid nets under the
/// standard and glorot schemes, on the normalized and a large hypercube.
pub fn recipe_init_depth() -> Recipe {
    Recipe {
        name: "init-depth",
        description: "Geometric complexity of freshly initialized MLPs over 100 uniform points \
                      in [-1,1]^100, depths {1,2,4,8,16}, width 100, k=10, 5 seeds per cell, \
                      plus mean/max output curves along the hypercube diagonal (50 points) and \
                      a [-1000,1000]^d variant; desk-scale deltas: d=100 instead of 150528, \
                      k=10 instead of 1000, width 100 instead of 500, depths truncated at 16.",
        exploratory: false,
        kind: RecipeKind::InitDepth(InitDepthSpec {
            depths: vec![1, 2, 4, 8, 16],
            width: 100,
            d: 100,
            k: 10,
            seeds: 5,
            base_seed: 0,
            data_seed: 12_345,
            n_points: 100,
            probe_points: 50,
            large_half_width: 1000.0,
            assert_schemes: vec![InitScheme::Standard, InitScheme::Glorot],
        }),
    }
}

/// Axis selector for the explicit-regularization recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegAxis {
    L2,
    Spectral,
    Flatness,
    Gc,
    LabelNoise,
}

impl RegAxis {
    pub fn name(self) -> &'static str {
        match self {
            RegAxis::L2 => "l2",
            RegAxis::Spectral => "spectral",
            RegAxis::Flatness => "flatness",
            RegAxis::Gc => "gc",
            RegAxis::LabelNoise => "alpha",
        }
    }
}

const BLOBS_DATA_SEED: u64 = 7;
const BLOBS_TEST_SEED: u64 = 1007;
const BLOBS_NOISE_SEED: u64 = 4242;
const BLOBS_TEST_N: usize = 1000;

fn blobs_spec(label_noise: f64) -> DatasetSpec {
    DatasetSpec::Blobs {
        n: 2000,
        d: 2,
        k: 2,
        separation: 4.0,
        seed: BLOBS_DATA_SEED,
        label_noise,
        noise_seed: BLOBS_NOISE_SEED,
        test_n: BLOBS_TEST_N,
        test_seed: BLOBS_TEST_SEED,
    }
}

fn blobs_base_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        batch_size: 64,
        steps: 5000,
        loss: LossKind::SoftmaxCe,
        penalties: Vec::new(),
        seed: 0,
        eval_every: 500,
        extra_eval_steps: Vec::new(),
        snapshot_steps: Vec::new(),
        optimizer: "sgd".into(),
        gc_eval_points: 1000,
        alignment_points: 16,
        record_lipschitz: true,
    }
}

fn blobs_layers(width: usize) -> Vec<crate::net::LayerSpec> {
    mlp_specs(&[2, width, width, 2], Activation::Relu)
}

const SWEEP_SEEDS: u64 = 3;

fn grid_sweep(
    name: &str,
    axis: &'static str,
    values: &[f64],
    base_seed: u64,
    make_trial: impl Fn(f64, u64) -> TrialSpec,
) -> (SweepSpec, Vec<String>) {
    let mut trials = Vec::new();
    let mut labels = Vec::new();
    for (vi, &v) in values.iter().enumerate() {
        let label = format!("{v}");
        labels.push(label.clone());
        for s in 0..SWEEP_SEEDS {
            let trial_index = vi as u64 * SWEEP_SEEDS + s;
            let seed = base_seed + trial_index;
            let mut trial = make_trial(v, seed);
            trial.tags = vec![(axis.to_string(), label.clone()), ("seed".into(), format!("{seed}"))];
            trials.push(trial);
        }
    }
    (SweepSpec { name: name.to_string(), trials }, labels)
}

/// Explicit-regularization sweeps on the two-blob fixture: median final
/// geometric complexity must fall strictly as the rate (or the label-noise
/// fraction) rises.
pub fn recipe_explicit_reg(axis: RegAxis) -> Recipe {
    let (values, base_seed): (&[f64], u64) = match axis {
        RegAxis::L2 => (&[0.0, 1e-3, 1e-2], 100),
        RegAxis::Spectral => (&[0.0, 1e-3, 1e-2], 120),
        RegAxis::Flatness => (&[0.0, 1e-3, 1e-2], 140),
        RegAxis::Gc => (&[0.0, 0.1, 1.0], 160),
        RegAxis::LabelNoise => (&[0.0, 0.1, 0.25], 180),
    };
    let (name, description) = match axis {
        RegAxis::L2 => ("reg-l2", "L2 penalty sweep {0, 1e-3, 1e-2} on the blobs fixture."),
        RegAxis::Spectral => ("reg-spectral", "Spectral penalty sweep {0, 1e-3, 1e-2} on the blobs fixture."),
        RegAxis::Flatness => ("reg-flatness", "Flatness (gradient-norm) penalty sweep {0, 1e-3, 1e-2} on the blobs fixture."),
        RegAxis::Gc => ("reg-gc", "Jacobian/GC penalty sweep {0, 0.1, 1.0} on the blobs fixture."),
        RegAxis::LabelNoise => ("reg-label-noise", "Label-noise sweep {0, 0.1, 0.25} on the blobs fixture."),
    };
    let (sweep, labels) = grid_sweep(name, axis.name(), values, base_seed, |v, seed| {
        let mut config = blobs_base_config();
        config.seed = seed;
        let data = match axis {
            RegAxis::LabelNoise => blobs_spec(v),
            _ => blobs_spec(0.0),
        };
        match axis {
            RegAxis::L2 => config.penalties = vec![(PenaltyKind::L2, v)],
            RegAxis::Spectral => config.penalties = vec![(PenaltyKind::Spectral, v)],
            RegAxis::Flatness => config.penalties = vec![(PenaltyKind::Flatness, v)],
            RegAxis::Gc => config.penalties = vec![(PenaltyKind::Gc, v)],
            RegAxis::LabelNoise => {}
        }
        TrialSpec {
            tags: Vec::new(),
            layers: blobs_layers(64),
            init: InitScheme::Standard,
            data,
            config,
        }
    });
    Recipe {
        name,
        description,
        exploratory: false,
        kind: RecipeKind::Sweep {
            sweep,
            axis: axis.name(),
            values: labels,
            trend: Some(TrendDirection::Decreasing),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImplicitAxis {
    LearningRate,
    BatchSize,
}

/// Implicit-regularization sweeps: higher learning rate lowers the final
/// geometric complexity; larger batch size raises it.
pub fn recipe_implicit(axis: ImplicitAxis) -> Recipe {
    match axis {
        ImplicitAxis::LearningRate => {
            let (sweep, labels) = grid_sweep("implicit-lr", "lr", &[0.01, 0.05, 0.2], 200, |v, seed| {
                let mut config = blobs_base_config();
                config.learning_rate = v;
                config.seed = seed;
                TrialSpec {
                    tags: Vec::new(),
                    layers: blobs_layers(64),
                    init: InitScheme::Standard,
                    data: blobs_spec(0.0),
                    config,
                }
            });
            Recipe {
                name: "implicit-lr",
                description: "Learning-rate sweep {0.01, 0.05, 0.2} at batch size 64 on the \
                              blobs fixture; median final GC must fall as the rate rises.",
                exploratory: false,
                kind: RecipeKind::Sweep {
                    sweep,
                    axis: "lr",
                    values: labels,
                    trend: Some(TrendDirection::Decreasing),
                },
            }
        }
        ImplicitAxis::BatchSize => {
            let (sweep, labels) = grid_sweep("implicit-batch", "batch", &[8.0, 64.0, 512.0], 220, |v, seed| {
                let mut config = blobs_base_config();
                config.batch_size = v as usize;
                config.seed = seed;
                TrialSpec {
                    tags: Vec::new(),
                    layers: blobs_layers(64),
                    init: InitScheme::Standard,
                    data: blobs_spec(0.0),
                    config,
                }
            });
            Recipe {
                name: "implicit-batch",
                description: "Batch-size sweep {8, 64, 512} at learning rate 0.05 on the blobs \
                              fixture; median final GC must rise with batch size.",
                exploratory: false,
                kind: RecipeKind::Sweep {
                    sweep,
                    axis: "batch",
                    values: labels,
                    trend: Some(TrendDirection::Increasing),
                },
            }
        }
    }
}

/// Exploratory width sweep on noisy blobs; emits GC and test loss per width
/// with no trend assertion.
pub fn recipe_width_sweep() -> Recipe {
    let widths = [4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let (sweep, labels) = grid_sweep("width-sweep", "width", &widths, 300, |v, seed| {
        let mut config = blobs_base_config();
        config.seed = seed;
        TrialSpec {
            tags: Vec::new(),
            layers: blobs_layers(v as usize),
            init: InitScheme::Standard,
            data: blobs_spec(0.2),
            config,
        }
    });
    Recipe {
        name: "width-sweep",
        description: "Exploratory width sweep {4..128} on blobs with 20% label noise; records \
                      GC and test loss per width, no trend asserted.",
        exploratory: true,
        kind: RecipeKind::Sweep { sweep, axis: "width", values: labels, trend: None },
    }
}

pub fn all_recipe_names() -> Vec<&'static str> {
    vec![
        "parabola",
        "init-depth",
        "reg-l2",
        "reg-spectral",
        "reg-flatness",
        "reg-gc",
        "reg-label-noise",
        "implicit-lr",
        "implicit-batch",
        "width-sweep",
    ]
}

pub fn recipe_by_name(name: &str) -> Option<Recipe> {
    match name {
        "parabola" => Some(recipe_parabola()),
        "init-depth" => Some(recipe_init_depth()),
        "reg-l2" => Some(recipe_explicit_reg(RegAxis::L2)),
        "reg-spectral" => Some(recipe_explicit_reg(RegAxis::Spectral)),
        "reg-flatness" => Some(recipe_explicit_reg(RegAxis::Flatness)),
        "reg-gc" => Some(recipe_explicit_reg(RegAxis::Gc)),
        "reg-label-noise" => Some(recipe_explicit_reg(RegAxis::LabelNoise)),
        "implicit-lr" => Some(recipe_implicit(ImplicitAxis::LearningRate)),
        "implicit-batch" => Some(recipe_implicit(ImplicitAxis::BatchSize)),
        "width-sweep" => Some(recipe_width_sweep()),
        _ => None,
    }
}

/// Everything a finished recipe produced.
pub struct RecipeRun {
    pub files: Vec<PathBuf>,
    pub trend: Option<TrendReport>,
}

/// One row of a sweep summary CSV.
#[derive(Debug, Clone)]
pub struct SweepSummaryRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub final_step: usize,
    pub final_train_loss: f64,
    pub final_test_loss: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub final_gc: f64,
    pub diverged: Option<usize>,
}

pub const SUMMARY_HEADER: &str =
    "axis,value,seed,final_step,final_train_loss,final_test_loss,final_test_accuracy,final_gc,diverged";

impl SweepSummaryRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.axis,
            self.value,
            self.seed,
            self.final_step,
            fmt_sig(self.final_train_loss),
            fmt_opt(self.final_test_loss),
            fmt_opt(self.final_test_accuracy),
            fmt_sig(self.final_gc),
            self.diverged.map(|s| s.to_string()).unwrap_or_default(),
        )
    }
}

/// Parses a summary CSV back into rows, for offline trend re-checking.
pub fn parse_summary_csv(path: &Path) -> Result<Vec<SweepSummaryRow>, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("axis,") || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 {
            return Err(ExperimentError::Recipe(format!("bad summary row: {line}")));
        }
        let opt = |s: &str| -> Option<f64> { if s.is_empty() { None } else { s.parse().ok() } };
        rows.push(SweepSummaryRow {
            axis: cells[0].to_string(),
            value: cells[1].to_string(),
            seed: cells[2].parse().map_err(|_| ExperimentError::Recipe("bad seed".into()))?,
            final_step: cells[3].parse().unwrap_or(0),
            final_train_loss: cells[4].parse().unwrap_or(f64::NAN),
            final_test_loss: opt(cells[5]),
            final_test_accuracy: opt(cells[6]),
            final_gc: cells[7].parse().unwrap_or(f64::NAN),
            diverged: if cells[8].is_empty() { None } else { cells[8].parse().ok() },
        });
    }
    Ok(rows)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Median-of-seeds trend over the axis values, a pure function of summary
/// rows. Diverged trials are excluded with a warning in the detail string.
pub fn sweep_trend(
    rows: &[SweepSummaryRow],
    values: &[String],
    direction: TrendDirection,
) -> TrendReport {
    let mut medians = Vec::with_capacity(values.len());
    let mut warnings = Vec::new();
    for value in values {
        let mut gcs: Vec<f64> = rows
            .iter()
            .filter(|r| &r.value == value && r.diverged.is_none())
            .map(|r| r.final_gc)
            .collect();
        let excluded = rows.iter().filter(|r| &r.value == value && r.diverged.is_some()).count();
        if excluded > 0 {
            warnings.push(format!("{excluded} diverged trial(s) excluded at value {value}"));
        }
        match median(&mut gcs) {
            Some(m) => medians.push(m),
            None => {
                return TrendReport {
                    passed: false,
                    detail: format!("no completed trials at value {value}"),
                }
            }
        }
    }
    let mut passed = true;
    for pair in medians.windows(2) {
        let ok = match direction {
            TrendDirection::Decreasing => pair[1] < pair[0],
            TrendDirection::Increasing => pair[1] > pair[0],
        };
        if !ok {
            passed = false;
        }
    }
    let arrow = match direction {
        TrendDirection::Decreasing => "decreasing",
        TrendDirection::Increasing => "increasing",
    };
    let mut detail = format!(
        "median final GC along [{}]: [{}] expected strictly {arrow}",
        values.join(", "),
        medians.iter().map(|m| format!("{m:.6}")).collect::<Vec<_>>().join(", "),
    );
    if !warnings.is_empty() {
        detail.push_str(&format!(" ({})", warnings.join("; ")));
    }
    TrendReport { passed, detail }
}

/// Runs a recipe end to end, writing its CSVs under `out_dir`.
pub fn run_recipe(recipe: &Recipe, out_dir: &Path) -> Result<RecipeRun, ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    match &recipe.kind {
        RecipeKind::Parabola { trial, trace_points, final_mse_max, init_gc_max } => {
            run_parabola(trial, *trace_points, *final_mse_max, *init_gc_max, out_dir)
        }
        RecipeKind::InitDepth(spec) => run_init_depth(spec, out_dir),
        RecipeKind::Sweep { sweep, axis, values, trend } => {
            run_sweep_recipe(sweep, axis, values, *trend, out_dir)
        }
    }
}

fn run_parabola(
    trial: &TrialSpec,
    trace_points: usize,
    final_mse_max: f64,
    init_gc_max: f64,
    out_dir: &Path,
) -> Result<RecipeRun, ExperimentError> {
    let result = run_trial(trial)?;
    let config_comment = format!(
        "config: {}",
        serde_json::to_string(trial).expect("trial spec serializes")
    );

    // Arc length and Dirichlet energy per snapshot network.
    let mut extras: Vec<(usize, f64, f64)> = Vec::new();
    for (step, net) in &result.snapshots {
        let arc = arc_length_1d(net, -1.0, 1.0, 1001)?;
        let energy = dirichlet_energy_1d(net, -1.0, 1.0, 1001)?;
        extras.push((*step, arc, energy));
    }

    let learning_path = out_dir.join("learning.csv");
    let header = format!("{METRIC_HEADER},arc_length,dirichlet_energy");
    let rows = result.rows.iter().map(|row| {
        let extra = extras.iter().find(|(s, _, _)| *s == row.step);
        format!(
            "{},{},{}",
            row.to_csv(),
            fmt_opt(extra.map(|(_, a, _)| *a)),
            fmt_opt(extra.map(|(_, _, e)| *e)),
        )
    });
    write_csv(&learning_path, std::slice::from_ref(&config_comment), &header, rows)?;

    // Function trace over [-1, 1] for every snapshot.
    let trace_path = out_dir.join("function_trace.csv");
    let mut header = String::from("x");
    for (step, _) in &result.snapshots {
        header.push_str(&format!(",f_step_{step}"));
    }
    let mut trace_rows = Vec::with_capacity(trace_points);
    for i in 0..trace_points {
        let x = -1.0 + 2.0 * i as f64 / (trace_points - 1) as f64;
        let mut cells = vec![fmt_sig(x)];
        for (_, net) in &result.snapshots {
            let y = net.forward(&Vector::from_vec(vec![x]))?.output()[0];
            cells.push(fmt_sig(y));
        }
        trace_rows.push(cells.join(","));
    }
    write_csv(&trace_path, &[config_comment], &header, trace_rows)?;

    // Assertions: final fit quality, near-zero initial complexity, and
    // strictly growing complexity across the snapshots.
    let final_row = result.rows.last().expect("at least the step-0 row exists");
    let final_mse = 2.0 * final_row.train_loss;
    let mut snapshot_gc = Vec::new();
    for (step, _) in &result.snapshots {
        let row = result
            .rows
            .iter()
            .find(|r| r.step == *step)
            .ok_or_else(|| ExperimentError::Recipe(format!("no metric row at snapshot step {step}")))?;
        snapshot_gc.push((*step, row.gc));
    }
    let init_gc = snapshot_gc.first().map(|(_, g)| *g).unwrap_or(f64::NAN);
    let growing = snapshot_gc.windows(2).all(|w| w[1].1 > w[0].1);
    let passed = final_mse < final_mse_max && init_gc < init_gc_max && growing;
    let detail = format!(
        "final mse {final_mse:.3e} (< {final_mse_max:.0e}), init gc {init_gc:.4} (< {init_gc_max}), \
         snapshot gc {:?} strictly increasing: {growing}",
        snapshot_gc.iter().map(|(s, g)| format!("{s}:{g:.4}")).collect::<Vec<_>>(),
    );
    Ok(RecipeRun {
        files: vec![learning_path, trace_path],
        trend: Some(TrendReport { passed, detail }),
    })
}

/// Signed mean and max absolute value over the output coordinates of one
/// probe evaluation. For scalar outputs the max equals the absolute mean.
pub fn probe_stats(output: &Vector) -> (f64, f64) {
    let k = output.len().max(1) as f64;
    let mean = output.iter().sum::<f64>() / k;
    let max = output.iter().map(|v| v.abs()).fold(0.0, f64::max);
    (mean, max)
}

fn run_init_depth(
    spec: &InitDepthSpec,
    out_dir: &Path,
) -> Result<RecipeRun, ExperimentError> {
    let normalized = make_hypercube_uniform(spec.n_points, spec.d, -1.0, 1.0, spec.data_seed)?;
    let large = make_hypercube_uniform(
        spec.n_points,
        spec.d,
        -spec.large_half_width,
        spec.large_half_width,
        spec.data_seed + 1,
    )?;
    let probe_norm = diagonal_probe_scaled(spec.d, spec.probe_points, 1.0)?;
    let probe_large = diagonal_probe_scaled(spec.d, spec.probe_points, spec.large_half_width)?;

    struct Combo {
        scheme: InitScheme,
        activation: Activation,
        depth: usize,
        seed: u64,
    }
    let mut combos = Vec::new();
    let mut index = 0u64;
    for scheme in [InitScheme::Standard, InitScheme::Glorot] {
        for activation in [Activation::Relu, Activation::Sigmoid] {
            for &depth in &spec.depths {
                for _ in 0..spec.seeds {
                    combos.push(Combo { scheme, activation, depth, seed: spec.base_seed + index });
                    index += 1;
                }
            }
        }
    }

    struct ComboOut {
        gc_rows: Vec<String>,
        probe_rows: Vec<String>,
        key: (InitScheme, Activation, usize),
        gc_normalized: f64,
    }

    let outputs: Vec<ComboOut> = combos
        .par_iter()
        .map(|combo| -> Result<ComboOut, ExperimentError> {
            let mut dims = vec![spec.d];
            dims.extend(std::iter::repeat_n(spec.width, combo.depth.saturating_sub(1)));
            dims.push(spec.k);
            let net = init_network(&mlp_specs(&dims, combo.activation), combo.scheme, combo.seed);

            let mut gc_rows = Vec::new();
            let mut probe_rows = Vec::new();
            let mut gc_normalized = f64::NAN;
            for (domain, ds, probe) in [
                ("normalized", &normalized, &probe_norm),
                ("large", &large, &probe_large),
            ] {
                let gc = geometric_complexity(&net, ds)?;
                if domain == "normalized" {
                    gc_normalized = gc;
                }
                gc_rows.push(format!(
                    "{},{},{},{},{},{}",
                    combo.scheme.name(),
                    combo.activation.name(),
                    combo.depth,
                    combo.seed,
                    domain,
                    fmt_sig(gc),
                ));
                for i in 0..probe.len() {
                    let t = i as f64 / (probe.len() - 1) as f64;
                    let out = net.forward(&probe.point(i))?;
                    let (mean, max) = probe_stats(out.output());
                    probe_rows.push(format!(
                        "{},{},{},{},{},{},{},{}",
                        combo.scheme.name(),
                        combo.activation.name(),
                        combo.depth,
                        combo.seed,
                        domain,
                        fmt_sig(t),
                        fmt_sig(mean),
                        fmt_sig(max),
                    ));
                }
            }
            Ok(ComboOut {
                gc_rows,
                probe_rows,
                key: (combo.scheme, combo.activation, combo.depth),
                gc_normalized,
            })
        })
        .collect::<Result<_, _>>()?;

    let config_comment = format!(
        "config: {{\"recipe\":\"init-depth\",\"depths\":{:?},\"width\":{},\"d\":{},\"k\":{},\"seeds\":{},\"base_seed\":{},\"data_seed\":{},\"n_points\":{},\"probe_points\":{},\"large_half_width\":{}}}",
        spec.depths, spec.width, spec.d, spec.k, spec.seeds, spec.base_seed, spec.data_seed,
        spec.n_points, spec.probe_points, spec.large_half_width,
    );
    let gc_path = out_dir.join("gc.csv");
    write_csv(
        &gc_path,
        std::slice::from_ref(&config_comment),
        "scheme,activation,depth,seed,domain,gc",
        outputs.iter().flat_map(|o| o.gc_rows.clone()),
    )?;
    let probe_path = out_dir.join("probe.csv");
    write_csv(
        &probe_path,
        &[config_comment],
        "scheme,activation,depth,seed,domain,t,f_mean,f_max",
        outputs.iter().flat_map(|o| o.probe_rows.clone()),
    )?;

    // Assertion: median GC strictly decreasing in depth for relu under each
    // asserted scheme, on the normalized domain.
    let mut passed = true;
    let mut details = Vec::new();
    for scheme in &spec.assert_schemes {
        let mut medians = Vec::new();
        for &depth in &spec.depths {
            let mut gcs: Vec<f64> = outputs
                .iter()
                .filter(|o| o.key == (*scheme, Activation::Relu, depth))
                .map(|o| o.gc_normalized)
                .collect();
            medians.push(median(&mut gcs).unwrap_or(f64::NAN));
        }
        let ok = medians.windows(2).all(|w| w[1] < w[0]);
        if !ok {
            passed = false;
        }
        details.push(format!(
            "relu/{}: medians over depths {:?} = [{}] strictly decreasing: {ok}",
            scheme.name(),
            spec.depths,
            medians.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(", "),
        ));
    }
    Ok(RecipeRun {
        files: vec![gc_path, probe_path],
        trend: Some(TrendReport { passed, detail: details.join("; ") }),
    })
}

fn run_sweep_recipe(
    sweep: &SweepSpec,
    axis: &str,
    values: &[String],
    trend: Option<TrendDirection>,
    out_dir: &Path,
) -> Result<RecipeRun, ExperimentError> {
    let outcomes = run_sweep(sweep);
    let mut files = Vec::new();
    let mut summary_rows = Vec::new();

    for outcome in &outcomes {
        let tag_string = outcome
            .spec
            .tags
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("_");
        let value = outcome
            .spec
            .tags
            .iter()
            .find(|(k, _)| k == axis)
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        match &outcome.result {
            Ok(result) => {
                let trial_path = out_dir.join("trials").join(format!("{tag_string}.csv"));
                let comment = format!(
                    "config: {}",
                    serde_json::to_string(&outcome.spec).expect("trial spec serializes")
                );
                write_csv(
                    &trial_path,
                    &[comment],
                    METRIC_HEADER,
                    result.rows.iter().map(|r| r.to_csv()),
                )?;
                files.push(trial_path);
                let last = result.rows.last().expect("step-0 row always present");
                summary_rows.push(SweepSummaryRow {
                    axis: axis.to_string(),
                    value,
                    seed: outcome.spec.config.seed,
                    final_step: last.step,
                    final_train_loss: last.train_loss,
                    final_test_loss: last.test_loss,
                    final_test_accuracy: last.test_accuracy,
                    final_gc: last.gc,
                    diverged: None,
                });
            }
            Err(TrainError::Diverged { step }) => {
                summary_rows.push(SweepSummaryRow {
                    axis: axis.to_string(),
                    value,
                    seed: outcome.spec.config.seed,
                    final_step: *step,
                    final_train_loss: f64::NAN,
                    final_test_loss: None,
                    final_test_accuracy: None,
                    final_gc: f64::NAN,
                    diverged: Some(*step),
                });
            }
            Err(other) => {
                return Err(ExperimentError::Recipe(format!(
                    "trial {tag_string} failed: {other}"
                )));
            }
        }
    }

    let summary_path = out_dir.join("summary.csv");
    let comment = format!(
        "config: {}",
        serde_json::to_string(sweep).expect("sweep spec serializes")
    );
    write_csv(
        &summary_path,
        &[comment],
        SUMMARY_HEADER,
        summary_rows.iter().map(|r| r.to_csv()),
    )?;
    files.insert(0, summary_path);

    let trend_report = trend.map(|direction| sweep_trend(&summary_rows, values, direction));
    Ok(RecipeRun { files, trend: trend_report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_stats_scalar_output_max_is_absolute_mean() {
        let (mean, max) = probe_stats(&Vector::from_vec(vec![-0.4]));
        assert_eq!(mean, -0.4);
        assert_eq!(max, 0.4);
        assert!(max >= mean.abs());
        let (mean, max) = probe_stats(&Vector::from_vec(vec![1.0, -3.0, 2.0]));
        assert_eq!(mean, 0.0);
        assert_eq!(max, 3.0);
        assert!(max >= 0.0 && max >= mean.abs());
    }

    #[test]
    fn recipe_names_resolve() {
        for name in all_recipe_names() {
            assert!(recipe_by_name(name).is_some(), "{name} missing");
        }
        assert!(recipe_by_name("nope").is_none());
    }

    #[test]
    fn sweep_trend_medians_and_strictness() {
        let mk = |value: &str, gc: f64, diverged: Option<usize>| SweepSummaryRow {
            axis: "l2".into(),
            value: value.into(),
            seed: 0,
            final_step: 10,
            final_train_loss: 0.1,
            final_test_loss: None,
            final_test_accuracy: None,
            final_gc: gc,
            diverged,
        };
        let values = vec!["0".to_string(), "0.1".to_string()];
        // medians: 3.0 vs 2.0 -> decreasing holds
        let rows = vec![mk("0", 2.0, None), mk("0", 3.0, None), mk("0", 4.0, None), mk("0.1", 2.0, None)];
        assert!(sweep_trend(&rows, &values, TrendDirection::Decreasing).passed);
        assert!(!sweep_trend(&rows, &values, TrendDirection::Increasing).passed);
        // ties are not strict
        let rows = vec![mk("0", 2.0, None), mk("0.1", 2.0, None)];
        assert!(!sweep_trend(&rows, &values, TrendDirection::Decreasing).passed);
        // diverged trials are excluded
        let rows = vec![mk("0", 5.0, None), mk("0.1", 4.0, None), mk("0.1", 100.0, Some(3))];
        let report = sweep_trend(&rows, &values, TrendDirection::Decreasing);
        assert!(report.passed);
        assert!(report.detail.contains("diverged"));
    }

    #[test]
    fn tiny_sweep_recipe_writes_reproducible_csvs() {
        // Shrunk copy of the l2 recipe: same machinery, desk-size numbers.
        let mut recipe = recipe_explicit_reg(RegAxis::L2);
        if let RecipeKind::Sweep { sweep, .. } = &mut recipe.kind {
            for trial in &mut sweep.trials {
                trial.config.steps = 20;
                trial.config.eval_every = 10;
                trial.config.gc_eval_points = 32;
                trial.config.alignment_points = 4;
                trial.data = DatasetSpec::Blobs {
                    n: 64,
                    d: 2,
                    k: 2,
                    separation: 4.0,
                    seed: 7,
                    label_noise: 0.0,
                    noise_seed: 1,
                    test_n: 32,
                    test_seed: 1007,
                };
            }
        }
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let run_a = run_recipe(&recipe, dir_a.path()).unwrap();
        let run_b = run_recipe(&recipe, dir_b.path()).unwrap();
        assert_eq!(run_a.files.len(), run_b.files.len());
        for (a, b) in run_a.files.iter().zip(&run_b.files) {
            let xa = std::fs::read(a).unwrap();
            let xb = std::fs::read(b).unwrap();
            assert_eq!(xa, xb, "{a:?} differs from {b:?}");
        }
        // summary parses back and the trend is re-checkable offline
        let rows = parse_summary_csv(&run_a.files[0]).unwrap();
        assert_eq!(rows.len(), 9);
        let report = sweep_trend(
            &rows,
            &["0".into(), "0.001".into(), "0.01".into()],
            TrendDirection::Decreasing,
        );
        // 20 steps is far too short for the trend itself; just confirm the
        // evaluator produces the same verdict as the in-memory run
        if let RecipeKind::Sweep { values, .. } = &recipe.kind {
            let in_memory = run_a.trend.unwrap();
            let offline = sweep_trend(&rows, values, TrendDirection::Decreasing);
            assert_eq!(in_memory.passed, offline.passed);
        }
        let _ = report;
    }
}
