//! `gcx`: geometric-complexity experiments for dense networks.
//!
//! Exit codes: 0 success, 1 check or trend failure, 2 usage error,
//! 3 training divergence.

mod config;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::FileConfig;
use gcx_core::checks::{run_all, CheckConfig};
use gcx_core::complexity::geometric_complexity;
use gcx_core::csvio::{fmt_sig, write_csv, METRIC_HEADER};
use gcx_core::data::DatasetSpec;
use gcx_core::experiments::{
    recipe_by_name, run_recipe, RecipeKind, RecipeRun, SUMMARY_HEADER,
};
use gcx_core::experiments::SweepSummaryRow;
use gcx_core::net::Network;
use gcx_core::train::{run_sweep, SweepSpec, TrainError, TrialSpec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gcx", version, about = "Geometric complexity diagnostics and experiments")]
struct Cli {
    /// Worker threads for sweeps and per-point reductions (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the 1D parabola regression fixture and emit learning/trace CSVs.
    Parabola(ParabolaArgs),
    /// Depth sweep of initialization complexity (GC + diagonal probes).
    InitSweep(InitSweepArgs),
    /// Evaluate a saved model along the hypercube diagonal.
    ProbeDiagonal(ProbeArgs),
    /// Train one model from a config file and/or flags.
    Train(TrainArgs),
    /// Run a grid sweep over penalty rates, learning rate, batch size, or label noise.
    Sweep(SweepArgs),
    /// Print the geometric complexity of a saved model over a dataset.
    Gc(GcArgs),
    /// Run the identity/inequality/gradient check suites.
    Check(CheckArgs),
    /// Run a named experiment recipe.
    Recipe(RecipeArgs),
}

#[derive(Args)]
struct ParabolaArgs {
    /// Override the number of full-batch steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitSweepArgs {
    /// Comma-separated depths. The default stops at 16 to keep runs short;
    /// pass 1,2,4,8,16,32,64 for the full ladder.
    #[arg(long, default_value = "1,2,4,8,16")]
    depths: String,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Points in the evaluation hypercube dataset.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 50)]
    probe_points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset spec, e.g. blobs:n=2000,d=2,k=2,sep=4,seed=7,test_n=1000 or
    /// idx:images=PATH,labels=PATH (paths may be relative to $GCX_DATA_DIR).
    #[arg(long)]
    data: Option<String>,
    /// Layer dims, e.g. 2,64,64,2.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Penalty list, e.g. l2:0.01 or l2:0.01,gc:0.1.
    #[arg(long)]
    penalties: Option<String>,
    #[arg(long)]
    gc_eval_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Grid axis, e.g. "l2=0,0.001,0.01" or "lr=0.01,0.05,0.2"; repeatable,
    /// multiple axes form a cartesian product. Keys: l2, spectral, flatness,
    /// gc, noise, lr, batch.
    #[arg(long = "grid", required = true)]
    grids: Vec<String>,
    /// Seeds per grid cell; trial seeds are base_seed + trial_index.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
}

#[derive(Args)]
struct GcArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: String,
}

#[derive(Args)]
struct CheckArgs {
    /// Randomized instances for the transfer-bound suite.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deliberately perturb one identity to exercise the failure path.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct RecipeArgs {
    /// Recipe name; use --list to see all.
    name: Option<String>,
    #[arg(long)]
    list: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the step count of every trial in the recipe.
    #[arg(long)]
    steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("gcx: could not configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            // Divergence gets its own exit code wherever it surfaces.
            let diverged = e.chain().any(|cause| {
                cause
                    .downcast_ref::<TrainError>()
                    .map(|t| matches!(t, TrainError::Diverged { .. }))
                    .unwrap_or(false)
                    || cause.to_string().contains("diverged")
            });
            eprintln!("gcx: error: {e:#}");
            ExitCode::from(if diverged { 3 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Parabola(args) => cmd_parabola(args),
        Command::InitSweep(args) => cmd_init_sweep(args),
        Command::ProbeDiagonal(args) => cmd_probe(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Gc(args) => cmd_gc(args),
        Command::Check(args) => cmd_check(args),
        Command::Recipe(args) => cmd_recipe(args),
    }
}

fn default_out_dir(name: &str) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    PathBuf::from("out").join(name).join(stamp.to_string())
}

fn finish_recipe(name: &str, run: RecipeRun) -> Result<ExitCode> {
    for file in &run.files {
        println!("wrote {}", file.display());
    }
    match run.trend {
        Some(report) => {
            println!("trend[{name}]: {}: {}", if report.passed { "PASS" } else { "FAIL" }, report.detail);
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn cmd_parabola(args: ParabolaArgs) -> Result<ExitCode> {
    let mut recipe = gcx_core::experiments::recipe_parabola();
    if let RecipeKind::Parabola { trial, .. } = &mut recipe.kind {
        if let Some(steps) = args.steps {
            trial.config.steps = steps;
            trial.config.snapshot_steps = vec![0, 10.min(steps), 1000.min(steps), steps];
            trial.config.snapshot_steps.dedup();
            trial.config.extra_eval_steps = trial.config.snapshot_steps.clone();
        }
        if let Some(lr) = args.lr {
            trial.config.learning_rate = lr;
        }
        if let Some(seed) = args.seed {
            trial.config.seed = seed;
        }
        println!(
            "resolved config: {}",
            serde_json::to_string(trial).expect("trial serializes")
        );
    }
    let out = args.out.unwrap_or_else(|| default_out_dir("parabola"));
    let run = run_recipe(&recipe, &out)?;
    finish_recipe("parabola", run)
}

fn cmd_init_sweep(args: InitSweepArgs) -> Result<ExitCode> {
    let mut recipe = gcx_core::experiments::recipe_init_depth();
    if let RecipeKind::InitDepth(spec) = &mut recipe.kind {
        spec.depths = args
            .depths
            .split(',')
            .map(|d| d.trim().parse::<usize>().context("bad depth"))
            .collect::<Result<_>>()?;
        spec.seeds = args.seeds;
        spec.n_points = args.points;
        spec.probe_points = args.probe_points;
        println!(
            "resolved config: depths={:?} seeds={} points={} probe_points={} width={} d={} k={}",
            spec.depths, spec.seeds, spec.n_points, spec.probe_points, spec.width, spec.d, spec.k
        );
    }
    let out = args.out.unwrap_or_else(|| default_out_dir("init-depth"));
    let run = run_recipe(&recipe, &out)?;
    finish_recipe("init-depth", run)
}

fn cmd_probe(args: ProbeArgs) -> Result<ExitCode> {
    let net = Network::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    println!(
        "resolved config: model={} points={} half_width={}",
        args.model.display(),
        args.points,
        args.half_width
    );
    let probe = gcx_core::data::diagonal_probe_scaled(net.input_dim(), args.points, args.half_width)?;
    let mut rows = Vec::new();
    for i in 0..probe.len() {
        let t = i as f64 / (probe.len() - 1) as f64;
        let out = net.forward(&probe.point(i))?;
        let k = out.output().len();
        let mean: f64 = out.output().iter().sum::<f64>() / k as f64;
        let max = out.output().iter().map(|v| v.abs()).fold(0.0, f64::max);
        rows.push(format!("{},{},{}", fmt_sig(t), fmt_sig(mean), fmt_sig(max)));
    }
    match args.out {
        Some(path) => {
            write_csv(&path, &[], "t,f_mean,f_max", rows)?;
            println!("wrote {}", path.display());
        }
        None => {
            println!("t,f_mean,f_max");
            for row in rows {
                println!("{row}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Resolves `idx:` dataset paths against `$GCX_DATA_DIR` when they are not
/// found as given.
fn resolve_data_dir(spec: DatasetSpec) -> DatasetSpec {
    match spec {
        DatasetSpec::Idx { images, labels, take } => {
            let resolve = |p: PathBuf| -> PathBuf {
                if p.exists() {
                    return p;
                }
                match std::env::var_os("GCX_DATA_DIR") {
                    Some(root) => Path::new(&root).join(&p),
                    None => p,
                }
            };
            DatasetSpec::Idx { images: resolve(images), labels: resolve(labels), take }
        }
        other => other,
    }
}

fn merged_config(args: &TrainArgs) -> Result<FileConfig> {
    let mut cfg = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    cfg.set_if_some("data", &args.data);
    cfg.set_if_some("layers", &args.layers);
    cfg.set_if_some("activation", &args.activation);
    cfg.set_if_some("init", &args.init);
    cfg.set_if_some("lr", &args.lr);
    cfg.set_if_some("batch_size", &args.batch_size);
    cfg.set_if_some("steps", &args.steps);
    cfg.set_if_some("loss", &args.loss);
    cfg.set_if_some("seed", &args.seed);
    cfg.set_if_some("eval_every", &args.eval_every);
    cfg.set_if_some("penalties", &args.penalties);
    cfg.set_if_some("gc_eval_points", &args.gc_eval_points);
    cfg.reject_unknown_keys()?;
    Ok(cfg)
}

fn trial_from_config(cfg: &FileConfig) -> Result<TrialSpec> {
    Ok(TrialSpec {
        tags: Vec::new(),
        layers: cfg.layer_specs()?,
        init: cfg.init_scheme()?,
        data: resolve_data_dir(cfg.dataset_spec()?),
        config: cfg.train_config()?,
    })
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let out = args.out.clone().unwrap_or_else(|| default_out_dir("train"));
    let cfg = merged_config(&args)?;
    let trial = trial_from_config(&cfg)?;
    println!("resolved config: {}", serde_json::to_string(&trial)?);

    let result = gcx_core::train::run_trial(&trial)?;
    std::fs::create_dir_all(&out)?;
    let metrics_path = out.join("metrics.csv");
    let comment = format!("config: {}", serde_json::to_string(&trial)?);
    write_csv(
        &metrics_path,
        &[comment],
        METRIC_HEADER,
        result.rows.iter().map(|r| r.to_csv()),
    )?;
    let model_path = out.join("model.json");
    result.net.save(&model_path)?;
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", model_path.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_grid(text: &str) -> Result<(String, Vec<f64>)> {
    let (key, values) = text
        .split_once('=')
        .ok_or_else(|| anyhow!("grid '{text}' must be key=v1,v2,..."))?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("grid value '{v}'")))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(anyhow!("grid '{text}' has no values"));
    }
    Ok((key.trim().to_string(), values))
}

fn apply_axis(trial: &mut TrialSpec, key: &str, value: f64) -> Result<()> {
    use gcx_core::regularize::PenaltyKind;
    match key {
        "l2" => trial.config.penalties.push((PenaltyKind::L2, value)),
        "spectral" => trial.config.penalties.push((PenaltyKind::Spectral, value)),
        "flatness" => trial.config.penalties.push((PenaltyKind::Flatness, value)),
        "gc" => trial.config.penalties.push((PenaltyKind::Gc, value)),
        "lr" => trial.config.learning_rate = value,
        "batch" => trial.config.batch_size = value as usize,
        "noise" => match &mut trial.data {
            DatasetSpec::Blobs { label_noise, .. } => *label_noise = value,
            _ => return Err(anyhow!("noise axis requires a blobs dataset")),
        },
        other => return Err(anyhow!("unknown grid axis '{other}'")),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let out = args.train.out.clone().unwrap_or_else(|| default_out_dir("sweep"));
    let cfg = merged_config(&args.train)?;
    let base = trial_from_config(&cfg)?;
    let axes: Vec<(String, Vec<f64>)> = args.grids.iter().map(|g| parse_grid(g)).collect::<Result<_>>()?;

    // Cartesian product of all axes, then seeds.
    let mut cells: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (key, values) in &axes {
        let mut next = Vec::new();
        for cell in &cells {
            for &v in values {
                let mut c = cell.clone();
                c.push((key.clone(), v));
                next.push(c);
            }
        }
        cells = next;
    }

    let base_seed = base.config.seed;
    let mut trials = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        for s in 0..args.seeds {
            let trial_index = ci as u64 * args.seeds + s;
            let mut trial = base.clone();
            trial.config.seed = base_seed + trial_index;
            for (key, value) in cell {
                apply_axis(&mut trial, key, *value)?;
                trial.tags.push((key.clone(), format!("{value}")));
            }
            trial.tags.push(("seed".into(), format!("{}", trial.config.seed)));
            trials.push(trial);
        }
    }
    let sweep = SweepSpec { name: "sweep".into(), trials };
    println!("resolved config: {}", serde_json::to_string(&sweep)?);

    let outcomes = run_sweep(&sweep);
    std::fs::create_dir_all(&out)?;
    let mut summary_rows: Vec<SweepSummaryRow> = Vec::new();
    let first_axis = axes.first().map(|(k, _)| k.clone()).unwrap_or_default();
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
            .find(|(k, _)| *k == first_axis)
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        match &outcome.result {
            Ok(result) => {
                let path = out.join("trials").join(format!("{tag_string}.csv"));
                let comment = format!("config: {}", serde_json::to_string(&outcome.spec)?);
                write_csv(&path, &[comment], METRIC_HEADER, result.rows.iter().map(|r| r.to_csv()))?;
                let last = result.rows.last().expect("rows nonempty");
                summary_rows.push(SweepSummaryRow {
                    axis: first_axis.clone(),
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
                eprintln!("warning: trial {tag_string} diverged at step {step}");
                summary_rows.push(SweepSummaryRow {
                    axis: first_axis.clone(),
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
            Err(other) => return Err(anyhow!("trial {tag_string} failed: {other}")),
        }
    }
    let summary_path = out.join("summary.csv");
    let comment = format!("config: {}", serde_json::to_string(&sweep)?);
    write_csv(
        &summary_path,
        &[comment],
        SUMMARY_HEADER,
        summary_rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.axis,
                r.value,
                r.seed,
                r.final_step,
                fmt_sig(r.final_train_loss),
                r.final_test_loss.map(fmt_sig).unwrap_or_default(),
                r.final_test_accuracy.map(fmt_sig).unwrap_or_default(),
                fmt_sig(r.final_gc),
                r.diverged.map(|s| s.to_string()).unwrap_or_default(),
            )
        }),
    )?;
    println!("wrote {}", summary_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gc(args: GcArgs) -> Result<ExitCode> {
    let net = Network::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let spec = resolve_data_dir(args.data.parse::<DatasetSpec>()?);
    println!("resolved config: model={} data={}", args.model.display(), args.data);
    let (ds, _) = spec.build()?;
    let gc = geometric_complexity(&net, &ds)?;
    println!("{}", fmt_sig(gc));
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    println!(
        "resolved config: trials={} seed={} inject_fault={}",
        args.trials, args.seed, args.inject_fault
    );
    let results = run_all(&CheckConfig {
        trials: args.trials,
        seed: args.seed,
        inject_fault: args.inject_fault,
    });
    let all_passed = results.iter().all(|r| r.passed);
    for r in &results {
        eprintln!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let summary = serde_json::json!({
        "passed": all_passed,
        "checks": results,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_recipe(args: RecipeArgs) -> Result<ExitCode> {
    if args.list {
        for name in gcx_core::experiments::all_recipe_names() {
            let recipe = recipe_by_name(name).expect("listed recipes exist");
            println!(
                "{name}{}: {}",
                if recipe.exploratory { " (exploratory)" } else { "" },
                recipe.description
            );
        }
        return Ok(ExitCode::SUCCESS);
    }
    let name = args.name.ok_or_else(|| anyhow!("recipe name required (or --list)"))?;
    let mut recipe =
        recipe_by_name(&name).ok_or_else(|| anyhow!("unknown recipe '{name}'; try --list"))?;
    if let Some(steps) = args.steps {
        match &mut recipe.kind {
            RecipeKind::Parabola { trial, .. } => {
                trial.config.steps = steps;
                trial.config.snapshot_steps = vec![0, 10.min(steps), 1000.min(steps), steps];
                trial.config.snapshot_steps.dedup();
                trial.config.extra_eval_steps = trial.config.snapshot_steps.clone();
            }
            RecipeKind::Sweep { sweep, .. } => {
                for trial in &mut sweep.trials {
                    trial.config.steps = steps;
                }
            }
            RecipeKind::InitDepth(_) => {}
        }
    }
    println!("resolved config: recipe={name} steps_override={:?}", args.steps);
    let out = args.out.unwrap_or_else(|| default_out_dir(&name));
    let run = run_recipe(&recipe, &out)?;
    finish_recipe(&name, run)
}
