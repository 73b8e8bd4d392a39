//! Command-line subcommands. Each command reads a dataset manifest, does its
//! work deterministically, and writes its outputs atomically.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::calibrators::{
    apply_calibrator, fit_calibrator, Ablations, Calibrator, CalibratorConfig, CalibratorFile, Method,
};
use crate::dataset::{
    edges_text, labels_text, logits_text, to_json_bytes, write_atomic, Dataset, Manifest, SplitFile,
    FORMAT_VERSION,
};
use crate::diagnostics::{
    binned_factor_curve, curve_to_csv, factor_report, reliability_curve, reliability_to_csv, Binning,
};
use crate::error::{CalibError, Result};
use crate::exec::Execution;
use crate::kernels::{softmax_rows, Matrix};
use crate::metrics::{EvalResult, DEFAULT_BINS};
use crate::synth::{generate_with_truth, MiscalMode, SynthConfig};
use crate::trainer::{grid_search, default_grid, stratified_split, GridReport, SplitConfig, SplitPlan};

#[derive(Debug, Parser)]
#[command(name = "graphcal", version, about = "Post-hoc calibration of GNN node predictions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a calibrator on the validation mask and evaluate it on the test mask.
    Calibrate(CalibrateArgs),
    /// Evaluate raw or calibrated predictions on the test mask.
    Evaluate(EvaluateArgs),
    /// Write per-node factor and reliability CSVs.
    Diagnose(DiagnoseArgs),
    /// Write stratified labeled/unlabeled splits with internal folds.
    Split(SplitArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value = "gats")]
    pub method: String,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 1.0)]
    pub init_t0: f64,
    /// Comma-separated GATS ablations (no_t0, no_gamma, no_dconf, no_attention, no_sorting).
    #[arg(long, default_value = "")]
    pub ablate: String,
    /// Select weight decay and initial temperature by grid search over the folds.
    #[arg(long)]
    pub grid: bool,
    /// Split seed used when the manifest has no split file.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Output directory for `calibrator.json` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    /// Fitted calibrator JSON; without it the raw logits are evaluated.
    #[arg(long)]
    pub calibrator: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Evaluate every node instead of the test mask.
    #[arg(long)]
    pub all_nodes: bool,
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub calibrator: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Bins for continuous factors.
    #[arg(long, default_value_t = crate::diagnostics::DEFAULT_FACTOR_BINS)]
    pub factor_bins: usize,
    #[arg(long)]
    pub all_nodes: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    pub fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.01)]
    pub intra_p: f64,
    #[arg(long, default_value_t = 0.002)]
    pub inter_p: f64,
    #[arg(long, default_value_t = 2.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// none, global or homophily.
    #[arg(long, default_value = "none")]
    pub miscal: String,
    /// Logit multiplier for `--miscal global`.
    #[arg(long, default_value_t = 2.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 0.5)]
    pub b: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn load(manifest: &Path) -> Result<Dataset> {
    Manifest::read(manifest)?.load(manifest)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CalibError::io(dir, e))
}

fn eval_nodes(d: &Dataset, all_nodes: bool) -> Result<Vec<usize>> {
    let nodes: Vec<usize> = if all_nodes { (0..d.num_nodes()).collect() } else { d.mask.test.clone() };
    if nodes.is_empty() {
        return Err(CalibError::EmptyEvalSet);
    }
    Ok(nodes)
}

/// Calibrated probabilities if a calibrator file is given, else `softmax(z)`.
fn predictions(d: &Dataset, calibrator: Option<&Path>) -> Result<Matrix> {
    match calibrator {
        Some(p) => Ok(apply_calibrator(&CalibratorFile::read(p)?.to_calibrator()?, d)?.probs),
        None => softmax_rows(&d.logits),
    }
}

#[derive(Debug, Serialize)]
pub struct CalibrationReport {
    pub format_version: u32,
    pub method: Method,
    pub num_test_nodes: usize,
    pub uncalibrated: EvalResult,
    pub calibrated: EvalResult,
    /// Mean per-node temperature over the test nodes, for temperature-based methods.
    pub mean_test_temperature: Option<f64>,
    pub grid: Option<GridReport>,
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let mut data = load(&a.manifest)?;
    let mut plan: Option<SplitPlan> = None;
    if data.mask.val.is_empty() {
        let seed = a.split_seed.ok_or_else(|| {
            CalibError::InvalidConfig("manifest has no split; pass --split-seed".into())
        })?;
        let p = stratified_split(&data.labels, SplitConfig::default(), seed)?;
        data = data.with_mask(p.assignments[0][0].clone())?;
        plan = Some(p);
    }
    let mut config = CalibratorConfig {
        heads: a.heads,
        bins: a.bins,
        weight_decay: a.weight_decay,
        initial_t0: a.init_t0,
        lr: a.lr,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        ablations: Ablations::parse_list(&a.ablate)?,
        ..CalibratorConfig::new(Method::parse(&a.method)?)
    };
    config.validate()?;

    let grid = if a.grid {
        let plan = match plan {
            Some(p) => p,
            None => SplitPlan {
                format_version: FORMAT_VERSION,
                seed: 0,
                labeled_fraction: f64::NAN,
                folds: 1,
                assignments: vec![vec![data.mask.clone()]],
            },
        };
        let report = grid_search(&data, &config, &default_grid(), &plan, Execution::default())?;
        let best = report.best_cell();
        info!("grid selected weight_decay={} initial_t0={}", best.weight_decay, best.initial_t0);
        config.weight_decay = best.weight_decay;
        config.initial_t0 = best.initial_t0;
        Some(report)
    } else {
        None
    };

    let calibrator = fit_calibrator(&config, &data)?;
    let report = evaluate_calibrator(&calibrator, &data, a.bins, grid)?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("calibrator.json"), &CalibratorFile::from(&calibrator).to_bytes())?;
    write_atomic(&a.out.join("report.json"), &to_json_bytes(&report))?;
    info!(
        "{}: test ECE {:.4} -> {:.4}",
        config.method.name(),
        report.uncalibrated.ece,
        report.calibrated.ece
    );
    Ok(())
}

pub fn evaluate_calibrator(
    c: &Calibrator,
    d: &Dataset,
    bins: usize,
    grid: Option<GridReport>,
) -> Result<CalibrationReport> {
    let test = eval_nodes(d, false)?;
    let out = apply_calibrator(c, d)?;
    let raw = softmax_rows(&d.logits)?;
    let mean_test_temperature = out
        .temperatures
        .as_ref()
        .map(|t| test.iter().map(|&i| t[i]).sum::<f64>() / test.len() as f64);
    Ok(CalibrationReport {
        format_version: FORMAT_VERSION,
        method: c.config.method,
        num_test_nodes: test.len(),
        uncalibrated: EvalResult::compute(&raw, &d.labels, &test, bins)?,
        calibrated: EvalResult::compute(&out.probs, &d.labels, &test, bins)?,
        mean_test_temperature,
        grid,
    })
}

#[derive(Debug, Serialize)]
struct EvaluationFile {
    format_version: u32,
    num_nodes: usize,
    #[serde(flatten)]
    result: EvalResult,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let d = load(&a.manifest)?;
    let probs = predictions(&d, a.calibrator.as_deref())?;
    let nodes = eval_nodes(&d, a.all_nodes)?;
    let result = EvalResult::compute(&probs, &d.labels, &nodes, a.bins)?;
    let bytes = to_json_bytes(&EvaluationFile { format_version: FORMAT_VERSION, num_nodes: nodes.len(), result });
    match &a.out {
        Some(p) => write_atomic(p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

/// Factors whose value-vs-nce curves are written.
const CURVE_FACTORS: [&str; 4] = ["dist_train", "delta_conf", "homophily", "entropy"];
/// Local-view factors whose pairwise curves are written.
const LOCAL_FACTORS: [&str; 3] = ["dist_train", "delta_conf", "homophily"];

pub fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let d = load(&a.manifest)?;
    let probs = predictions(&d, a.calibrator.as_deref())?;
    let nodes = eval_nodes(&d, a.all_nodes)?;
    let report = factor_report(&d, &probs, &nodes, a.bins)?;
    let binning = |f: &str| match Binning::default_for(f) {
        Binning::Count(_) => Binning::Count(a.factor_bins),
        b => b,
    };
    create_dir(&a.out_dir)?;
    let write = |name: &str, text: String| write_atomic(&a.out_dir.join(name), text.as_bytes());
    write("factors.csv", report.to_csv())?;
    write("reliability.csv", reliability_to_csv(&reliability_curve(&probs, &d.labels, &nodes, a.bins)?))?;
    for f in CURVE_FACTORS {
        write(&format!("curve_{f}_nce.csv"), curve_to_csv(&binned_factor_curve(&report, f, "nce", &binning(f))?))?;
    }
    for x in LOCAL_FACTORS {
        for y in LOCAL_FACTORS.iter().filter(|&&y| y != x) {
            let rows = binned_factor_curve(&report, x, y, &binning(x))?;
            write(&format!("corr_{x}_{y}.csv"), curve_to_csv(&rows))?;
        }
        let mut counts = String::from("bin_center,count\n");
        for r in binned_factor_curve(&report, x, "node_id", &binning(x))? {
            counts.push_str(&format!("{},{}\n", r.center, r.count));
        }
        write(&format!("counts_{x}.csv"), counts)?;
    }
    Ok(())
}

pub fn cmd_split(a: &SplitArgs) -> Result<()> {
    let d = load(&a.manifest)?;
    let cfg = SplitConfig { labeled_fraction: a.fraction, folds: a.folds, splits: a.splits };
    let plan = stratified_split(&d.labels, cfg, a.seed)?;
    create_dir(&a.out_dir)?;
    for (s, folds) in plan.assignments.iter().enumerate() {
        write_atomic(&a.out_dir.join(format!("split_{s}.json")), &to_json_bytes(&SplitFile::from(&folds[0])))?;
    }
    write_atomic(&a.out_dir.join("plan.json"), &to_json_bytes(&plan))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_nodes: a.nodes,
        num_classes: a.classes,
        intra_p: a.intra_p,
        inter_p: a.inter_p,
        signal: a.signal,
        noise_sigma: a.noise,
        miscal_mode: a.miscal.parse::<MiscalMode>()?,
        global_t: a.t,
        homophily_coeffs: (a.a, a.b),
        split: SplitConfig::default(),
        seed: a.seed,
    };
    let data = generate_with_truth(&cfg)?;
    write_synth(&data.dataset, &cfg, &a.out_dir)
}

/// Writes the data files plus `manifest.json` and `synth_config.json` into `dir`.
pub fn write_synth(d: &Dataset, cfg: &SynthConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_atomic(&dir.join("edges.txt"), edges_text(&d.graph).as_bytes())?;
    write_atomic(&dir.join("labels.txt"), labels_text(&d.labels).as_bytes())?;
    write_atomic(&dir.join("logits.txt"), logits_text(&d.logits).as_bytes())?;
    write_atomic(&dir.join("split.json"), &to_json_bytes(&SplitFile::from(&d.mask)))?;
    write_atomic(&dir.join("synth_config.json"), &to_json_bytes(cfg))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        edges: "edges.txt".into(),
        labels: "labels.txt".into(),
        logits: "logits.txt".into(),
        split: Some("split.json".into()),
        num_nodes: d.num_nodes(),
        num_classes: d.num_classes(),
        seed: cfg.seed,
    };
    write_atomic(&dir.join("manifest.json"), &to_json_bytes(&manifest))
}
