//! Scaling calibrators sharing one fit/apply contract.
//!
//! | method | parameters | per-node temperature |
//! |--------|------------|----------------------|
//! | TS     | `T`        | no (global)          |
//! | VS     | `w`, `b` (K each) | no            |
//! | ETS    | `T`, simplex weights `(w1, w2, w3)` | no |
//! | CaGCN  | two GCN layers over the logits | yes |
//! | GATS   | `T0`, `omega`, `gamma_t`, `gamma_n`, `theta` (H x K) | yes |
//!
//! Every method is fitted by minimizing the validation-mask NLL with Adam,
//! early-stopped on the training-mask NLL. Gradients are analytic; see the
//! per-method modules.

mod cagcn;
mod gats;
mod hexfloat;
mod scaling;
mod serialize;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CalibError, Result};
use crate::kernels::{log_sum_exp, softmax_into, Matrix};
use crate::trainer::{fit_with_early_stopping, AdamConfig, FitOutcome, Objective, Schedule};

pub use cagcn::{normalized_adjacency, CagcnParams, SparseMatrix};
pub use gats::{gats_node_temperatures, GatsParams};
pub use hexfloat::{format_hex_float, parse_hex_float};
pub use serialize::CalibratorFile;

/// Lower bound applied to every per-node temperature.
pub const TEMPERATURE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ts,
    Vs,
    Ets,
    Cagcn,
    Gats,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ts, Method::Vs, Method::Ets, Method::Cagcn, Method::Gats];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ts => "ts",
            Method::Vs => "vs",
            Method::Ets => "ets",
            Method::Cagcn => "cagcn",
            Method::Gats => "gats",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CalibError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// GATS ablation switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// `T0` fixed to 0.
    pub no_t0: bool,
    /// `gamma_t = gamma_n = 1` fixed.
    pub no_gamma: bool,
    /// `omega` fixed to 0.
    pub no_dconf: bool,
    /// Attention-aggregated contribution removed.
    pub no_attention: bool,
    /// Normalized but unsorted logits fed to the heads.
    pub no_sorting: bool,
}

impl Ablations {
    pub fn any(&self) -> bool {
        self.no_t0 || self.no_gamma || self.no_dconf || self.no_attention || self.no_sorting
    }

    /// Parses a comma-separated list such as `no_t0,no_attention`.
    pub fn parse_list(s: &str) -> Result<Ablations> {
        let mut a = Ablations::default();
        for flag in s.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            match flag {
                "no_t0" => a.no_t0 = true,
                "no_gamma" => a.no_gamma = true,
                "no_dconf" => a.no_dconf = true,
                "no_attention" => a.no_attention = true,
                "no_sorting" => a.no_sorting = true,
                other => {
                    return Err(CalibError::InvalidConfig(format!("unknown ablation `{other}`")))
                }
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratorConfig {
    pub method: Method,
    pub heads: usize,
    pub bins: usize,
    pub weight_decay: f64,
    pub initial_t0: f64,
    pub leaky_slope: f64,
    pub ablations: Ablations,
    pub cagcn_hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl CalibratorConfig {
    pub fn new(method: Method) -> Self {
        CalibratorConfig {
            method,
            heads: 8,
            bins: 15,
            weight_decay: 0.0,
            initial_t0: 1.0,
            leaky_slope: 0.2,
            ablations: Ablations::default(),
            cagcn_hidden: 16,
            lr: 0.01,
            max_epochs: 2000,
            patience: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CalibError::InvalidConfig(m.into()));
        if self.heads == 0 {
            return bad("heads must be at least 1");
        }
        if self.bins == 0 {
            return bad("bins must be at least 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and nonnegative");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)");
        }
        if !self.initial_t0.is_finite() || !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("initial temperature and learning rate must be finite (lr > 0)");
        }
        if self.cagcn_hidden == 0 {
            return bad("cagcn_hidden must be at least 1");
        }
        if self.method != Method::Gats && self.ablations.any() {
            return bad("ablation flags only apply to GATS");
        }
        Ok(())
    }

    fn schedule(&self) -> Schedule {
        Schedule { max_epochs: self.max_epochs, patience: self.patience }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Ts { temperature: f64 },
    Vs { weights: Vec<f64>, bias: Vec<f64> },
    Ets { temperature: f64, weights: [f64; 3] },
    Cagcn(cagcn::CagcnParams),
    Gats(GatsParams),
}

impl Params {
    /// Number of learnable scalars.
    pub fn len(&self) -> usize {
        self.to_flat().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat parameter vector in the layout used by the objective.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            Params::Ts { temperature } => vec![*temperature],
            Params::Vs { weights, bias } => weights.iter().chain(bias).copied().collect(),
            Params::Ets { temperature, weights } => {
                vec![*temperature, weights[0], weights[1], weights[2]]
            }
            Params::Cagcn(p) => p.to_flat(),
            Params::Gats(p) => p.to_flat(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub best_monitor: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl From<&FitOutcome> for FitSummary {
    fn from(o: &FitOutcome) -> Self {
        FitSummary { best_monitor: o.best_monitor, best_epoch: o.best_epoch, epochs_run: o.epochs_run }
    }
}

/// A fitted calibrator.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibrator {
    pub config: CalibratorConfig,
    pub num_classes: usize,
    pub params: Params,
    pub fit: Option<FitSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedOutput {
    pub probs: Matrix,
    /// Per-node temperatures for TS, CaGCN and GATS.
    pub temperatures: Option<Vec<f64>>,
}

/// A method's training problem on one dataset, in flat-parameter form.
pub(crate) trait Model: Sync {
    fn num_params(&self) -> usize;
    fn loss(&self, params: &[f64], nodes: &[usize]) -> f64;
    fn loss_and_grad(&self, params: &[f64], nodes: &[usize]) -> (f64, Vec<f64>);
    fn frozen(&self) -> Option<&[bool]> {
        None
    }
    fn project(&self, _params: &mut [f64]) {}
}

/// Validation-NLL objective for one method on one dataset, exposed for
/// gradient checking and custom optimization loops.
pub struct CalibrationObjective<'a> {
    model: Box<dyn Model + 'a>,
    fit_nodes: Vec<usize>,
    monitor_nodes: Vec<usize>,
    init: Vec<f64>,
}

impl<'a> CalibrationObjective<'a> {
    /// Builds the objective for `config.method`. For ETS the first entry is the
    /// internal TS temperature, held fixed during weight fitting.
    pub fn new(config: &CalibratorConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if dataset.mask.val.is_empty() {
            return Err(CalibError::EmptyCalibrationSet);
        }
        let monitor_nodes = if dataset.mask.train.is_empty() {
            dataset.mask.val.clone()
        } else {
            dataset.mask.train.clone()
        };
        let (model, init): (Box<dyn Model + 'a>, Vec<f64>) = match config.method {
            Method::Ts => (Box::new(scaling::TsModel::new(dataset)), vec![config.initial_t0]),
            Method::Vs => {
                let k = dataset.num_classes();
                let mut init = vec![1.0; k];
                init.extend(vec![0.0; k]);
                (Box::new(scaling::VsModel::new(dataset)), init)
            }
            Method::Ets => (
                Box::new(scaling::EtsModel::new(dataset, true)),
                vec![config.initial_t0, 1.0, 0.0, 0.0],
            ),
            Method::Cagcn => {
                let m = cagcn::CagcnModel::new(dataset, config.cagcn_hidden);
                let init = m.init_params(config.seed).to_flat();
                (Box::new(m), init)
            }
            Method::Gats => {
                let m = gats::GatsModel::new(dataset, config)?;
                let init = m.init_params(config).to_flat();
                (Box::new(m), init)
            }
        };
        Ok(CalibrationObjective { model, fit_nodes: dataset.mask.val.clone(), monitor_nodes, init })
    }

    pub fn initial_params(&self) -> &[f64] {
        &self.init
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        self.model.loss(params, &self.fit_nodes)
    }
}

impl Objective for CalibrationObjective<'_> {
    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        self.model.loss_and_grad(params, &self.fit_nodes)
    }

    fn monitor(&self, params: &[f64]) -> f64 {
        self.model.loss(params, &self.monitor_nodes)
    }

    fn frozen(&self) -> Option<&[bool]> {
        self.model.frozen()
    }

    fn project(&self, params: &mut [f64]) {
        self.model.project(params)
    }
}

/// Fits `config.method` on the dataset's validation mask, early-stopping on
/// the training mask.
pub fn fit_calibrator(config: &CalibratorConfig, dataset: &Dataset) -> Result<Calibrator> {
    config.validate()?;
    if dataset.mask.val.is_empty() {
        return Err(CalibError::EmptyCalibrationSet);
    }
    let k = dataset.num_classes();
    let (params, outcome) = match config.method {
        Method::Ets => {
            // internal TS first, then the mixture weights with T held fixed
            let ts_cfg = CalibratorConfig { method: Method::Ts, ..*config };
            let ts = CalibrationObjective::new(&ts_cfg, dataset)?;
            let ts_out =
                fit_with_early_stopping(&ts, ts.initial_params().to_vec(), config.schedule(), config.adam())?;
            let temperature = ts_out.params[0].max(TEMPERATURE_FLOOR);
            let obj = CalibrationObjective {
                model: Box::new(scaling::EtsModel::new(dataset, false)),
                fit_nodes: dataset.mask.val.clone(),
                monitor_nodes: ts.monitor_nodes.clone(),
                init: vec![temperature, 1.0, 0.0, 0.0],
            };
            let out = fit_with_early_stopping(&obj, obj.init.clone(), config.schedule(), config.adam())?;
            let p = &out.params;
            (Params::Ets { temperature: p[0], weights: [p[1], p[2], p[3]] }, out)
        }
        _ => {
            let obj = CalibrationObjective::new(config, dataset)?;
            let out = fit_with_early_stopping(&obj, obj.init.clone(), config.schedule(), config.adam())?;
            let p = &out.params;
            let params = match config.method {
                Method::Ts => Params::Ts { temperature: p[0] },
                Method::Vs => Params::Vs { weights: p[..k].to_vec(), bias: p[k..].to_vec() },
                Method::Cagcn => Params::Cagcn(cagcn::CagcnParams::from_flat(p, k, config.cagcn_hidden)),
                Method::Gats => Params::Gats(GatsParams::from_flat(p, k, config.heads)),
                Method::Ets => unreachable!(),
            };
            (params, out)
        }
    };
    Ok(Calibrator { config: *config, num_classes: k, params, fit: Some(FitSummary::from(&outcome)) })
}

/// Calibrated probabilities (and temperatures, where the method has them)
/// for every node of `dataset`.
pub fn apply_calibrator(c: &Calibrator, dataset: &Dataset) -> Result<CalibratedOutput> {
    if dataset.num_classes() != c.num_classes {
        return Err(CalibError::ShapeMismatch(format!(
            "calibrator fitted for {} classes, dataset has {}",
            c.num_classes,
            dataset.num_classes()
        )));
    }
    let z = &dataset.logits;
    let n = dataset.num_nodes();
    let out = match &c.params {
        Params::Ts { temperature } => {
            ensure_finite("temperature", &[*temperature])?;
            let t = temperature.max(TEMPERATURE_FLOOR);
            let temps = vec![t; n];
            CalibratedOutput { probs: scale_by_temperature(z, &temps), temperatures: Some(temps) }
        }
        Params::Vs { weights, bias } => {
            ensure_finite("vs", weights)?;
            ensure_finite("vs", bias)?;
            CalibratedOutput {
                probs: z.map_rows(|row, out| {
                    let u: Vec<f64> = (0..row.len()).map(|k| weights[k] * row[k] + bias[k]).collect();
                    softmax_into(&u, out);
                }),
                temperatures: None,
            }
        }
        Params::Ets { temperature, weights } => {
            ensure_finite("ets", &[*temperature, weights[0], weights[1], weights[2]])?;
            CalibratedOutput {
                probs: scaling::ets_probs(z, temperature.max(TEMPERATURE_FLOOR), weights),
                temperatures: None,
            }
        }
        Params::Cagcn(p) => {
            ensure_finite("cagcn", &p.to_flat())?;
            let model = cagcn::CagcnModel::new(dataset, c.config.cagcn_hidden);
            let temps = model.temperatures(&p.to_flat());
            CalibratedOutput { probs: scale_by_temperature(z, &temps), temperatures: Some(temps) }
        }
        Params::Gats(p) => {
            let temps = gats_node_temperatures(
                p,
                z,
                &dataset.graph,
                &dataset.mask.train,
                &c.config,
            )?;
            CalibratedOutput { probs: scale_by_temperature(z, &temps), temperatures: Some(temps) }
        }
    };
    Ok(out)
}

fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CalibError::NonFiniteParameter(name.into()))
    }
}

/// Row-wise `softmax(z_i / T_i)`.
pub fn scale_by_temperature(z: &Matrix, temps: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    let mut buf = vec![0.0; z.cols()];
    for i in 0..z.rows() {
        for (b, &x) in buf.iter_mut().zip(z.row(i)) {
            *b = x / temps[i];
        }
        softmax_into(&buf, out.row_mut(i));
    }
    out
}

/// NLL of `softmax(z / t)` at `label` and its derivative in `t`.
///
/// `d/dt [lse(z/t) - z_y/t] = (z_y - sum_k p_k z_k) / t^2`.
pub(crate) fn scaled_nll(z: &[f64], label: usize, t: f64) -> (f64, f64) {
    let u: Vec<f64> = z.iter().map(|x| x / t).collect();
    let lse = log_sum_exp(&u);
    let loss = lse - u[label];
    let mean_z: f64 = u.iter().zip(z).map(|(&ui, &zi)| (ui - lse).exp() * zi).sum();
    (loss, (z[label] - mean_z) / (t * t))
}

/// Effective temperature and its derivative w.r.t. the raw value.
pub(crate) fn clamp_temperature(t: f64) -> (f64, f64) {
    if t >= TEMPERATURE_FLOOR {
        (t, 1.0)
    } else {
        (TEMPERATURE_FLOOR, 0.0)
    }
}
