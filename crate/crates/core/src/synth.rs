//! Stochastic-block-model graphs with synthetic logits whose miscalibration
//! is known exactly.
//!
//! Clean logits are `s * onehot(block) + N(0, sigma^2)` and labels are drawn
//! from their softmax, so `softmax(clean)` is calibrated by construction. The
//! emitted logits are the clean ones multiplied by a per-node factor; dividing
//! by that factor (the generating temperature) recovers the calibrated
//! predictor.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CalibError, Result};
use crate::graph::Graph;
use crate::kernels::{argmax, softmax_into, Matrix};
use crate::rng::SeededRng;
use crate::trainer::{stratified_split, SplitConfig};

/// Lower bound on the homophily-mode logit multiplier.
pub const MIN_MULTIPLIER: f64 = 0.1;

const STREAM_EDGES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_LABELS: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiscalMode {
    None,
    GlobalT,
    HomophilyT,
}

impl FromStr for MiscalMode {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MiscalMode::None),
            "global" | "global_t" => Ok(MiscalMode::GlobalT),
            "homophily" | "homophily_t" => Ok(MiscalMode::HomophilyT),
            other => Err(CalibError::InvalidConfig(format!("unknown miscalibration mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub signal: f64,
    pub noise_sigma: f64,
    pub miscal_mode: MiscalMode,
    pub global_t: f64,
    /// `(a, b)` in the homophily-mode multiplier `a + b * node_homophily`.
    pub homophily_coeffs: (f64, f64),
    pub split: SplitConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 1000,
            num_classes: 4,
            intra_p: 0.01,
            inter_p: 0.002,
            signal: 2.0,
            noise_sigma: 1.0,
            miscal_mode: MiscalMode::None,
            global_t: 2.0,
            homophily_coeffs: (1.0, 0.5),
            split: SplitConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CalibError::InvalidConfig(m.into()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.intra_p) || !prob(self.inter_p) {
            return bad("edge probabilities must lie in [0, 1]");
        }
        if self.num_nodes == 0 || self.num_classes < 2 {
            return bad("need at least one node and two classes");
        }
        if !(self.signal >= 0.0 && self.signal.is_finite()) {
            return bad("signal must be finite and nonnegative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and nonnegative");
        }
        if !(self.global_t > 0.0 && self.global_t.is_finite()) {
            return bad("global temperature must be positive");
        }
        let (a, b) = self.homophily_coeffs;
        if !a.is_finite() || !b.is_finite() {
            return bad("homophily coefficients must be finite");
        }
        Ok(())
    }
}

/// A generated dataset plus the quantities needed for oracle comparisons.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Calibrated logits before miscalibration.
    pub clean_logits: Matrix,
    /// Per-node factor the clean logits were multiplied by.
    pub generating_temperatures: Vec<f64>,
    pub planted: Vec<usize>,
}

/// Planted block of node `i`: contiguous, sizes differ by at most one.
fn block_of(i: usize, n: usize, k: usize) -> usize {
    i * k / n
}

fn block_end(b: usize, n: usize, k: usize) -> usize {
    // first node whose block exceeds b
    ((b + 1) * n).div_ceil(k)
}

/// Visits each index of `lo..hi` independently with probability `p`, using
/// geometric skips.
fn bernoulli_indices(rng: &mut SeededRng, lo: usize, hi: usize, p: f64, out: &mut impl FnMut(usize)) {
    if p <= 0.0 || lo >= hi {
        return;
    }
    if p >= 1.0 {
        (lo..hi).for_each(out);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut j = lo;
    loop {
        let u = 1.0 - rng.uniform();
        let skip = (u.ln() / log_q).floor();
        if skip >= (hi - j) as f64 {
            return;
        }
        j += skip as usize;
        out(j);
        j += 1;
        if j >= hi {
            return;
        }
    }
}

fn sbm_edges(cfg: &SynthConfig) -> Vec<(usize, usize)> {
    let (n, k) = (cfg.num_nodes, cfg.num_classes);
    let mut rng = SeededRng::with_stream(cfg.seed, STREAM_EDGES);
    let mut edges = Vec::new();
    for i in 0..n {
        let end = block_end(block_of(i, n, k), n, k).min(n);
        bernoulli_indices(&mut rng, i + 1, end, cfg.intra_p, &mut |j| edges.push((i, j)));
        bernoulli_indices(&mut rng, end, n, cfg.inter_p, &mut |j| edges.push((i, j)));
    }
    edges
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(generate_with_truth(cfg)?.dataset)
}

pub fn generate_with_truth(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let (n, k) = (cfg.num_nodes, cfg.num_classes);
    let graph = Graph::from_edges(&sbm_edges(cfg), n)?;
    let planted: Vec<usize> = (0..n).map(|i| block_of(i, n, k)).collect();

    let mut noise = SeededRng::with_stream(cfg.seed, STREAM_NOISE);
    let mut clean = Matrix::zeros(n, k);
    for i in 0..n {
        let row = clean.row_mut(i);
        for (c, v) in row.iter_mut().enumerate() {
            let boost = if c == planted[i] { cfg.signal } else { 0.0 };
            *v = boost + cfg.noise_sigma * noise.normal();
        }
    }
    let mut draw = SeededRng::with_stream(cfg.seed, STREAM_LABELS);
    let mut p = vec![0.0; k];
    let labels: Vec<usize> = clean
        .iter_rows()
        .map(|row| {
            softmax_into(row, &mut p);
            draw.categorical(&p)
        })
        .collect();

    let temps = match cfg.miscal_mode {
        MiscalMode::None => vec![1.0; n],
        MiscalMode::GlobalT => vec![cfg.global_t; n],
        MiscalMode::HomophilyT => {
            let pred: Vec<usize> = clean.iter_rows().map(argmax).collect();
            let (a, b) = cfg.homophily_coeffs;
            graph
                .node_homophily(&pred)
                .into_iter()
                .map(|h| (a + b * h).max(MIN_MULTIPLIER))
                .collect()
        }
    };
    let mut logits = clean.clone();
    for (i, &t) in temps.iter().enumerate() {
        logits.row_mut(i).iter_mut().for_each(|v| *v *= t);
    }

    let plan = stratified_split(&labels, cfg.split, cfg.seed)?;
    let mask = plan.assignments[0][0].clone();
    let dataset = Dataset::new(graph, logits, labels, mask)?;
    Ok(SynthData { dataset, clean_logits: clean, generating_temperatures: temps, planted })
}
