//! Graph attention temperature scaling.
//!
//! Each node gets its own temperature
//!
//! ```text
//! T_i = (1/H) sum_h softplus(omega * dconf_i + sum_{j in N(i) + i} alpha_ij * gamma_j * tau_j^h) + T0
//! tau_j^h  = theta_h . ztilde_j                       (ztilde: min-max normalized, sorted logits)
//! alpha_ij = softmax_j(leaky_relu(z_i . z_j / (gamma_i * gamma_j)))
//! gamma_i  = gamma_t (training node) | gamma_n (neighbor of one) | 1
//! ```
//!
//! `dconf_i` is the node's confidence minus the mean confidence of its
//! neighbors under the uncalibrated softmax; it is computed once and held
//! constant. Temperatures are clamped below at [`TEMPERATURE_FLOOR`], so
//! `softmax(z_i / T_i)` never changes a node's argmax.

use super::{clamp_temperature, scaled_nll, CalibratorConfig, Model, TEMPERATURE_FLOOR};
use crate::calibrators::Ablations;
use crate::dataset::Dataset;
use crate::diagnostics::relative_confidence;
use crate::error::{CalibError, Result};
use crate::graph::Graph;
use crate::kernels::{leaky_relu, leaky_relu_grad, normalize_logits, sigmoid, softmax_rows, softplus, Matrix};
use crate::rng::SeededRng;

const T0: usize = 0;
const OMEGA: usize = 1;
const GAMMA_T: usize = 2;
const GAMMA_N: usize = 3;
const THETA: usize = 4;

/// Learnable GATS parameters: `K * H + 4` scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct GatsParams {
    pub t0: f64,
    pub omega: f64,
    pub gamma_train: f64,
    pub gamma_neighbor: f64,
    /// One row per head, `H x K`.
    pub theta: Matrix,
}

impl GatsParams {
    /// The point where every head contributes `softplus(0)`.
    pub fn identity(num_classes: usize, heads: usize) -> Self {
        GatsParams {
            t0: 1.0,
            omega: 0.0,
            gamma_train: 1.0,
            gamma_neighbor: 1.0,
            theta: Matrix::zeros(heads, num_classes),
        }
    }

    pub fn num_params(&self) -> usize {
        self.theta.rows() * self.theta.cols() + 4
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![self.t0, self.omega, self.gamma_train, self.gamma_neighbor];
        v.extend_from_slice(self.theta.data());
        v
    }

    pub fn from_flat(p: &[f64], num_classes: usize, heads: usize) -> Self {
        GatsParams {
            t0: p[T0],
            omega: p[OMEGA],
            gamma_train: p[GAMMA_T],
            gamma_neighbor: p[GAMMA_N],
            theta: Matrix::new(heads, num_classes, p[THETA..].to_vec()).expect("layout"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeKind {
    Train,
    Neighbor,
    Other,
}

pub(crate) struct GatsModel<'a> {
    logits: &'a Matrix,
    labels: &'a [usize],
    ctx: GatsContext,
    frozen: Vec<bool>,
}

/// Everything about the graph and logits that does not depend on the
/// parameters.
struct GatsContext {
    num_classes: usize,
    heads: usize,
    slope: f64,
    ablations: Ablations,
    ztilde: Matrix,
    dconf: Vec<f64>,
    kind: Vec<NodeKind>,
    /// CSR over `N(i) + i`, with `z_i . z_j` per entry.
    nb_offsets: Vec<usize>,
    nb_index: Vec<usize>,
    nb_dot: Vec<f64>,
}

/// Parameter values after ablations are applied.
struct Effective<'p> {
    t0: f64,
    omega: f64,
    gamma_t: f64,
    gamma_n: f64,
    theta: &'p [f64],
}

struct NodeForward {
    neighbors: std::ops::Range<usize>,
    /// leaky-ReLU inputs and attention weights over the neighborhood
    scores: Vec<f64>,
    alpha: Vec<f64>,
    /// per-head softplus arguments
    pre: Vec<f64>,
    t_raw: f64,
}

impl GatsContext {
    fn new(logits: &Matrix, graph: &Graph, train: &[usize], cfg: &CalibratorConfig) -> Result<Self> {
        let n = graph.num_nodes();
        if logits.rows() != n {
            return Err(CalibError::ShapeMismatch(format!(
                "{} logit rows for {n} nodes",
                logits.rows()
            )));
        }
        let probs = softmax_rows(logits)?;
        let dconf = relative_confidence(&probs, graph);
        let mut kind = vec![NodeKind::Other; n];
        for j in graph.boundary_of(train) {
            kind[j] = NodeKind::Neighbor;
        }
        for &i in train {
            kind[i] = NodeKind::Train;
        }
        let mut nb_offsets = Vec::with_capacity(n + 1);
        let mut nb_index = Vec::new();
        let mut nb_dot = Vec::new();
        nb_offsets.push(0);
        for i in 0..n {
            let zi = logits.row(i);
            for j in graph.neighbors_with_self(i) {
                nb_index.push(j);
                nb_dot.push(zi.iter().zip(logits.row(j)).map(|(a, b)| a * b).sum());
            }
            nb_offsets.push(nb_index.len());
        }
        Ok(GatsContext {
            num_classes: logits.cols(),
            heads: cfg.heads,
            slope: cfg.leaky_slope,
            ablations: cfg.ablations,
            ztilde: normalize_logits(logits, !cfg.ablations.no_sorting),
            dconf,
            kind,
            nb_offsets,
            nb_index,
            nb_dot,
        })
    }

    fn num_params(&self) -> usize {
        self.num_classes * self.heads + 4
    }

    fn effective<'p>(&self, p: &'p [f64]) -> Effective<'p> {
        let a = self.ablations;
        Effective {
            t0: if a.no_t0 { 0.0 } else { p[T0] },
            omega: if a.no_dconf { 0.0 } else { p[OMEGA] },
            gamma_t: if a.no_gamma { 1.0 } else { p[GAMMA_T] },
            gamma_n: if a.no_gamma { 1.0 } else { p[GAMMA_N] },
            theta: &p[THETA..],
        }
    }

    fn gamma(&self, e: &Effective, i: usize) -> f64 {
        match self.kind[i] {
            NodeKind::Train => e.gamma_t,
            NodeKind::Neighbor => e.gamma_n,
            NodeKind::Other => 1.0,
        }
    }

    /// Parameter slot receiving the gradient of `gamma_i`, if learnable.
    fn gamma_slot(&self, i: usize) -> Option<usize> {
        if self.ablations.no_gamma {
            return None;
        }
        match self.kind[i] {
            NodeKind::Train => Some(GAMMA_T),
            NodeKind::Neighbor => Some(GAMMA_N),
            NodeKind::Other => None,
        }
    }

    /// `tau[j * H + h] = theta_h . ztilde_j` for the nodes in `needed`.
    fn head_contributions(&self, e: &Effective, needed: &[bool]) -> Vec<f64> {
        let (h_count, k) = (self.heads, self.num_classes);
        let mut tau = vec![0.0; needed.len() * h_count];
        for (j, _) in needed.iter().enumerate().filter(|(_, &n)| n) {
            let zt = self.ztilde.row(j);
            for h in 0..h_count {
                let th = &e.theta[h * k..(h + 1) * k];
                tau[j * h_count + h] = th.iter().zip(zt).map(|(a, b)| a * b).sum();
            }
        }
        tau
    }

    /// Marks `nodes` and their neighbors, whose contributions are needed.
    fn needed_for(&self, nodes: &[usize]) -> Vec<bool> {
        let mut needed = vec![false; self.kind.len()];
        for &i in nodes {
            for &j in &self.nb_index[self.nb_offsets[i]..self.nb_offsets[i + 1]] {
                needed[j] = true;
            }
        }
        needed
    }

    fn node_forward(&self, e: &Effective, tau: &[f64], i: usize) -> NodeForward {
        let h_count = self.heads;
        let range = self.nb_offsets[i]..self.nb_offsets[i + 1];
        let gi = self.gamma(e, i);
        let mut pre = vec![e.omega * self.dconf[i]; h_count];
        let mut scores = Vec::new();
        let mut alpha = Vec::new();
        if !self.ablations.no_attention {
            scores = range
                .clone()
                .map(|idx| {
                    let j = self.nb_index[idx];
                    self.nb_dot[idx] / (gi * self.gamma(e, j))
                })
                .collect();
            let activated: Vec<f64> = scores.iter().map(|&s| leaky_relu(s, self.slope)).collect();
            let m = activated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            alpha = activated.iter().map(|&a| (a - m).exp()).collect();
            let total: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|a| *a /= total);
            for (local, idx) in range.clone().enumerate() {
                let j = self.nb_index[idx];
                let weight = alpha[local] * self.gamma(e, j);
                for h in 0..h_count {
                    pre[h] += weight * tau[j * h_count + h];
                }
            }
        }
        let t_raw = pre.iter().map(|&a| softplus(a)).sum::<f64>() / h_count as f64 + e.t0;
        NodeForward { neighbors: range, scores, alpha, pre, t_raw }
    }

    fn temperatures_for(&self, p: &[f64], nodes: &[usize]) -> Vec<f64> {
        let e = self.effective(p);
        let tau = self.head_contributions(&e, &self.needed_for(nodes));
        nodes
            .iter()
            .map(|&i| self.node_forward(&e, &tau, i).t_raw.max(TEMPERATURE_FLOOR))
            .collect()
    }
}

/// Per-node GATS temperatures for every node of `g`.
///
/// `train` is the set of training nodes; their direct neighbors (outside the
/// set) receive `gamma_neighbor`.
pub fn gats_node_temperatures(
    params: &GatsParams,
    logits: &Matrix,
    g: &Graph,
    train: &[usize],
    config: &CalibratorConfig,
) -> Result<Vec<f64>> {
    let flat = params.to_flat();
    if let Some(pos) = flat.iter().position(|v| !v.is_finite()) {
        let name = match pos {
            T0 => "t0".to_string(),
            OMEGA => "omega".to_string(),
            GAMMA_T => "gamma_t".to_string(),
            GAMMA_N => "gamma_n".to_string(),
            p => format!("theta[{}]", p - THETA),
        };
        return Err(CalibError::NonFiniteParameter(name));
    }
    if params.theta.cols() != logits.cols() || params.theta.rows() != config.heads {
        return Err(CalibError::ShapeMismatch(format!(
            "theta is {}x{}, expected {}x{}",
            params.theta.rows(),
            params.theta.cols(),
            config.heads,
            logits.cols()
        )));
    }
    let ctx = GatsContext::new(logits, g, train, config)?;
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    Ok(ctx.temperatures_for(&flat, &all))
}

impl<'a> GatsModel<'a> {
    pub fn new(d: &'a Dataset, cfg: &CalibratorConfig) -> Result<Self> {
        let ctx = GatsContext::new(&d.logits, &d.graph, &d.mask.train, cfg)?;
        let a = cfg.ablations;
        let mut frozen = vec![false; ctx.num_params()];
        frozen[T0] = a.no_t0;
        frozen[OMEGA] = a.no_dconf;
        frozen[GAMMA_T] = a.no_gamma;
        frozen[GAMMA_N] = a.no_gamma;
        frozen[THETA..].iter_mut().for_each(|f| *f = a.no_attention);
        Ok(GatsModel { logits: &d.logits, labels: &d.labels, ctx, frozen })
    }

    /// `T0 = initial_t0` (0 under `no_t0`), `omega = 0`, `gamma = 1`, and
    /// `theta` uniform in `[-1/sqrt(K), 1/sqrt(K)]` from one sub-stream per head.
    pub fn init_params(&self, cfg: &CalibratorConfig) -> GatsParams {
        let k = self.ctx.num_classes;
        let bound = 1.0 / (k as f64).sqrt();
        let mut theta = Vec::with_capacity(k * cfg.heads);
        for h in 0..cfg.heads {
            let mut rng = SeededRng::with_stream(cfg.seed, 0x6a75_0000 + h as u64);
            theta.extend((0..k).map(|_| rng.uniform_range(-bound, bound)));
        }
        GatsParams {
            t0: if cfg.ablations.no_t0 { 0.0 } else { cfg.initial_t0 },
            omega: 0.0,
            gamma_train: 1.0,
            gamma_neighbor: 1.0,
            theta: Matrix::new(cfg.heads, k, theta).expect("layout"),
        }
    }
}

impl Model for GatsModel<'_> {
    fn num_params(&self) -> usize {
        self.ctx.num_params()
    }

    fn loss(&self, p: &[f64], nodes: &[usize]) -> f64 {
        let temps = self.ctx.temperatures_for(p, nodes);
        let total: f64 = nodes
            .iter()
            .zip(&temps)
            .map(|(&i, &t)| scaled_nll(self.logits.row(i), self.labels[i], t).0)
            .sum();
        total / nodes.len() as f64
    }

    fn loss_and_grad(&self, p: &[f64], nodes: &[usize]) -> (f64, Vec<f64>) {
        let ctx = &self.ctx;
        let (h_count, k) = (ctx.heads, ctx.num_classes);
        let e = ctx.effective(p);
        let tau = ctx.head_contributions(&e, &ctx.needed_for(nodes));
        let scale = 1.0 / nodes.len() as f64;
        let mut grad = vec![0.0; ctx.num_params()];
        let mut loss = 0.0;
        let mut g_pre = vec![0.0; h_count];
        let mut agg = vec![0.0; h_count];

        for &i in nodes {
            let fwd = ctx.node_forward(&e, &tau, i);
            let (t, dt) = clamp_temperature(fwd.t_raw);
            let (l, dl_dt) = scaled_nll(self.logits.row(i), self.labels[i], t);
            loss += l;
            let g_t = dl_dt * dt * scale;
            if g_t == 0.0 {
                continue;
            }
            grad[T0] += g_t;
            for h in 0..h_count {
                g_pre[h] = g_t / h_count as f64 * sigmoid(fwd.pre[h]);
            }
            grad[OMEGA] += g_pre.iter().sum::<f64>() * ctx.dconf[i];
            if ctx.ablations.no_attention {
                continue;
            }

            let gi = ctx.gamma(&e, i);
            let slot_i = ctx.gamma_slot(i);
            // aggregated value per head: A_h = sum_j alpha_j gamma_j tau_jh
            agg.iter_mut().for_each(|a| *a = 0.0);
            for (local, idx) in fwd.neighbors.clone().enumerate() {
                let j = ctx.nb_index[idx];
                let w = fwd.alpha[local] * ctx.gamma(&e, j);
                for h in 0..h_count {
                    agg[h] += w * tau[j * h_count + h];
                }
            }
            for (local, idx) in fwd.neighbors.clone().enumerate() {
                let j = ctx.nb_index[idx];
                let gj = ctx.gamma(&e, j);
                let a = fwd.alpha[local];
                let zt = ctx.ztilde.row(j);
                let mut d_gamma_j_value = 0.0;
                let mut d_act = 0.0;
                for h in 0..h_count {
                    let tj = tau[j * h_count + h];
                    // through tau: d pre_h / d theta_h = alpha * gamma_j * ztilde_j
                    let coef = g_pre[h] * a * gj;
                    for c in 0..k {
                        grad[THETA + h * k + c] += coef * zt[c];
                    }
                    d_gamma_j_value += g_pre[h] * a * tj;
                    // through the softmax over the neighborhood
                    d_act += g_pre[h] * a * (gj * tj - agg[h]);
                }
                let score = fwd.scores[local];
                let d_score = d_act * leaky_relu_grad(score, ctx.slope);
                if let Some(s) = ctx.gamma_slot(j) {
                    grad[s] += d_gamma_j_value - d_score * score / gj;
                }
                if let Some(s) = slot_i {
                    grad[s] -= d_score * score / gi;
                }
            }
        }
        for (g, &f) in grad.iter_mut().zip(&self.frozen) {
            if f {
                *g = 0.0;
            }
        }
        (loss * scale, grad)
    }

    fn frozen(&self) -> Option<&[bool]> {
        Some(&self.frozen)
    }
}
