//! Per-node calibration factors and the binned tables behind the usual
//! diagnostic plots (reliability diagram, factor-vs-error curves, factor
//! correlation curves, node-count histograms). Everything renders to CSV.

use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::error::{CalibError, Result};
use crate::graph::{Distance, Graph};
use crate::kernels::{argmax, max_value, Matrix};
use crate::metrics::{entropy_per_node, nodewise_calibration_error, reliability_bins};

pub const FACTOR_COLUMNS: [&str; 7] =
    ["node_id", "dist_train", "delta_conf", "homophily", "entropy", "nce", "conf"];

/// Default number of bins for continuous factors.
pub const DEFAULT_FACTOR_BINS: usize = 10;

/// Node confidence minus the mean confidence of its neighbors (self
/// excluded); isolated nodes get 0.
pub fn relative_confidence(probs: &Matrix, g: &Graph) -> Vec<f64> {
    let conf: Vec<f64> = probs.iter_rows().map(max_value).collect();
    (0..g.num_nodes())
        .map(|i| {
            let nb = g.neighbors(i);
            if nb.is_empty() {
                0.0
            } else {
                conf[i] - nb.iter().map(|&j| conf[j]).sum::<f64>() / nb.len() as f64
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorRow {
    pub node_id: usize,
    pub dist_train: Distance,
    pub delta_conf: f64,
    pub homophily: f64,
    pub entropy: f64,
    pub nce: f64,
    pub conf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorReport {
    pub rows: Vec<FactorRow>,
}

/// Per-node factors over `eval_set` (ascending node order). Node homophily
/// uses the predicted labels of `probs`; distances are to the training mask.
pub fn factor_report(
    dataset: &Dataset,
    probs: &Matrix,
    eval_set: &[usize],
    num_bins: usize,
) -> Result<FactorReport> {
    let mut ids = eval_set.to_vec();
    ids.sort_unstable();
    let g = &dataset.graph;
    let bins = reliability_bins(probs, &dataset.labels, &ids, num_bins)?;
    let nce = nodewise_calibration_error(&bins, probs, &dataset.labels, &ids)?;
    let dist = if dataset.mask.train.is_empty() {
        vec![Distance::Unreachable; g.num_nodes()]
    } else {
        g.bfs_distance_to_set(&dataset.mask.train)?
    };
    let pred: Vec<usize> = probs.iter_rows().map(argmax).collect();
    let homophily = g.node_homophily(&pred);
    let dconf = relative_confidence(probs, g);
    let entropy = entropy_per_node(probs);
    let rows = ids
        .iter()
        .zip(nce)
        .map(|(&i, nce)| FactorRow {
            node_id: i,
            dist_train: dist[i],
            delta_conf: dconf[i],
            homophily: homophily[i],
            entropy: entropy[i],
            nce,
            conf: max_value(probs.row(i)),
        })
        .collect();
    Ok(FactorReport { rows })
}

impl FactorReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column values; `None` marks an unreachable distance.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let pick: fn(&FactorRow) -> Option<f64> = match name {
            "node_id" => |r| Some(r.node_id as f64),
            "dist_train" => |r| r.dist_train.hops().map(|h| h as f64),
            "delta_conf" => |r| Some(r.delta_conf),
            "homophily" => |r| Some(r.homophily),
            "entropy" => |r| Some(r.entropy),
            "nce" => |r| Some(r.nce),
            "conf" => |r| Some(r.conf),
            other => return Err(CalibError::UnknownColumn(other.to_string())),
        };
        Ok(self.rows.iter().map(pick).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = FACTOR_COLUMNS.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.node_id, r.dist_train, r.delta_conf, r.homophily, r.entropy, r.nce, r.conf
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Binning {
    /// Equal-width bins over the observed range.
    Count(usize),
    /// Explicit ascending edges; the last bin is closed on the right.
    Edges(Vec<f64>),
    /// One bin per integer value between the observed min and max.
    Integer,
}

impl Binning {
    /// Per-integer bins for distances, [`DEFAULT_FACTOR_BINS`] otherwise.
    pub fn default_for(factor: &str) -> Binning {
        if factor == "dist_train" {
            Binning::Integer
        } else {
            Binning::Count(DEFAULT_FACTOR_BINS)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub center: f64,
    pub mean: Option<f64>,
    pub count: usize,
}

/// Mean of `value_column` within bins of `factor`. Rows whose factor or
/// value is an unreachable distance are skipped.
pub fn binned_factor_curve(
    report: &FactorReport,
    factor: &str,
    value_column: &str,
    binning: &Binning,
) -> Result<Vec<CurveRow>> {
    let xs = report.column(factor)?;
    let ys = report.column(value_column)?;
    let pairs: Vec<(f64, f64)> =
        xs.into_iter().zip(ys).filter_map(|(x, y)| Some((x?, y?))).collect();
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);

    type Assign = Box<dyn Fn(f64) -> Option<usize>>;
    let (centers, assign): (Vec<f64>, Assign) = match binning {
        Binning::Integer => {
            let (lo, hi) = (lo.floor() as i64, hi.floor() as i64);
            let centers = (lo..=hi).map(|v| v as f64).collect();
            (centers, Box::new(move |x: f64| Some((x.floor() as i64 - lo) as usize)))
        }
        Binning::Count(b) => {
            let b = (*b).max(1);
            let width = (hi - lo) / b as f64;
            let centers = (0..b).map(|i| lo + (i as f64 + 0.5) * width).collect();
            (
                centers,
                Box::new(move |x: f64| {
                    if width > 0.0 {
                        Some((((x - lo) / width).floor() as usize).min(b - 1))
                    } else {
                        Some(0)
                    }
                }),
            )
        }
        Binning::Edges(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CalibError::InvalidConfig("bin edges must be strictly ascending".into()));
            }
            let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            let edges = edges.clone();
            (
                centers,
                Box::new(move |x: f64| {
                    let last = edges.len() - 1;
                    if x < edges[0] || x > edges[last] {
                        return None;
                    }
                    Some(edges.partition_point(|&e| e <= x).saturating_sub(1).min(last - 1))
                }),
            )
        }
    };
    let mut sums = vec![0.0; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (x, y) in pairs {
        if let Some(b) = assign(x) {
            sums[b] += y;
            counts[b] += 1;
        }
    }
    Ok(centers
        .into_iter()
        .enumerate()
        .map(|(b, center)| CurveRow {
            center,
            mean: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
            count: counts[b],
        })
        .collect())
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("bin_center,mean,count\n");
    for r in rows {
        let mean = r.mean.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", r.center, mean, r.count);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityRow {
    pub confidence: Option<f64>,
    pub accuracy: Option<f64>,
    pub count: usize,
}

/// One row per bin (empty bins included, with blank conf/acc).
pub fn reliability_curve(
    probs: &Matrix,
    labels: &[usize],
    eval_set: &[usize],
    num_bins: usize,
) -> Result<Vec<ReliabilityRow>> {
    let bins = reliability_bins(probs, labels, eval_set, num_bins)?;
    Ok((0..num_bins)
        .map(|m| ReliabilityRow {
            confidence: bins.confidence[m],
            accuracy: bins.accuracy[m],
            count: bins.counts[m],
        })
        .collect())
}

pub fn reliability_to_csv(rows: &[ReliabilityRow]) -> String {
    let mut s = String::from("conf,acc,count\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(s, "{},{},{}", fmt(r.confidence), fmt(r.accuracy), r.count);
    }
    s
}
