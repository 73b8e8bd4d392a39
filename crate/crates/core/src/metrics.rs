//! Calibration metrics and proper scoring rules.
//!
//! All functions take the full `N x K` probability matrix plus the node ids to
//! evaluate. Evaluation sets are processed in ascending node-id order, so
//! every metric is invariant to the order in which ids are supplied.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::exec::Execution;
use crate::kernels::{argmax, max_value, Matrix};

pub const DEFAULT_BINS: usize = 15;
pub const NLL_FLOOR: f64 = 1e-12;
pub const KDE_GRID_POINTS: usize = 1024;
pub const KDE_MIN_BANDWIDTH: f64 = 1e-3;
const ROW_SUM_TOL: f64 = 1e-6;

/// Equal-width confidence bins `((m-1)/M, m/M]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub num_bins: usize,
    pub total: usize,
    pub counts: Vec<usize>,
    /// `None` for empty bins.
    pub accuracy: Vec<Option<f64>>,
    pub confidence: Vec<Option<f64>>,
}

impl BinStats {
    pub fn bin_error(&self, m: usize) -> Option<f64> {
        Some((self.accuracy[m]? - self.confidence[m]?).abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ece: f64,
    pub classwise_ece: f64,
    pub kde_ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub accuracy: f64,
}

impl EvalResult {
    pub fn compute(
        probs: &Matrix,
        labels: &[usize],
        eval_set: &[usize],
        num_bins: usize,
    ) -> Result<EvalResult> {
        let bins = reliability_bins(probs, labels, eval_set, num_bins)?;
        Ok(EvalResult {
            ece: ece(&bins),
            classwise_ece: classwise_ece(probs, labels, eval_set, num_bins)?,
            kde_ece: kde_ece(probs, labels, eval_set)?,
            nll: nll(probs, labels, eval_set)?,
            brier: brier(probs, labels, eval_set)?,
            accuracy: accuracy(probs, labels, eval_set)?,
        })
    }
}

/// 0-based bin for a value in `[0, 1]` under `((m-1)/M, m/M]`; 0 lands in the first bin.
pub fn bin_index(value: f64, num_bins: usize) -> usize {
    let nb = num_bins as f64;
    let mut m = ((value * nb).ceil() as usize).clamp(1, num_bins);
    // ceil() can be off by one at the edges; settle against the exact edges.
    while m > 1 && value <= (m - 1) as f64 / nb {
        m -= 1;
    }
    while m < num_bins && value > m as f64 / nb {
        m += 1;
    }
    m - 1
}

fn sorted_eval(
    probs: &Matrix,
    labels: &[usize],
    eval_set: &[usize],
) -> Result<Vec<usize>> {
    if eval_set.is_empty() {
        return Err(CalibError::EmptyEvalSet);
    }
    if labels.len() != probs.rows() {
        return Err(CalibError::ShapeMismatch(format!(
            "{} labels for {} probability rows",
            labels.len(),
            probs.rows()
        )));
    }
    let mut ids = eval_set.to_vec();
    ids.sort_unstable();
    for &i in &ids {
        if i >= probs.rows() {
            return Err(CalibError::ShapeMismatch(format!("node {i} outside probability matrix")));
        }
        if labels[i] >= probs.cols() {
            return Err(CalibError::ShapeMismatch(format!(
                "label {} of node {i} outside 0..{}",
                labels[i],
                probs.cols()
            )));
        }
        let row = probs.row(i);
        let sum: f64 = row.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
            return Err(CalibError::NotAProbability { row: i, sum });
        }
    }
    Ok(ids)
}

pub fn reliability_bins(
    probs: &Matrix,
    labels: &[usize],
    eval_set: &[usize],
    num_bins: usize,
) -> Result<BinStats> {
    if num_bins == 0 {
        return Err(CalibError::InvalidConfig("number of bins must be at least 1".into()));
    }
    let ids = sorted_eval(probs, labels, eval_set)?;
    let mut counts = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0f64; num_bins];
    for &i in &ids {
        let row = probs.row(i);
        let c = max_value(row);
        let m = bin_index(c, num_bins);
        counts[m] += 1;
        conf_sum[m] += c;
        if argmax(row) == labels[i] {
            correct[m] += 1;
        }
    }
    let accuracy = (0..num_bins)
        .map(|m| (counts[m] > 0).then(|| correct[m] as f64 / counts[m] as f64))
        .collect();
    let confidence = (0..num_bins)
        .map(|m| (counts[m] > 0).then(|| conf_sum[m] / counts[m] as f64))
        .collect();
    Ok(BinStats { num_bins, total: ids.len(), counts, accuracy, confidence })
}

pub fn ece(bins: &BinStats) -> f64 {
    let n = bins.total as f64;
    (0..bins.num_bins)
        .filter_map(|m| Some(bins.counts[m] as f64 / n * bins.bin_error(m)?))
        .sum()
}

/// Assigns to each evaluated node the `|acc - conf|` of its bin. Output is
/// aligned with `eval_set` as supplied.
pub fn nodewise_calibration_error(
    bins: &BinStats,
    probs: &Matrix,
    labels: &[usize],
    eval_set: &[usize],
) -> Result<Vec<f64>> {
    sorted_eval(probs, labels, eval_set)?;
    Ok(eval_set
        .iter()
        .map(|&i| {
            let m = bin_index(max_value(probs.row(i)), bins.num_bins);
            bins.bin_error(m).unwrap_or(0.0)
        })
        .collect())
}

pub fn classwise_ece(
    probs: &Matrix,
    labels: &[usize],
    eval_set: &[usize],
    num_bins: usize,
) -> Result<f64> {
    if num_bins == 0 {
        return Err(CalibError::InvalidConfig("number of bins must be at least 1".into()));
    }
    let ids = sorted_eval(probs, labels, eval_set)?;
    let n = ids.len() as f64;
    let k_classes = probs.cols();
    let mut total = 0.0;
    for k in 0..k_classes {
        let mut counts = vec![0usize; num_bins];
        let mut hits = vec![0usize; num_bins];
        let mut p_sum = vec![0.0f64; num_bins];
        for &i in &ids {
            let p = probs.get(i, k);
            let m = bin_index(p, num_bins);
            counts[m] += 1;
            p_sum[m] += p;
            if labels[i] == k {
                hits[m] += 1;
            }
        }
        for m in 0..num_bins {
            if counts[m] == 0 {
                continue;
            }
            let c = counts[m] as f64;
            total += c / n * (hits[m] as f64 / c - p_sum[m] / c).abs();
        }
    }
    Ok(total / k_classes as f64)
}

/// Triweight kernel `K_h(u) = (1/h)(35/32)(1 - (u/h)^2)^3` on `|u| <= h`.
pub fn triweight(u: f64, h: f64) -> f64 {
    let t = u / h;
    if t.abs() > 1.0 {
        0.0
    } else {
        let s = 1.0 - t * t;
        35.0 / 32.0 * s * s * s / h
    }
}

/// Rule-of-thumb bandwidth `1.06 * sigma * n^(-1/5)` with a floor.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (1.06 * var.sqrt() * n.powf(-0.2)).max(KDE_MIN_BANDWIDTH)
}

pub fn kde_ece(probs: &Matrix, labels: &[usize], eval_set: &[usize]) -> Result<f64> {
    kde_ece_with(probs, labels, eval_set, None, Execution::default())
}

/// KDE-based ECE. `bandwidth` overrides the rule-of-thumb value.
///
/// The integral of `|pi(c) - c| f(c)` over `[0, 1]` uses the trapezoid rule
/// on a uniform grid; grid points with no kernel mass contribute zero.
pub fn kde_ece_with(
    probs: &Matrix,
    labels: &[usize],
    eval_set: &[usize],
    bandwidth: Option<f64>,
    exec: Execution,
) -> Result<f64> {
    if eval_set.len() < 2 {
        return Err(CalibError::TooFewSamples { needed: 2, got: eval_set.len() });
    }
    let ids = sorted_eval(probs, labels, eval_set)?;
    let mut samples: Vec<(f64, f64)> = ids
        .iter()
        .map(|&i| {
            let row = probs.row(i);
            let hit = if argmax(row) == labels[i] { 1.0 } else { 0.0 };
            (max_value(row), hit)
        })
        .collect();
    let confs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let h = bandwidth.unwrap_or_else(|| scott_bandwidth(&confs));
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted_confs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let n = samples.len() as f64;
    let last = (KDE_GRID_POINTS - 1) as f64;

    let integrand = exec.map_range(KDE_GRID_POINTS, |g| {
        let c = g as f64 / last;
        // only samples within one bandwidth carry kernel mass
        let lo = sorted_confs.partition_point(|&x| x < c - h);
        let hi = sorted_confs.partition_point(|&x| x <= c + h);
        let mut mass = 0.0;
        let mut hit_mass = 0.0;
        for &(ci, hit) in &samples[lo..hi] {
            let k = triweight(c - ci, h);
            mass += k;
            hit_mass += hit * k;
        }
        if mass <= 0.0 {
            return 0.0;
        }
        let pi = hit_mass / mass;
        let density = mass / n;
        (pi - c).abs() * density
    });
    let step = 1.0 / last;
    let inner: f64 = integrand[1..KDE_GRID_POINTS - 1].iter().sum();
    Ok(step * (0.5 * (integrand[0] + integrand[KDE_GRID_POINTS - 1]) + inner))
}

pub fn nll(probs: &Matrix, labels: &[usize], eval_set: &[usize]) -> Result<f64> {
    let ids = sorted_eval(probs, labels, eval_set)?;
    let total: f64 = ids.iter().map(|&i| -probs.get(i, labels[i]).max(NLL_FLOOR).ln()).sum();
    Ok(total / ids.len() as f64)
}

pub fn brier(probs: &Matrix, labels: &[usize], eval_set: &[usize]) -> Result<f64> {
    let ids = sorted_eval(probs, labels, eval_set)?;
    let total: f64 = ids
        .iter()
        .map(|&i| {
            probs
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let target = if k == labels[i] { 1.0 } else { 0.0 };
                    (p - target).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / ids.len() as f64)
}

pub fn accuracy(probs: &Matrix, labels: &[usize], eval_set: &[usize]) -> Result<f64> {
    let ids = sorted_eval(probs, labels, eval_set)?;
    let hits = ids.iter().filter(|&&i| argmax(probs.row(i)) == labels[i]).count();
    Ok(hits as f64 / ids.len() as f64)
}

/// Shannon entropy (natural log) of every row, with `0 ln 0 = 0`.
pub fn entropy_per_node(probs: &Matrix) -> Vec<f64> {
    probs
        .iter_rows()
        .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>().max(0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn probs(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Three nodes: 0.95 correct, 0.95 wrong, 0.65 correct.
    fn hand_case() -> (Matrix, Vec<usize>) {
        (probs(&[&[0.95, 0.05], &[0.95, 0.05], &[0.65, 0.35]]), vec![0, 1, 0])
    }

    /// Bins by literally testing `(m-1)/M < c <= m/M` for every `m`.
    fn brute_force_ece(p: &Matrix, labels: &[usize], ids: &[usize], nb: usize) -> f64 {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let mut total = 0.0;
        for m in 1..=nb {
            let lo = (m - 1) as f64 / nb as f64;
            let hi = m as f64 / nb as f64;
            let members: Vec<usize> = sorted
                .iter()
                .copied()
                .filter(|&i| {
                    let c = max_value(p.row(i));
                    (lo < c || (m == 1 && c == 0.0)) && c <= hi
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let cnt = members.len();
            let mut correct = 0usize;
            let mut conf = 0.0;
            for &i in &members {
                conf += max_value(p.row(i));
                if argmax(p.row(i)) == labels[i] {
                    correct += 1;
                }
            }
            let acc = correct as f64 / cnt as f64;
            total += cnt as f64 / n as f64 * (acc - conf / cnt as f64).abs();
        }
        total
    }

    #[test]
    fn bins_all_confident_and_correct() {
        let p = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = reliability_bins(&p, &[0, 1], &[0, 1], 15).unwrap();
        assert_eq!(b.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(b.counts[14], 2);
        assert_eq!(b.accuracy[14], Some(1.0));
        assert_eq!(b.confidence[14], Some(1.0));
        assert_eq!(ece(&b), 0.0);
    }

    #[test]
    fn hand_case_binning_and_ece() {
        let (p, y) = hand_case();
        let b = reliability_bins(&p, &y, &[0, 1, 2], 15).unwrap();
        assert_eq!(b.counts[14], 2);
        assert_eq!(b.accuracy[14], Some(0.5));
        assert!((b.confidence[14].unwrap() - 0.95).abs() < 1e-12);
        assert_eq!(b.counts[9], 1);
        assert_eq!(b.accuracy[9], Some(1.0));
        assert!((b.confidence[9].unwrap() - 0.65).abs() < 1e-12);
        let e = ece(&b);
        assert!((e - (2.0 / 3.0 * 0.45 + 1.0 / 3.0 * 0.35)).abs() < 1e-12);
        assert!((e - 0.416667).abs() < 1e-6);
        let nce = nodewise_calibration_error(&b, &p, &y, &[0, 1, 2]).unwrap();
        assert!((nce[0] - 0.45).abs() < 1e-12);
        assert!((nce[1] - 0.45).abs() < 1e-12);
        assert!((nce[2] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn single_bin_is_overall_gap() {
        let (p, y) = hand_case();
        let b = reliability_bins(&p, &y, &[0, 1, 2], 1).unwrap();
        let acc = 2.0 / 3.0;
        let conf = (0.95 + 0.95 + 0.65) / 3.0;
        assert!((b.accuracy[0].unwrap() - acc).abs() < 1e-15);
        assert!((b.confidence[0].unwrap() - conf).abs() < 1e-15);
        assert!((ece(&b) - (acc - conf).abs()).abs() < 1e-15);
        let nce = nodewise_calibration_error(&b, &p, &y, &[0, 1, 2]).unwrap();
        assert!(nce.iter().all(|&v| v == nce[0]));
    }

    #[test]
    fn singleton_bin_error() {
        let p = probs(&[&[0.7, 0.3]]);
        let b = reliability_bins(&p, &[0], &[0], 15).unwrap();
        let nce = nodewise_calibration_error(&b, &p, &[0], &[0]).unwrap();
        assert!((nce[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let (p, y) = hand_case();
        assert!(matches!(reliability_bins(&p, &y, &[], 15), Err(CalibError::EmptyEvalSet)));
        let bad = probs(&[&[0.5, 0.6]]);
        assert!(matches!(
            reliability_bins(&bad, &[0], &[0], 15),
            Err(CalibError::NotAProbability { row: 0, .. })
        ));
        assert!(matches!(
            kde_ece(&p, &y, &[0]),
            Err(CalibError::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn classwise_examples() {
        let p = probs(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(classwise_ece(&p, &[0, 0], &[0, 1], 15).unwrap(), 0.0);
        let p = probs(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!((classwise_ece(&p, &[0, 0], &[0, 1], 1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classwise_permutation_invariant() {
        let mut rng = SeededRng::new(9);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let z: Vec<f64> = (0..4).map(|_| rng.normal() * 2.0).collect();
                let mut p = vec![0.0; 4];
                crate::kernels::softmax_into(&z, &mut p);
                p
            })
            .collect();
        let labels: Vec<usize> = (0..300).map(|_| (rng.uniform() * 4.0) as usize).collect();
        let perm = [3usize, 1, 0, 2];
        let permuted_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut out = vec![0.0; 4];
                for k in 0..4 {
                    out[perm[k]] = r[k];
                }
                out
            })
            .collect();
        let permuted_labels: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let ids: Vec<usize> = (0..300).collect();
        let a = classwise_ece(&Matrix::from_rows(&rows).unwrap(), &labels, &ids, 15).unwrap();
        let b = classwise_ece(&Matrix::from_rows(&permuted_rows).unwrap(), &permuted_labels, &ids, 15)
            .unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn scoring_rule_identities() {
        let onehot = probs(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(nll(&onehot, &[0, 2], &[0, 1]).unwrap(), 0.0);
        assert_eq!(brier(&onehot, &[0, 2], &[0, 1]).unwrap(), 0.0);
        let uni4 = probs(&[&[0.25; 4]]);
        assert!((nll(&uni4, &[1], &[0]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((brier(&uni4, &[1], &[0]).unwrap() - 0.75).abs() < 1e-15);
        let uni2 = probs(&[&[0.5, 0.5]]);
        assert!((brier(&uni2, &[0], &[0]).unwrap() - 0.5).abs() < 1e-15);
        let hard_zero = probs(&[&[1.0, 0.0]]);
        assert!((nll(&hard_zero, &[1], &[0]).unwrap() - (-NLL_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn nll_decreases_when_sharpening_toward_truth() {
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            let q = 0.3 + 0.07 * step as f64;
            let p = probs(&[&[q, 1.0 - q]]);
            let v = nll(&p, &[0], &[0]).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn entropy_identities() {
        let p = probs(&[&[1.0, 0.0, 0.0], &[1.0 / 3.0; 3], &[0.2, 0.5, 0.3]]);
        let h = entropy_per_node(&p);
        assert_eq!(h[0], 0.0);
        assert!((h[1] - 3f64.ln()).abs() < 1e-12);
        assert!(h[2] > 0.0 && h[2] < 3f64.ln());
    }

    #[test]
    fn bin_index_edges() {
        assert_eq!(bin_index(0.0, 15), 0);
        assert_eq!(bin_index(1.0, 15), 14);
        assert_eq!(bin_index(1.0 / 15.0, 15), 0);
        assert_eq!(bin_index(0.2, 5), 0);
        assert_eq!(bin_index(0.200001, 5), 1);
        for m in 1..=15 {
            let edge = m as f64 / 15.0;
            assert_eq!(bin_index(edge, 15), m - 1);
        }
    }

    /// Exact integral of `|a - c| K_h(c - c0)` over `[0, 1]` by fine Simpson
    /// quadrature; with the kernel inside the unit interval this tends to
    /// `|a - c0|` as `h -> 0`.
    fn point_mass_oracle(a: f64, c0: f64, h: f64) -> f64 {
        let n = 200_000;
        let lo = (c0 - h).max(0.0);
        let hi = (c0 + h).min(1.0);
        let dx = (hi - lo) / n as f64;
        let f = |c: f64| (a - c).abs() * triweight(c - c0, h);
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * dx);
        }
        s * dx / 3.0
    }

    #[test]
    fn kde_point_mass_limit() {
        // 10 nodes at confidence 0.7, 8 correct: a = 0.8
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![0.7, 0.3]).collect();
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 8)).collect();
        let ids: Vec<usize> = (0..10).collect();
        let p = Matrix::from_rows(&rows).unwrap();
        let v = kde_ece(&p, &labels, &ids).unwrap();
        let oracle = point_mass_oracle(0.8, 0.7, KDE_MIN_BANDWIDTH);
        assert!((oracle - 0.1).abs() < 1e-3, "oracle {oracle}");
        // the 1024-point grid resolves a 1e-3 kernel only coarsely
        assert!((v - oracle).abs() < 0.1 * oracle, "kde {v} vs oracle {oracle}");
    }

    #[test]
    fn kde_confident_and_correct_is_near_zero() {
        let mut rng = SeededRng::new(4);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let c = 0.995 + 0.005 * rng.uniform();
                vec![c, 1.0 - c]
            })
            .collect();
        let ids: Vec<usize> = (0..500).collect();
        let v = kde_ece(&Matrix::from_rows(&rows).unwrap(), &vec![0; 500], &ids).unwrap();
        assert!(v < 0.01, "{v}");
    }

    fn calibrated_sample(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..4).map(|_| rng.normal() * 1.5).collect();
            let mut p = vec![0.0; 4];
            crate::kernels::softmax_into(&z, &mut p);
            labels.push(rng.categorical(&p));
            rows.push(p);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn calibrated_predictor_has_small_errors() {
        let (p, y) = calibrated_sample(10_000, 21);
        let ids: Vec<usize> = (0..10_000).collect();
        let e = ece(&reliability_bins(&p, &y, &ids, 15).unwrap());
        assert!(e < 0.02, "ece {e}");
        let k = kde_ece(&p, &y, &ids).unwrap();
        assert!(k < 0.02, "kde {k}");
    }

    #[test]
    fn kde_shrinks_with_sample_size() {
        let mut small = 0.0;
        let mut large = 0.0;
        for seed in 0..5 {
            let (p, y) = calibrated_sample(1000, 100 + seed);
            small += kde_ece(&p, &y, &(0..1000).collect::<Vec<_>>()).unwrap();
            let (p, y) = calibrated_sample(10_000, 200 + seed);
            large += kde_ece(&p, &y, &(0..10_000).collect::<Vec<_>>()).unwrap();
        }
        assert!(large < small, "{large} !< {small}");
    }

    #[test]
    fn kde_sequential_matches_parallel() {
        let (p, y) = calibrated_sample(2000, 8);
        let ids: Vec<usize> = (0..2000).collect();
        let a = kde_ece_with(&p, &y, &ids, None, Execution::Sequential).unwrap();
        let b = kde_ece_with(&p, &y, &ids, None, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<usize>)> {
        (1usize..=30, 2usize..=5).prop_flat_map(|(n, k)| {
            (
                prop::collection::vec(prop::collection::vec(-4.0f64..4.0, k), n),
                prop::collection::vec(0..k, n),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn ece_matches_brute_force((logits, labels, order) in instance(), take in 1usize..=30) {
            let z = Matrix::from_rows(&logits).unwrap();
            let p = crate::kernels::softmax_rows(&z).unwrap();
            let ids: Vec<usize> = order.iter().copied().take(take.min(order.len())).collect();
            let bins = reliability_bins(&p, &labels, &ids, 15).unwrap();
            let fast = ece(&bins);
            prop_assert_eq!(fast.to_bits(), brute_force_ece(&p, &labels, &ids, 15).to_bits());
            prop_assert_eq!(bins.counts.iter().sum::<usize>(), ids.len());

            let nce = nodewise_calibration_error(&bins, &p, &labels, &ids).unwrap();
            let n = ids.len() as f64;
            let mut weighted = 0.0;
            for m in 0..15 {
                if let Some(err) = bins.bin_error(m) {
                    weighted += bins.counts[m] as f64 / n * err;
                }
            }
            prop_assert_eq!(weighted.to_bits(), fast.to_bits());
            prop_assert_eq!(nce.len(), ids.len());

            let mut reversed = ids.clone();
            reversed.reverse();
            let again = ece(&reliability_bins(&p, &labels, &reversed, 15).unwrap());
            prop_assert_eq!(again.to_bits(), fast.to_bits());
            prop_assert_eq!(
                nll(&p, &labels, &reversed).unwrap().to_bits(),
                nll(&p, &labels, &ids).unwrap().to_bits()
            );
            prop_assert_eq!(
                classwise_ece(&p, &labels, &reversed, 15).unwrap().to_bits(),
                classwise_ece(&p, &labels, &ids, 15).unwrap().to_bits()
            );
        }
    }
}
