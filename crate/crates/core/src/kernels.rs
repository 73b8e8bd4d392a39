//! Dense numeric primitives shared by the calibrators: a row-major matrix,
//! stable (log-)softmax, softplus, leaky ReLU, the sorted-logit transform,
//! and a central-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

/// Row-major dense `f64` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(CalibError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(CalibError::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn map_rows<F>(&self, mut f: F) -> Matrix
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            f(self.row(i), out.row_mut(i));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(p) => Err(CalibError::NonFiniteInput(format!(
                "entry ({}, {}) = {}",
                p / self.cols,
                p % self.cols,
                self.data[p]
            ))),
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn max_value(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Stable softmax of one row into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = max_value(row);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Log-sum-exp of one row.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = max_value(row);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite()?;
    Ok(m.map_rows(softmax_into))
}

pub fn log_softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite()?;
    Ok(m.map_rows(|row, out| {
        let lse = log_sum_exp(row);
        for (o, &x) in out.iter_mut().zip(row) {
            *o = x - lse;
        }
    }))
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], i.e. the logistic function.
pub fn softplus_grad(x: f64) -> f64 {
    sigmoid(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Min-max normalizes each row to `[0, 1]` (constant rows become zeros) and,
/// when `sort` is set, orders each row descending.
pub fn normalize_logits(z: &Matrix, sort: bool) -> Matrix {
    z.map_rows(|row, out| {
        let hi = max_value(row);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let span = hi - lo;
        for (o, &x) in out.iter_mut().zip(row) {
            *o = if span > 0.0 { (x - lo) / span } else { 0.0 };
        }
        if sort {
            out.sort_by(|a, b| b.total_cmp(a));
        }
    })
}

pub fn normalize_and_sort_logits(z: &Matrix) -> Matrix {
    normalize_logits(z, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub parameter_index_of_max: usize,
}

/// Step used by [`check_gradient`].
pub const FD_STEP: f64 = 1e-5;

/// Compares `grad_f` against central differences of `f` at `at`.
///
/// Per-coordinate error is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn check_gradient<F, G>(f: F, grad_f: G, at: &[f64]) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad_f(at);
    if analytic.len() != at.len() {
        return Err(CalibError::ShapeMismatch(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            at.len()
        )));
    }
    let mut x = at.to_vec();
    let mut report = GradCheckReport { max_relative_error: 0.0, parameter_index_of_max: 0 };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let fp = f(&x);
        x[i] = orig - FD_STEP;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(CalibError::NonFiniteInput(format!(
                "objective not finite around parameter {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > report.max_relative_error {
            report = GradCheckReport { max_relative_error: err, parameter_index_of_max: i };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(&m(&[&[0.0, 0.0], &[1.0, 0.0], &[1000.0, 0.0]])).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        let e = 1f64.exp();
        assert!((p.get(1, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.get(1, 0) - 0.731059).abs() < 1e-6);
        assert!((p.get(1, 1) - 0.268941).abs() < 1e-6);
        assert!((p.get(2, 0) - 1.0).abs() < 1e-15 && p.get(2, 1) < 1e-300);
        assert!(matches!(
            softmax_rows(&m(&[&[f64::NAN, 0.0]])),
            Err(CalibError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn log_softmax_examples() {
        let l = log_softmax_rows(&m(&[&[0.0, 0.0], &[1.0, 0.0]])).unwrap();
        assert!((l.get(0, 0) + 2f64.ln()).abs() < 1e-15);
        assert!((l.get(1, 0) + 0.313262).abs() < 1e-6);
        assert!((l.get(1, 1) + 1.313262).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_random() {
        let mut rng = SeededRng::new(11);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|i| {
                let scale = if i % 3 == 0 { 1e3 } else { 10.0 };
                (0..7).map(|_| rng.uniform_range(-scale, scale)).collect()
            })
            .collect();
        let z = Matrix::from_rows(&rows).unwrap();
        let p = softmax_rows(&z).unwrap();
        let lp = log_softmax_rows(&z).unwrap();
        for i in 0..z.rows() {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.row(i).iter().all(|&x| x >= 0.0));
            let s: f64 = lp.row(i).iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_examples() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus_grad(0.0), 0.5);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
        assert!(softplus(1000.0).is_finite());
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(2.0, 0.2), 2.0);
        assert!((leaky_relu(-1.0, 0.2) + 0.2).abs() < 1e-15);
        assert_eq!(leaky_relu(0.0, 0.2), 0.0);
    }

    #[test]
    fn normalize_and_sort_examples() {
        let z = normalize_and_sort_logits(&m(&[&[2.0, -1.0, 0.0], &[5.0, 5.0, 5.0]]));
        assert_eq!(z.row(0)[0], 1.0);
        assert!((z.row(0)[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(z.row(0)[2], 0.0);
        assert_eq!(z.row(1), &[0.0, 0.0, 0.0]);
        let z = normalize_and_sort_logits(&m(&[&[0.0, 1.0]]));
        assert_eq!(z.row(0), &[1.0, 0.0]);
        let unsorted = normalize_logits(&m(&[&[0.0, 1.0]]), false);
        assert_eq!(unsorted.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn normalized_rows_nonincreasing_in_unit_interval() {
        let mut rng = SeededRng::new(2);
        let rows: Vec<Vec<f64>> =
            (0..200).map(|_| (0..6).map(|_| rng.normal() * 5.0).collect()).collect();
        let z = normalize_and_sort_logits(&Matrix::from_rows(&rows).unwrap());
        for r in z.iter_rows() {
            assert!(r.windows(2).all(|w| w[0] >= w[1]));
            assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn gradient_checker_controls() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = check_gradient(f, |x| vec![2.0 * x[0]], &[3.0]).unwrap();
        assert!(r.max_relative_error < 1e-7);
        let r = check_gradient(|x| softplus(x[0]), |x| vec![softplus_grad(x[0])], &[0.0]).unwrap();
        assert!(r.max_relative_error < 1e-7);
        let r = check_gradient(f, |x| vec![2.0 * x[0] + 1.0], &[3.0]).unwrap();
        assert!(r.max_relative_error > 1e-2);
        // |7 - 6| / 7
        assert!((r.max_relative_error - 1.0 / 7.0).abs() < 1e-6);
        assert!(matches!(
            check_gradient(|_| f64::NAN, |_| vec![0.0], &[0.0]),
            Err(CalibError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }
}
