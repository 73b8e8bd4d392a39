//! Classic (graph-agnostic) scaling calibrators: TS, VS and ETS.

use super::{clamp_temperature, scaled_nll, Model};
use crate::dataset::Dataset;
use crate::kernels::{softmax_into, Matrix};
use crate::metrics::NLL_FLOOR;

/// Keeps ETS away from the all-uniform corner, where argmax ties would
/// replace the model's prediction with class 0.
pub(crate) const ETS_MAX_UNIFORM_WEIGHT: f64 = 1.0 - 1e-6;

pub(crate) struct TsModel<'a> {
    logits: &'a Matrix,
    labels: &'a [usize],
}

impl<'a> TsModel<'a> {
    pub fn new(d: &'a Dataset) -> Self {
        TsModel { logits: &d.logits, labels: &d.labels }
    }
}

impl Model for TsModel<'_> {
    fn num_params(&self) -> usize {
        1
    }

    fn loss(&self, p: &[f64], nodes: &[usize]) -> f64 {
        self.loss_and_grad(p, nodes).0
    }

    fn loss_and_grad(&self, p: &[f64], nodes: &[usize]) -> (f64, Vec<f64>) {
        let (t, dt) = clamp_temperature(p[0]);
        let n = nodes.len() as f64;
        let mut loss = 0.0;
        let mut grad = 0.0;
        for &i in nodes {
            let (l, g) = scaled_nll(self.logits.row(i), self.labels[i], t);
            loss += l;
            grad += g;
        }
        (loss / n, vec![grad * dt / n])
    }
}

pub(crate) struct VsModel<'a> {
    logits: &'a Matrix,
    labels: &'a [usize],
}

impl<'a> VsModel<'a> {
    pub fn new(d: &'a Dataset) -> Self {
        VsModel { logits: &d.logits, labels: &d.labels }
    }
}

impl Model for VsModel<'_> {
    fn num_params(&self) -> usize {
        2 * self.logits.cols()
    }

    fn loss(&self, p: &[f64], nodes: &[usize]) -> f64 {
        self.loss_and_grad(p, nodes).0
    }

    /// `u = w * z + b`; `dl/du = softmax(u) - onehot(y)`.
    fn loss_and_grad(&self, p: &[f64], nodes: &[usize]) -> (f64, Vec<f64>) {
        let k = self.logits.cols();
        let (w, b) = p.split_at(k);
        let n = nodes.len() as f64;
        let mut grad = vec![0.0; 2 * k];
        let mut loss = 0.0;
        let mut u = vec![0.0; k];
        let mut prob = vec![0.0; k];
        for &i in nodes {
            let z = self.logits.row(i);
            for c in 0..k {
                u[c] = w[c] * z[c] + b[c];
            }
            softmax_into(&u, &mut prob);
            let y = self.labels[i];
            loss -= prob[y].max(NLL_FLOOR).ln();
            for c in 0..k {
                let r = prob[c] - if c == y { 1.0 } else { 0.0 };
                grad[c] += r * z[c];
                grad[k + c] += r;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }
}

/// Parameters `[T, w1, w2, w3]` for `w1 softmax(z/T) + w2 softmax(z) + w3/K`.
pub(crate) struct EtsModel<'a> {
    logits: &'a Matrix,
    labels: &'a [usize],
    frozen: [bool; 4],
}

impl<'a> EtsModel<'a> {
    pub fn new(d: &'a Dataset, temperature_trainable: bool) -> Self {
        EtsModel { logits: &d.logits, labels: &d.labels, frozen: [!temperature_trainable, false, false, false] }
    }
}

impl Model for EtsModel<'_> {
    fn num_params(&self) -> usize {
        4
    }

    fn loss(&self, p: &[f64], nodes: &[usize]) -> f64 {
        self.loss_and_grad(p, nodes).0
    }

    fn loss_and_grad(&self, p: &[f64], nodes: &[usize]) -> (f64, Vec<f64>) {
        let k = self.logits.cols();
        let (t, dt) = clamp_temperature(p[0]);
        let w = [p[1], p[2], p[3]];
        let n = nodes.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; 4];
        let mut scaled = vec![0.0; k];
        let mut sharp = vec![0.0; k];
        let mut raw = vec![0.0; k];
        for &i in nodes {
            let z = self.logits.row(i);
            let y = self.labels[i];
            for c in 0..k {
                scaled[c] = z[c] / t;
            }
            softmax_into(&scaled, &mut sharp);
            softmax_into(z, &mut raw);
            let uniform = 1.0 / k as f64;
            let q = w[0] * sharp[y] + w[1] * raw[y] + w[2] * uniform;
            if q <= NLL_FLOOR {
                loss -= NLL_FLOOR.ln();
                continue;
            }
            loss -= q.ln();
            // d sharp_y / dT = sharp_y * (sum_c sharp_c z_c - z_y) / T^2
            let mean_z: f64 = sharp.iter().zip(z).map(|(s, zc)| s * zc).sum();
            let dsharp_dt = sharp[y] * (mean_z - z[y]) / (t * t);
            grad[0] -= w[0] * dsharp_dt * dt / q;
            grad[1] -= sharp[y] / q;
            grad[2] -= raw[y] / q;
            grad[3] -= uniform / q;
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    fn frozen(&self) -> Option<&[bool]> {
        Some(&self.frozen)
    }

    fn project(&self, p: &mut [f64]) {
        let w = project_weights(&[p[1], p[2], p[3]]);
        p[1..4].copy_from_slice(&w);
    }
}

/// Euclidean projection onto `{w >= 0, sum w = 1, w3 <= ETS_MAX_UNIFORM_WEIGHT}`.
pub(crate) fn project_weights(w: &[f64; 3]) -> [f64; 3] {
    let p = project_simplex(w, 1.0);
    if p[2] <= ETS_MAX_UNIFORM_WEIGHT {
        return [p[0], p[1], p[2]];
    }
    // active cap: w3 pinned, the rest projected onto the remaining mass
    let rest = project_simplex(&w[..2], 1.0 - ETS_MAX_UNIFORM_WEIGHT);
    [rest[0], rest[1], ETS_MAX_UNIFORM_WEIGHT]
}

/// Euclidean projection of `v` onto `{x >= 0, sum x = mass}` (sort-based).
pub(crate) fn project_simplex(v: &[f64], mass: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - mass) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

pub(crate) fn ets_probs(z: &Matrix, t: f64, w: &[f64; 3]) -> Matrix {
    let k = z.cols();
    let uniform = 1.0 / k as f64;
    let mut scaled = vec![0.0; k];
    let mut sharp = vec![0.0; k];
    let mut raw = vec![0.0; k];
    z.map_rows(|row, out| {
        for c in 0..k {
            scaled[c] = row[c] / t;
        }
        softmax_into(&scaled, &mut sharp);
        softmax_into(row, &mut raw);
        for c in 0..k {
            out[c] = w[0] * sharp[c] + w[1] * raw[c] + w[2] * uniform;
        }
        // renormalize away rounding drift
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= s);
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_cases() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5], 1.0), vec![0.2, 0.3, 0.5]);
        let p = project_simplex(&[2.0, 0.0, 0.0], 1.0);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5], 1.0);
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = project_simplex(&[-1.0, 3.0], 1.0);
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn uniform_weight_is_capped() {
        let w = project_weights(&[0.0, 0.0, 5.0]);
        assert!(w[2] <= ETS_MAX_UNIFORM_WEIGHT);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > 0.0 && w[1] > 0.0);
    }
}
