//! CaGCN baseline: a two-layer GCN over the logits that outputs one
//! temperature per node.
//!
//! ```text
//! X  = A_hat Z                      (N x K, fixed)
//! P1 = X W1 + b1,  H1 = relu(P1)    (N x hidden)
//! o  = A_hat H1 w2 + b2             (N)
//! T  = softplus(o) + 1e-3
//! ```
//! with `A_hat = D^-1/2 (A + I) D^-1/2`.

use super::{scaled_nll, Model, TEMPERATURE_FLOOR};
use crate::dataset::Dataset;
use crate::graph::Graph;
use crate::kernels::{sigmoid, softplus, Matrix};
use crate::rng::SeededRng;

/// Square sparse matrix in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[self.row_offsets[i]..self.row_offsets[i + 1]].iter().sum()
    }

    /// `self * m` for a dense `m`.
    pub fn matmul(&self, m: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.dim(), m.cols());
        for i in 0..self.dim() {
            for idx in self.row_offsets[i]..self.row_offsets[i + 1] {
                let (j, a) = (self.col_indices[idx], self.values[idx]);
                let src = m.row(j);
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        out
    }
}

/// `D^-1/2 (A + I) D^-1/2`, degrees counted with the self-loop.
pub fn normalized_adjacency(g: &Graph) -> SparseMatrix {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for i in 0..n {
        for j in g.neighbors_with_self(i) {
            col_indices.push(j);
            values.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        row_offsets.push(col_indices.len());
    }
    SparseMatrix { row_offsets, col_indices, values }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CagcnParams {
    /// `K x hidden`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl CagcnParams {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.w1.data().to_vec();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(p: &[f64], k: usize, hidden: usize) -> Self {
        let (w1, rest) = p.split_at(k * hidden);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, rest) = rest.split_at(hidden);
        CagcnParams {
            w1: Matrix::new(k, hidden, w1.to_vec()).expect("layout"),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: rest[0],
        }
    }
}

pub(crate) struct CagcnModel<'a> {
    adj: SparseMatrix,
    /// `A_hat Z`
    propagated: Matrix,
    logits: &'a Matrix,
    labels: &'a [usize],
    hidden: usize,
}

struct Forward {
    pre: Matrix,
    q: Matrix,
    out: Vec<f64>,
}

impl<'a> CagcnModel<'a> {
    pub fn new(d: &'a Dataset, hidden: usize) -> Self {
        let adj = normalized_adjacency(&d.graph);
        let propagated = adj.matmul(&d.logits);
        CagcnModel { adj, propagated, logits: &d.logits, labels: &d.labels, hidden }
    }

    /// Fan-in uniform weights, zero hidden bias, output bias chosen so every
    /// temperature starts at 1.
    pub fn init_params(&self, seed: u64) -> CagcnParams {
        let k = self.logits.cols();
        let mut rng = SeededRng::with_stream(seed, 0xca9c);
        let a1 = 1.0 / (k as f64).sqrt();
        let a2 = 1.0 / (self.hidden as f64).sqrt();
        let w1: Vec<f64> = (0..k * self.hidden).map(|_| rng.uniform_range(-a1, a1)).collect();
        let w2: Vec<f64> = (0..self.hidden).map(|_| rng.uniform_range(-a2, a2)).collect();
        // softplus(b2) + floor = 1
        let b2 = ((1.0 - TEMPERATURE_FLOOR).exp() - 1.0).ln();
        CagcnParams {
            w1: Matrix::new(k, self.hidden, w1).expect("layout"),
            b1: vec![0.0; self.hidden],
            w2,
            b2,
        }
    }

    fn forward(&self, p: &[f64]) -> Forward {
        let k = self.logits.cols();
        let hd = self.hidden;
        let n = self.propagated.rows();
        let w1 = &p[..k * hd];
        let b1 = &p[k * hd..k * hd + hd];
        let w2 = &p[k * hd + hd..k * hd + 2 * hd];
        let b2 = p[k * hd + 2 * hd];
        let mut pre = Matrix::zeros(n, hd);
        for i in 0..n {
            let x = self.propagated.row(i);
            let row = pre.row_mut(i);
            row.copy_from_slice(b1);
            for (c, &xc) in x.iter().enumerate() {
                for h in 0..hd {
                    row[h] += xc * w1[c * hd + h];
                }
            }
        }
        let act = pre.map_rows(|r, o| {
            for (oh, &rh) in o.iter_mut().zip(r) {
                *oh = rh.max(0.0);
            }
        });
        let q = self.adj.matmul(&act);
        let out = (0..n)
            .map(|i| b2 + q.row(i).iter().zip(w2).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        Forward { pre, q, out }
    }

    pub fn temperatures(&self, p: &[f64]) -> Vec<f64> {
        self.forward(p).out.into_iter().map(|o| softplus(o) + TEMPERATURE_FLOOR).collect()
    }
}

impl Model for CagcnModel<'_> {
    fn num_params(&self) -> usize {
        self.logits.cols() * self.hidden + 2 * self.hidden + 1
    }

    fn loss(&self, p: &[f64], nodes: &[usize]) -> f64 {
        let temps = self.temperatures(p);
        let total: f64 =
            nodes.iter().map(|&i| scaled_nll(self.logits.row(i), self.labels[i], temps[i]).0).sum();
        total / nodes.len() as f64
    }

    fn loss_and_grad(&self, p: &[f64], nodes: &[usize]) -> (f64, Vec<f64>) {
        let k = self.logits.cols();
        let hd = self.hidden;
        let n_nodes = self.propagated.rows();
        let w2 = &p[k * hd + hd..k * hd + 2 * hd];
        let fwd = self.forward(p);
        let scale = 1.0 / nodes.len() as f64;

        let mut loss = 0.0;
        // dL/do per node (nonzero on `nodes` only)
        let mut g_out = vec![0.0; n_nodes];
        for &i in nodes {
            let t = softplus(fwd.out[i]) + TEMPERATURE_FLOOR;
            let (l, dl_dt) = scaled_nll(self.logits.row(i), self.labels[i], t);
            loss += l;
            g_out[i] += dl_dt * sigmoid(fwd.out[i]) * scale;
        }

        let mut grad = vec![0.0; self.num_params()];
        let (g_w1, rest) = grad.split_at_mut(k * hd);
        let (g_b1, rest) = rest.split_at_mut(hd);
        let (g_w2, g_b2) = rest.split_at_mut(hd);

        // dQ = g_out w2^T, dH1 = A_hat dQ (A_hat symmetric)
        let mut d_q = Matrix::zeros(n_nodes, hd);
        for &i in nodes {
            g_b2[0] += g_out[i];
            for h in 0..hd {
                g_w2[h] += fwd.q.get(i, h) * g_out[i];
                d_q.set(i, h, g_out[i] * w2[h]);
            }
        }
        let d_h1 = self.adj.matmul(&d_q);
        for i in 0..n_nodes {
            let x = self.propagated.row(i);
            for h in 0..hd {
                if fwd.pre.get(i, h) <= 0.0 {
                    continue;
                }
                let d = d_h1.get(i, h);
                if d == 0.0 {
                    continue;
                }
                g_b1[h] += d;
                for c in 0..k {
                    g_w1[c * hd + h] += x[c] * d;
                }
            }
        }
        (loss * scale, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_examples() {
        let g = Graph::from_edges(&[], 1).unwrap();
        assert_eq!(normalized_adjacency(&g).get(0, 0), 1.0);
        let g = Graph::from_edges(&[(0, 1)], 2).unwrap();
        let a = normalized_adjacency(&g);
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.get(i, j) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cycle_rows_sum_to_one() {
        // every node of a cycle has degree 2 -> each entry 1/3, row sum 1
        let edges: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
        let a = normalized_adjacency(&Graph::from_edges(&edges, 6).unwrap());
        for i in 0..6 {
            assert!((a.row_sum(i) - 1.0).abs() < 1e-15);
        }
        // irregular graphs are not stochastic: the middle of a path sums past 1
        let a = normalized_adjacency(&Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap());
        let expected = 1.0 / 3.0 + 2.0 / 6f64.sqrt();
        assert!((a.row_sum(1) - expected).abs() < 1e-15);
    }
}
