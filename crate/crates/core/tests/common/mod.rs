//! Dense reference implementations. Everything here works on materialized
//! `n x n` matrices built straight from edge lists, without the CSR code.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use gnnkit::tensor::Matrix;
use rand::Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random edge list on `n` nodes, possibly with duplicates and self-loops.
pub fn random_edges<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let m = rng.gen_range(0..=3 * n);
    (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect()
}

/// `(v, u)` pairs meaning "u sends to v", after optional symmetrization and
/// self-loops, deduplicated.
pub fn pairs(n: usize, edges: &[(usize, usize)], symmetrize: bool, self_loops: bool) -> BTreeSet<(usize, usize)> {
    let mut s = BTreeSet::new();
    for &(u, v) in edges {
        s.insert((v, u));
        if symmetrize {
            s.insert((u, v));
        }
    }
    if self_loops {
        s.extend((0..n).map(|v| (v, v)));
    }
    s
}

pub fn adjacency(n: usize, pairs: &BTreeSet<(usize, usize)>) -> Dense {
    let mut a = vec![vec![0.0; n]; n];
    for &(v, u) in pairs {
        a[v][u] = 1.0;
    }
    a
}

/// `D^-1/2 A D^-1/2` with row-sum degrees.
pub fn sym_normalize(a: &Dense) -> Dense {
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for v in 0..n {
        for u in 0..n {
            if a[v][u] != 0.0 {
                out[v][u] = a[v][u] / (d[v] * d[u]).sqrt();
            }
        }
    }
    out
}

/// Row-normalized adjacency (mean over in-neighbors).
pub fn mean_normalize(a: &Dense) -> Dense {
    a.iter()
        .map(|r| {
            let d: f64 = r.iter().sum();
            r.iter().map(|&x| if d > 0.0 { x / d } else { 0.0 }).collect()
        })
        .collect()
}

pub fn dense_mm(a: &Dense, x: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.len(), x.cols());
    for (v, row) in a.iter().enumerate() {
        for (u, &w) in row.iter().enumerate() {
            if w != 0.0 {
                for k in 0..x.cols() {
                    out.set(v, k, out.get(v, k) + w * x.get(u, k));
                }
            }
        }
    }
    out
}

pub fn mm(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            for j in 0..b.cols() {
                out.set(i, j, out.get(i, j) + a.get(i, k) * b.get(k, j));
            }
        }
    }
    out
}

pub fn plus(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).unwrap()
}

pub fn relu(a: &Matrix<f64>) -> Matrix<f64> {
    a.map(|x| x.max(0.0))
}

pub fn add_bias(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let mut out = a.clone();
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            out.set(r, c, a.get(r, c) + b.get(0, c));
        }
    }
    out
}

/// Per-row standardization with biased variance, then `gamma * x + beta`.
pub fn layer_norm(a: &Matrix<f64>, gamma: &Matrix<f64>, beta: &Matrix<f64>, eps: f64) -> Matrix<f64> {
    let mut out = a.clone();
    for r in 0..a.rows() {
        let row = a.row(r);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
        for c in 0..a.cols() {
            out.set(
                r,
                c,
                (row[c] - mean) / (var + eps).sqrt() * gamma.get(0, c) + beta.get(0, c),
            );
        }
    }
    out
}

/// Multi-head GAT aggregation on a dense mask `a` (self-loops included by
/// the caller): per head, masked softmax over `LeakyReLU(a_l.Wh_v + a_r.Wh_u)`
/// and a weighted sum of `Wh_u`. Returns `(output, alpha[head][v][u])`.
pub fn gat_dense(a: &Dense, wh: &Matrix<f64>, att: &Matrix<f64>, slope: f64) -> (Matrix<f64>, Vec<Dense>) {
    let n = a.len();
    let heads = att.rows();
    let d = wh.cols() / heads;
    let mut out = Matrix::zeros(n, wh.cols());
    let mut alphas = Vec::new();
    for k in 0..heads {
        let mut alpha = vec![vec![0.0; n]; n];
        for v in 0..n {
            let score = |u: usize| {
                let s: f64 = (0..d)
                    .map(|j| att.get(k, j) * wh.get(v, k * d + j) + att.get(k, d + j) * wh.get(u, k * d + j))
                    .sum();
                if s > 0.0 {
                    s
                } else {
                    slope * s
                }
            };
            let nbrs: Vec<usize> = (0..n).filter(|&u| a[v][u] != 0.0).collect();
            if nbrs.is_empty() {
                continue;
            }
            let max = nbrs.iter().map(|&u| score(u)).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = nbrs.iter().map(|&u| (score(u) - max).exp()).sum();
            for &u in &nbrs {
                alpha[v][u] = (score(u) - max).exp() / z;
                for j in 0..d {
                    let c = k * d + j;
                    out.set(v, c, out.get(v, c) + alpha[v][u] * wh.get(u, c));
                }
            }
        }
        alphas.push(alpha);
    }
    (out, alphas)
}

/// `max |a - b| / max(1, |b|)` over entries; `b` is the reference.
pub fn scaled_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// O(n^2) AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[i64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}
