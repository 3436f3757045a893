//! Forward and backward kernels for the fixed op set used by the layers.
//!
//! Every function here is a pure function of its inputs. The tape in
//! [`super::tape`] records which intermediates each backward call needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

use super::{Matrix, Scalar};

/// Left operands with at least this fraction of exact zeros take the
/// zero-skipping row kernel instead of the blocked GEMM. Bag-of-words
/// features qualify; the break-even against GEMM is near 90% zeros.
const SPARSE_ZERO_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// BatchNorm running statistics, one entry per feature column.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); dim],
            var: vec![T::one(); dim],
        }
    }
}

#[inline]
fn axpy<T: Scalar>(out: &mut [T], alpha: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `op(a) * op(b)` where `op` optionally transposes.
pub(crate) fn product<T: Scalar>(a: &Matrix<T>, a_t: bool, b: &Matrix<T>, b_t: bool) -> Matrix<T> {
    let (m, k) = if a_t {
        (a.cols(), a.rows())
    } else {
        (a.rows(), a.cols())
    };
    let (k2, n) = if b_t {
        (b.cols(), b.rows())
    } else {
        (b.rows(), b.cols())
    };
    assert_eq!(k, k2, "inner dimensions must agree");
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    if !b_t && a.zero_fraction() >= SPARSE_ZERO_FRACTION {
        if a_t {
            for kk in 0..k {
                let arow = a.row(kk);
                let brow = b.row(kk);
                for (i, &x) in arow.iter().enumerate() {
                    if !x.is_zero() {
                        axpy(out.row_mut(i), x, brow);
                    }
                }
            }
        } else {
            for i in 0..m {
                let arow = a.row(i);
                let orow = out.row_mut(i);
                for (kk, &x) in arow.iter().enumerate() {
                    if !x.is_zero() {
                        axpy(orow, x, b.row(kk));
                    }
                }
            }
        }
        return out;
    }
    let (rsa, csa) = if a_t {
        (1, a.cols() as isize)
    } else {
        (a.cols() as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, b.cols() as isize)
    } else {
        (b.cols() as isize, 1)
    };
    // SAFETY: strides describe the row-major buffers above; `out` is a fresh allocation.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_slice().as_ptr(),
            rsa,
            csa,
            b.as_slice().as_ptr(),
            rsb,
            csb,
            T::zero(),
            out.as_mut_slice().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    product(a, false, b, false).ensure_finite("matmul")
}

/// Returns `(dA, dB)` for `C = A B`.
pub fn matmul_backward<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, dc: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    (product(dc, false, b, true), product(a, true, dc, false))
}

pub fn add<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    out.add_assign(b);
    out.ensure_finite("add")
}

/// Adds a `1 x cols` row vector to every row.
pub fn add_row<T: Scalar>(a: &Matrix<T>, bias: &Matrix<T>) -> Result<Matrix<T>> {
    if bias.rows() != 1 || bias.cols() != a.cols() {
        return Err(Error::shape(
            "add_row",
            format!("bias {:?} for input {:?}", bias.shape(), a.shape()),
        ));
    }
    let mut out = a.clone();
    for r in 0..out.rows() {
        axpy(out.row_mut(r), T::one(), bias.row(0));
    }
    out.ensure_finite("add_row")
}

pub fn column_sums<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        axpy(out.row_mut(0), T::one(), m.row(r));
    }
    out
}

fn check_spmm<T: Scalar>(g: &Graph, weights_len: usize, heads: usize, x: &Matrix<T>) -> Result<usize> {
    if x.rows() != g.num_nodes() {
        return Err(Error::shape(
            "spmm",
            format!("{} feature rows for {} nodes", x.rows(), g.num_nodes()),
        ));
    }
    if heads == 0 || !x.cols().is_multiple_of(heads) {
        return Err(Error::shape(
            "spmm",
            format!("{} columns do not split into {heads} heads", x.cols()),
        ));
    }
    if weights_len != g.num_edges() * heads {
        return Err(Error::shape(
            "spmm",
            format!("{weights_len} weights for {} edges x {heads} heads", g.num_edges()),
        ));
    }
    Ok(x.cols() / heads)
}

/// Weighted neighbor sum: `out[v] = sum over slots (v, u) of w(v, u) * x[u]`.
///
/// With `heads > 1`, `weights` is edge-major (`weights[e * heads + k]`) and
/// head `k` acts on column block `k * d .. (k + 1) * d` of `x`.
pub fn spmm<T: Scalar>(g: &Graph, weights: &[T], heads: usize, x: &Matrix<T>) -> Result<Matrix<T>> {
    let d = check_spmm(g, weights.len(), heads, x)?;
    let cols = g.col_indices();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for v in 0..g.num_nodes() {
        let orow = out.row_mut(v);
        for e in g.row_range(v) {
            let xrow = x.row(cols[e]);
            if heads == 1 {
                axpy(orow, weights[e], xrow);
            } else {
                for k in 0..heads {
                    let blk = k * d..(k + 1) * d;
                    axpy(&mut orow[blk.clone()], weights[e * heads + k], &xrow[blk]);
                }
            }
        }
    }
    out.ensure_finite("spmm")
}

/// Gradient of [`spmm`] with respect to `x`: scatter through the transposed adjacency.
pub fn spmm_backward_x<T: Scalar>(g: &Graph, weights: &[T], heads: usize, dout: &Matrix<T>) -> Matrix<T> {
    let d = dout.cols() / heads;
    let cols = g.col_indices();
    let mut dx = Matrix::zeros(dout.rows(), dout.cols());
    for v in 0..g.num_nodes() {
        for e in g.row_range(v) {
            let u = cols[e];
            let grow = dout.row(v);
            let drow = dx.row_mut(u);
            if heads == 1 {
                axpy(drow, weights[e], grow);
            } else {
                for k in 0..heads {
                    let blk = k * d..(k + 1) * d;
                    axpy(&mut drow[blk.clone()], weights[e * heads + k], &grow[blk]);
                }
            }
        }
    }
    dx
}

/// Gradient of [`spmm`] with respect to the edge weights, edge-major.
pub fn spmm_backward_weights<T: Scalar>(g: &Graph, heads: usize, x: &Matrix<T>, dout: &Matrix<T>) -> Vec<T> {
    let d = x.cols() / heads;
    let cols = g.col_indices();
    let mut dw = vec![T::zero(); g.num_edges() * heads];
    for v in 0..g.num_nodes() {
        let grow = dout.row(v);
        for e in g.row_range(v) {
            let xrow = x.row(cols[e]);
            for k in 0..heads {
                let blk = k * d..(k + 1) * d;
                dw[e * heads + k] = dot(&grow[blk.clone()], &xrow[blk]);
            }
        }
    }
    dw
}

/// Mean over `N(v)`; rows with no neighbors come out zero.
pub fn mean_aggregate<T: Scalar>(g: &Graph, x: &Matrix<T>) -> Result<Matrix<T>> {
    let w = crate::graph::mean_weights::<T>(g);
    spmm(g, w.values(), 1, x)
}

/// Softmax within each CSR row, independently per head column.
///
/// `logits` is `num_edges x heads`. Rows are max-shifted before exponentiation.
pub fn segment_softmax<T: Scalar>(g: &Graph, logits: &Matrix<T>) -> Result<Matrix<T>> {
    if logits.rows() != g.num_edges() {
        return Err(Error::shape(
            "segment_softmax",
            format!("{} logits for {} edges", logits.rows(), g.num_edges()),
        ));
    }
    let heads = logits.cols();
    let mut out = Matrix::zeros(logits.rows(), heads);
    for v in 0..g.num_nodes() {
        let range = g.row_range(v);
        if range.is_empty() {
            continue;
        }
        for k in 0..heads {
            let max = range.clone().map(|e| logits.get(e, k)).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for e in range.clone() {
                let z = (logits.get(e, k) - max).exp();
                out.set(e, k, z);
                total += z;
            }
            for e in range.clone() {
                out.set(e, k, out.get(e, k) / total);
            }
        }
    }
    out.ensure_finite("segment_softmax")
}

pub fn segment_softmax_backward<T: Scalar>(g: &Graph, alpha: &Matrix<T>, dalpha: &Matrix<T>) -> Matrix<T> {
    let heads = alpha.cols();
    let mut dl = Matrix::zeros(alpha.rows(), heads);
    for v in 0..g.num_nodes() {
        let range = g.row_range(v);
        for k in 0..heads {
            let s: T = range.clone().map(|e| alpha.get(e, k) * dalpha.get(e, k)).sum();
            for e in range.clone() {
                dl.set(e, k, alpha.get(e, k) * (dalpha.get(e, k) - s));
            }
        }
    }
    dl
}

fn check_scores<T: Scalar>(g: &Graph, wh: &Matrix<T>, att: &Matrix<T>) -> Result<usize> {
    let heads = att.rows();
    if heads == 0 || !wh.cols().is_multiple_of(heads) || att.cols() != 2 * (wh.cols() / heads) {
        return Err(Error::shape(
            "edge_scores",
            format!("attention {:?} for features {:?}", att.shape(), wh.shape()),
        ));
    }
    if wh.rows() != g.num_nodes() {
        return Err(Error::shape(
            "edge_scores",
            format!("{} rows for {} nodes", wh.rows(), g.num_nodes()),
        ));
    }
    Ok(wh.cols() / heads)
}

/// Node-level halves of the attention score: `(a_left . wh_v, a_right . wh_v)` per head.
fn score_halves<T: Scalar>(wh: &Matrix<T>, att: &Matrix<T>, d: usize) -> (Matrix<T>, Matrix<T>) {
    let heads = att.rows();
    let mut left = Matrix::zeros(wh.rows(), heads);
    let mut right = Matrix::zeros(wh.rows(), heads);
    for v in 0..wh.rows() {
        let row = wh.row(v);
        for k in 0..heads {
            let blk = &row[k * d..(k + 1) * d];
            let a = att.row(k);
            left.set(v, k, dot(&a[..d], blk));
            right.set(v, k, dot(&a[d..], blk));
        }
    }
    (left, right)
}

/// Unnormalized attention scores `a_k . [wh_v || wh_u]` for every slot `(v, u)`,
/// one column per head. `att` is `heads x 2d`.
pub fn edge_scores<T: Scalar>(g: &Graph, wh: &Matrix<T>, att: &Matrix<T>) -> Result<Matrix<T>> {
    let d = check_scores(g, wh, att)?;
    let heads = att.rows();
    let (left, right) = score_halves(wh, att, d);
    let cols = g.col_indices();
    let mut out = Matrix::zeros(g.num_edges(), heads);
    for v in 0..g.num_nodes() {
        for e in g.row_range(v) {
            let u = cols[e];
            for k in 0..heads {
                out.set(e, k, left.get(v, k) + right.get(u, k));
            }
        }
    }
    out.ensure_finite("edge_scores")
}

/// Returns `(d_wh, d_att)` for [`edge_scores`].
pub fn edge_scores_backward<T: Scalar>(
    g: &Graph,
    wh: &Matrix<T>,
    att: &Matrix<T>,
    dscores: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>) {
    let heads = att.rows();
    let d = wh.cols() / heads;
    let n = g.num_nodes();
    let cols = g.col_indices();
    let mut dleft = Matrix::<T>::zeros(n, heads);
    let mut dright = Matrix::<T>::zeros(n, heads);
    for v in 0..n {
        for e in g.row_range(v) {
            let u = cols[e];
            for k in 0..heads {
                let ds = dscores.get(e, k);
                dleft.set(v, k, dleft.get(v, k) + ds);
                dright.set(u, k, dright.get(u, k) + ds);
            }
        }
    }
    let mut dwh = Matrix::zeros(wh.rows(), wh.cols());
    let mut datt = Matrix::zeros(heads, 2 * d);
    for v in 0..n {
        for k in 0..heads {
            let (l, r) = (dleft.get(v, k), dright.get(v, k));
            let a = att.row(k);
            let blk = k * d..(k + 1) * d;
            {
                let drow = &mut dwh.row_mut(v)[blk.clone()];
                axpy(drow, l, &a[..d]);
                axpy(drow, r, &a[d..]);
            }
            let whrow = &wh.row(v)[blk];
            let arow = datt.row_mut(k);
            axpy(&mut arow[..d], l, whrow);
            axpy(&mut arow[d..], r, whrow);
        }
    }
    (dwh, datt)
}

pub fn activation<T: Scalar>(x: &Matrix<T>, kind: Activation) -> Matrix<T> {
    match kind {
        Activation::Relu => x.map(|v| v.max(T::zero())),
        Activation::LeakyRelu(slope) => {
            let s = T::from_f64(slope);
            x.map(|v| if v > T::zero() { v } else { v * s })
        }
    }
}

/// Masks `dout` by the sign of the forward input. The derivative at exactly 0
/// is taken from the negative side.
pub fn activation_backward<T: Scalar>(x: &Matrix<T>, dout: &Matrix<T>, kind: Activation) -> Matrix<T> {
    let neg = match kind {
        Activation::Relu => T::zero(),
        Activation::LeakyRelu(slope) => T::from_f64(slope),
    };
    let data = x
        .as_slice()
        .iter()
        .zip(dout.as_slice())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { g * neg })
        .collect();
    Matrix::from_vec_unchecked(x.rows(), x.cols(), data)
}

pub fn check_dropout_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::input(format!("dropout rate {p} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and the per-entry multiplier
/// (0 or `1 / (1 - p)`), which is also the backward mask.
///
/// In eval mode, or with `p = 0`, the input passes through and no random
/// numbers are drawn.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Matrix<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix<T>, Option<Vec<T>>)> {
    check_dropout_rate(p)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    // drop when a uniform u32 falls below p * 2^32
    let threshold = (p * 4_294_967_296.0).round() as u64;
    let mut bits = vec![0u32; x.len()];
    rng.fill(&mut bits[..]);
    let mask: Vec<T> = bits
        .into_iter()
        .map(|b| if (b as u64) < threshold { T::zero() } else { keep })
        .collect();
    let out = apply_mask(x, &mask);
    Ok((out, Some(mask)))
}

pub fn apply_mask<T: Scalar>(x: &Matrix<T>, mask: &[T]) -> Matrix<T> {
    let data = x.as_slice().iter().zip(mask).map(|(&v, &m)| v * m).collect();
    Matrix::from_vec_unchecked(x.rows(), x.cols(), data)
}

/// Saved statistics from a normalization forward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
}

fn check_affine<T: Scalar>(op: &'static str, x: &Matrix<T>, gamma: &Matrix<T>, beta: &Matrix<T>) -> Result<()> {
    for (name, p) in [("gamma", gamma), ("beta", beta)] {
        if p.rows() != 1 || p.cols() != x.cols() {
            return Err(Error::shape(
                op,
                format!("{name} {:?} for input {:?}", p.shape(), x.shape()),
            ));
        }
    }
    Ok(())
}

fn affine<T: Scalar>(xhat: &Matrix<T>, gamma: &Matrix<T>, beta: &Matrix<T>) -> Matrix<T> {
    let (g, b) = (gamma.row(0), beta.row(0));
    let mut out = xhat.clone();
    for r in 0..out.rows() {
        for ((o, &gv), &bv) in out.row_mut(r).iter_mut().zip(g).zip(b) {
            *o = *o * gv + bv;
        }
    }
    out
}

/// Per-row standardization (biased variance) followed by `gamma * xhat + beta`.
pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gamma: &Matrix<T>,
    beta: &Matrix<T>,
    eps: f64,
) -> Result<(Matrix<T>, NormCache<T>)> {
    check_affine("layer_norm", x, gamma, beta)?;
    let c = T::from_f64(x.cols() as f64);
    let eps = T::from_f64(eps);
    let mut xhat = Matrix::zeros(x.rows(), x.cols());
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / c;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    let out = affine(&xhat, gamma, beta).ensure_finite("layer_norm")?;
    Ok((out, NormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &Matrix<T>,
    dout: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let (rows, cols) = dout.shape();
    let c = T::from_f64(cols as f64);
    let g = gamma.row(0);
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgamma = Matrix::zeros(1, cols);
    let dbeta = column_sums(dout);
    for r in 0..rows {
        let xh = cache.xhat.row(r);
        let dy = dout.row(r);
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..cols {
            let dxh = dy[j] * g[j];
            mean_d += dxh;
            mean_dx += dxh * xh[j];
        }
        mean_d /= c;
        mean_dx /= c;
        let is = cache.inv_std[r];
        let drow = dx.row_mut(r);
        for j in 0..cols {
            drow[j] = is * (dy[j] * g[j] - mean_d - xh[j] * mean_dx);
        }
        axpy(
            dgamma.row_mut(0),
            T::one(),
            &dy.iter().zip(xh).map(|(&a, &b)| a * b).collect::<Vec<_>>(),
        );
    }
    (dx, dgamma, dbeta)
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T> {
    pub out: Matrix<T>,
    pub cache: NormCache<T>,
    /// Updated running statistics (train mode only).
    pub updated: Option<RunningStats<T>>,
}

/// Per-column standardization. Train mode uses the batch statistics and
/// returns running statistics advanced by `momentum`; eval mode uses `stats`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Scalar>(
    x: &Matrix<T>,
    gamma: &Matrix<T>,
    beta: &Matrix<T>,
    stats: &RunningStats<T>,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<BatchNormOutput<T>> {
    check_affine("batch_norm", x, gamma, beta)?;
    if stats.mean.len() != x.cols() || stats.var.len() != x.cols() {
        return Err(Error::shape("batch_norm", "running statistics width"));
    }
    let (rows, cols) = x.shape();
    let epsv = T::from_f64(eps);
    let (mean, var, updated) = match mode {
        Mode::Train => {
            if rows < 2 {
                return Err(Error::input("batch norm in train mode needs at least 2 rows"));
            }
            let n = T::from_f64(rows as f64);
            let mut mean = column_sums(x).into_vec();
            for m in &mut mean {
                *m /= n;
            }
            let mut var = vec![T::zero(); cols];
            for r in 0..rows {
                for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let unbiased: Vec<T> = var.iter().map(|&s| s / T::from_f64((rows - 1) as f64)).collect();
            for s in &mut var {
                *s /= n;
            }
            let mom = T::from_f64(momentum);
            let keep = T::one() - mom;
            let updated = RunningStats {
                mean: stats
                    .mean
                    .iter()
                    .zip(&mean)
                    .map(|(&r, &b)| keep * r + mom * b)
                    .collect(),
                var: stats
                    .var
                    .iter()
                    .zip(&unbiased)
                    .map(|(&r, &b)| keep * r + mom * b)
                    .collect(),
            };
            (mean, var, Some(updated))
        }
        Mode::Eval => (stats.mean.clone(), stats.var.clone(), None),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsv).sqrt()).collect();
    let mut xhat = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = x.row(r);
        for (j, o) in xhat.row_mut(r).iter_mut().enumerate() {
            *o = (row[j] - mean[j]) * inv_std[j];
        }
    }
    let out = affine(&xhat, gamma, beta).ensure_finite("batch_norm")?;
    Ok(BatchNormOutput {
        out,
        cache: NormCache { xhat, inv_std },
        updated,
    })
}

/// Returns `(dx, dgamma, dbeta)`. In eval mode the statistics are constants.
pub fn batch_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &Matrix<T>,
    dout: &Matrix<T>,
    mode: Mode,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let (rows, cols) = dout.shape();
    let g = gamma.row(0);
    let dbeta = column_sums(dout);
    let mut dgamma = Matrix::zeros(1, cols);
    for r in 0..rows {
        let dg = dgamma.row_mut(0);
        for ((acc, &dy), &xh) in dg.iter_mut().zip(dout.row(r)).zip(cache.xhat.row(r)) {
            *acc += dy * xh;
        }
    }
    let mut dx = Matrix::zeros(rows, cols);
    match mode {
        Mode::Eval => {
            for r in 0..rows {
                let dy = dout.row(r);
                for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                    *o = dy[j] * g[j] * cache.inv_std[j];
                }
            }
        }
        Mode::Train => {
            let n = T::from_f64(rows as f64);
            // per column: mean(dxhat) = g * dbeta / n, mean(dxhat * xhat) = g * dgamma / n
            for r in 0..rows {
                let dy = dout.row(r);
                let xh = cache.xhat.row(r);
                for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                    let mean_d = g[j] * dbeta.get(0, j) / n;
                    let mean_dx = g[j] * dgamma.get(0, j) / n;
                    *o = cache.inv_std[j] * (dy[j] * g[j] - mean_d - xh[j] * mean_dx);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, gcn_norm_weights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matmul(&a, &Matrix::identity(2)).unwrap(), a);
        assert_eq!(matmul(&a, &Matrix::zeros(2, 3)).unwrap(), Matrix::zeros(2, 3));
        let b = m(&[vec![1.0], vec![1.0]]);
        assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[3.0, 7.0]);
        assert!(matmul(&a, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn sparse_and_dense_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::<f64>::from_vec_unchecked(
            7,
            9,
            (0..63)
                .map(|_| {
                    if rng.gen::<f64>() < 0.9 {
                        0.0
                    } else {
                        rng.gen::<f64>() - 0.5
                    }
                })
                .collect(),
        );
        assert!(a.zero_fraction() >= SPARSE_ZERO_FRACTION);
        let b = Matrix::<f64>::from_vec_unchecked(9, 4, (0..36).map(|i| i as f64 * 0.1 - 1.0).collect());
        let c = Matrix::<f64>::from_vec_unchecked(7, 4, (0..28).map(|i| (i as f64).sin()).collect());
        let naive = |x: &Matrix<f64>, y: &Matrix<f64>| {
            let mut out = Matrix::zeros(x.rows(), y.cols());
            for i in 0..x.rows() {
                for j in 0..y.cols() {
                    out.set(i, j, (0..x.cols()).map(|k| x.get(i, k) * y.get(k, j)).sum());
                }
            }
            out
        };
        assert!(product(&a, false, &b, false).max_abs_diff(&naive(&a, &b)) < 1e-12);
        assert!(product(&a, true, &c, false).max_abs_diff(&naive(&a.transpose(), &c)) < 1e-12);
    }

    #[test]
    fn spmm_examples() {
        let k3 = build_graph(&[(0, 1), (1, 2), (0, 2)], 3, true, true).unwrap();
        let x = Matrix::<f64>::identity(3);
        let zeros = vec![0.0; k3.num_edges()];
        assert_eq!(spmm(&k3, &zeros, 1, &x).unwrap(), Matrix::zeros(3, 3));

        let loops = build_graph(&[], 3, true, true).unwrap();
        let xr = m(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![4.0, 0.0]]);
        assert_eq!(spmm(&loops, &[1.0; 3], 1, &xr).unwrap(), xr);

        let w = gcn_norm_weights::<f64>(&k3).unwrap();
        let out = spmm(&k3, w.values(), 1, &x).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        assert!(spmm(&k3, &[1.0; 2], 1, &x).is_err());
    }

    #[test]
    fn mean_aggregate_examples() {
        let path = build_graph(&[(0, 1), (1, 2)], 3, true, false).unwrap();
        let x = m(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(mean_aggregate(&path, &x).unwrap().get(1, 0), 2.0);

        let iso = build_graph(&[(0, 1)], 3, true, false).unwrap();
        let x = m(&[vec![5.0, 5.0], vec![5.0, 5.0], vec![7.0, 7.0]]);
        let out = mean_aggregate(&iso, &x).unwrap();
        assert_eq!(out.row(2), &[0.0, 0.0]);
        assert_eq!(out.row(0), &[5.0, 5.0]);
    }

    #[test]
    fn segment_softmax_examples() {
        let g = build_graph(&[(0, 1), (0, 2)], 3, true, true).unwrap();
        // row 0 has 3 slots, rows 1 and 2 have 2
        let equal = Matrix::<f64>::filled(g.num_edges(), 1, 0.7);
        let a = segment_softmax(&g, &equal).unwrap();
        for e in g.row_range(0) {
            assert!((a.get(e, 0) - 1.0 / 3.0).abs() < 1e-15);
        }

        let single = build_graph(&[], 1, true, true).unwrap();
        let a = segment_softmax(&single, &m(&[vec![42.0]])).unwrap();
        assert_eq!(a.get(0, 0), 1.0);

        let two = build_graph(&[(1, 0), (2, 0)], 3, false, false).unwrap();
        let logits = m(&[vec![2f64.ln()], vec![0.0]]);
        let a = segment_softmax(&two, &logits).unwrap();
        assert!((a.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn segment_softmax_is_shift_stable() {
        let g = build_graph(&[(0, 1)], 2, true, true).unwrap();
        let big = Matrix::<f64>::from_vec(g.num_edges(), 1, vec![1000.0, 999.0, 1000.0, 1000.0]).unwrap();
        let a = segment_softmax(&g, &big).unwrap();
        assert!(a.is_finite());
        assert!((a.get(2, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn activation_examples() {
        let x = m(&[vec![-1.0, 0.0, 2.0]]);
        let r = activation(&x, Activation::Relu);
        assert_eq!(r.as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(activation(&r, Activation::Relu), r);
        let l = activation(&m(&[vec![-1.0]]), Activation::LeakyRelu(0.2));
        assert!((l.get(0, 0) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = m(&[vec![3.0, -1.0, 2.0, 5.0]]);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap().0, x);
        let big = Matrix::<f64>::filled(1, 64, 3.0);
        let (out, mask) = dropout(&big, 0.5, Mode::Train, &mut rng).unwrap();
        assert!(mask.is_some());
        assert!(out.as_slice().iter().all(|&v| v == 0.0 || v == 6.0));
        assert!(out.as_slice().contains(&6.0));
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::<f64>::filled(1, 1, 2.5);
        let p = 0.3;
        let trials = 100_000;
        let samples: Vec<f64> = (0..trials)
            .map(|_| dropout(&x, p, Mode::Train, &mut rng).unwrap().0.get(0, 0))
            .collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - 2.5).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Matrix::filled(1, 2, 1.0);
        let zeros = Matrix::zeros(1, 2);
        let (out, _) = layer_norm(&m(&[vec![4.0, 4.0]]), &ones, &zeros, 1e-5).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
        let (out, _) = layer_norm(&m(&[vec![1.0, -1.0]]), &ones, &zeros, 1e-12).unwrap();
        assert!(out.max_abs_diff(&m(&[vec![1.0, -1.0]])) < 1e-9);
        let b = m(&[vec![0.3, -0.7]]);
        let (out, _) = layer_norm(&m(&[vec![1.0, 5.0], vec![2.0, -3.0]]), &zeros, &b, 1e-5).unwrap();
        assert_eq!(out.row(0), b.row(0));
        assert_eq!(out.row(1), b.row(0));
    }

    #[test]
    fn batch_norm_examples() {
        let ones = Matrix::filled(1, 1, 1.0);
        let zeros = Matrix::zeros(1, 1);
        let stats = RunningStats::new(1);
        let c = batch_norm(
            &m(&[vec![2.0], vec![2.0]]),
            &ones,
            &zeros,
            &stats,
            Mode::Train,
            1e-5,
            0.1,
        )
        .unwrap();
        assert_eq!(c.out.as_slice(), &[0.0, 0.0]);

        let x = m(&[vec![0.0], vec![2.0]]);
        let t = batch_norm(&x, &ones, &zeros, &stats, Mode::Train, 1e-12, 0.1).unwrap();
        assert!(t.out.max_abs_diff(&m(&[vec![-1.0], vec![1.0]])) < 1e-9);
        let upd = t.updated.unwrap();
        // mean 1, unbiased var 2
        assert!((upd.mean[0] - 0.1).abs() < 1e-15);
        assert!((upd.var[0] - (0.9 + 0.2)).abs() < 1e-15);

        let g = m(&[vec![2.0]]);
        let b = m(&[vec![0.5]]);
        let e = batch_norm(&x, &g, &b, &stats, Mode::Eval, 0.0, 0.1).unwrap();
        assert_eq!(e.out.as_slice(), &[0.5, 4.5]);

        assert!(batch_norm(&m(&[vec![1.0]]), &ones, &zeros, &stats, Mode::Train, 1e-5, 0.1).is_err());
    }
}
