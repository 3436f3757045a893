//! Reverse-mode gradient tape over the kernel set in [`super::kernels`].
//!
//! A tape lives for one forward/backward pass. Nodes are appended in
//! evaluation order, so walking them backwards is a valid topological order.

use std::borrow::Cow;

use rand::Rng;

use crate::error::Result;
use crate::graph::Graph;

use super::kernels::{self, Activation, Mode, NormCache, RunningStats};
use super::{Matrix, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'g, T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    SpmmFixed {
        graph: &'g Graph,
        weights: &'g [T],
        x: Var,
    },
    SpmmEdge {
        graph: &'g Graph,
        weights: Var,
        heads: usize,
        x: Var,
    },
    EdgeScores {
        graph: &'g Graph,
        wh: Var,
        att: Var,
    },
    SegmentSoftmax {
        graph: &'g Graph,
        logits: Var,
    },
    Activation(Var, Activation),
    Dropout(Var, Vec<T>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
        mode: Mode,
    },
}

struct Node<'g, T: Clone> {
    value: Cow<'g, Matrix<T>>,
    requires_grad: bool,
    op: Op<'g, T>,
}

pub struct Tape<'g, T: Clone> {
    nodes: Vec<Node<'g, T>>,
}

/// Gradients indexed by [`Var`]; `None` where nothing flowed.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads[v.0].take()
    }
}

impl<'g, T: Scalar> Default for Tape<'g, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g, T: Scalar> Tape<'g, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, requires_grad: bool, op: Op<'g, T>) -> Var {
        self.push_cow(Cow::Owned(value), requires_grad, op)
    }

    fn push_cow(&mut self, value: Cow<'g, Matrix<T>>, requires_grad: bool, op: Op<'g, T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Input that needs no gradient (features, fixed masks).
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Records a borrowed constant without copying it.
    pub fn constant_ref(&mut self, value: &'g Matrix<T>) -> Var {
        self.push_cow(Cow::Borrowed(value), false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = kernels::add_row(self.value(a), self.value(bias))?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, rg, Op::AddRow(a, bias)))
    }

    /// Weighted aggregation with constant per-edge weights (GCN, mean).
    pub fn spmm_fixed(&mut self, graph: &'g Graph, weights: &'g [T], x: Var) -> Result<Var> {
        let value = kernels::spmm(graph, weights, 1, self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::SpmmFixed { graph, weights, x }))
    }

    /// Weighted aggregation where the weights are themselves a tape value
    /// of shape `num_edges x heads` (attention coefficients).
    pub fn spmm_edge(&mut self, graph: &'g Graph, weights: Var, x: Var) -> Result<Var> {
        let heads = self.value(weights).cols();
        let value = kernels::spmm(graph, self.value(weights).as_slice(), heads, self.value(x))?;
        let rg = self.rg(weights) || self.rg(x);
        Ok(self.push(
            value,
            rg,
            Op::SpmmEdge {
                graph,
                weights,
                heads,
                x,
            },
        ))
    }

    pub fn edge_scores(&mut self, graph: &'g Graph, wh: Var, att: Var) -> Result<Var> {
        let value = kernels::edge_scores(graph, self.value(wh), self.value(att))?;
        let rg = self.rg(wh) || self.rg(att);
        Ok(self.push(value, rg, Op::EdgeScores { graph, wh, att }))
    }

    pub fn segment_softmax(&mut self, graph: &'g Graph, logits: Var) -> Result<Var> {
        let value = kernels::segment_softmax(graph, self.value(logits))?;
        let rg = self.rg(logits);
        Ok(self.push(value, rg, Op::SegmentSoftmax { graph, logits }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = kernels::activation(self.value(x), kind);
        let rg = self.rg(x);
        self.push(value, rg, Op::Activation(x, kind))
    }

    /// Inverted dropout; identity in eval mode or at `p = 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        let (value, mask) = kernels::dropout(self.value(x), p, mode, rng)?;
        match mask {
            None => Ok(x),
            Some(mask) => Ok(self.dropout_with_mask_value(x, value, mask)),
        }
    }

    /// Dropout with a caller-supplied multiplier mask (0 or `1 / (1 - p)` entries).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let value = kernels::apply_mask(self.value(x), &mask);
        self.dropout_with_mask_value(x, value, mask)
    }

    fn dropout_with_mask_value(&mut self, x: Var, value: Matrix<T>, mask: Vec<T>) -> Var {
        let rg = self.rg(x);
        self.push(value, rg, Op::Dropout(x, mask))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (value, cache) = kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(value, rg, Op::LayerNorm { x, gamma, beta, cache }))
    }

    /// Returns the output and, in train mode, the advanced running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        mode: Mode,
        eps: f64,
        momentum: f64,
    ) -> Result<(Var, Option<RunningStats<T>>)> {
        let out = kernels::batch_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            stats,
            mode,
            eps,
            momentum,
        )?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            out.out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache: out.cache,
                mode,
            },
        );
        Ok((v, out.updated))
    }

    /// Backpropagates `seed` (the gradient of some scalar with respect to
    /// `root`) through every node recorded up to `root`.
    pub fn backward(&self, root: Var, seed: Matrix<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.value(root).shape(), "seed shape must match root");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut emit = |v: Var, d: Matrix<T>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {
                    // leaves keep their gradient
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        emit(*a, kernels::product(&g, false, bv, true));
                    }
                    if self.rg(*b) {
                        emit(*b, kernels::product(av, true, &g, false));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        emit(*b, g.clone());
                    }
                    emit(*a, g);
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        emit(*bias, kernels::column_sums(&g));
                    }
                    emit(*a, g);
                }
                Op::SpmmFixed { graph, weights, x } => {
                    emit(*x, kernels::spmm_backward_x(graph, weights, 1, &g));
                }
                Op::SpmmEdge {
                    graph,
                    weights,
                    heads,
                    x,
                } => {
                    let wv = self.value(*weights);
                    if self.rg(*weights) {
                        let dw = kernels::spmm_backward_weights(graph, *heads, self.value(*x), &g);
                        emit(*weights, Matrix::from_vec_unchecked(wv.rows(), wv.cols(), dw));
                    }
                    if self.rg(*x) {
                        emit(*x, kernels::spmm_backward_x(graph, wv.as_slice(), *heads, &g));
                    }
                }
                Op::EdgeScores { graph, wh, att } => {
                    let (dwh, datt) = kernels::edge_scores_backward(graph, self.value(*wh), self.value(*att), &g);
                    emit(*wh, dwh);
                    emit(*att, datt);
                }
                Op::SegmentSoftmax { graph, logits } => {
                    emit(*logits, kernels::segment_softmax_backward(graph, &node.value, &g));
                }
                Op::Activation(x, kind) => {
                    emit(*x, kernels::activation_backward(self.value(*x), &g, *kind));
                }
                Op::Dropout(x, mask) => {
                    emit(*x, kernels::apply_mask(&g, mask));
                }
                Op::LayerNorm { x, gamma, beta, cache } => {
                    let (dx, dgamma, dbeta) = kernels::layer_norm_backward(cache, self.value(*gamma), &g);
                    emit(*x, dx);
                    emit(*gamma, dgamma);
                    emit(*beta, dbeta);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                    mode,
                } => {
                    let (dx, dgamma, dbeta) = kernels::batch_norm_backward(cache, self.value(*gamma), &g, *mode);
                    emit(*x, dx);
                    emit(*gamma, dgamma);
                    emit(*beta, dbeta);
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Matrix::from_rows(&[vec![2.0, -1.0]]).unwrap());
        let y = tape.add(x, x).unwrap();
        let grads = tape.backward(y, Matrix::filled(1, 2, 1.0));
        assert_eq!(grads.get(x).unwrap().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Matrix::identity(2));
        let w = tape.param(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let y = tape.matmul(c, w).unwrap();
        let grads = tape.backward(y, Matrix::filled(2, 2, 1.0));
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(w).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn eval_dropout_records_nothing() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Matrix::filled(2, 2, 1.0));
        let y = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(x, y);
        assert_eq!(tape.len(), 1);
    }
}
