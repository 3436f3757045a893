//! Immutable CSR adjacency plus per-edge aggregation weights.
//!
//! Rows are destination nodes: the slot range `row_offsets[v]..row_offsets[v + 1]`
//! lists the nodes `v` aggregates from, sorted ascending and without duplicates.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    has_self_loops: bool,
    is_symmetrized: bool,
}

/// Per-edge coefficients aligned with [`Graph::col_indices`].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights<T> {
    values: Vec<T>,
}

/// Builds a CSR graph from an edge list.
///
/// Duplicate pairs collapse to one slot. With `symmetrize`, every `(u, v)` also
/// inserts `(v, u)`. With `add_self_loops`, every node gets `(v, v)`.
pub fn build_graph(
    edges: &[(usize, usize)],
    num_nodes: usize,
    symmetrize: bool,
    add_self_loops: bool,
) -> Result<Graph> {
    if num_nodes == 0 {
        return Err(Error::input("graph must have at least one node"));
    }
    let mut pairs = Vec::with_capacity(edges.len() * if symmetrize { 2 } else { 1 } + num_nodes);
    for (i, &(u, v)) in edges.iter().enumerate() {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::input(format!(
                "edge {i} ({u}, {v}) has an endpoint outside [0, {num_nodes})"
            )));
        }
        // stored as (row, col) = (destination, source)
        pairs.push((v, u));
        if symmetrize {
            pairs.push((u, v));
        }
    }
    if add_self_loops {
        pairs.extend((0..num_nodes).map(|v| (v, v)));
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut row_offsets = vec![0usize; num_nodes + 1];
    for &(row, _) in &pairs {
        row_offsets[row + 1] += 1;
    }
    for v in 0..num_nodes {
        row_offsets[v + 1] += row_offsets[v];
    }
    let col_indices: Vec<usize> = pairs.into_iter().map(|(_, col)| col).collect();

    let mut g = Graph {
        num_nodes,
        row_offsets,
        col_indices,
        has_self_loops: false,
        is_symmetrized: false,
    };
    g.has_self_loops = add_self_loops || (0..num_nodes).all(|v| g.row(v).binary_search(&v).is_ok());
    g.is_symmetrized = symmetrize || g.check_symmetric();
    Ok(g)
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    pub fn is_symmetrized(&self) -> bool {
        self.is_symmetrized
    }

    /// Sorted neighbor slice of `v`.
    pub fn neighbors(&self, v: usize) -> Result<&[usize]> {
        if v >= self.num_nodes {
            return Err(Error::input(format!(
                "node {v} out of range for graph with {} nodes",
                self.num_nodes
            )));
        }
        Ok(self.row(v))
    }

    #[inline]
    pub(crate) fn row(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    #[inline]
    pub(crate) fn row_range(&self, v: usize) -> std::ops::Range<usize> {
        self.row_offsets[v]..self.row_offsets[v + 1]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    /// Destination node of every edge slot (the CSR row each slot belongs to).
    pub fn edge_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.num_edges());
        for v in 0..self.num_nodes {
            rows.extend(std::iter::repeat_n(v, self.degree(v)));
        }
        rows
    }

    /// Slot index of edge `(v, u)`, if present.
    pub fn find_edge(&self, v: usize, u: usize) -> Option<usize> {
        let start = self.row_offsets[v];
        self.row(v).binary_search(&u).ok().map(|i| start + i)
    }

    /// Edge list as `(row, col)` pairs in slot order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for v in 0..self.num_nodes {
            out.extend(self.row(v).iter().map(|&u| (v, u)));
        }
        out
    }

    fn check_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|v| self.row(v).iter().all(|&u| self.row(u).binary_search(&v).is_ok()))
    }
}

impl<T: Scalar> EdgeWeights<T> {
    pub fn new(g: &Graph, values: Vec<T>) -> Result<Self> {
        if values.len() != g.num_edges() {
            return Err(Error::shape(
                "edge weights",
                format!("{} weights for {} edges", values.len(), g.num_edges()),
            ));
        }
        if values.iter().any(|w| !w.is_finite()) {
            return Err(Error::input("edge weights must be finite"));
        }
        Ok(EdgeWeights { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight on slot `(v, u)`; zero when the edge is absent.
    pub fn get(&self, g: &Graph, v: usize, u: usize) -> T {
        g.find_edge(v, u).map_or(T::zero(), |e| self.values[e])
    }
}

/// Symmetric GCN coefficients `1 / sqrt(d̂_u d̂_v)`, where `d̂_v = 1 + deg(v)`
/// is the row length including the self-loop.
pub fn gcn_norm_weights<T: Scalar>(g: &Graph) -> Result<EdgeWeights<T>> {
    if !g.has_self_loops() {
        return Err(Error::Precondition(
            "GCN normalization needs a self-loop on every node".into(),
        ));
    }
    if !g.is_symmetrized() {
        return Err(Error::Precondition(
            "GCN normalization needs a symmetrized graph".into(),
        ));
    }
    let inv_sqrt: Vec<f64> = (0..g.num_nodes()).map(|v| 1.0 / (g.degree(v) as f64).sqrt()).collect();
    let mut values = Vec::with_capacity(g.num_edges());
    for v in 0..g.num_nodes() {
        for &u in g.row(v) {
            values.push(T::from_f64(inv_sqrt[u] * inv_sqrt[v]));
        }
    }
    Ok(EdgeWeights { values })
}

/// Mean-aggregation coefficients `1 / |N(v)|` on every slot of row `v`.
pub fn mean_weights<T: Scalar>(g: &Graph) -> EdgeWeights<T> {
    let mut values = Vec::with_capacity(g.num_edges());
    for v in 0..g.num_nodes() {
        let d = g.degree(v);
        let w = T::from_f64(1.0 / d.max(1) as f64);
        values.extend(std::iter::repeat_n(w, d));
    }
    EdgeWeights { values }
}
