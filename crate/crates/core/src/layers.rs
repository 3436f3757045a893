//! GCN, GraphSAGE and GAT layers with the shared training recipe.
//!
//! Each layer computes an aggregation `core` and then applies, in order:
//! linear residual add (inside the normalization argument), normalization,
//! activation, dropout:
//!
//! ```text
//! h_out = Dropout(act(Norm(h_in W_r + core)))
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, gcn_norm_weights, mean_weights, EdgeWeights, Graph};
use crate::tensor::kernels::{check_dropout_rate, Activation, Mode, RunningStats};
use crate::tensor::{Matrix, Scalar, Tape, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Sage,
    Gat,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Sage => "sage",
            LayerKind::Gat => "gat",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(LayerKind::Gcn),
            "sage" | "graphsage" => Ok(LayerKind::Sage),
            "gat" => Ok(LayerKind::Gat),
            other => Err(Error::input(format!("unknown model kind '{other}' (gcn, sage, gat)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "ln")]
    Layer,
    #[serde(rename = "bn")]
    Batch,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Layer => "ln",
            NormKind::Batch => "bn",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "false" => Ok(NormKind::None),
            "ln" | "layer" => Ok(NormKind::Layer),
            "bn" | "batch" => Ok(NormKind::Batch),
            other => Err(Error::input(format!("unknown normalization '{other}' (none, ln, bn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub norm: NormKind,
    pub dropout: f64,
    pub residual: bool,
    pub activation: Activation,
    /// Skip activation and dropout (normalization and residual still apply).
    pub raw_output: bool,
}

impl LayerConfig {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        LayerConfig {
            kind,
            in_dim,
            out_dim,
            heads: 1,
            norm: NormKind::None,
            dropout: 0.0,
            residual: false,
            activation: Activation::Relu,
            raw_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::input("layer dimensions must be positive"));
        }
        if self.heads == 0 {
            return Err(Error::input("heads must be at least 1"));
        }
        if self.kind == LayerKind::Gat && !self.out_dim.is_multiple_of(self.heads) {
            return Err(Error::input(format!(
                "GAT output dim {} is not divisible by {} heads",
                self.out_dim, self.heads
            )));
        }
        check_dropout_rate(self.dropout)
    }
}

/// Trainable tensors of one layer plus BatchNorm buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// `W` for GCN/GAT, `W1` (self term) for GraphSAGE. `in_dim x out_dim`.
    pub weight: Matrix<T>,
    /// `W2` (neighbor-mean term), GraphSAGE only.
    pub neighbor_weight: Option<Matrix<T>>,
    /// Attention vectors, GAT only: `heads x 2 * (out_dim / heads)`.
    pub attention: Option<Matrix<T>>,
    /// `W_r`, present iff the residual connection is on.
    pub residual: Option<Matrix<T>>,
    pub gamma: Option<Matrix<T>>,
    pub beta: Option<Matrix<T>>,
    pub running: Option<RunningStats<T>>,
}

fn glorot<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Matrix<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64((2.0 * rng.gen::<f64>() - 1.0) * bound))
        .collect();
    Matrix::from_vec_unchecked(rows, cols, data)
}

impl<T: Scalar> LayerParams<T> {
    /// Glorot-uniform weights, unit `gamma`, zero `beta`, running stats at (0, 1).
    pub fn init<R: Rng + ?Sized>(cfg: &LayerConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (i, o) = (cfg.in_dim, cfg.out_dim);
        let weight = glorot(i, o, i, o, rng);
        let neighbor_weight = (cfg.kind == LayerKind::Sage).then(|| glorot(i, o, i, o, rng));
        let attention = (cfg.kind == LayerKind::Gat).then(|| {
            let d = o / cfg.heads;
            glorot(cfg.heads, 2 * d, 2 * d, cfg.heads, rng)
        });
        let residual = cfg.residual.then(|| glorot(i, o, i, o, rng));
        let has_norm = cfg.norm != NormKind::None;
        Ok(LayerParams {
            weight,
            neighbor_weight,
            attention,
            residual,
            gamma: has_norm.then(|| Matrix::filled(1, o, T::one())),
            beta: has_norm.then(|| Matrix::zeros(1, o)),
            running: (cfg.norm == NormKind::Batch).then(|| RunningStats::new(o)),
        })
    }

    /// Trainable tensors in declaration order.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        [
            Some(&self.weight),
            self.neighbor_weight.as_ref(),
            self.attention.as_ref(),
            self.residual.as_ref(),
            self.gamma.as_ref(),
            self.beta.as_ref(),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        [
            Some(&mut self.weight),
            self.neighbor_weight.as_mut(),
            self.attention.as_mut(),
            self.residual.as_mut(),
            self.gamma.as_mut(),
            self.beta.as_mut(),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn check_shapes(&self, cfg: &LayerConfig) -> Result<()> {
        let (i, o) = (cfg.in_dim, cfg.out_dim);
        let want = |m: Option<&Matrix<T>>, shape: (usize, usize), name: &str, required: bool| -> Result<()> {
            match (m, required) {
                (Some(m), true) if m.shape() == shape => Ok(()),
                (Some(m), true) => Err(Error::shape(
                    "layer params",
                    format!("{name} is {:?}, expected {:?}", m.shape(), shape),
                )),
                (None, false) => Ok(()),
                (None, true) => Err(Error::input(format!("layer params missing {name}"))),
                (Some(_), false) => Err(Error::input(format!("layer params carry unexpected {name}"))),
            }
        };
        let has_norm = cfg.norm != NormKind::None;
        want(Some(&self.weight), (i, o), "W", true)?;
        want(self.neighbor_weight.as_ref(), (i, o), "W2", cfg.kind == LayerKind::Sage)?;
        let d = o / cfg.heads.max(1);
        want(
            self.attention.as_ref(),
            (cfg.heads, 2 * d),
            "a",
            cfg.kind == LayerKind::Gat,
        )?;
        want(self.residual.as_ref(), (i, o), "W_r", cfg.residual)?;
        want(self.gamma.as_ref(), (1, o), "gamma", has_norm)?;
        want(self.beta.as_ref(), (1, o), "beta", has_norm)?;
        match (&self.running, cfg.norm == NormKind::Batch) {
            (Some(s), true) if s.mean.len() == o && s.var.len() == o => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::input(
                "running statistics do not match the normalization setting",
            )),
        }
    }
}

/// Graph structure and constant edge weights prepared for one layer kind.
///
/// GCN and GAT aggregate over `N(v) ∪ {v}` (self-loops added); GraphSAGE
/// has an explicit self term and aggregates over `N(v)` only.
#[derive(Debug, Clone)]
pub struct Propagation<T> {
    kind: LayerKind,
    graph: Graph,
    weights: Option<EdgeWeights<T>>,
}

impl<T: Scalar> Propagation<T> {
    pub fn new(kind: LayerKind, base: &Graph) -> Result<Self> {
        let edges = base.edges();
        let (graph, weights) = match kind {
            LayerKind::Gcn => {
                let g = build_graph(&edges, base.num_nodes(), true, true)?;
                let w = gcn_norm_weights(&g)?;
                (g, Some(w))
            }
            LayerKind::Sage => {
                let no_loops: Vec<_> = edges.into_iter().filter(|(u, v)| u != v).collect();
                let g = build_graph(&no_loops, base.num_nodes(), true, false)?;
                let w = mean_weights(&g);
                (g, Some(w))
            }
            LayerKind::Gat => (build_graph(&edges, base.num_nodes(), true, true)?, None),
        };
        Ok(Propagation { kind, graph, weights })
    }

    /// Uses `graph` as-is, with explicit weights for GCN.
    pub fn from_parts(kind: LayerKind, graph: Graph, weights: Option<EdgeWeights<T>>) -> Result<Self> {
        let weights = match (kind, weights) {
            (LayerKind::Gcn, Some(w)) => Some(w),
            (LayerKind::Gcn, None) => Some(gcn_norm_weights(&graph)?),
            (LayerKind::Sage, _) => Some(mean_weights(&graph)),
            (LayerKind::Gat, _) => None,
        };
        Ok(Propagation { kind, graph, weights })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn weights(&self) -> Option<&EdgeWeights<T>> {
        self.weights.as_ref()
    }
}

/// Tape handles for one layer's trainable tensors.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub neighbor_weight: Option<Var>,
    pub attention: Option<Var>,
    pub residual: Option<Var>,
    pub gamma: Option<Var>,
    pub beta: Option<Var>,
}

impl LayerVars {
    pub fn register<T: Scalar>(tape: &mut Tape<'_, T>, params: &LayerParams<T>) -> Self {
        let mut reg = |m: &Option<Matrix<T>>| m.as_ref().map(|m| tape.param(m.clone()));
        let neighbor_weight = reg(&params.neighbor_weight);
        let attention = reg(&params.attention);
        let residual = reg(&params.residual);
        let gamma = reg(&params.gamma);
        let beta = reg(&params.beta);
        LayerVars {
            weight: tape.param(params.weight.clone()),
            neighbor_weight,
            attention,
            residual,
            gamma,
            beta,
        }
    }

    /// Handles in the same order as [`LayerParams::tensors`].
    pub fn ordered(&self) -> Vec<Var> {
        [
            Some(self.weight),
            self.neighbor_weight,
            self.attention,
            self.residual,
            self.gamma,
            self.beta,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

fn require(v: Option<Var>, what: &str) -> Result<Var> {
    v.ok_or_else(|| Error::input(format!("layer parameters missing {what}")))
}

fn check_input<T: Scalar>(tape: &Tape<'_, T>, h: Var, cfg: &LayerConfig, n: usize) -> Result<()> {
    let shape = tape.value(h).shape();
    if shape != (n, cfg.in_dim) {
        return Err(Error::shape(
            "layer input",
            format!("got {shape:?}, expected ({n}, {})", cfg.in_dim),
        ));
    }
    Ok(())
}

/// GCN aggregation: `spmm(Â, h W)` with symmetric-normalized weights.
pub fn gcn_core<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    graph: &'g Graph,
    weights: &'g EdgeWeights<T>,
    vars: &LayerVars,
    h: Var,
) -> Result<Var> {
    let hw = tape.matmul(h, vars.weight)?;
    tape.spmm_fixed(graph, weights.values(), hw)
}

/// GraphSAGE aggregation: `h W1 + mean_{N(v)}(h) W2`.
pub fn sage_core<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    graph: &'g Graph,
    mean: &'g EdgeWeights<T>,
    vars: &LayerVars,
    h: Var,
) -> Result<Var> {
    let self_term = tape.matmul(h, vars.weight)?;
    let agg = tape.spmm_fixed(graph, mean.values(), h)?;
    let neigh = tape.matmul(agg, require(vars.neighbor_weight, "W2")?)?;
    tape.add(self_term, neigh)
}

/// GAT aggregation. Returns `(core, attention coefficients)`; the
/// coefficients are `num_edges x heads` and sum to 1 over every row.
pub fn gat_core<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    graph: &'g Graph,
    vars: &LayerVars,
    h: Var,
) -> Result<(Var, Var)> {
    let wh = tape.matmul(h, vars.weight)?;
    let scores = tape.edge_scores(graph, wh, require(vars.attention, "attention vector")?)?;
    let logits = tape.activation(scores, Activation::LeakyRelu(ATTENTION_SLOPE));
    let alpha = tape.segment_softmax(graph, logits)?;
    let core = tape.spmm_edge(graph, alpha, wh)?;
    Ok((core, alpha))
}

/// Residual → normalization → activation → dropout.
///
/// Returns the layer output and, for BatchNorm in train mode, the advanced
/// running statistics.
#[allow(clippy::too_many_arguments)]
pub fn apply_recipe<'g, T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<'g, T>,
    core: Var,
    h_in: Var,
    vars: &LayerVars,
    running: Option<&RunningStats<T>>,
    cfg: &LayerConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Var, Option<RunningStats<T>>)> {
    let mut pre = core;
    if cfg.residual {
        let wr = vars
            .residual
            .ok_or_else(|| Error::input("residual connection enabled but W_r is missing"))?;
        let skip = tape.matmul(h_in, wr)?;
        pre = tape.add(skip, pre)?;
    }
    let mut updated = None;
    let normed = match cfg.norm {
        NormKind::None => pre,
        NormKind::Layer => tape.layer_norm(
            pre,
            require(vars.gamma, "gamma")?,
            require(vars.beta, "beta")?,
            NORM_EPS,
        )?,
        NormKind::Batch => {
            let stats = running.ok_or_else(|| Error::input("batch norm needs running statistics"))?;
            let (v, up) = tape.batch_norm(
                pre,
                require(vars.gamma, "gamma")?,
                require(vars.beta, "beta")?,
                stats,
                mode,
                NORM_EPS,
                BN_MOMENTUM,
            )?;
            updated = up;
            v
        }
    };
    if cfg.raw_output {
        return Ok((normed, updated));
    }
    let act = tape.activation(normed, cfg.activation);
    let out = tape.dropout(act, cfg.dropout, mode, rng)?;
    Ok((out, updated))
}

/// Full layer: aggregation for `cfg.kind`, then the recipe.
#[allow(clippy::too_many_arguments)]
pub fn layer_forward<'g, T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<'g, T>,
    prop: &'g Propagation<T>,
    cfg: &LayerConfig,
    vars: &LayerVars,
    running: Option<&RunningStats<T>>,
    h: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<(Var, Option<RunningStats<T>>)> {
    if prop.kind() != cfg.kind {
        return Err(Error::input(format!(
            "layer kind {} used with a graph prepared for {}",
            cfg.kind.name(),
            prop.kind().name()
        )));
    }
    check_input(tape, h, cfg, prop.graph().num_nodes())?;
    let core = match cfg.kind {
        LayerKind::Gcn => gcn_core(tape, prop.graph(), prop.weights().expect("gcn weights"), vars, h)?,
        LayerKind::Sage => sage_core(tape, prop.graph(), prop.weights().expect("mean weights"), vars, h)?,
        LayerKind::Gat => gat_core(tape, prop.graph(), vars, h)?.0,
    };
    apply_recipe(tape, core, h, vars, running, cfg, mode, rng)
}

/// Output of a standalone (tape-free) layer evaluation.
#[derive(Debug, Clone)]
pub struct LayerOutput<T> {
    pub output: Matrix<T>,
    pub running: Option<RunningStats<T>>,
}

fn standalone<T: Scalar, R: Rng + ?Sized>(
    params: &LayerParams<T>,
    cfg: &LayerConfig,
    prop: &Propagation<T>,
    h: &Matrix<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<LayerOutput<T>> {
    params.check_shapes(cfg)?;
    let mut tape = Tape::new();
    let vars = LayerVars::register(&mut tape, params);
    let hv = tape.constant(h.clone());
    let (out, running) = layer_forward(&mut tape, prop, cfg, &vars, params.running.as_ref(), hv, mode, rng)?;
    Ok(LayerOutput {
        output: tape.value(out).clone(),
        running,
    })
}

/// One GCN layer on a graph with self-loops and GCN weights.
pub fn gcn_forward<T: Scalar, R: Rng + ?Sized>(
    params: &LayerParams<T>,
    cfg: &LayerConfig,
    graph: &Graph,
    weights: &EdgeWeights<T>,
    h: &Matrix<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<LayerOutput<T>> {
    if !graph.has_self_loops() {
        return Err(Error::Precondition("GCN layer expects a graph with self-loops".into()));
    }
    let prop = Propagation::from_parts(LayerKind::Gcn, graph.clone(), Some(weights.clone()))?;
    standalone(params, cfg, &prop, h, mode, rng)
}

/// One GraphSAGE layer; `graph` should not carry self-loops.
pub fn sage_forward<T: Scalar, R: Rng + ?Sized>(
    params: &LayerParams<T>,
    cfg: &LayerConfig,
    graph: &Graph,
    h: &Matrix<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<LayerOutput<T>> {
    let prop = Propagation::from_parts(LayerKind::Sage, graph.clone(), None)?;
    standalone(params, cfg, &prop, h, mode, rng)
}

/// One GAT layer; `graph` should carry self-loops.
pub fn gat_forward<T: Scalar, R: Rng + ?Sized>(
    params: &LayerParams<T>,
    cfg: &LayerConfig,
    graph: &Graph,
    h: &Matrix<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<LayerOutput<T>> {
    let prop = Propagation::from_parts(LayerKind::Gat, graph.clone(), None)?;
    standalone(params, cfg, &prop, h, mode, rng)
}
