//! Layer stack, optional JK summation, linear head, masked losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{layer_forward, LayerConfig, LayerKind, LayerParams, LayerVars, NormKind, Propagation};
use crate::tensor::kernels::{check_dropout_rate, Activation, Mode, RunningStats};
use crate::tensor::{Matrix, Scalar, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// Number of classes. `1` selects the single-logit binary head
    /// (sigmoid loss, raw logit as score).
    pub num_classes: usize,
    pub norm: NormKind,
    pub dropout: f64,
    pub residual: bool,
    pub jk: bool,
    /// Attention heads (GAT only); `hidden_dim` is split evenly across heads.
    pub heads: usize,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(kind: LayerKind, input_dim: usize, hidden_dim: usize, num_classes: usize, num_layers: usize) -> Self {
        ModelConfig {
            kind,
            num_layers,
            hidden_dim,
            input_dim,
            num_classes,
            norm: NormKind::None,
            dropout: 0.0,
            residual: false,
            jk: false,
            heads: 1,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::input("num_layers must be at least 1"));
        }
        if self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::input("hidden_dim and input_dim must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::input("num_classes must be at least 1"));
        }
        if self.heads == 0 {
            return Err(Error::input("heads must be at least 1"));
        }
        if self.kind == LayerKind::Gat && !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::input(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        check_dropout_rate(self.dropout)
    }

    pub fn is_binary(&self) -> bool {
        self.num_classes == 1
    }

    pub fn layer_config(&self, index: usize) -> LayerConfig {
        LayerConfig {
            kind: self.kind,
            in_dim: if index == 0 { self.input_dim } else { self.hidden_dim },
            out_dim: self.hidden_dim,
            heads: if self.kind == LayerKind::Gat { self.heads } else { 1 },
            norm: self.norm,
            dropout: self.dropout,
            residual: self.residual,
            activation: self.activation,
            raw_output: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<LayerParams<T>>,
    /// `hidden_dim x num_classes`.
    pub head_weight: Matrix<T>,
    /// `1 x num_classes`.
    pub head_bias: Matrix<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.num_layers)
            .map(|i| LayerParams::init(&cfg.layer_config(i), rng))
            .collect::<Result<Vec<_>>>()?;
        let (h, c) = (cfg.hidden_dim, cfg.num_classes);
        let bound = (6.0 / (h + c) as f64).sqrt();
        let data = (0..h * c)
            .map(|_| T::from_f64((2.0 * rng.gen::<f64>() - 1.0) * bound))
            .collect();
        Ok(ModelParams {
            layers,
            head_weight: Matrix::from_vec(h, c, data)?,
            head_bias: Matrix::zeros(1, c),
        })
    }

    /// Trainable tensors in declaration order: each layer's tensors, then
    /// head weight and bias.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out: Vec<_> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out: Vec<_> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        if self.layers.len() != cfg.num_layers {
            return Err(Error::input(format!(
                "{} layer parameter sets for a {}-layer model",
                self.layers.len(),
                cfg.num_layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check_shapes(&cfg.layer_config(i))?;
        }
        if self.head_weight.shape() != (cfg.hidden_dim, cfg.num_classes)
            || self.head_bias.shape() != (1, cfg.num_classes)
        {
            return Err(Error::shape(
                "model head",
                format!(
                    "weight {:?} and bias {:?} for hidden {} and {} classes",
                    self.head_weight.shape(),
                    self.head_bias.shape(),
                    cfg.hidden_dim,
                    cfg.num_classes
                ),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let m = |x: &Option<Matrix<T>>| x.as_ref().map(Matrix::cast);
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.cast(),
                    neighbor_weight: m(&l.neighbor_weight),
                    attention: m(&l.attention),
                    residual: m(&l.residual),
                    gamma: m(&l.gamma),
                    beta: m(&l.beta),
                    running: l.running.as_ref().map(|s| RunningStats {
                        mean: s.mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                        var: s.var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    }),
                })
                .collect(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
        }
    }
}

/// Tape handles for every trainable tensor of a model.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub layers: Vec<LayerVars>,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl ModelVars {
    pub fn register<T: Scalar>(tape: &mut Tape<'_, T>, params: &ModelParams<T>) -> Self {
        ModelVars {
            layers: params.layers.iter().map(|l| LayerVars::register(tape, l)).collect(),
            head_weight: tape.param(params.head_weight.clone()),
            head_bias: tape.param(params.head_bias.clone()),
        }
    }

    /// Handles in the same order as [`ModelParams::tensors`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out: Vec<_> = self.layers.iter().flat_map(|l| l.ordered()).collect();
        out.push(self.head_weight);
        out.push(self.head_bias);
        out
    }
}

/// Result of a forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub logits: Var,
    /// Per layer: advanced BatchNorm running statistics (train mode only).
    pub running: Vec<Option<RunningStats<T>>>,
}

/// Records the model on `tape`. `x` must be `|V| x input_dim`.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape<'g, T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<'g, T>,
    prop: &'g Propagation<T>,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    vars: &ModelVars,
    x: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardPass<T>> {
    let (n, d) = tape.value(x).shape();
    if d != cfg.input_dim || n != prop.graph().num_nodes() {
        return Err(Error::shape(
            "model input",
            format!(
                "features are {n}x{d}, expected {}x{}",
                prop.graph().num_nodes(),
                cfg.input_dim
            ),
        ));
    }
    let mut h = x;
    let mut jk_sum: Option<Var> = None;
    let mut running = Vec::with_capacity(cfg.num_layers);
    for (i, lv) in vars.layers.iter().enumerate() {
        let lcfg = cfg.layer_config(i);
        let (out, stats) = layer_forward(tape, prop, &lcfg, lv, params.layers[i].running.as_ref(), h, mode, rng)?;
        running.push(stats);
        h = out;
        if cfg.jk {
            jk_sum = Some(match jk_sum {
                None => out,
                Some(acc) => tape.add(acc, out)?,
            });
        }
    }
    let head_in = jk_sum.unwrap_or(h);
    let z = tape.matmul(head_in, vars.head_weight)?;
    let logits = tape.add_row(z, vars.head_bias)?;
    Ok(ForwardPass { logits, running })
}

/// Logits for every node (`|V| x num_classes`).
pub fn model_forward<'a, T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    prop: &'a Propagation<T>,
    x: &'a Matrix<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Matrix<T>> {
    params.check_shapes(cfg)?;
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params);
    let xv = tape.constant_ref(x);
    let pass = forward_on_tape(&mut tape, prop, cfg, params, &vars, xv, mode, rng)?;
    Ok(tape.value(pass.logits).clone())
}

/// How per-node losses over the mask are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

fn check_mask(mask: &[usize], n: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::input("loss mask is empty"));
    }
    if let Some(&bad) = mask.iter().find(|&&i| i >= n) {
        return Err(Error::input(format!("mask index {bad} out of range for {n} nodes")));
    }
    Ok(())
}

fn label_of(labels: &[i64], i: usize, classes: usize) -> Result<usize> {
    match labels.get(i) {
        Some(&y) if y >= 0 && (y as usize) < classes => Ok(y as usize),
        Some(&y) => Err(Error::input(format!("node {i} has label {y}, outside [0, {classes})"))),
        None => Err(Error::input(format!("no label for node {i}"))),
    }
}

/// Softmax cross-entropy over the masked rows. Returns the loss and its
/// gradient with respect to `logits` (zero outside the mask).
pub fn cross_entropy_masked<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[i64],
    mask: &[usize],
    reduction: Reduction,
) -> Result<(f64, Matrix<T>)> {
    let (n, c) = logits.shape();
    check_mask(mask, n)?;
    let scale = match reduction {
        Reduction::Mean => 1.0 / mask.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for &i in mask {
        let y = label_of(labels, i, c)?;
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - row[y].as_f64();
        let g = grad.row_mut(i);
        for k in 0..c {
            let p = (row[k].as_f64() - log_z).exp();
            let t = if k == y { 1.0 } else { 0.0 };
            g[k] = T::from_f64((p - t) * scale);
        }
    }
    Ok((loss * scale, grad))
}

/// Sigmoid binary cross-entropy on a single-logit column.
pub fn bce_logits_masked<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[i64],
    mask: &[usize],
    reduction: Reduction,
) -> Result<(f64, Matrix<T>)> {
    let (n, c) = logits.shape();
    if c != 1 {
        return Err(Error::shape("bce loss", format!("expected one logit column, got {c}")));
    }
    check_mask(mask, n)?;
    let scale = match reduction {
        Reduction::Mean => 1.0 / mask.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = Matrix::zeros(n, 1);
    let mut loss = 0.0;
    for &i in mask {
        let y = label_of(labels, i, 2)? as f64;
        let z = logits.get(i, 0).as_f64();
        // log(1 + e^z) - y z, computed without overflow
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        let p = 1.0 / (1.0 + (-z).exp());
        grad.set(i, 0, T::from_f64((p - y) * scale));
    }
    Ok((loss * scale, grad))
}

/// Loss matching the head: softmax CE for `C >= 2`, sigmoid BCE for one logit.
pub fn masked_loss<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[i64],
    mask: &[usize],
    reduction: Reduction,
) -> Result<(f64, Matrix<T>)> {
    if logits.cols() == 1 {
        bce_logits_masked(logits, labels, mask, reduction)
    } else {
        cross_entropy_masked(logits, labels, mask, reduction)
    }
}

/// Row-wise argmax, ties to the lowest class index. A single logit column
/// predicts class 1 when the logit is positive.
pub fn predict<T: Scalar>(logits: &Matrix<T>) -> Vec<usize> {
    if logits.cols() == 1 {
        return logits.as_slice().iter().map(|&z| usize::from(z > T::zero())).collect();
    }
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::tensor::kernels;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn identity_model_is_relu() {
        let g = build_graph(&[], 3, true, false).unwrap();
        let prop = Propagation::<f64>::new(LayerKind::Gcn, &g).unwrap();
        let cfg = ModelConfig::new(LayerKind::Gcn, 2, 2, 2, 1);
        let mut p = ModelParams::init(&cfg, &mut rng()).unwrap();
        p.layers[0].weight = Matrix::identity(2);
        p.head_weight = Matrix::identity(2);
        let x = m(&[vec![1.0, -1.0], vec![-0.5, 2.0], vec![0.0, 3.0]]);
        let out = model_forward(&p, &cfg, &prop, &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(out, kernels::activation(&x, Activation::Relu));
    }

    #[test]
    fn jk_with_zero_second_layer_uses_first() {
        let g = build_graph(&[(0, 1), (1, 2)], 3, true, false).unwrap();
        let prop = Propagation::<f64>::new(LayerKind::Gcn, &g).unwrap();
        let mut cfg = ModelConfig::new(LayerKind::Gcn, 2, 2, 2, 2);
        cfg.jk = true;
        let mut p = ModelParams::init(&cfg, &mut rng()).unwrap();
        p.layers[1].weight = Matrix::zeros(2, 2);
        p.head_weight = Matrix::identity(2);
        let x = m(&[vec![1.0, -1.0], vec![-0.5, 2.0], vec![0.0, 3.0]]);
        let out = model_forward(&p, &cfg, &prop, &x, Mode::Eval, &mut rng()).unwrap();
        let mut one = cfg.clone();
        one.num_layers = 1;
        one.jk = false;
        let p1 = ModelParams {
            layers: vec![p.layers[0].clone()],
            head_weight: p.head_weight.clone(),
            head_bias: p.head_bias.clone(),
        };
        let first = model_forward(&p1, &one, &prop, &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(out, first);
    }

    #[test]
    fn loss_examples() {
        let (l, _) = cross_entropy_masked(&m(&[vec![0.0, 0.0]]), &[1], &[0], Reduction::Mean).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let (l, _) = cross_entropy_masked(&m(&[vec![20.0, 0.0]]), &[0], &[0], Reduction::Mean).unwrap();
        assert!(l < 1e-3);
        let (l, _) = cross_entropy_masked(&m(&[vec![1.0, 0.0]]), &[0], &[0], Reduction::Mean).unwrap();
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!(cross_entropy_masked(&m(&[vec![1.0, 0.0]]), &[0], &[], Reduction::Mean).is_err());
        assert!(cross_entropy_masked(&m(&[vec![1.0, 0.0]]), &[2], &[0], Reduction::Mean).is_err());

        let (l, _) = bce_logits_masked(&m(&[vec![0.0]]), &[1], &[0], Reduction::Mean).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let (l, _) = bce_logits_masked(&m(&[vec![20.0]]), &[1], &[0], Reduction::Mean).unwrap();
        assert!(l < 1e-8);
        let (l, _) = bce_logits_masked(&m(&[vec![1.0]]), &[0], &[0], Reduction::Mean).unwrap();
        assert!((l - 1.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_is_zero_off_mask_and_sum_scales() {
        let logits = m(&[vec![0.3, -0.2, 1.0], vec![2.0, 0.0, 0.0], vec![-1.0, 0.5, 0.5]]);
        let (mean, g) = cross_entropy_masked(&logits, &[2, 0, 1], &[0, 2], Reduction::Mean).unwrap();
        assert!(g.row(1).iter().all(|&v| v == 0.0));
        let (sum, gs) = cross_entropy_masked(&logits, &[2, 0, 1], &[0, 2], Reduction::Sum).unwrap();
        assert!((sum - 2.0 * mean).abs() < 1e-14);
        assert!((gs.get(0, 0) - 2.0 * g.get(0, 0)).abs() < 1e-14);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let labels = [2i64, 0, 1];
        let point = m(&[vec![0.3, -0.2, 1.0], vec![2.0, 0.0, 0.0], vec![-1.0, 0.5, 0.5]]);
        let r = crate::tensor::finite_diff_check(
            |x| cross_entropy_masked(x, &labels, &[0, 1, 2], Reduction::Mean).unwrap(),
            &point,
            1e-6,
        );
        assert!(r.passed(), "{r:?}");
        let point = m(&[vec![0.3], vec![-2.0], vec![1.5]]);
        let r = crate::tensor::finite_diff_check(
            |x| bce_logits_masked(x, &[1, 0, 0], &[0, 1, 2], Reduction::Mean).unwrap(),
            &point,
            1e-6,
        );
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&m(&[vec![0.1, 0.9]])), vec![1]);
        assert_eq!(predict(&m(&[vec![0.5, 0.5]])), vec![0]);
        assert_eq!(predict(&m(&[vec![3.0, 1.0, 2.0]])), vec![0]);
        assert_eq!(predict(&m(&[vec![-0.1], vec![0.2]])), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn loss_is_shift_invariant(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6), shift in -50.0f64..50.0) {
            let logits: Matrix<f64> = Matrix::from_rows(&rows).unwrap();
            let shifted = logits.map(|v| v + shift);
            let labels: Vec<i64> = (0..rows.len()).map(|i| (i % 3) as i64).collect();
            let mask: Vec<usize> = (0..rows.len()).collect();
            let (a, _) = cross_entropy_masked(&logits, &labels, &mask, Reduction::Mean).unwrap();
            let (b, _) = cross_entropy_masked(&shifted, &labels, &mask, Reduction::Mean).unwrap();
            prop_assert!((a - b).abs() < 1e-8);
        }

        #[test]
        fn predict_is_monotone_invariant(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6)) {
            let logits: Matrix<f64> = Matrix::from_rows(&rows).unwrap();
            let warped = logits.map(|v| v.exp() * 3.0 + v.powi(3));
            prop_assert_eq!(predict(&logits), predict(&warped));
        }
    }
}
