//! Full-batch training with best-validation model selection.

mod adam;
mod metrics;

pub use adam::{adam_step, Adam, AdamConfig};
pub use metrics::{accuracy, binary_scores, evaluate, roc_auc, Metric};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Propagation;
use crate::model::{forward_on_tape, masked_loss, model_forward, ModelConfig, ModelParams, ModelVars, Reduction};
use crate::tensor::{Matrix, Mode, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lr: adam.lr,
            max_epochs: 2500,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            patience: None,
            reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::input("max_epochs must be at least 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::input("patience must be at least 1"));
        }
        self.adam().validate()
    }
}

/// Tracks the best validation score; ties keep the earliest epoch.
#[derive(Debug, Clone, Default)]
pub struct BestValSelector {
    best: Option<(usize, f64)>,
}

impl BestValSelector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `val` for `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, val: f64) -> bool {
        match self.best {
            Some((_, b)) if val <= b => false,
            _ => {
                self.best = Some((epoch, val));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Equality ignores `seconds`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub seed: u64,
    pub metric: Metric,
    /// 1-based epoch with the highest validation metric.
    pub best_epoch: usize,
    pub best_val: f64,
    pub train_at_best: f64,
    /// Test metric of the best-validation checkpoint.
    pub test_at_best: f64,
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub train_metric: Vec<f64>,
    pub val_metric: Vec<f64>,
    pub test_metric: Vec<f64>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    #[serde(skip)]
    pub seconds: f64,
}

impl PartialEq for TrainResult {
    fn eq(&self, o: &Self) -> bool {
        self.seed == o.seed
            && self.metric == o.metric
            && self.best_epoch == o.best_epoch
            && self.best_val == o.best_val
            && self.train_at_best == o.train_at_best
            && self.test_at_best == o.test_at_best
            && self.epochs_run == o.epochs_run
            && self.train_loss == o.train_loss
            && self.train_metric == o.train_metric
            && self.val_metric == o.val_metric
            && self.test_metric == o.test_metric
    }
}

/// Result plus the best-validation parameters.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub result: TrainResult,
    pub params: ModelParams<f32>,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence {
            epoch,
            detail: format!("non-finite values in {op}"),
        },
        other => other,
    }
}

/// Trains `mcfg` on `ds` for up to `tcfg.max_epochs` full-batch epochs.
/// After every epoch the model is evaluated in eval mode on all three
/// splits; the parameters with the best validation metric are returned.
pub fn train_run(ds: &Dataset, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutput> {
    let start = Instant::now();
    mcfg.validate()?;
    tcfg.validate()?;
    if mcfg.input_dim != ds.feature_dim() || mcfg.num_classes != ds.head_dim() {
        return Err(Error::input(format!(
            "model expects {} features and {} outputs; dataset {} has {} features and head width {}",
            mcfg.input_dim,
            mcfg.num_classes,
            ds.name(),
            ds.feature_dim(),
            ds.head_dim()
        )));
    }
    let prop = Propagation::<f32>::new(mcfg.kind, ds.graph())?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut params = ModelParams::<f32>::init(mcfg, &mut rng)?;
    // dropout masks draw from a faster generator seeded by the init stream
    let mut rng = Xoshiro256PlusPlus::from_rng(&mut rng).expect("seeding from ChaCha cannot fail");
    let shapes: Vec<_> = params.tensors().iter().map(|t| t.shape()).collect();
    let mut opt = Adam::new(tcfg.adam(), &shapes)?;
    let metric = ds.metric();
    let split = ds.split();
    let labels = ds.labels();

    let mut selector = BestValSelector::new();
    let mut best_params = params.clone();
    let mut result = TrainResult {
        seed: tcfg.seed,
        metric,
        best_epoch: 0,
        best_val: f64::NAN,
        train_at_best: f64::NAN,
        test_at_best: f64::NAN,
        epochs_run: 0,
        train_loss: Vec::with_capacity(tcfg.max_epochs),
        train_metric: Vec::with_capacity(tcfg.max_epochs),
        val_metric: Vec::with_capacity(tcfg.max_epochs),
        test_metric: Vec::with_capacity(tcfg.max_epochs),
        seconds: 0.0,
    };

    for epoch in 1..=tcfg.max_epochs {
        let grads = {
            let mut tape = Tape::new();
            let vars = ModelVars::register(&mut tape, &params);
            let x = tape.constant_ref(ds.features());
            let pass = forward_on_tape(&mut tape, &prop, mcfg, &params, &vars, x, Mode::Train, &mut rng)
                .map_err(|e| diverged(epoch, e))?;
            let (loss, seed) = masked_loss(tape.value(pass.logits), labels, &split.train, tcfg.reduction)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss is {loss}"),
                });
            }
            result.train_loss.push(loss);
            let mut g = tape.backward(pass.logits, seed);
            for (layer, stats) in params.layers.iter_mut().zip(pass.running) {
                if let Some(s) = stats {
                    layer.running = Some(s);
                }
            }
            vars.ordered()
                .into_iter()
                .map(|v| {
                    g.take(v)
                        .ok_or_else(|| Error::Precondition("parameter without gradient".into()))
                })
                .collect::<Result<Vec<Matrix<f32>>>>()?
        };
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: "non-finite gradient".into(),
            });
        }
        opt.step(params.tensors_mut(), &grads)?;

        let logits =
            model_forward(&params, mcfg, &prop, ds.features(), Mode::Eval, &mut rng).map_err(|e| diverged(epoch, e))?;
        let tr = evaluate(&logits, labels, &split.train, metric)?;
        let va = evaluate(&logits, labels, &split.val, metric)?;
        let te = evaluate(&logits, labels, &split.test, metric)?;
        result.train_metric.push(tr);
        result.val_metric.push(va);
        result.test_metric.push(te);
        result.epochs_run = epoch;
        if selector.observe(epoch, va) {
            best_params = params.clone();
            result.best_epoch = epoch;
            result.best_val = va;
            result.train_at_best = tr;
            result.test_at_best = te;
        }
        if let Some(p) = tcfg.patience {
            if epoch - result.best_epoch >= p {
                break;
            }
        }
    }
    result.seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutput {
        result,
        params: best_params,
    })
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedResult {
    pub test_mean: f64,
    pub test_std: f64,
    pub val_mean: f64,
    pub val_std: f64,
    pub train_mean: f64,
    pub runs: Vec<TrainResult>,
}

impl MultiSeedResult {
    pub fn from_runs(runs: Vec<TrainResult>) -> Self {
        let test: Vec<f64> = runs.iter().map(|r| r.test_at_best).collect();
        let val: Vec<f64> = runs.iter().map(|r| r.best_val).collect();
        let train: Vec<f64> = runs.iter().map(|r| r.train_at_best).collect();
        let (test_mean, test_std) = mean_std(&test);
        let (val_mean, val_std) = mean_std(&val);
        MultiSeedResult {
            test_mean,
            test_std,
            val_mean,
            val_std,
            train_mean: mean_std(&train).0,
            runs,
        }
    }

    pub fn seconds(&self) -> f64 {
        self.runs.iter().map(|r| r.seconds).sum()
    }
}

/// Trains seeds `tcfg.seed .. tcfg.seed + k` (in parallel when threads are
/// available), in seed order.
pub fn run_seeds(ds: &Dataset, mcfg: &ModelConfig, tcfg: &TrainConfig, k: usize) -> Result<Vec<TrainOutput>> {
    if k == 0 {
        return Err(Error::input("need at least one seed"));
    }
    (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = TrainConfig {
                seed: tcfg.seed + i,
                ..tcfg.clone()
            };
            train_run(ds, mcfg, &cfg)
        })
        .collect()
}

/// [`run_seeds`], aggregated over test and validation metrics.
pub fn run_multi_seed(ds: &Dataset, mcfg: &ModelConfig, tcfg: &TrainConfig, k: usize) -> Result<MultiSeedResult> {
    let runs = run_seeds(ds, mcfg, tcfg, k)?;
    Ok(MultiSeedResult::from_runs(runs.into_iter().map(|o| o.result).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::two_cliques;
    use crate::layers::{LayerKind, NormKind};

    fn model_for(ds: &Dataset, kind: LayerKind) -> ModelConfig {
        let mut m = ModelConfig::new(kind, ds.feature_dim(), 8, ds.head_dim(), 2);
        if kind == LayerKind::Gat {
            m.heads = 2;
        }
        m
    }

    #[test]
    fn selector_keeps_first_best() {
        let mut s = BestValSelector::new();
        let curve = [0.2, 0.5, 0.4, 0.5, 0.3];
        let news: Vec<bool> = curve.iter().enumerate().map(|(i, &v)| s.observe(i + 1, v)).collect();
        assert_eq!(news, vec![true, true, false, false, false]);
        assert_eq!(s.best(), Some((2, 0.5)));
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        assert_eq!(mean_std(&[0.6, 0.6, 0.6]).1, 0.0);
        let (m, s) = mean_std(&[0.8, 0.9]);
        assert!((m - 0.85).abs() < 1e-15);
        assert!((s - 0.070_710_678_118_654_76).abs() < 1e-12);
    }

    #[test]
    fn one_epoch_selects_epoch_one() {
        let ds = two_cliques();
        let tcfg = TrainConfig {
            max_epochs: 1,
            ..Default::default()
        };
        let out = train_run(&ds, &model_for(&ds, LayerKind::Gcn), &tcfg).unwrap();
        assert_eq!(out.result.best_epoch, 1);
        assert_eq!(out.result.epochs_run, 1);
    }

    #[test]
    fn reported_test_is_from_best_checkpoint() {
        let ds = two_cliques();
        let mut m = model_for(&ds, LayerKind::Sage);
        m.dropout = 0.5;
        m.norm = NormKind::Batch;
        let tcfg = TrainConfig {
            lr: 0.01,
            max_epochs: 60,
            seed: 5,
            ..Default::default()
        };
        let out = train_run(&ds, &m, &tcfg).unwrap();
        let r = &out.result;
        let b = r.best_epoch - 1;
        assert_eq!(r.val_metric[b], r.best_val);
        assert_eq!(r.test_metric[b], r.test_at_best);
        assert!(r.val_metric[..b].iter().all(|&v| v < r.best_val));
        let prop = Propagation::new(m.kind, ds.graph()).unwrap();
        let logits = model_forward(
            &out.params,
            &m,
            &prop,
            ds.features(),
            Mode::Eval,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(
            evaluate(&logits, ds.labels(), &ds.split().test, ds.metric()).unwrap(),
            r.test_at_best
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = two_cliques();
        let mut m = model_for(&ds, LayerKind::Gat);
        m.dropout = 0.3;
        let tcfg = TrainConfig {
            lr: 0.01,
            max_epochs: 20,
            seed: 11,
            ..Default::default()
        };
        let a = train_run(&ds, &m, &tcfg).unwrap();
        let b = train_run(&ds, &m, &tcfg).unwrap();
        assert_eq!(a.result, b.result);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn overfits_toy_graph() {
        let ds = two_cliques();
        for kind in [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gat] {
            let tcfg = TrainConfig {
                lr: 0.01,
                max_epochs: 500,
                ..Default::default()
            };
            let out = train_run(&ds, &model_for(&ds, kind), &tcfg).unwrap();
            let r = out.result;
            assert_eq!(*r.train_metric.last().unwrap(), 1.0, "{kind:?}");
            assert!(r.train_loss[499] < 0.01 * r.train_loss[0], "{kind:?}");
        }
    }

    #[test]
    fn multi_seed_uses_consecutive_seeds() {
        let ds = two_cliques();
        let tcfg = TrainConfig {
            max_epochs: 3,
            seed: 40,
            ..Default::default()
        };
        let r = run_multi_seed(&ds, &model_for(&ds, LayerKind::Gcn), &tcfg, 3).unwrap();
        let seeds: Vec<u64> = r.runs.iter().map(|x| x.seed).collect();
        assert_eq!(seeds, vec![40, 41, 42]);
        assert!(run_multi_seed(&ds, &model_for(&ds, LayerKind::Gcn), &tcfg, 0).is_err());
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let ds = two_cliques();
        let m = ModelConfig::new(LayerKind::Gcn, 7, 8, 2, 2);
        assert!(matches!(
            train_run(&ds, &m, &TrainConfig::default()),
            Err(Error::Input(_))
        ));
    }
}
