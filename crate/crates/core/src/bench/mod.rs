//! Hyperparameter sweeps, ablations and result tables.

mod ledger;
mod space;
mod table;

pub use ledger::TrialLedger;
pub use space::SearchSpace;
pub use table::{ResultRow, ResultTable, RowStatus, SortKey, TABLE_SCHEMA};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{Dataset, FeatureNorm};
use crate::error::{Error, Result};
use crate::layers::NormKind;
use crate::train::{run_multi_seed, Metric, MultiSeedResult, TrainResult};

pub const RUN_SCHEMA: &str = "gnnkit.run/v1";

/// Wall-clock measurements; the only part of a [`RunReport`] that varies
/// between identical invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub per_seed_seconds: Vec<f64>,
}

/// Result document written by `gnnkit train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub dataset: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub metric: Metric,
    pub test_mean: f64,
    pub test_std: f64,
    pub val_mean: f64,
    pub val_std: f64,
    pub train_mean: f64,
    pub runs: Vec<TrainResult>,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(ds: &Dataset, config: &RunConfig, r: &MultiSeedResult, total_seconds: f64) -> Self {
        RunReport {
            schema: RUN_SCHEMA.into(),
            dataset: ds.name().into(),
            config_hash: config.hash(),
            config: config.clone(),
            metric: ds.metric(),
            test_mean: r.test_mean,
            test_std: r.test_std,
            val_mean: r.val_mean,
            val_std: r.val_std,
            train_mean: r.train_mean,
            runs: r.runs.clone(),
            timing: Timing {
                total_seconds,
                per_seed_seconds: r.runs.iter().map(|x| x.seconds).collect(),
            },
        }
    }
}

/// Runs one configuration over its seeds.
pub trait TrialRunner: Sync {
    fn run(&self, ds: &Dataset, cfg: &RunConfig) -> Result<MultiSeedResult>;
}

/// Full-batch training via [`run_multi_seed`].
pub struct Trainer;

impl TrialRunner for Trainer {
    fn run(&self, ds: &Dataset, cfg: &RunConfig) -> Result<MultiSeedResult> {
        cfg.validate()?;
        let cfg = cfg.clone().for_dataset(ds);
        if cfg.feature_norm == FeatureNorm::None {
            run_multi_seed(ds, &cfg.model, &cfg.train, cfg.seeds)
        } else {
            let ds = ds.clone().with_feature_norm(cfg.feature_norm);
            run_multi_seed(&ds, &cfg.model, &cfg.train, cfg.seeds)
        }
    }
}

/// Runs `cfg` unless the ledger already holds it. Divergence and invalid
/// configurations become failed rows; I/O errors abort.
pub fn run_trial(
    ds: &Dataset,
    label: &str,
    cfg: &RunConfig,
    runner: &dyn TrialRunner,
    ledger: &mut TrialLedger,
) -> Result<ResultRow> {
    let ledger = Mutex::new(ledger);
    run_shared(ds, label, cfg, runner, &ledger)
}

fn run_shared(
    ds: &Dataset,
    label: &str,
    cfg: &RunConfig,
    runner: &dyn TrialRunner,
    ledger: &Mutex<&mut TrialLedger>,
) -> Result<ResultRow> {
    let hash = cfg.hash();
    if let Some(row) = ledger.lock().unwrap().get(&hash) {
        let mut row = row.clone();
        row.label = label.to_string();
        return Ok(row);
    }
    let row = match runner.run(ds, cfg) {
        Ok(r) => ResultRow::from_result(label, cfg.clone(), &r),
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => ResultRow::failed(label, cfg.clone(), e.to_string()),
    };
    ledger.lock().unwrap().record(&row)?;
    Ok(row)
}

/// Runs labeled trials on `workers` threads; rows come back in input order.
fn run_pool(
    ds: &Dataset,
    trials: &[(String, RunConfig)],
    workers: usize,
    runner: &dyn TrialRunner,
    ledger: &mut TrialLedger,
) -> Result<Vec<ResultRow>> {
    let ledger = Mutex::new(ledger);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ResultRow>>>> = Mutex::new((0..trials.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, trials.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((label, cfg)) = trials.get(i) else { break };
                let r = run_shared(ds, label, cfg, runner, &ledger);
                let stop = r.is_err();
                slots.lock().unwrap()[i] = Some(r);
                if stop {
                    next.store(trials.len(), Ordering::Relaxed);
                }
            });
        }
    });
    slots.into_inner().unwrap().into_iter().flatten().collect()
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Number of configurations to sample; `None` runs the whole grid.
    pub budget: Option<usize>,
    pub sample_seed: u64,
    /// Trials run concurrently; each trial also trains its seeds in parallel.
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            budget: None,
            sample_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Rows in grid order.
    pub table: ResultTable,
    /// Row with the best mean validation metric.
    pub best: Option<usize>,
}

pub fn sweep_label(cfg: &RunConfig) -> String {
    let m = &cfg.model;
    format!(
        "lr={} hidden={} dropout={} layers={} norm={} residual={} jk={}",
        cfg.train.lr,
        m.hidden_dim,
        m.dropout,
        m.num_layers,
        m.norm.name(),
        m.residual,
        m.jk
    )
}

pub fn grid_search(
    ds: &Dataset,
    base: &RunConfig,
    space: &SearchSpace,
    opts: &SweepOptions,
    runner: &dyn TrialRunner,
    ledger: &mut TrialLedger,
) -> Result<SweepOutcome> {
    space.validate()?;
    let configs = match opts.budget {
        Some(b) => space.sample(base, b, opts.sample_seed),
        None => space.configs(base),
    };
    let trials: Vec<(String, RunConfig)> = configs.into_iter().map(|c| (sweep_label(&c), c)).collect();
    let mut table = ResultTable::new(ds.name(), ds.metric());
    table.rows = run_pool(ds, &trials, opts.workers, runner, ledger)?;
    let best = table.best_by_val();
    Ok(SweepOutcome { table, best })
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// Rows `full`, `-norm`, `-dropout`, `-residual`.
    pub components: ResultTable,
    /// One row per depth.
    pub depth: ResultTable,
}

/// Removes each tuned component from `base` in turn, then sweeps depth.
pub fn ablation_suite(
    ds: &Dataset,
    base: &RunConfig,
    depths: &[usize],
    workers: usize,
    runner: &dyn TrialRunner,
    ledger: &mut TrialLedger,
) -> Result<AblationOutcome> {
    base.validate()?;
    let mut no_norm = base.clone();
    no_norm.model.norm = NormKind::None;
    let mut no_dropout = base.clone();
    no_dropout.model.dropout = 0.0;
    let mut no_residual = base.clone();
    no_residual.model.residual = false;
    let variants = [
        ("-norm", no_norm, base.model.norm != NormKind::None),
        ("-dropout", no_dropout, base.model.dropout > 0.0),
        ("-residual", no_residual, base.model.residual),
    ];
    let mut trials = vec![("full".to_string(), base.clone())];
    trials.extend(
        variants
            .iter()
            .filter(|v| v.2)
            .map(|(l, c, _)| (l.to_string(), c.clone())),
    );
    for &l in depths {
        let mut cfg = base.clone();
        cfg.model.num_layers = l;
        trials.push((format!("layers={l}"), cfg));
    }
    let mut rows = run_pool(ds, &trials, workers, runner, ledger)?.into_iter();

    let mut components = ResultTable::new(ds.name(), ds.metric());
    components.rows.push(rows.next().expect("full row"));
    for (label, cfg, applies) in variants {
        components.rows.push(if applies {
            rows.next().expect("ablation row")
        } else {
            ResultRow::not_applicable(label, cfg)
        });
    }
    let mut depth = ResultTable::new(ds.name(), ds.metric());
    depth.rows.extend(rows);
    Ok(AblationOutcome { components, depth })
}
