//! Fully resolved run configurations and the shipped per-dataset presets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, FeatureNorm};
use crate::error::{Error, Result};
use crate::layers::{LayerKind, NormKind};
use crate::model::ModelConfig;
use crate::tensor::Activation;
use crate::train::TrainConfig;

/// Everything needed to reproduce a (multi-seed) run on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub feature_norm: FeatureNorm,
    /// Seeds `train.seed .. train.seed + seeds`.
    pub seeds: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds == 0 {
            return Err(Error::input("seeds must be at least 1"));
        }
        Ok(())
    }

    /// Stable identifier: sha256 of the canonical JSON, first 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    /// Fills `input_dim` and `num_classes` from the dataset.
    pub fn for_dataset(mut self, ds: &Dataset) -> Self {
        self.model.input_dim = ds.feature_dim();
        self.model.num_classes = ds.head_dim();
        self
    }
}

/// One row of the per-dataset hyperparameter tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    pub model: LayerKind,
    pub dataset: String,
    pub residual: bool,
    pub norm: NormKind,
    pub dropout: f64,
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub heads: usize,
    pub feature_norm: FeatureNorm,
}

/// GAT attention heads used by the presets.
pub const PRESET_GAT_HEADS: usize = 8;

impl Preset {
    /// Resolved configuration for `ds` with seeds `seed .. seed + seeds`.
    pub fn resolve(&self, ds: &Dataset, seed: u64, seeds: usize) -> RunConfig {
        RunConfig {
            model: ModelConfig {
                kind: self.model,
                num_layers: self.layers,
                hidden_dim: self.hidden,
                input_dim: ds.feature_dim(),
                num_classes: ds.head_dim(),
                norm: self.norm,
                dropout: self.dropout,
                residual: self.residual,
                jk: false,
                heads: self.heads,
                activation: Activation::Relu,
            },
            train: TrainConfig {
                lr: self.lr,
                max_epochs: self.epochs,
                seed,
                ..TrainConfig::default()
            },
            feature_norm: self.feature_norm,
            seeds,
        }
    }
}

use LayerKind::{Gat, Gcn, Sage};
use NormKind::{Batch as BN, Layer as LN, None as NO};

// (dataset, residual, norm, dropout, layers, hidden, lr, epochs)
type Row = (&'static str, bool, NormKind, f64, usize, usize, f64, usize);

const GCN_ROWS: &[Row] = &[
    ("cora", false, NO, 0.7, 3, 512, 0.001, 500),
    ("citeseer", false, NO, 0.5, 2, 512, 0.001, 500),
    ("pubmed", false, NO, 0.7, 2, 256, 0.005, 500),
    ("computer", false, LN, 0.5, 3, 512, 0.001, 1000),
    ("photo", true, LN, 0.5, 6, 256, 0.001, 1000),
    ("cs", true, LN, 0.3, 2, 512, 0.001, 1500),
    ("physics", true, LN, 0.3, 2, 64, 0.001, 1500),
    ("wikics", false, LN, 0.5, 3, 256, 0.001, 1000),
    ("squirrel", true, BN, 0.7, 4, 256, 0.01, 500),
    ("chameleon", false, NO, 0.2, 5, 512, 0.005, 200),
    ("amazon-ratings", true, BN, 0.5, 4, 512, 0.001, 2500),
    ("roman-empire", true, BN, 0.5, 9, 512, 0.001, 2500),
    ("minesweeper", true, BN, 0.2, 12, 64, 0.01, 2000),
    ("questions", true, NO, 0.3, 10, 512, 0.001, 1500),
    ("ogbn-proteins", true, BN, 0.3, 3, 512, 0.01, 100),
    ("ogbn-arxiv", true, BN, 0.5, 5, 512, 0.0005, 2000),
    ("ogbn-products", false, LN, 0.5, 5, 256, 0.003, 300),
    ("pokec", true, BN, 0.2, 7, 256, 0.0005, 2000),
];

const SAGE_ROWS: &[Row] = &[
    ("cora", false, NO, 0.7, 3, 256, 0.001, 500),
    ("citeseer", false, NO, 0.2, 3, 512, 0.001, 500),
    ("pubmed", false, NO, 0.7, 4, 512, 0.005, 500),
    ("computer", false, LN, 0.3, 4, 64, 0.001, 1000),
    ("photo", true, LN, 0.2, 6, 64, 0.001, 1000),
    ("cs", true, LN, 0.5, 2, 512, 0.001, 1500),
    ("physics", true, BN, 0.7, 2, 64, 0.001, 1500),
    ("wikics", false, LN, 0.7, 2, 256, 0.001, 1000),
    ("squirrel", true, BN, 0.7, 3, 256, 0.01, 500),
    ("chameleon", true, BN, 0.7, 4, 256, 0.01, 200),
    ("amazon-ratings", true, BN, 0.5, 9, 512, 0.001, 2500),
    ("roman-empire", false, BN, 0.3, 9, 256, 0.001, 2500),
    ("minesweeper", true, BN, 0.2, 15, 64, 0.01, 2000),
    ("questions", false, LN, 0.2, 6, 512, 0.001, 1500),
    ("ogbn-proteins", true, BN, 0.3, 6, 512, 0.01, 1000),
    ("ogbn-arxiv", true, BN, 0.5, 4, 256, 0.0005, 2000),
    ("ogbn-products", false, LN, 0.5, 5, 256, 0.003, 1000),
    ("pokec", true, BN, 0.2, 7, 256, 0.0005, 2000),
];

const GAT_ROWS: &[Row] = &[
    ("cora", true, NO, 0.2, 3, 512, 0.001, 500),
    ("citeseer", true, NO, 0.5, 3, 256, 0.001, 500),
    ("pubmed", false, NO, 0.5, 2, 512, 0.01, 500),
    ("computer", false, LN, 0.5, 2, 64, 0.001, 1000),
    ("photo", true, LN, 0.5, 3, 64, 0.001, 1000),
    ("cs", true, LN, 0.3, 1, 256, 0.001, 1500),
    ("physics", true, BN, 0.7, 2, 256, 0.001, 1500),
    ("wikics", true, LN, 0.7, 2, 512, 0.001, 1000),
    ("squirrel", true, BN, 0.5, 7, 512, 0.005, 500),
    ("chameleon", true, BN, 0.7, 2, 256, 0.01, 200),
    ("amazon-ratings", true, BN, 0.5, 4, 512, 0.001, 2500),
    ("roman-empire", true, BN, 0.3, 10, 512, 0.001, 2500),
    ("minesweeper", true, BN, 0.2, 15, 64, 0.01, 2000),
    ("questions", true, LN, 0.2, 3, 512, 0.001, 1500),
    ("ogbn-proteins", true, BN, 0.3, 7, 512, 0.01, 1000),
    ("ogbn-arxiv", true, BN, 0.5, 5, 256, 0.0005, 2000),
    ("ogbn-products", false, LN, 0.5, 5, 256, 0.003, 1000),
    ("pokec", true, BN, 0.2, 7, 256, 0.0005, 2000),
];

const PLANETOID: [&str; 3] = ["cora", "citeseer", "pubmed"];

/// All shipped presets, named `<model>-<dataset>`.
pub fn presets() -> Vec<Preset> {
    let mut out = Vec::new();
    for (kind, rows) in [(Gcn, GCN_ROWS), (Sage, SAGE_ROWS), (Gat, GAT_ROWS)] {
        for &(dataset, residual, norm, dropout, layers, hidden, lr, epochs) in rows {
            out.push(Preset {
                name: format!("{}-{dataset}", kind.name()),
                model: kind,
                dataset: dataset.into(),
                residual,
                norm,
                dropout,
                layers,
                hidden,
                lr,
                epochs,
                heads: if kind == Gat { PRESET_GAT_HEADS } else { 1 },
                feature_norm: if PLANETOID.contains(&dataset) {
                    FeatureNorm::Row
                } else {
                    FeatureNorm::None
                },
            });
        }
    }
    out
}

pub fn preset(name: &str) -> Result<Preset> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::input(format!("unknown preset '{name}' (see `gnnkit presets`)")))
}
