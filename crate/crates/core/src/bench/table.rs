use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::train::{Metric, MultiSeedResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "detail")]
pub enum RowStatus {
    Ok,
    /// Training diverged or was rejected; the message says why.
    Failed(String),
    /// The ablated component is not used by the base configuration.
    NotApplicable,
}

/// JSON has no NaN; serde_json writes it as `null`.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub status: RowStatus,
    #[serde(deserialize_with = "nan_from_null")]
    pub val_mean: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub val_std: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub test_mean: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub test_std: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub train_mean: f64,
    pub val_per_seed: Vec<f64>,
    pub test_per_seed: Vec<f64>,
    pub seconds: f64,
}

impl ResultRow {
    pub fn from_result(label: impl Into<String>, config: RunConfig, r: &MultiSeedResult) -> Self {
        ResultRow {
            label: label.into(),
            config_hash: config.hash(),
            config,
            status: RowStatus::Ok,
            val_mean: r.val_mean,
            val_std: r.val_std,
            test_mean: r.test_mean,
            test_std: r.test_std,
            train_mean: r.train_mean,
            val_per_seed: r.runs.iter().map(|x| x.best_val).collect(),
            test_per_seed: r.runs.iter().map(|x| x.test_at_best).collect(),
            seconds: r.seconds(),
        }
    }

    fn empty(label: impl Into<String>, config: RunConfig, status: RowStatus) -> Self {
        ResultRow {
            label: label.into(),
            config_hash: config.hash(),
            config,
            status,
            val_mean: f64::NAN,
            val_std: f64::NAN,
            test_mean: f64::NAN,
            test_std: f64::NAN,
            train_mean: f64::NAN,
            val_per_seed: vec![],
            test_per_seed: vec![],
            seconds: 0.0,
        }
    }

    pub fn failed(label: impl Into<String>, config: RunConfig, msg: impl Into<String>) -> Self {
        Self::empty(label, config, RowStatus::Failed(msg.into()))
    }

    pub fn not_applicable(label: impl Into<String>, config: RunConfig) -> Self {
        Self::empty(label, config, RowStatus::NotApplicable)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    /// Insertion order.
    None,
    ValMean,
    TestMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub schema: String,
    pub dataset: String,
    pub metric: Metric,
    pub sort: SortKey,
    pub rows: Vec<ResultRow>,
}

pub const TABLE_SCHEMA: &str = "gnnkit.table/v1";

fn csv_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.6}")
    }
}

impl ResultTable {
    pub fn new(dataset: impl Into<String>, metric: Metric) -> Self {
        ResultTable {
            schema: TABLE_SCHEMA.into(),
            dataset: dataset.into(),
            metric,
            sort: SortKey::None,
            rows: vec![],
        }
    }

    /// Stable descending sort on the key; failed and not-applicable rows last.
    pub fn sort_by(&mut self, key: SortKey) {
        self.sort = key;
        let value = |r: &ResultRow| match key {
            SortKey::None => 0.0,
            SortKey::ValMean => r.val_mean,
            SortKey::TestMean => r.test_mean,
        };
        if key != SortKey::None {
            self.rows.sort_by(|a, b| {
                b.is_ok()
                    .cmp(&a.is_ok())
                    .then_with(|| value(b).partial_cmp(&value(a)).unwrap_or(std::cmp::Ordering::Equal))
            });
        }
    }

    /// Index of the row with the highest mean validation metric (first on ties).
    pub fn best_by_val(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.rows.iter().enumerate() {
            if r.is_ok() && best.is_none_or(|b| r.val_mean > self.rows[b].val_mean) {
                best = Some(i);
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Flat CSV with metrics at 6 decimals. Config columns make each row
    /// self-describing; the full config is in the JSON form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,status,config_hash,model,layers,hidden,dropout,norm,residual,jk,heads,lr,epochs,feature_norm,seeds,\
             val_mean,val_std,test_mean,test_std,train_mean,seconds\n",
        );
        for r in &self.rows {
            let m = &r.config.model;
            let status = match &r.status {
                RowStatus::Ok => "ok",
                RowStatus::Failed(_) => "failed",
                RowStatus::NotApplicable => "not_applicable",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.label.replace(',', ";"),
                status,
                r.config_hash,
                m.kind.name(),
                m.num_layers,
                m.hidden_dim,
                m.dropout,
                m.norm.name(),
                m.residual,
                m.jk,
                m.heads,
                r.config.train.lr,
                r.config.train.max_epochs,
                serde_json::to_value(r.config.feature_norm)
                    .unwrap()
                    .as_str()
                    .unwrap_or(""),
                r.config.seeds,
                csv_num(r.val_mean),
                csv_num(r.val_std),
                csv_num(r.test_mean),
                csv_num(r.test_std),
                csv_num(r.train_mean),
                csv_num(r.seconds),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use crate::data::fixtures::two_cliques;
    use crate::train::TrainResult;

    fn result(vals: &[(f64, f64)]) -> MultiSeedResult {
        MultiSeedResult::from_runs(
            vals.iter()
                .enumerate()
                .map(|(i, &(v, t))| TrainResult {
                    seed: i as u64,
                    metric: Metric::Accuracy,
                    best_epoch: 1,
                    best_val: v,
                    train_at_best: 1.0,
                    test_at_best: t,
                    epochs_run: 1,
                    train_loss: vec![0.5],
                    train_metric: vec![1.0],
                    val_metric: vec![v],
                    test_metric: vec![t],
                    seconds: 0.25,
                })
                .collect(),
        )
    }

    fn table() -> ResultTable {
        let cfg = preset("gcn-cora").unwrap().resolve(&two_cliques(), 0, 2);
        let mut t = ResultTable::new("toy", Metric::Accuracy);
        t.rows.push(ResultRow::from_result(
            "a",
            cfg.clone(),
            &result(&[(0.7, 0.61), (0.8, 0.6234567891)]),
        ));
        t.rows.push(ResultRow::failed("b", cfg.clone(), "diverged"));
        t.rows.push(ResultRow::from_result(
            "c",
            cfg.clone(),
            &result(&[(0.9, 0.1 + 0.2), (0.9, 0.5)]),
        ));
        t.rows.push(ResultRow::not_applicable("d", cfg));
        t
    }

    #[test]
    fn json_round_trip_is_exact() {
        let t = table();
        let back = ResultTable::from_json(&t.to_json().unwrap()).unwrap();
        // NaN != NaN, so compare the re-serialized form
        assert_eq!(back.to_json().unwrap(), t.to_json().unwrap());
        assert_eq!(back.rows[2].test_per_seed[0], 0.1 + 0.2);
    }

    #[test]
    fn csv_agrees_with_json_to_six_decimals() {
        let t = table();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + t.rows.len());
        let header: Vec<&str> = lines[0].split(',').collect();
        let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
        for (row, line) in t.rows.iter().zip(&lines[1..]) {
            let cells: Vec<&str> = line.split(',').collect();
            for (name, v) in [
                ("val_mean", row.val_mean),
                ("test_mean", row.test_mean),
                ("test_std", row.test_std),
            ] {
                let cell = cells[col(name)];
                if v.is_nan() {
                    assert!(cell.is_empty());
                } else {
                    assert!(
                        (cell.parse::<f64>().unwrap() - v).abs() <= 5e-7,
                        "{name}: {cell} vs {v}"
                    );
                }
            }
            assert_eq!(cells[col("config_hash")], row.config_hash);
        }
    }

    #[test]
    fn rows_are_consistent_and_best_by_val() {
        let mut t = table();
        let r = &t.rows[0];
        assert!((r.test_mean - r.test_per_seed.iter().sum::<f64>() / 2.0).abs() < 1e-15);
        assert_eq!(t.best_by_val(), Some(2));
        t.sort_by(SortKey::ValMean);
        let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels[..2], ["c", "a"]);
    }
}
