//! Node-classification datasets: in-memory bundle, NGDF directories,
//! split generation, and converters from common public layouts.

pub mod convert;
pub mod ngdf;
pub mod split;

pub use ngdf::{load_dataset, write_dataset, write_dataset_with, FeatureFormat};
pub use split::{make_random_split, planetoid_split, split_labeled, Split};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::tensor::Matrix;
use crate::train::Metric;

/// Optional feature preprocessing applied after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureNorm {
    #[default]
    None,
    /// Scale each row to unit L1 norm.
    Row,
}

impl std::str::FromStr for FeatureNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FeatureNorm::None),
            "row" => Ok(FeatureNorm::Row),
            other => Err(Error::input(format!(
                "unknown feature normalization '{other}' (none, row)"
            ))),
        }
    }
}

/// A validated node-classification dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    metric: Metric,
    directed: bool,
    edges: Vec<(usize, usize)>,
    graph: Graph,
    features: Matrix<f32>,
    labels: Vec<i64>,
    split: Split,
}

impl Dataset {
    /// Validates every invariant: feature rows and label count match the
    /// node count, labels lie in `[0, C)` or are `-1`, split indices are in
    /// range, labeled, and pairwise disjoint.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        edges: Vec<(usize, usize)>,
        features: Matrix<f32>,
        labels: Vec<i64>,
        num_classes: usize,
        metric: Metric,
        directed: bool,
        split: Split,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Dimension {
                what: "label count vs feature rows".into(),
                expected: n,
                found: labels.len(),
            });
        }
        if num_classes < 2 {
            return Err(Error::input(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if metric == Metric::RocAuc && num_classes != 2 {
            return Err(Error::input("roc_auc datasets must have exactly 2 classes"));
        }
        if let Some((i, &y)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y < -1 || y >= num_classes as i64)
        {
            return Err(Error::input(format!(
                "node {i} has label {y}; labels must be -1 or in [0, {num_classes})"
            )));
        }
        split.validate(&labels)?;
        let graph = build_graph(&edges, n, !directed, false)?;
        Ok(Dataset {
            name: name.into(),
            num_classes,
            metric,
            directed,
            edges,
            graph,
            features,
            labels,
            split,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    /// Edge list exactly as stored on disk.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// CSR adjacency, symmetrized unless the dataset is directed, without
    /// self-loops.
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn features(&self) -> &Matrix<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    /// Width of the model head: one logit for binary ROC-AUC tasks,
    /// otherwise one per class.
    pub fn head_dim(&self) -> usize {
        if self.metric == Metric::RocAuc {
            1
        } else {
            self.num_classes
        }
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        split.validate(&self.labels)?;
        self.split = split;
        Ok(self)
    }

    pub fn with_feature_norm(mut self, norm: FeatureNorm) -> Self {
        if norm == FeatureNorm::Row {
            self.features.row_normalize();
        }
        self
    }

    /// Fraction of test nodes in the most common test class.
    pub fn majority_test_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.num_classes];
        for &i in &self.split.test {
            counts[self.labels[i] as usize] += 1;
        }
        let max = counts.into_iter().max().unwrap_or(0);
        max as f64 / self.split.test.len().max(1) as f64
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(labels: Vec<i64>, split: Split) -> Result<Dataset> {
        Dataset::new(
            "tiny",
            vec![(0, 1), (1, 2)],
            Matrix::zeros(3, 2),
            labels,
            2,
            Metric::Accuracy,
            false,
            split,
        )
    }

    fn split(train: &[usize], val: &[usize], test: &[usize]) -> Split {
        Split {
            train: train.to_vec(),
            val: val.to_vec(),
            test: test.to_vec(),
        }
    }

    #[test]
    fn validation() {
        assert!(tiny(vec![0, 1, 0], split(&[0], &[1], &[2])).is_ok());
        assert!(tiny(vec![0, 2, 0], split(&[0], &[1], &[2])).is_err());
        assert!(tiny(vec![0, -2, 0], split(&[0], &[1], &[2])).is_err());
        assert!(
            tiny(vec![0, -1, 0], split(&[0], &[1], &[2])).is_err(),
            "unlabeled split node"
        );
        assert!(tiny(vec![0, 1, 0], split(&[0], &[0], &[2])).is_err(), "overlap");
        assert!(tiny(vec![0, 1, 0], split(&[0], &[1], &[3])).is_err(), "range");
        assert!(tiny(vec![0, 1], split(&[0], &[1], &[])).is_err(), "label count");
    }

    #[test]
    fn row_norm_and_head() {
        let ds = fixtures::two_cliques();
        assert_eq!(ds.head_dim(), 2);
        assert_eq!(ds.graph().num_edges(), 2 * 21);
        let normed = ds.with_feature_norm(FeatureNorm::Row);
        for r in 0..10 {
            let s: f32 = normed.features().row(r).iter().map(|v| v.abs()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
