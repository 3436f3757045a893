use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layers::NormKind;

/// Cartesian hyperparameter grid. Fields not listed here come from the
/// base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub layers: Vec<usize>,
    pub norm: Vec<NormKind>,
    pub residual: Vec<bool>,
    pub jk: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: vec![0.001, 0.005, 0.01],
            hidden: vec![64, 256, 512],
            dropout: vec![0.2, 0.3, 0.5, 0.7],
            layers: (1..=10).collect(),
            norm: vec![NormKind::None, NormKind::Layer, NormKind::Batch],
            residual: vec![false, true],
            jk: vec![false, true],
        }
    }
}

impl SearchSpace {
    /// Default grid with depths 12, 15 and 20 added.
    pub fn heterophilous() -> Self {
        let mut s = Self::default();
        s.layers.extend([12, 15, 20]);
        s
    }

    /// Single point taken from `base`.
    pub fn singleton(base: &RunConfig) -> Self {
        SearchSpace {
            lr: vec![base.train.lr],
            hidden: vec![base.model.hidden_dim],
            dropout: vec![base.model.dropout],
            layers: vec![base.model.num_layers],
            norm: vec![base.model.norm],
            residual: vec![base.model.residual],
            jk: vec![base.model.jk],
        }
    }

    pub fn size(&self) -> usize {
        self.lr.len()
            * self.hidden.len()
            * self.dropout.len()
            * self.layers.len()
            * self.norm.len()
            * self.residual.len()
            * self.jk.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.size() == 0 {
            return Err(Error::input("every search dimension needs at least one value"));
        }
        if self.lr.iter().any(|&l| !l.is_finite() || l <= 0.0) || self.hidden.contains(&0) || self.layers.contains(&0) {
            return Err(Error::input("learning rates, hidden sizes and depths must be positive"));
        }
        if self.dropout.iter().any(|d| !(0.0..1.0).contains(d)) {
            return Err(Error::input("dropout rates must be in [0, 1)"));
        }
        Ok(())
    }

    /// Configuration number `i` in row-major order over
    /// (lr, hidden, dropout, layers, norm, residual, jk).
    pub fn config(&self, base: &RunConfig, mut i: usize) -> RunConfig {
        let mut pick = |len: usize| {
            let k = i % len;
            i /= len;
            k
        };
        let jk = self.jk[pick(self.jk.len())];
        let residual = self.residual[pick(self.residual.len())];
        let norm = self.norm[pick(self.norm.len())];
        let layers = self.layers[pick(self.layers.len())];
        let dropout = self.dropout[pick(self.dropout.len())];
        let hidden = self.hidden[pick(self.hidden.len())];
        let lr = self.lr[pick(self.lr.len())];
        let mut c = base.clone();
        c.train.lr = lr;
        c.model.hidden_dim = hidden;
        c.model.dropout = dropout;
        c.model.num_layers = layers;
        c.model.norm = norm;
        c.model.residual = residual;
        c.model.jk = jk;
        c
    }

    pub fn configs(&self, base: &RunConfig) -> Vec<RunConfig> {
        (0..self.size()).map(|i| self.config(base, i)).collect()
    }

    /// `budget` distinct grid points chosen by a seeded draw, in grid order.
    /// Returns the full grid when `budget >= size`.
    pub fn sample(&self, base: &RunConfig, budget: usize, seed: u64) -> Vec<RunConfig> {
        let n = self.size();
        if budget >= n {
            return self.configs(base);
        }
        let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, budget).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.config(base, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use std::collections::HashSet;

    fn base() -> RunConfig {
        preset("gcn-cora")
            .unwrap()
            .resolve(&crate::data::fixtures::two_cliques(), 0, 1)
    }

    #[test]
    fn sizes() {
        assert_eq!(SearchSpace::default().size(), 3 * 3 * 4 * 10 * 3 * 2 * 2);
        assert_eq!(SearchSpace::heterophilous().layers.len(), 13);
        let b = base();
        assert_eq!(SearchSpace::singleton(&b).configs(&b), vec![b.clone()]);
        let mut two = SearchSpace::singleton(&b);
        two.lr = vec![0.001, 0.01];
        two.hidden = vec![64, 256];
        assert_eq!(two.configs(&b).len(), 4);
    }

    #[test]
    fn configs_are_distinct_and_sampling_is_seeded() {
        let b = base();
        let s = SearchSpace::default();
        let all: HashSet<String> = s.configs(&b).iter().map(RunConfig::hash).collect();
        assert_eq!(all.len(), s.size());
        let a = s.sample(&b, 50, 3);
        assert_eq!(a.len(), 50);
        assert_eq!(a, s.sample(&b, 50, 3));
        assert_ne!(a, s.sample(&b, 50, 4));
    }

    #[test]
    fn validation() {
        let mut s = SearchSpace::default();
        s.validate().unwrap();
        s.dropout.push(1.0);
        assert!(s.validate().is_err());
        let mut s = SearchSpace::default();
        s.jk.clear();
        assert!(s.validate().is_err());
    }
}
