//! Train/validation/test splits.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Indices in range, labeled, nonempty, pairwise disjoint.
    pub fn validate(&self, labels: &[i64]) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if part.is_empty() {
                return Err(Error::input(format!("{name} split is empty")));
            }
            for &i in part {
                match labels.get(i) {
                    None => {
                        return Err(Error::input(format!(
                            "{name} split index {i} out of range for {} nodes",
                            labels.len()
                        )))
                    }
                    Some(&y) if y < 0 => return Err(Error::input(format!("{name} split node {i} is unlabeled"))),
                    Some(_) => {}
                }
                if !seen.insert(i) {
                    return Err(Error::input(format!("node {i} appears twice across splits ({name})")));
                }
            }
        }
        Ok(())
    }
}

fn part_size(n: usize, ratio: f64) -> usize {
    // tolerance keeps 0.6 * 10 at 6 despite binary rounding
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Seeded shuffle of `0..n` cut into `floor(r0 n)`, `floor(r1 n)`, and the
/// remainder.
pub fn make_random_split(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    if n < 3 {
        return Err(Error::input(format!("need at least 3 nodes to split, got {n}")));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = part_size(n, a);
    let n_val = part_size(n, b);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Split {
        train: order,
        val,
        test,
    })
}

/// Random split restricted to labeled nodes (label >= 0).
pub fn split_labeled(labels: &[i64], ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    let pos = make_random_split(labeled.len(), ratios, seed)?;
    let map = |v: Vec<usize>| v.into_iter().map(|p| labeled[p]).collect();
    Ok(Split {
        train: map(pos.train),
        val: map(pos.val),
        test: map(pos.test),
    })
}

/// Semi-supervised split: `per_class` training nodes per class, then
/// `num_val` validation and `num_test` test nodes, all drawn from one
/// seeded shuffle of the labeled nodes. Index lists are returned sorted.
pub fn planetoid_split(
    labels: &[i64],
    num_classes: usize,
    per_class: usize,
    num_val: usize,
    num_test: usize,
    seed: u64,
) -> Result<Split> {
    let mut order: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken = vec![0usize; num_classes];
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for i in order {
        let c = labels[i] as usize;
        if c >= num_classes {
            return Err(Error::input(format!("node {i} has label {c} >= {num_classes}")));
        }
        if taken[c] < per_class {
            taken[c] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    if let Some(c) = taken.iter().position(|&t| t < per_class) {
        return Err(Error::input(format!(
            "class {c} has fewer than {per_class} labeled nodes"
        )));
    }
    if rest.len() < num_val + num_test {
        return Err(Error::input(format!(
            "{} nodes left after training selection, need {}",
            rest.len(),
            num_val + num_test
        )));
    }
    let mut val = rest[..num_val].to_vec();
    let mut test = rest[num_val..num_val + num_test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}
