//! Adam with bias correction and optional L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty coefficient added to the gradient before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// One Adam update of a single tensor at step `t` (1-based).
pub fn adam_step<T: Scalar>(
    param: &mut Matrix<T>,
    grad: &Matrix<T>,
    m: &mut Matrix<T>,
    v: &mut Matrix<T>,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::input("Adam step index starts at 1"));
    }
    if grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape() {
        return Err(Error::shape(
            "adam",
            format!("param {:?}, grad {:?}", param.shape(), grad.shape()),
        ));
    }
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let wd = T::from_f64(cfg.weight_decay);
    let c1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powf(t as f64)));
    let c2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powf(t as f64)));
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let p = param.as_mut_slice();
    let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
    for (i, &g0) in grad.as_slice().iter().enumerate() {
        let g = g0 + wd * p[i];
        ms[i] = b1 * ms[i] + (one - b1) * g;
        vs[i] = b2 * vs[i] + (one - b2) * g * g;
        let mhat = ms[i] * c1;
        let vhat = vs[i] * c2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Moment buffers for a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Matrix<T>>, grads: &[Matrix<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::input(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        for (i, p) in params.into_iter().enumerate() {
            adam_step(p, &grads[i], &mut self.m[i], &mut self.v[i], &self.config, self.t)?;
        }
        Ok(())
    }
}
