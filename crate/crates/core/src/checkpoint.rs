//! Binary model checkpoints.
//!
//! ```text
//! "GNNK"            magic
//! u32               format version (1)
//! u32 n, n bytes    header JSON: {"model": ModelConfig, "feature_norm": ...}
//! u32 t             tensor count
//! t times:          u32 rows, u32 cols, rows*cols f32
//! ```
//!
//! Integers and floats are little-endian. Tensors follow
//! [`ModelParams::tensors`] order, then each BatchNorm layer's running mean
//! and running variance as `1 x d` tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureNorm;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::kernels::RunningStats;
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"GNNK";
const VERSION: u32 = 1;

/// A trained model and the feature preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub feature_norm: FeatureNorm,
    pub params: ModelParams<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    feature_norm: FeatureNorm,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let (cfg, params) = (&ck.model, &ck.params);
    params.check_shapes(cfg)?;
    let json = serde_json::to_vec(&Header {
        model: cfg.clone(),
        feature_norm: ck.feature_norm,
    })?;
    let mut tensors: Vec<Matrix<f32>> = params.tensors().into_iter().cloned().collect();
    for layer in &params.layers {
        if let Some(s) = &layer.running {
            tensors.push(Matrix::from_vec(1, s.mean.len(), s.mean.clone())?);
            tensors.push(Matrix::from_vec(1, s.var.len(), s.var.clone())?);
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::input(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn tensor(&mut self) -> Result<Matrix<f32>> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let body = self.take(
            rows.checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .unwrap_or(usize::MAX),
        )?;
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::input("not a gnnkit checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::input(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let cfg = header.model;
    cfg.validate()?;
    let count = r.u32()?;
    let mut tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?.into_iter();
    if r.pos != bytes.len() {
        return Err(Error::input(format!(
            "{} trailing bytes in checkpoint",
            bytes.len() - r.pos
        )));
    }
    // Build a correctly shaped skeleton, then fill it in declaration order.
    let mut params = ModelParams::<f32>::init(&cfg, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    let mut missing = || Error::input("checkpoint has fewer tensors than the model needs");
    for slot in params.tensors_mut() {
        let t = tensors.next().ok_or_else(&mut missing)?;
        if t.shape() != slot.shape() {
            return Err(Error::shape(
                "checkpoint",
                format!("tensor is {:?}, model expects {:?}", t.shape(), slot.shape()),
            ));
        }
        *slot = t;
    }
    for layer in &mut params.layers {
        if let Some(stats) = &mut layer.running {
            let mean = tensors.next().ok_or_else(&mut missing)?;
            let var = tensors.next().ok_or_else(&mut missing)?;
            if mean.len() != stats.mean.len() || var.len() != stats.var.len() {
                return Err(Error::shape("checkpoint", "running statistics have the wrong width"));
            }
            *stats = RunningStats {
                mean: mean.into_vec(),
                var: var.into_vec(),
            };
        }
    }
    if tensors.next().is_some() {
        return Err(Error::input("checkpoint has more tensors than the model needs"));
    }
    Ok(Checkpoint {
        model: cfg,
        feature_norm: header.feature_norm,
        params,
    })
}

pub fn save(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{LayerKind, NormKind};
    use rand::SeedableRng;

    #[test]
    fn round_trip_every_kind() {
        for kind in [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gat] {
            let mut cfg = ModelConfig::new(kind, 5, 4, 3, 2);
            cfg.norm = NormKind::Batch;
            cfg.residual = true;
            cfg.heads = 2;
            let mut p = ModelParams::<f32>::init(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
            p.layers[1].running.as_mut().unwrap().mean[2] = 0.25;
            let ck = Checkpoint {
                model: cfg,
                feature_norm: FeatureNorm::Row,
                params: p,
            };
            assert_eq!(decode(&encode(&ck).unwrap()).unwrap(), ck);
        }
    }

    #[test]
    fn rejects_damage() {
        let cfg = ModelConfig::new(LayerKind::Gcn, 3, 4, 2, 1);
        let p = ModelParams::<f32>::init(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bytes = encode(&Checkpoint {
            model: cfg,
            feature_norm: FeatureNorm::None,
            params: p,
        })
        .unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
    }
}
