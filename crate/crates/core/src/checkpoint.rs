//! Binary checkpoint container.
//!
//! Layout: the 9-byte magic `VCMCKPT1\n`, a little-endian `u64` header
//! length, a JSON [`CheckpointHeader`], then every parameter tensor as
//! little-endian `f64` in [`ModelParams::tensors`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VcmError};
use crate::model::{Architecture, ModelParams, ParamGroup};
use crate::objective::TrainingVariant;

pub const MAGIC: &[u8; 9] = b"VCMCKPT1\n";
pub const SIGN_CONVENTION: &str = "maximize";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub group: ParamGroup,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: Architecture,
    pub latent_dim: usize,
    pub seed: u64,
    pub variant: Option<TrainingVariant>,
    /// The stored parameters maximize the objective.
    pub sign_convention: String,
    /// Weight matrix shapes (out, in) per group, layer by layer.
    pub shapes: Vec<(ParamGroup, Vec<(usize, usize)>)>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, seed: u64, variant: Option<TrainingVariant>) -> Self {
        let header = CheckpointHeader {
            format_version: 1,
            architecture: params.arch.clone(),
            latent_dim: params.latent_dim(),
            seed,
            variant,
            sign_convention: SIGN_CONVENTION.into(),
            shapes: params.shapes(),
            tensors: params
                .tensors()
                .into_iter()
                .map(|(group, t)| TensorInfo { group, len: t.len() })
                .collect(),
        };
        Checkpoint { header, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + 8 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| VcmError::Checkpoint(m);
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| bad("bad magic".into()))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length".into()));
        }
        let header_len = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let rest = &rest[8..];
        if rest.len() < header_len {
            return Err(bad("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&rest[..header_len])?;
        if header.sign_convention != SIGN_CONVENTION {
            return Err(bad(format!("unsupported sign convention `{}`", header.sign_convention)));
        }
        let mut params = ModelParams::zeros(&header.architecture);
        if params.shapes() != header.shapes {
            return Err(bad("stored shapes do not match the architecture".into()));
        }
        let data = &rest[header_len..];
        let expected: Vec<TensorInfo> = params
            .tensors()
            .into_iter()
            .map(|(group, t)| TensorInfo { group, len: t.len() })
            .collect();
        if expected != header.tensors {
            return Err(bad("tensor table does not match the architecture".into()));
        }
        let n: usize = expected.iter().map(|t| t.len).sum();
        if data.len() != 8 * n {
            return Err(bad(format!("expected {} parameter bytes, found {}", 8 * n, data.len())));
        }
        let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for (_, t) in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = values.next().unwrap();
            }
        }
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| VcmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| VcmError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
