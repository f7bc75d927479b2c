//! JSON checkpoint container: a format tag and version, a free-form
//! manifest, and a list of named, shape-tagged tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Parameters;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "complex-rank/params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub manifest: serde_json::Value,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_params<P: Parameters>(params: &P, manifest: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            manifest,
            tensors: params
                .tensors()
                .into_iter()
                .map(|t| StoredTensor {
                    name: t.name,
                    shape: t.shape,
                    data: t.data.to_vec(),
                })
                .collect(),
        }
    }

    /// Copies stored tensors into `target`, which fixes the expected names
    /// and shapes.
    pub fn restore_into<P: Parameters>(&self, target: &mut P) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let expected: Vec<(String, Vec<usize>)> = target
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::shape("checkpoint tensor count", expected.len(), self.tensors.len()));
        }
        for ((name, shape), stored) in expected.iter().zip(&self.tensors) {
            if *name != stored.name || *shape != stored.shape {
                return Err(Error::shape(
                    "checkpoint tensor",
                    format!("{name} {shape:?}"),
                    format!("{} {:?}", stored.name, stored.shape),
                ));
            }
            if stored.data.len() != shape.iter().product::<usize>() {
                return Err(Error::shape("checkpoint data", shape.iter().product::<usize>(), stored.data.len()));
            }
        }
        for (dst, stored) in target.tensors_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(&stored.data);
        }
        Ok(())
    }
}

pub fn save_checkpoint<P: Parameters>(path: &Path, params: &P, manifest: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_params(params, manifest))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
