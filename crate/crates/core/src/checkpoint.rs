//! JSON checkpoint container shared by the captioner and classifier heads.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so `read(write(x)) == x` bit for bit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new<C: Serialize>(kind: &str, config: &C, names: &[String], tensors: &[Tensor]) -> Self {
        Checkpoint {
            kind: kind.to_owned(),
            config: serde_json::to_value(config).expect("config serializes"),
            tensors: names
                .iter()
                .zip(tensors)
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Schema {
            field: "config".into(),
            message: e.to_string(),
        })
    }

    /// Tensors in stored order, checked against the expected names and shapes.
    pub fn tensors(&self, expected: &[(String, Vec<usize>)]) -> Result<Vec<Tensor>> {
        if self.tensors.len() != expected.len() {
            return Err(Error::Schema {
                field: "tensors".into(),
                message: format!("expected {} tensors, found {}", expected.len(), self.tensors.len()),
            });
        }
        self.tensors
            .iter()
            .zip(expected)
            .map(|(nt, (name, shape))| {
                if &nt.name != name || &nt.shape != shape {
                    return Err(Error::Schema {
                        field: "tensors".into(),
                        message: format!(
                            "expected {name} {shape:?}, found {} {:?}",
                            nt.name, nt.shape
                        ),
                    });
                }
                Tensor::new(nt.shape.clone(), nt.data.clone())
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.kind != kind {
            return Err(Error::Schema {
                field: "kind".into(),
                message: format!("expected {kind:?}, found {:?}", ckpt.kind),
            });
        }
        Ok(ckpt)
    }
}
