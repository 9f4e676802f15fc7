use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ModelConfig, RcModel, TaskKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "advreg-ckpt-v1";

/// A trained model together with what is needed to run it on raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RcModel,
    pub task: TaskKind,
    pub vocab: Vec<String>,
    /// Answerability threshold chosen on the dev set (span-or-no-answer task only).
    pub na_threshold: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    task: TaskKind,
    config: ModelConfig,
    vocab: Vec<String>,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    na_threshold: Option<f64>,
    params: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Number(f64),
    Text(String),
}

fn ser_threshold<S: Serializer>(value: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match value {
        None => s.serialize_none(),
        Some(v) if v.is_finite() => s.serialize_some(v),
        Some(v) if *v > 0.0 => s.serialize_some("inf"),
        Some(_) => s.serialize_some("-inf"),
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    let repr = Option::<ThresholdRepr>::deserialize(d)?;
    Ok(match repr {
        None => None,
        Some(ThresholdRepr::Number(v)) => Some(v),
        Some(ThresholdRepr::Text(t)) => match t.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            other => return Err(serde::de::Error::custom(format!("bad threshold '{other}'"))),
        },
    })
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            task: self.task,
            config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            na_threshold: self.na_threshold,
            params: self
                .model
                .params
                .entries()
                .into_iter()
                .map(|(name, t)| NamedArray {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format '{}' (expected {CHECKPOINT_FORMAT})",
                file.format
            )));
        }
        if file.vocab.len() != file.config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocab has {} entries, config says {}",
                file.vocab.len(),
                file.config.vocab_size
            )));
        }
        let mut model = RcModel::new(file.config)?;
        let mut arrays: HashMap<String, NamedArray> = file.params.into_iter().map(|a| (a.name.clone(), a)).collect();
        for (name, slot) in model.params.entries_mut() {
            let array = arrays
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if array.shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    array.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(array.shape, array.data)
                .map_err(|e| Error::Checkpoint(format!("parameter '{name}': {e}")))?
                .with_grad();
        }
        if let Some(extra) = arrays.keys().next() {
            return Err(Error::Checkpoint(format!("unknown parameter '{extra}'")));
        }
        Ok(Checkpoint {
            model,
            task: file.task,
            vocab: file.vocab,
            na_threshold: file.na_threshold,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Checkpoint::from_json(&text)
    }
}
