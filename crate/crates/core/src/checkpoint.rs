//! Checkpoint container: a one-line UTF-8 JSON header followed by a raw
//! little-endian `f64` payload.
//!
//! ```text
//! {"format":"dfmerge","version":1,"kind":"params",...,"count":N,"crc32":C}\n
//! <N * 8 bytes of little-endian f64>
//! ```
//!
//! `crc32` is the IEEE CRC-32 of the payload bytes. The same container holds
//! model parameters, datasets and Fisher diagonals; `kind` says which.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamVector, SegmentLayout};
use crate::toymodels::ClassifierSpec;

pub const FORMAT: &str = "dfmerge";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub classifier: ClassifierSpec,
    pub param_count: usize,
}

impl ModelMeta {
    pub fn new(classifier: ClassifierSpec) -> Self {
        Self { param_count: classifier.param_count(), classifier }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub task: String,
    pub seed: u64,
    pub steps: usize,
    /// Free-form extras such as merge method and coefficients.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(task: impl Into<String>, seed: u64, steps: usize) -> Self {
        Self { task: task.into(), seed, steps, notes: BTreeMap::new() }
    }

    pub fn with_note(mut self, key: &str, value: impl Serialize) -> Self {
        let value = serde_json::to_value(value).expect("note values serialize");
        self.notes.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task_id: String,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Rows per split in payload order: train, validation, test.
    pub split_sizes: [usize; 3],
}

/// The typed part of a container header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeaderBody {
    Params {
        layout: SegmentLayout,
        model_meta: ModelMeta,
        provenance: Provenance,
    },
    /// Each row is `input_dim` features followed by the label as f64.
    Dataset {
        dataset: DatasetMeta,
    },
    Fisher {
        layout: SegmentLayout,
        provenance: Provenance,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: HeaderBody,
    count: usize,
    crc32: u32,
}

pub fn encode_container(body: &HeaderBody, payload: &[f64]) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = payload.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        body: body.clone(),
        count: payload.len(),
        crc32: crc32fast::hash(&bytes),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&bytes);
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<(HeaderBody, Vec<f64>)> {
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::MalformedHeader("no header terminator".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.format != FORMAT {
        return Err(Error::MalformedHeader(format!("unknown format `{}`", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {}", header.version)));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != header.count * 8 {
        return Err(Error::PayloadLength { declared: header.count, actual: payload.len() / 8 });
    }
    let crc = crc32fast::hash(payload);
    if crc != header.crc32 {
        return Err(Error::Checksum { expected: header.crc32, actual: crc });
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Ok((header.body, values))
}

pub fn write_container(path: impl AsRef<Path>, body: &HeaderBody, payload: &[f64]) -> Result<()> {
    fs::write(path, encode_container(body, payload)?)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<(HeaderBody, Vec<f64>)> {
    decode_container(&fs::read(path)?)
}

/// A model's parameters with what it is and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub model_meta: ModelMeta,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn new(params: ParamVector, classifier: ClassifierSpec, provenance: Provenance) -> Result<Self> {
        let model_meta = ModelMeta::new(classifier);
        if model_meta.param_count != params.len() {
            return Err(Error::DimensionMismatch { expected: model_meta.param_count, actual: params.len() });
        }
        Ok(Self { params, model_meta, provenance })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.model_meta.classifier
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = HeaderBody::Params {
            layout: self.params.layout().clone(),
            model_meta: self.model_meta.clone(),
            provenance: self.provenance.clone(),
        };
        encode_container(&body, self.params.values())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match decode_container(bytes)? {
            (HeaderBody::Params { layout, model_meta, provenance }, values) => {
                if model_meta.param_count != layout.total_len() || model_meta.classifier.param_count() != model_meta.param_count {
                    return Err(Error::MalformedHeader(format!(
                        "model_meta declares {} parameters, layout holds {}",
                        model_meta.param_count,
                        layout.total_len()
                    )));
                }
                let params = ParamVector::new(layout, values)?;
                Ok(Self { params, model_meta, provenance })
            }
            (other, _) => Err(Error::MalformedHeader(format!("expected a params container, found {}", kind_name(&other)))),
        }
    }
}

pub(crate) fn kind_name(body: &HeaderBody) -> &'static str {
    match body {
        HeaderBody::Params { .. } => "params",
        HeaderBody::Dataset { .. } => "dataset",
        HeaderBody::Fisher { .. } => "fisher",
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
