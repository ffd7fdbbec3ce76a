//! Checkpoint file: magic `NBAF`, then a JSON header holding the model
//! config and an ordered parameter manifest, then the raw parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{Model, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"NBAF";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset from the start of the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    parameters: Vec<ParamEntry>,
}

/// Serializes a model to checkpoint bytes.
pub fn write_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut parameters = Vec::new();
    let mut payload = Vec::new();
    for (name, value) in model.parameters() {
        parameters.push(ParamEntry {
            name,
            rows: value.rows(),
            cols: value.cols(),
            offset: payload.len() * 8,
        });
        payload.extend_from_slice(value.data());
    }
    let header = Header {
        config: model.config().clone(),
        parameters,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    Ok(container::encode(MAGIC, CHECKPOINT_VERSION, &json, &payload))
}

/// Parses checkpoint bytes back into a model.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut parsed: Option<Header> = None;
    let (_, payload) = container::decode(bytes, MAGIC, CHECKPOINT_VERSION, |raw| {
        let h: Header = serde_json::from_slice(raw)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let total = h.parameters.iter().map(|p| p.rows * p.cols).sum();
        parsed = Some(h);
        Ok(total)
    })?;
    let header = parsed.expect("decode parses the header before returning");

    let mut values = Vec::with_capacity(header.parameters.len());
    for p in &header.parameters {
        let start = p.offset / 8;
        let end = start + p.rows * p.cols;
        if p.offset % 8 != 0 || end > payload.len() {
            return Err(Error::Format(format!("parameter {} lies outside the payload", p.name)));
        }
        values.push(Matrix::from_vec(p.rows, p.cols, payload[start..end].to_vec())?);
    }
    let model = Model::from_parameters(header.config, &values)?;
    let expected = model.parameter_names();
    for (p, name) in header.parameters.iter().zip(&expected) {
        if &p.name != name {
            return Err(Error::Format(format!(
                "parameter manifest out of order: found {}, expected {name}",
                p.name
            )));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &write_checkpoint(model)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
