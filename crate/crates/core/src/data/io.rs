//! Feature files (magic `FSEQ`) and CSV import.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{DatasetMetadata, LabeledSequence, LabeledSequenceSet};

pub const FEATURES_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FSEQ";

#[derive(Debug, Serialize, Deserialize)]
struct ItemEntry {
    label: usize,
    group: usize,
    rows: usize,
    cols: usize,
    /// Byte offset from the start of the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    classes: usize,
    dim: usize,
    metadata: DatasetMetadata,
    items: Vec<ItemEntry>,
}

pub fn encode_features(set: &LabeledSequenceSet) -> Result<Vec<u8>> {
    let mut items = Vec::with_capacity(set.len());
    let mut payload = Vec::new();
    for item in &set.items {
        items.push(ItemEntry {
            label: item.label,
            group: item.group,
            rows: item.features.rows(),
            cols: item.features.cols(),
            offset: payload.len() * 8,
        });
        payload.extend_from_slice(item.features.data());
    }
    let header = Header {
        classes: set.classes,
        dim: set.dim,
        metadata: set.metadata.clone(),
        items,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    Ok(container::encode(MAGIC, FEATURES_VERSION, &json, &payload))
}

pub fn decode_features(bytes: &[u8]) -> Result<LabeledSequenceSet> {
    let mut parsed: Option<Header> = None;
    let (_, payload) = container::decode(bytes, MAGIC, FEATURES_VERSION, |raw| {
        let h: Header = serde_json::from_slice(raw)
            .map_err(|e| Error::Format(format!("feature file header: {e}")))?;
        let total = h.items.iter().map(|i| i.rows * i.cols).sum();
        parsed = Some(h);
        Ok(total)
    })?;
    let header = parsed.expect("decode parses the header before returning");
    let mut items = Vec::with_capacity(header.items.len());
    for (i, e) in header.items.iter().enumerate() {
        let start = e.offset / 8;
        let end = start + e.rows * e.cols;
        if e.offset % 8 != 0 || end > payload.len() {
            return Err(Error::Format(format!("item {i} lies outside the payload")));
        }
        items.push(LabeledSequence {
            features: Matrix::from_vec(e.rows, e.cols, payload[start..end].to_vec())?,
            label: e.label,
            group: e.group,
        });
    }
    LabeledSequenceSet::new(items, header.classes, header.dim, header.metadata)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn save_features(set: &LabeledSequenceSet, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &encode_features(set)?)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<LabeledSequenceSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// Reads one headerless CSV recording: each row is a feature, each column a
/// timestamp, giving a `D×N` matrix. The label is the integer after the last
/// `_` of the file stem, e.g. `walk_03_2.csv` has label 2.
pub fn read_csv_item(path: impl AsRef<Path>) -> Result<(Matrix, usize)> {
    let path = path.as_ref();
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.rsplit_once('_'))
        .and_then(|(_, l)| l.parse::<usize>().ok())
        .ok_or_else(|| {
            Error::Format(format!("{}: file name lacks a `_<label>` suffix", path.display()))
        })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (f, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|field| field.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{} row {f}: {e}", path.display())))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "{} row {f}: {} fields, expected {}",
                    path.display(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptySequence("csv recording"));
    }
    let (d, n) = (rows.len(), rows[0].len());
    Ok((Matrix::from_fn(d, n, |f, t| rows[f][t]), label))
}

/// Imports every `*.csv` in `dir` (sorted by name) as one item each.
/// `classes` defaults to one more than the largest label seen.
pub fn import_csv_dir(dir: impl AsRef<Path>, classes: Option<usize>) -> Result<LabeledSequenceSet> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no .csv files in {}", dir.display())));
    }
    let mut items = Vec::with_capacity(paths.len());
    for (group, p) in paths.iter().enumerate() {
        let (features, label) = read_csv_item(p)?;
        items.push(LabeledSequence {
            features,
            label,
            group,
        });
    }
    let dim = items[0].features.rows();
    let classes = classes.unwrap_or_else(|| items.iter().map(|i| i.label).max().unwrap_or(0) + 1);
    let metadata = DatasetMetadata {
        generator: "csv".into(),
        seed: None,
        params: serde_json::json!({ "source": dir.display().to_string() }),
    };
    LabeledSequenceSet::new(items, classes, dim, metadata)
}
