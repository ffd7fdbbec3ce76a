//! Labeled sequence sets, synthetic task generators, preprocessing and
//! on-disk feature files.

mod generators;
mod io;

pub use generators::{gen_noisy_timestamps, gen_order_task, NoisyTaskParams, OrderTaskParams};
pub use io::{decode_features, encode_features, import_csv_dir, load_features, read_csv_item, save_features, FEATURES_VERSION};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    /// `D×N`.
    pub features: Matrix,
    pub label: usize,
    /// Items sharing a group are never split across train/test partitions.
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub generator: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequenceSet {
    pub items: Vec<LabeledSequence>,
    pub classes: usize,
    pub dim: usize,
    pub metadata: DatasetMetadata,
}

impl LabeledSequenceSet {
    pub fn new(
        items: Vec<LabeledSequence>,
        classes: usize,
        dim: usize,
        metadata: DatasetMetadata,
    ) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            if item.features.rows() != dim {
                return Err(Error::InvalidArgument(format!(
                    "item {i} has feature dimension {}, set declares {dim}",
                    item.features.rows()
                )));
            }
            if item.label >= classes {
                return Err(Error::InvalidArgument(format!(
                    "item {i} has label {} outside [0, {classes})",
                    item.label
                )));
            }
        }
        Ok(LabeledSequenceSet {
            items,
            classes,
            dim,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn features(&self) -> Vec<Matrix> {
        self.items.iter().map(|i| i.features.clone()).collect()
    }

    /// Items at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> LabeledSequenceSet {
        LabeledSequenceSet {
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
            classes: self.classes,
            dim: self.dim,
            metadata: self.metadata.clone(),
        }
    }

    /// Applies [`pad_or_clip`] to every item.
    pub fn with_length(&self, target: usize) -> LabeledSequenceSet {
        let mut out = self.clone();
        for item in &mut out.items {
            item.features = pad_or_clip(&item.features, target);
        }
        out
    }

    /// Common sequence length, if every item has the same one.
    pub fn uniform_length(&self) -> Option<usize> {
        let n = self.items.first()?.features.cols();
        self.items.iter().all(|i| i.features.cols() == n).then_some(n)
    }

    /// SHA-256 (hex) of the encoded feature file.
    pub fn checksum(&self) -> Result<String> {
        let bytes = encode_features(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Keeps the first `target` columns, or appends zero columns up to `target`.
pub fn pad_or_clip(x: &Matrix, target: usize) -> Matrix {
    Matrix::from_fn(x.rows(), target, |i, j| if j < x.cols() { x.get(i, j) } else { 0.0 })
}
