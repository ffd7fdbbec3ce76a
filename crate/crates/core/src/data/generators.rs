//! Seeded synthetic tasks.
//!
//! * `noisy`: a few timestamps carry a class prototype, the rest is
//!   class-independent Gaussian noise.
//! * `order`: both classes contain the same columns; only their temporal
//!   order differs, so any order-blind classifier sits at chance.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng;

use super::{DatasetMetadata, LabeledSequence, LabeledSequenceSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyTaskParams {
    pub classes: usize,
    pub dim: usize,
    pub seq_len: usize,
    /// Fraction of timestamps carrying the class signal, in `(0, 1]`.
    pub signal_fraction: f64,
    /// Prototype scale relative to unit-variance noise.
    pub snr: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderTaskParams {
    pub dim: usize,
    pub seq_len: usize,
    pub count: usize,
}

/// Per-column jitter around the two order-task symbols.
const ORDER_NOISE: f64 = 0.25;

fn gaussian(r: &mut impl Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Item `i` has label `i % classes`; `⌈signal_fraction·N⌉` random columns hold
/// `snr·e_label + ε`, every other column is `ε ~ N(0, I)`.
pub fn gen_noisy_timestamps(p: NoisyTaskParams, seed: u64) -> Result<LabeledSequenceSet> {
    if !(p.signal_fraction > 0.0 && p.signal_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "signal_fraction must lie in (0, 1], got {}",
            p.signal_fraction
        )));
    }
    if p.classes == 0 || p.seq_len == 0 || p.dim == 0 {
        return Err(Error::InvalidArgument("classes, dim and seq_len must be >= 1".into()));
    }
    if p.classes > p.dim {
        return Err(Error::InvalidArgument(format!(
            "{} orthogonal prototypes need dim >= classes, got dim {}",
            p.classes, p.dim
        )));
    }
    let signal = ((p.signal_fraction * p.seq_len as f64).ceil() as usize).clamp(1, p.seq_len);
    let mut r = rng::seeded(seed);
    let mut items = Vec::with_capacity(p.count);
    for i in 0..p.count {
        let label = i % p.classes;
        let mut x = Matrix::from_fn(p.dim, p.seq_len, |_, _| gaussian(&mut r));
        for t in index::sample(&mut r, p.seq_len, signal) {
            x.set(label, t, x.get(label, t) + p.snr);
        }
        items.push(LabeledSequence {
            features: x,
            label,
            group: i,
        });
    }
    let metadata = DatasetMetadata {
        generator: "noisy".into(),
        seed: Some(seed),
        params: serde_json::to_value(p).expect("plain struct"),
    };
    LabeledSequenceSet::new(items, p.classes, p.dim, metadata)
}

/// Items come in twin pairs sharing a group: class 0 shows symbol `a` for the
/// first half and `b` for the second; its twin (class 1) is the same matrix
/// with columns reversed.
pub fn gen_order_task(p: OrderTaskParams, seed: u64) -> Result<LabeledSequenceSet> {
    if p.seq_len == 0 || !p.seq_len.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "order task needs an even, positive sequence length, got {}",
            p.seq_len
        )));
    }
    if !p.count.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "order task items come in twin pairs; count must be even, got {}",
            p.count
        )));
    }
    if p.dim == 0 {
        return Err(Error::InvalidArgument("dim must be >= 1".into()));
    }
    let mut r = rng::seeded(seed);
    let a: Vec<f64> = (0..p.dim).map(|_| gaussian(&mut r)).collect();
    let b: Vec<f64> = (0..p.dim).map(|_| gaussian(&mut r)).collect();
    let half = p.seq_len / 2;
    let mut items = Vec::with_capacity(p.count);
    for pair in 0..p.count / 2 {
        let x = Matrix::from_fn(p.dim, p.seq_len, |f, t| {
            let centre = if t < half { a[f] } else { b[f] };
            centre + ORDER_NOISE * gaussian(&mut r)
        });
        let reversed: Vec<usize> = (0..p.seq_len).rev().collect();
        let twin = x.select_cols(&reversed);
        items.push(LabeledSequence {
            features: x,
            label: 0,
            group: pair,
        });
        items.push(LabeledSequence {
            features: twin,
            label: 1,
            group: pair,
        });
    }
    let metadata = DatasetMetadata {
        generator: "order".into(),
        seed: Some(seed),
        params: serde_json::to_value(p).expect("plain struct"),
    };
    LabeledSequenceSet::new(items, 2, p.dim, metadata)
}
