//! Group-aware, label-stratified partitions.
//!
//! Items sharing a group id always land on the same side. Groups are bucketed
//! by their sorted label list, each bucket is shuffled, then dealt out.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::LabeledSequenceSet;
use crate::error::{Error, Result};
use crate::rng;

/// `(train indices, validation indices)`, both ascending.
pub type Split = (Vec<usize>, Vec<usize>);

fn shuffled_buckets(set: &LabeledSequenceSet, seed: u64) -> Vec<Vec<Vec<usize>>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in set.items.iter().enumerate() {
        groups.entry(item.group).or_default().push(i);
    }
    let mut buckets: BTreeMap<Vec<usize>, Vec<Vec<usize>>> = BTreeMap::new();
    for members in groups.into_values() {
        let mut signature: Vec<usize> = members.iter().map(|&i| set.items[i].label).collect();
        signature.sort_unstable();
        buckets.entry(signature).or_default().push(members);
    }
    let mut r = rng::seeded(seed);
    buckets
        .into_values()
        .map(|mut b| {
            b.shuffle(&mut r);
            b
        })
        .collect()
}

fn complement(n: usize, mut held: Vec<usize>) -> Split {
    held.sort_unstable();
    let mut mask = vec![false; n];
    for &i in &held {
        mask[i] = true;
    }
    ((0..n).filter(|i| !mask[*i]).collect(), held)
}

/// Disjoint, exhaustive folds; fold `f`'s validation part is the `f`-th share.
pub fn kfold(set: &LabeledSequenceSet, folds: usize, seed: u64) -> Result<Vec<Split>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let groups: std::collections::BTreeSet<usize> = set.items.iter().map(|i| i.group).collect();
    if folds > groups.len() {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds exceed the {} independent item groups",
            groups.len()
        )));
    }
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); folds];
    let mut next = 0;
    for bucket in shuffled_buckets(set, seed) {
        for members in bucket {
            held[next % folds].extend(members);
            next += 1;
        }
    }
    Ok(held.into_iter().map(|h| complement(set.len(), h)).collect())
}

/// Holds out roughly `test_fraction` of every label bucket.
pub fn holdout_split(set: &LabeledSequenceSet, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut held = Vec::new();
    for bucket in shuffled_buckets(set, seed) {
        let take = (test_fraction * bucket.len() as f64).round() as usize;
        for members in bucket.into_iter().take(take) {
            held.extend(members);
        }
    }
    let (train, test) = complement(set.len(), held);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} leaves an empty partition"
        )));
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_noisy_timestamps, gen_order_task, NoisyTaskParams, OrderTaskParams};

    fn noisy(count: usize) -> LabeledSequenceSet {
        gen_noisy_timestamps(
            NoisyTaskParams {
                classes: 3,
                dim: 3,
                seq_len: 2,
                signal_fraction: 0.5,
                snr: 1.0,
                count,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn folds_partition_and_stratify() {
        let set = noisy(30);
        let splits = kfold(&set, 5, 3).unwrap();
        let mut seen = [0; 30];
        for (train, val) in &splits {
            assert_eq!(train.len() + val.len(), 30);
            for &i in val {
                seen[i] += 1;
                assert!(!train.contains(&i));
            }
            for c in 0..3 {
                assert_eq!(val.iter().filter(|&&i| set.items[i].label == c).count(), 2);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert_eq!(splits, kfold(&set, 5, 3).unwrap());
        assert_ne!(splits, kfold(&set, 5, 4).unwrap());
    }

    #[test]
    fn twins_stay_together() {
        let set = gen_order_task(OrderTaskParams { dim: 2, seq_len: 4, count: 40 }, 11).unwrap();
        let (train, test) = holdout_split(&set, 0.2, 0).unwrap();
        assert_eq!(test.len(), 8);
        for &i in &test {
            assert!(test.contains(&(i ^ 1)));
        }
        assert_eq!(train.len(), 32);
    }

    #[test]
    fn too_many_folds() {
        assert!(kfold(&noisy(4), 5, 0).is_err());
        assert!(kfold(&noisy(4), 1, 0).is_err());
    }
}
