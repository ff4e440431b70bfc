//! K-fold assignment with an inner validation split per fold.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_VAL_FRACTION: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Test fold of every scan.
    pub assignments: BTreeMap<String, usize>,
    /// Per fold: scans taken out of the training folds for validation.
    pub inner_val: Vec<Vec<String>>,
    order: Vec<String>,
}

impl FoldPlan {
    pub fn test_ids(&self, fold: usize) -> Vec<String> {
        self.order
            .iter()
            .filter(|id| self.assignments[*id] == fold)
            .cloned()
            .collect()
    }

    pub fn val_ids(&self, fold: usize) -> Vec<String> {
        self.inner_val[fold].clone()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        let val: BTreeSet<&String> = self.inner_val[fold].iter().collect();
        self.order
            .iter()
            .filter(|id| self.assignments[*id] != fold && !val.contains(id))
            .cloned()
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        (0..self.k)
            .map(|f| self.assignments.values().filter(|&&v| v == f).count())
            .collect()
    }
}

/// Shuffles the ids with a seeded generator and deals them round-robin into
/// `k` folds. For every fold, `max(1, round(val_fraction · n_train))` of
/// the remaining scans are held out for validation.
pub fn make_folds(scan_ids: &[String], k: usize, val_fraction: f64, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if scan_ids.len() < k {
        return Err(Error::invalid(format!(
            "{} scans cannot fill {k} folds",
            scan_ids.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let unique: BTreeSet<&String> = scan_ids.iter().collect();
    if unique.len() != scan_ids.len() {
        return Err(Error::invalid("scan ids must be unique"));
    }
    let mut order = scan_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let assignments: BTreeMap<String, usize> = order.iter().enumerate().map(|(i, id)| (id.clone(), i % k)).collect();
    let inner_val = (0..k)
        .map(|f| {
            let mut pool: Vec<String> = order.iter().filter(|id| assignments[*id] != f).cloned().collect();
            let n = libm::round(val_fraction * pool.len() as f64) as usize;
            let n = n.clamp(1, pool.len() - 1);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(f as u64 + 1);
            pool.shuffle(&mut r);
            pool.truncate(n);
            pool
        })
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        assignments,
        inner_val,
        order,
    })
}
