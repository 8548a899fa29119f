//! Seeded k-fold splits: one shuffle, then contiguous blocks.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Held-out row indices for each fold. Fold sizes differ by at most one.
pub fn fold_indices(len: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if len < folds {
        return Err(Error::invalid(format!(
            "{len} samples cannot be split into {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::seeded(seed));
    let base = len / folds;
    let extra = len % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// Complement of one fold within `0..len`, in increasing order.
pub fn training_rows(len: usize, held_out: &[usize]) -> Vec<usize> {
    let mut skip = vec![false; len];
    for &r in held_out {
        skip[r] = true;
    }
    (0..len).filter(|&r| !skip[r]).collect()
}
