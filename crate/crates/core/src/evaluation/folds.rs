use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Held-out indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    /// `[negatives, positives]` per fold.
    pub tallies: Vec<[usize; 2]>,
}

impl FoldPlan {
    /// Every index outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stratified split: the positives, then the negatives, each shuffled with a
/// seeded ChaCha8 stream, are dealt round-robin onto the folds. The dealing
/// position carries over from one class to the next, so fold sizes as well as
/// per-class counts differ by at most one. A class with fewer than `k`
/// members leaves some folds without it.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Validation(format!("k must be >= 2, got {k}")));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Validation(format!("label {i} is {}, expected 0 or 1", labels[i])));
    }
    if labels.len() < k {
        return Err(Error::Validation(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut tallies = vec![[0usize; 2]; k];
    let mut next = 0;
    for class in [1u8, 0] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::Validation(format!("no samples of class {class}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(class));
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            tallies[next % k][class as usize] += 1;
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, folds, tallies })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leave_one_out_when_k_equals_n() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let plan = stratified_kfold(&labels, 10, 3).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
        assert!(stratified_kfold(&labels, 11, 3).is_err());
    }
}
