//! Deterministic minibatch schedules.

use rand::seq::SliceRandom;

use crate::rng::{rng_for, Rng};

/// Number of steps that covers `n` samples at `batch` per step.
pub fn steps_for(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// Shuffled `0..n`.
pub fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// `steps` batches of exactly `batch` indices each, walking `order`
/// cyclically so a short set wraps around instead of producing a ragged
/// tail batch.
pub fn cycled_batches(order: &[usize], batch: usize, steps: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    (0..steps)
        .map(|s| (0..batch).map(|j| order[(s * batch + j) % n]).collect())
        .collect()
}

/// Batches for one pass over a single set.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, tag: &str) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, tag);
    let order = permutation(n, &mut rng);
    cycled_batches(&order, batch, steps_for(n, batch))
}

/// Paired labeled/unlabeled batches for one distillation epoch: as many
/// steps as the larger set needs, the smaller set cycling.
pub fn paired_batches(
    n_labeled: usize,
    n_unlabeled: usize,
    batch: usize,
    seed: u64,
    tag: &str,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng_for(seed, tag);
    let l_order = permutation(n_labeled, &mut rng);
    let u_order = permutation(n_unlabeled, &mut rng);
    let steps = steps_for(n_labeled.max(n_unlabeled), batch);
    cycled_batches(&l_order, batch, steps)
        .into_iter()
        .zip(cycled_batches(&u_order, batch, steps))
        .collect()
}
