use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SPLIT_STREAM: u64 = 3;

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// `(train, test)` index pairs. Test partitions are disjoint, cover
/// `0..n`, and differ in size by at most one.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::invalid(format!("{n} samples cannot fill {folds} folds")));
    }
    let order = shuffled(n, seed);
    let (base, extra) = (n / folds, n % folds);
    let mut bounds = Vec::with_capacity(folds + 1);
    bounds.push(0);
    for f in 0..folds {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    Ok((0..folds)
        .map(|f| {
            let test = order[bounds[f]..bounds[f + 1]].to_vec();
            let train = order[..bounds[f]]
                .iter()
                .chain(&order[bounds[f + 1]..])
                .copied()
                .collect();
            (train, test)
        })
        .collect())
}

/// Stratified few-shot split: `ceil(train_fraction * count)` training
/// samples per class, then `round(test_fraction * n)` test samples drawn
/// from the shuffled remainder.
pub fn fewshot_split(
    labels: &[usize],
    num_classes: usize,
    train_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && test_fraction >= 0.0 && train_fraction + test_fraction <= 1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "invalid fractions: train {train_fraction}, test {test_fraction}"
        )));
    }
    let order = shuffled(labels.len(), seed);
    let mut by_class = vec![Vec::new(); num_classes];
    for &i in &order {
        let l = labels[i];
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} out of range for {num_classes} classes")));
        }
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("class {c} has no samples")));
    }
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for members in &by_class {
        let take = ((train_fraction * members.len() as f64).ceil() as usize).min(members.len());
        train.extend_from_slice(&members[..take]);
        rest.extend_from_slice(&members[take..]);
    }
    // restore the global shuffle order for the remainder
    let mut position = vec![0; labels.len()];
    for (p, &i) in order.iter().enumerate() {
        position[i] = p;
    }
    rest.sort_by_key(|&i| position[i]);
    let want = (test_fraction * labels.len() as f64).round() as usize;
    rest.truncate(want);
    Ok((train, rest))
}
