use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numeric::rng::{stream, Purpose};

fn by_class(labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} out of range 0..{num_classes}")));
        }
        out[l].push(i);
    }
    Ok(out)
}

/// Per class, shuffles that class's indices and sends the first
/// `round(test_fraction * n_c)` to the test side. Both sides come back sorted.
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in by_class(labels, num_classes)?.into_iter().enumerate() {
        idx.shuffle(&mut stream(seed, Purpose::Split, &[c as u64]));
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified k-fold assignment over `members` (indices into `labels`).
///
/// Each class's members are shuffled and dealt round-robin; the dealing
/// position carries over from one class to the next so fold sizes stay
/// within one of each other. Folds come back sorted. Every fold must end up
/// with at least two classes.
pub fn stratified_folds(
    members: &[usize],
    labels: &[usize],
    num_classes: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if members.len() < k * num_classes {
        return Err(Error::invalid(format!(
            "{} samples are too few for {k} folds of {num_classes} classes",
            members.len()
        )));
    }
    let member_labels: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
    let classes = by_class(&member_labels, num_classes)?;
    let mut folds = vec![Vec::new(); k];
    let mut deal = 0;
    for (c, mut pos) in classes.into_iter().enumerate() {
        pos.shuffle(&mut stream(seed, Purpose::Folds, &[c as u64]));
        for p in pos {
            folds[deal % k].push(members[p]);
            deal += 1;
        }
    }
    for (f, fold) in folds.iter_mut().enumerate() {
        fold.sort_unstable();
        let mut seen = vec![false; num_classes];
        for &i in fold.iter() {
            seen[labels[i]] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::invalid(format!("fold {f} contains a single class")));
        }
    }
    Ok(folds)
}
