use log::warn;
use rand::seq::SliceRandom;

use crate::data::{DataError, Dataset};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct TrainTestSplit<S> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
    /// Classes with a single sample; that sample went to `train`.
    pub singleton_classes: Vec<usize>,
}

/// Class-stratified train/test split.
///
/// Each class with `n_c >= 2` samples sends between 1 and `n_c - 1` of them
/// to train, within one sample of `fraction * n_c`; the rounding remainders
/// are distributed so the overall train size is `round(fraction * n)` when
/// the per-class bounds allow it.
pub fn split_train_test<S: Scalar>(
    data: &Dataset<S>,
    fraction: f64,
    seed: u64,
) -> Result<TrainTestSplit<S>, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Fraction(fraction));
    }
    let mut by_class = vec![Vec::new(); data.num_classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut take = vec![0usize; by_class.len()];
    let mut singleton_classes = Vec::new();
    let mut remainders = Vec::new();
    for (c, idx) in by_class.iter().enumerate() {
        let n = idx.len();
        match n {
            0 => {}
            1 => {
                take[c] = 1;
                singleton_classes.push(c);
            }
            _ => {
                let exact = fraction * n as f64;
                take[c] = (exact.floor() as usize).clamp(1, n - 1);
                remainders.push((exact - exact.floor(), c));
            }
        }
    }
    let target = (fraction * data.len() as f64).round() as usize;
    let mut missing = target.saturating_sub(take.iter().sum());
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(rem, c) in &remainders {
        if missing == 0 {
            break;
        }
        let n = by_class[c].len();
        if rem > 0.0 && take[c] < n - 1 && (take[c] as f64) < fraction * n as f64 {
            take[c] += 1;
            missing -= 1;
        }
    }
    for &c in &singleton_classes {
        warn!("class {c} has a single sample; it is kept in the train split");
    }

    let mut rng = stream_rng(seed, Stream::Split, &[]);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        train_idx.extend_from_slice(&idx[..take[c]]);
        test_idx.extend_from_slice(&idx[take[c]..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(DataError::EmptySplitSide {
            train: train_idx.len(),
            test: test_idx.len(),
        });
    }
    Ok(TrainTestSplit {
        train: data.subset(&train_idx),
        test: data.subset(&test_idx),
        singleton_classes,
    })
}
