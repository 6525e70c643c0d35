//! Label-skewed client allocation.
//!
//! For every class `c` a share vector `p_c ~ Dirichlet(alpha * 1_N)` is
//! drawn, and each sample of class `c` is sent to client `k` with
//! probability `p_c[k]`, so per-class client counts are
//! `Multinomial(n_c, p_c)`. If some client ends up with fewer than the
//! required minimum (one sample by default) the whole set of share vectors
//! is redrawn; after a bounded number of redraws the largest clients donate
//! samples to the short ones.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Gamma, StandardUniform};

use crate::data::DataError;
use crate::rng::{stream_rng, Stream};

const MAX_REDRAWS: usize = 1000;

/// Draws one `Dirichlet(alpha, ..., alpha)` vector of length `n`.
///
/// Sampling happens in log space (`G = Gamma(alpha + 1) * U^(1/alpha)` for
/// `alpha < 1`) so tiny concentrations never underflow to an all-zero
/// vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let (shape, boost) = if alpha < 1.0 {
        (alpha + 1.0, true)
    } else {
        (alpha, false)
    };
    let gamma = Gamma::new(shape, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let mut l = g.max(f64::MIN_POSITIVE).ln();
            if boost {
                let u: f64 = StandardUniform.sample(rng);
                l += u.max(f64::MIN_POSITIVE).ln() / alpha;
            }
            l
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Splits sample indices `0..labels.len()` across `clients` clients. Each
/// returned list is sorted and non-empty; together they partition the
/// index set.
pub fn dirichlet_partition(
    labels: &[usize],
    clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    dirichlet_partition_min(labels, clients, alpha, 1, seed)
}

/// [`dirichlet_partition`] with every client holding at least
/// `min_samples` samples.
pub fn dirichlet_partition_min(
    labels: &[usize],
    clients: usize,
    alpha: f64,
    min_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    let min_samples = min_samples.max(1);
    if clients < 2 {
        return Err(DataError::ClientCount(clients));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DataError::Alpha(alpha));
    }
    if clients * min_samples > labels.len() {
        return Err(DataError::TooFewSamples {
            clients,
            samples: labels.len(),
        });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut rng = stream_rng(seed, Stream::Partition, &[]);
    let mut parts = vec![Vec::new(); clients];
    for _ in 0..MAX_REDRAWS {
        parts.iter_mut().for_each(Vec::clear);
        for idx in &by_class {
            if idx.is_empty() {
                continue;
            }
            let p = sample_dirichlet(alpha, clients, &mut rng);
            let pick = WeightedIndex::new(&p).expect("shares sum to one");
            for &i in idx {
                parts[pick.sample(&mut rng)].push(i);
            }
        }
        if parts.iter().all(|p| p.len() >= min_samples) {
            break;
        }
    }
    while let Some(empty) = parts.iter().position(|p| p.len() < min_samples) {
        let donor = (0..clients)
            .max_by_key(|&k| (parts[k].len(), std::cmp::Reverse(k)))
            .expect("clients >= 2");
        let moved = parts[donor].pop().expect("donor has samples");
        parts[empty].push(moved);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}
