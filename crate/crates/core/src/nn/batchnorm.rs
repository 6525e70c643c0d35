//! Batch normalization over the channel axis (axis 1) of `(B, C)` or
//! `(B, C, W)` activations.
//!
//! Training mode normalizes with the batch's own mean and population
//! variance and folds them into the running estimates with an exponential
//! moving average:
//!
//! ```text
//! running <- (1 - momentum) * running + momentum * batch_stat
//! ```
//!
//! Evaluation mode normalizes with the running estimates and never mutates
//! them.

use crate::nn::Tensor;
use crate::scalar::{cast, Scalar};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Learned affine parameters plus running statistics of one BN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: S,
    pub epsilon: S,
    /// Number of training batches folded into the running statistics.
    /// Zero means the running statistics are still at their initial values.
    pub num_batches_tracked: u64,
}

impl<S: Scalar> BatchNormState<S> {
    pub fn new(channels: usize, momentum: S, epsilon: S) -> Self {
        Self {
            gamma: Tensor::full(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], S::one()),
            momentum,
            epsilon,
            num_batches_tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_consistent(&self) -> bool {
        let c = self.channels();
        self.beta.len() == c
            && self.running_mean.len() == c
            && self.running_var.len() == c
            && self.running_var.data().iter().all(|&v| v >= S::zero())
    }
}

/// Per-channel view helpers for `(B, C)` / `(B, C, W)` layouts.
pub(crate) fn channel_geometry(shape: &[usize]) -> (usize, usize, usize) {
    let b = shape[0];
    let c = shape[1];
    let w = shape[2..].iter().product::<usize>().max(1);
    (b, c, w)
}

/// Per-channel mean and population variance over every non-channel axis.
pub(crate) fn channel_moments<S: Scalar>(x: &Tensor<S>) -> (Vec<S>, Vec<S>) {
    let (b, c, w) = channel_geometry(x.shape());
    let data = x.data();
    let count: S = cast((b * w) as f64);
    let mut mean = vec![S::zero(); c];
    for bi in 0..b {
        for (ci, m) in mean.iter_mut().enumerate() {
            let base = (bi * c + ci) * w;
            for &v in &data[base..base + w] {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![S::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * w;
            for &v in &data[base..base + w] {
                let d = v - mean[ci];
                var[ci] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= count;
    }
    (mean, var)
}

pub(crate) struct BnCache<S> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
}

/// Training-mode forward with batch statistics. Returns the output, the
/// backward cache and the batch `(mean, variance)` for [`update_running`].
pub(crate) fn forward_train<S: Scalar>(
    state: &BatchNormState<S>,
    x: &Tensor<S>,
) -> (Tensor<S>, BnCache<S>, (Vec<S>, Vec<S>)) {
    let (mean, var) = channel_moments(x);
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + state.epsilon).sqrt()).collect();
    let (xhat, y) = normalize(x, &mean, &inv_std, state);
    (y, BnCache { xhat, inv_std }, (mean, var))
}

/// Folds one batch's statistics into the running estimates.
pub(crate) fn update_running<S: Scalar>(state: &mut BatchNormState<S>, mean: &[S], var: &[S]) {
    let m = state.momentum;
    let keep = S::one() - m;
    for (r, &bm) in state.running_mean.data_mut().iter_mut().zip(mean) {
        *r = keep * *r + m * bm;
    }
    for (r, &bv) in state.running_var.data_mut().iter_mut().zip(var) {
        *r = keep * *r + m * bv;
    }
    state.num_batches_tracked += 1;
}

/// Evaluation-mode forward with the running statistics.
pub(crate) fn forward_eval<S: Scalar>(state: &BatchNormState<S>, x: &Tensor<S>) -> Tensor<S> {
    let inv_std: Vec<S> = state
        .running_var
        .data()
        .iter()
        .map(|&v| S::one() / (v + state.epsilon).sqrt())
        .collect();
    normalize(x, state.running_mean.data(), &inv_std, state).1
}

fn normalize<S: Scalar>(x: &Tensor<S>, mean: &[S], inv_std: &[S], state: &BatchNormState<S>) -> (Tensor<S>, Tensor<S>) {
    let (b, c, w) = channel_geometry(x.shape());
    let gamma = state.gamma.data();
    let beta = state.beta.data();
    let mut xhat = x.clone();
    let mut y = x.clone();
    let (xh, yd) = (xhat.data_mut(), y.data_mut());
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * w;
            for k in base..base + w {
                let n = (xh[k] - mean[ci]) * inv_std[ci];
                xh[k] = n;
                yd[k] = gamma[ci] * n + beta[ci];
            }
        }
    }
    (xhat, y)
}

/// Backward through a training-mode BN forward. Returns
/// `(d_input, d_gamma, d_beta)`.
pub(crate) fn backward<S: Scalar>(
    state: &BatchNormState<S>,
    cache: &BnCache<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (b, c, w) = channel_geometry(dy.shape());
    let count: S = cast((b * w) as f64);
    let xhat = cache.xhat.data();
    let dyd = dy.data();
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * w;
            for k in base..base + w {
                dgamma[ci] += dyd[k] * xhat[k];
                dbeta[ci] += dyd[k];
            }
        }
    }
    let gamma = state.gamma.data();
    let mut dx = dy.clone();
    let dxd = dx.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let scale = gamma[ci] * cache.inv_std[ci] / count;
            let base = (bi * c + ci) * w;
            for k in base..base + w {
                dxd[k] = scale * (count * dyd[k] - dbeta[ci] - xhat[k] * dgamma[ci]);
            }
        }
    }
    (
        dx,
        Tensor::new(vec![c], dgamma).expect("channel count is positive"),
        Tensor::new(vec![c], dbeta).expect("channel count is positive"),
    )
}
