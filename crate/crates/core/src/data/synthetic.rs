use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{cast, Scalar};

/// Gaussian class-cluster generator. Class `c` has mean
/// `separation * u_c` for a random unit vector `u_c` and isotropic noise
/// with standard deviation `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub width: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    /// Per-client affine feature shift, applied after partitioning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_shift: Option<FeatureShiftSpec>,
}

/// Client `k` gets `x -> a_k * x + b_k` with
/// `a_k ~ U(1 - max_scale_delta, 1 + max_scale_delta)` and
/// `b_k ~ U(-max_offset, max_offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureShiftSpec {
    pub max_scale_delta: f64,
    pub max_offset: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Spec(m.to_string()));
        if self.num_classes == 0 || self.channels == 0 || self.width == 0 || self.samples_per_class == 0 {
            return bad("classes, channels, width and samples_per_class must be positive");
        }
        if self.num_classes > u16::MAX as usize + 1 {
            return bad("at most 65536 classes");
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad("separation must be positive");
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad("noise must be positive");
        }
        if let Some(fs) = &self.feature_shift {
            if !(0.0..1.0).contains(&fs.max_scale_delta) || !(fs.max_offset >= 0.0) {
                return bad("feature shift needs 0 <= max_scale_delta < 1 and max_offset >= 0");
            }
        }
        Ok(())
    }
}

impl FeatureShiftSpec {
    /// `(scale, offset)` for client `client`.
    pub fn for_client(&self, seed: u64, client: usize) -> (f64, f64) {
        let mut rng = stream_rng(seed, Stream::FeatureShift, &[client as u64]);
        let a = 1.0 + self.max_scale_delta * rng.random_range(-1.0..=1.0);
        let b = self.max_offset * rng.random_range(-1.0..=1.0);
        (a, b)
    }
}

/// Class-major samples: all of class 0, then class 1, ...
pub fn make_synthetic<S: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<Dataset<S>, DataError> {
    spec.validate()?;
    let dim = spec.channels * spec.width;
    let mut rng = stream_rng(seed, Stream::Data, &[]);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| spec.separation * x / norm).collect()
        })
        .collect();
    let n = spec.num_classes * spec.samples_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(cast::<S>(m + spec.noise * z));
            }
            labels.push(c);
        }
    }
    Dataset::new(spec.channels, spec.width, features, labels, spec.num_classes)
}
