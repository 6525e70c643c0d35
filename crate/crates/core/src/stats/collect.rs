use crate::data::Dataset;
use crate::nn::batchnorm::channel_geometry;
use crate::nn::{Model, Tap, Tensor};
use crate::scalar::{cast, Scalar};
use crate::stats::{ClientStats, LayerGaussian, StatsError, StatsVariant};

/// Per-channel mean and population variance of every BN layer's input,
/// with the model in eval mode and every sample of `data` fed through it.
/// The statistics are over all samples and positions, so they do not
/// depend on `batch_size`.
pub fn collect_bn_input_stats<S: Scalar>(
    model: &Model<S>,
    data: &Dataset<S>,
    batch_size: usize,
) -> Result<ClientStats<S>, StatsError> {
    let n = model.num_bn_layers();
    if n == 0 {
        return Err(StatsError::NoBnLayers);
    }
    let taps: Vec<Tap> = (0..n).map(Tap::BnInput).collect();
    Ok(ClientStats {
        variant: StatsVariant::BnLayers,
        layers: collect_taps(model, data, batch_size, &taps)?,
    })
}

/// Same as [`collect_bn_input_stats`] at the classifier input.
pub fn collect_feature_stats<S: Scalar>(
    model: &Model<S>,
    data: &Dataset<S>,
    batch_size: usize,
) -> Result<ClientStats<S>, StatsError> {
    Ok(ClientStats {
        variant: StatsVariant::DomainFeatures,
        layers: collect_taps(model, data, batch_size, &[Tap::ClassifierInput])?,
    })
}

/// The BN layers' own running mean and variance.
pub fn extract_bn_running_stats<S: Scalar>(model: &Model<S>) -> Result<ClientStats<S>, StatsError> {
    if model.num_bn_layers() == 0 {
        return Err(StatsError::NoBnLayers);
    }
    let layers = model
        .bn_states()
        .enumerate()
        .map(|(l, st)| {
            if st.num_batches_tracked == 0 {
                return Err(StatsError::UntrackedBn(l));
            }
            Ok(LayerGaussian {
                mean: st.running_mean.data().to_vec(),
                var: st.running_var.data().to_vec(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ClientStats {
        variant: StatsVariant::BnRunning,
        layers,
    })
}

/// Two passes: channel sums, then squared deviations from the mean.
fn collect_taps<S: Scalar>(
    model: &Model<S>,
    data: &Dataset<S>,
    batch_size: usize,
    taps: &[Tap],
) -> Result<Vec<LayerGaussian<S>>, StatsError> {
    if data.is_empty() {
        return Err(StatsError::EmptyData);
    }
    let batch_size = batch_size.max(1);
    let mut sums: Vec<Vec<S>> = Vec::new();
    let mut counts = vec![0usize; taps.len()];
    for (x, _) in data.batches(batch_size) {
        let out = model.forward_eval(&x, taps)?;
        for (k, tap) in taps.iter().enumerate() {
            let t = &out.taps[tap];
            let (_, c, w) = channel_geometry(t.shape());
            if sums.len() <= k {
                sums.push(vec![S::zero(); c]);
            }
            for_each_channel(t, |ci, v| sums[k][ci] += v);
            counts[k] += t.rows() * w;
        }
    }
    let means: Vec<Vec<S>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / cast::<S>(n as f64)).collect())
        .collect();
    let mut sq: Vec<Vec<S>> = means.iter().map(|m| vec![S::zero(); m.len()]).collect();
    for (x, _) in data.batches(batch_size) {
        let out = model.forward_eval(&x, taps)?;
        for (k, tap) in taps.iter().enumerate() {
            let mean = &means[k];
            let acc = &mut sq[k];
            for_each_channel(&out.taps[tap], |ci, v| {
                let d = v - mean[ci];
                acc[ci] += d * d;
            });
        }
    }
    Ok(means
        .into_iter()
        .zip(sq)
        .zip(&counts)
        .map(|((mean, sq), &n)| LayerGaussian {
            mean,
            var: sq.into_iter().map(|v| v / cast::<S>(n as f64)).collect(),
        })
        .collect())
}

fn for_each_channel<S: Scalar>(t: &Tensor<S>, mut f: impl FnMut(usize, S)) {
    let (b, c, w) = channel_geometry(t.shape());
    let d = t.data();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * w;
            for &v in &d[base..base + w] {
                f(ci, v);
            }
        }
    }
}
