use log::debug;
use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::nn::{Mode, Model, NnError, ParamSet, Sgd};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// FedProx regularizer `(mu / 2) * ||theta - anchor||^2` over the trainable
/// tensors named in `anchor`.
#[derive(Debug, Clone)]
pub struct ProximalTerm<S> {
    pub mu: f64,
    pub anchor: ParamSet<S>,
}

/// Mini-batch SGD on `data` for `cfg.epochs` epochs, reshuffling each epoch
/// from a generator seeded with `cfg.seed`. Returns the trained copy in
/// train mode with advanced BN running statistics.
///
/// When the model has BN layers a trailing batch of one sample is skipped:
/// train-mode BN is undefined on a single sample.
pub fn train_local<S: Scalar>(
    model: &Model<S>,
    data: &Dataset<S>,
    cfg: &LocalTrainConfig,
    proximal: Option<&ProximalTerm<S>>,
) -> Result<Model<S>, NnError> {
    if cfg.epochs == 0 {
        return Err(NnError::ZeroEpochs);
    }
    if cfg.batch_size == 0 {
        return Err(NnError::ZeroBatchSize);
    }
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut model = model.clone();
    model.set_mode(Mode::Train);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let has_bn = model.num_bn_layers() > 0;
    let mut rng = stream_rng(cfg.seed, Stream::LocalTrain, &[]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mu: S = cast(proximal.map_or(0.0, |p| p.mu));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if has_bn && chunk.len() < 2 {
                continue;
            }
            let (x, y) = data.batch(chunk);
            let (loss, mut grads) = model.backward(&x, &y)?;
            if let Some(p) = proximal {
                for (name, g) in grads.iter_mut() {
                    if let Some(anchor) = p.anchor.get(name) {
                        let cur = model.tensor(name).expect("gradient names are model names");
                        for ((gv, &pv), &av) in g.data_mut().iter_mut().zip(cur.data()).zip(anchor.data()) {
                            *gv += mu * (pv - av);
                        }
                    }
                }
            }
            opt.step(&mut model, &grads)?;
            total += loss.to_f64_lossy();
            batches += 1;
        }
        debug!("epoch {epoch}: mean loss {:.6}", total / batches.max(1) as f64);
    }
    Ok(model)
}
