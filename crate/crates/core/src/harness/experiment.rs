use log::{debug, info};

use crate::data::{dirichlet_partition_min, load_dataset, make_synthetic, split_train_test, ClientSplit, Dataset};
use crate::federation::{FederationState, TrainSettings, WeightMatrix};
use crate::harness::config::{DataSource, ExperimentConfig};
use crate::harness::metrics::MetricsRecord;
use crate::harness::HarnessError;
use crate::nn::{train_local, LayerSpec, LocalTrainConfig, Mode, Model};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scalar::{cast, Scalar};

/// Everything a run needs before its first round.
pub struct Setup<S> {
    pub config: ExperimentConfig,
    pub state: FederationState<S>,
    /// Held-out pool the statistics model is trained on.
    pub pool: Option<Dataset<S>>,
    pub pretrained: Option<Model<S>>,
}

pub struct ExperimentResult<S> {
    pub config: ExperimentConfig,
    pub log: Vec<MetricsRecord>,
    pub weights: Option<WeightMatrix>,
    pub models: Vec<Model<S>>,
    pub pretrained: Option<Model<S>>,
}

impl<S> ExperimentResult<S> {
    pub fn final_record(&self) -> Option<&MetricsRecord> {
        self.log.last()
    }

    pub fn avg_accuracy_curve(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.avg_accuracy).collect()
    }
}

pub fn load_source<S: Scalar>(source: &DataSource, seed: u64) -> Result<Dataset<S>, HarnessError> {
    Ok(match source {
        DataSource::Synthetic(spec) => make_synthetic(spec, seed)?,
        DataSource::File { path, .. } => load_dataset(path)?,
    })
}

pub fn model_specs(cfg: &ExperimentConfig, data: &Dataset<impl Scalar>) -> Vec<LayerSpec> {
    cfg.model.layer_specs(data.channels(), data.width(), data.num_classes())
}

/// Removes the pretrain pool, partitions the rest across clients, applies
/// any per-client feature shift and splits each client train/test.
pub fn client_splits<S: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset<S>,
) -> Result<(Vec<ClientSplit<S>>, Option<Dataset<S>>), HarnessError> {
    let seed = cfg.seed()?;
    let (pool, rest) = if cfg.pretrain_fraction > 0.0 {
        let s = split_train_test(
            data,
            cfg.pretrain_fraction,
            derive_seed(seed, Stream::PretrainPool, &[]),
        )?;
        (Some(s.train), s.test)
    } else {
        (None, data.clone())
    };
    let parts = if cfg.clients == 1 {
        vec![(0..rest.len()).collect()]
    } else {
        dirichlet_partition_min(rest.labels(), cfg.clients, cfg.alpha, cfg.min_client_samples, seed)?
    };
    let mut splits = Vec::with_capacity(parts.len());
    for (client, idx) in parts.iter().enumerate() {
        let mut local = rest.subset(idx);
        if let Some(fs) = cfg.data.feature_shift() {
            let (a, b) = fs.for_client(seed, client);
            local.apply_affine(cast(a), cast(b));
        }
        let s = split_train_test(
            &local,
            cfg.train_fraction,
            derive_seed(seed, Stream::Split, &[client as u64]),
        )
        .map_err(|source| HarnessError::ClientData { client, source })?;
        debug!(
            "client {client}: {} train, {} test samples",
            s.train.len(),
            s.test.len()
        );
        splits.push(ClientSplit {
            train: s.train,
            test: s.test,
        });
    }
    Ok((splits, pool))
}

/// Trains the statistics model on the pool from its own seeded init.
pub fn pretrain<S: Scalar>(
    cfg: &ExperimentConfig,
    pool: &Dataset<S>,
    specs: &[LayerSpec],
) -> Result<Model<S>, HarnessError> {
    let seed = cfg.seed()?;
    let init = Model::new(
        &pool.sample_shape(),
        specs.to_vec(),
        cfg.bn.into(),
        &mut stream_rng(seed, Stream::Pretrain, &[0]),
    )?;
    let train = LocalTrainConfig {
        epochs: cfg.pretrain_epochs,
        lr: cfg.training.lr,
        momentum: cfg.training.momentum,
        batch_size: cfg.training.batch_size,
        seed: derive_seed(seed, Stream::Pretrain, &[1]),
    };
    let mut model = train_local(&init, pool, &train, None)?;
    model.set_mode(Mode::Eval);
    Ok(model)
}

/// Builds the data, the identical initial client models and, when the
/// strategy needs one, the pretrained statistics model (unless supplied).
pub fn setup_experiment<S: Scalar>(
    cfg: &ExperimentConfig,
    pretrained: Option<Model<S>>,
) -> Result<Setup<S>, HarnessError> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let data: Dataset<S> = load_source(&cfg.data, seed)?;
    let specs = model_specs(cfg, &data);
    let (splits, pool) = client_splits(cfg, &data)?;
    let init = Model::new(
        &data.sample_shape(),
        specs.clone(),
        cfg.bn.into(),
        &mut stream_rng(seed, Stream::Init, &[]),
    )?;
    let pretrained = match pretrained {
        Some(m) => {
            if !m.same_architecture(&init) {
                return Err(HarnessError::PretrainedArchitecture);
            }
            Some(m)
        }
        None if cfg.strategy.needs_pretrained() && !cfg.ablation.uniform_weights => {
            let pool = pool.as_ref().expect("validated: pretrain pool exists");
            info!("pretraining on {} pooled samples", pool.len());
            Some(pretrain(cfg, pool, &specs)?)
        }
        None => None,
    };
    let mut state = FederationState::new(
        vec![init; splits.len()],
        splits,
        cfg.strategy,
        cfg.ablation,
        TrainSettings {
            epochs: cfg.training.epochs,
            lr: cfg.training.lr,
            momentum: cfg.training.momentum,
            batch_size: cfg.training.batch_size,
        },
        seed,
    )?;
    state.parallel = cfg.parallel;
    Ok(Setup {
        config: cfg.clone(),
        state,
        pool,
        pretrained,
    })
}

/// Setup, similarity weights, then rounds until `max_rounds` (warm-up
/// rounds included).
pub fn run_experiment<S: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentResult<S>, HarnessError> {
    run_experiment_with(cfg, None)
}

pub fn run_experiment_with<S: Scalar>(
    cfg: &ExperimentConfig,
    pretrained: Option<Model<S>>,
) -> Result<ExperimentResult<S>, HarnessError> {
    let Setup {
        config,
        mut state,
        pretrained,
        ..
    } = setup_experiment(cfg, pretrained)?;
    if config.strategy.is_weighted() {
        state.setup_weights(pretrained.as_ref())?;
    }
    while state.round < config.max_rounds {
        state.run_round()?;
    }
    Ok(ExperimentResult {
        config,
        log: state.log,
        weights: state.weights,
        models: state.models,
        pretrained,
    })
}
