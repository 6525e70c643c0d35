use std::time::Instant;

use log::info;
use rayon::prelude::*;

use crate::data::ClientSplit;
use crate::federation::params::{aggregate, average, layers_below, partition_params};
use crate::federation::{build_weight_matrix, Ablation, FedError, Strategy, Transport, WeightMatrix};
use crate::harness::metrics::{evaluate, MetricsRecord, Phase};
use crate::nn::{train_local, LocalTrainConfig, Model, ParamSet, ProximalTerm};
use crate::rng::{derive_seed, Stream};
use crate::scalar::Scalar;
use crate::stats::{collect_bn_input_stats, collect_feature_stats, distance_matrix, extract_bn_running_stats};

/// Local optimization settings shared by every client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    /// Zero skips local training, which leaves aggregation alone to act.
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

/// Server-side step chosen for a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Aggregation {
    None,
    AverageAll,
    AverageNonBn,
    AverageBelow(usize),
    Weighted { share_bn: bool },
}

pub struct FederationState<S> {
    /// Number of completed rounds.
    pub round: usize,
    pub models: Vec<Model<S>>,
    pub splits: Vec<ClientSplit<S>>,
    pub strategy: Strategy,
    pub ablation: Ablation,
    pub train: TrainSettings,
    pub seed: u64,
    /// Train clients on the rayon pool. Results do not depend on it.
    pub parallel: bool,
    /// Fixed once set.
    pub weights: Option<WeightMatrix>,
    pub log: Vec<MetricsRecord>,
    transport: Transport,
}

impl<S: Scalar> FederationState<S> {
    pub fn new(
        models: Vec<Model<S>>,
        splits: Vec<ClientSplit<S>>,
        strategy: Strategy,
        ablation: Ablation,
        train: TrainSettings,
        seed: u64,
    ) -> Result<Self, FedError> {
        let n = models.len();
        if n == 0 {
            return Err(FedError::ClientCount(0));
        }
        if splits.len() != n {
            return Err(FedError::SplitCount {
                models: n,
                splits: splits.len(),
            });
        }
        if let Some(i) = models.iter().position(|m| !m.same_architecture(&models[0])) {
            return Err(FedError::Architecture(i));
        }
        if ablation.is_active() && !strategy.is_weighted() {
            return Err(FedError::Ablation(strategy.tag()));
        }
        if let Strategy::FedPer { cut: Some(cut) } = strategy {
            if cut == 0 || cut >= models[0].specs().len() {
                return Err(FedError::Cut(cut));
            }
        }
        Ok(Self {
            round: 0,
            transport: Transport::new(n),
            models,
            splits,
            strategy,
            ablation,
            train,
            seed,
            parallel: true,
            weights: None,
            log: Vec::new(),
        })
    }

    pub fn clients(&self) -> usize {
        self.models.len()
    }

    fn in_warm_up(&self) -> bool {
        matches!(self.strategy, Strategy::WeightedRunning { .. }) && self.weights.is_none()
    }

    fn aggregation(&self) -> Aggregation {
        match self.strategy {
            Strategy::Base {} => Aggregation::None,
            Strategy::FedAvg {} | Strategy::FedProx { .. } => Aggregation::AverageAll,
            Strategy::FedBn {} => Aggregation::AverageNonBn,
            Strategy::FedPer { cut } => Aggregation::AverageBelow(cut.unwrap_or(self.models[0].specs().len() - 1)),
            _ if self.in_warm_up() => Aggregation::AverageNonBn,
            _ => Aggregation::Weighted {
                share_bn: self.ablation.share_bn,
            },
        }
    }

    /// Computes the similarity matrix. Clients push statistics over their
    /// train splits; the running-statistics strategy first runs its FedBN
    /// warm-up rounds, which are logged like any other round.
    pub fn setup_weights(&mut self, pretrained: Option<&Model<S>>) -> Result<&WeightMatrix, FedError> {
        let lambda = self
            .strategy
            .lambda()
            .ok_or(FedError::NotWeighted(self.strategy.tag()))?;
        let n = self.clients();
        if self.ablation.uniform_weights {
            return Ok(self.weights.insert(WeightMatrix::uniform(n)?));
        }
        let up = self.transport.uplink();
        match self.strategy {
            Strategy::WeightedBn { .. } | Strategy::WeightedFeature { .. } => {
                let model = pretrained.ok_or(FedError::MissingPretrained)?;
                let feature = matches!(self.strategy, Strategy::WeightedFeature { .. });
                for (i, split) in self.splits.iter().enumerate() {
                    let stats = if feature {
                        collect_feature_stats(model, &split.train, self.train.batch_size)?
                    } else {
                        collect_bn_input_stats(model, &split.train, self.train.batch_size)?
                    };
                    up.push_stats(i, &stats)?;
                }
            }
            Strategy::WeightedRunning { warm_up_rounds, .. } => {
                if warm_up_rounds == 0 {
                    return Err(FedError::WarmUpRounds);
                }
                self.weights = None;
                for _ in 0..warm_up_rounds {
                    self.run_round()?;
                }
                for (i, m) in self.models.iter().enumerate() {
                    up.push_stats(i, &extract_bn_running_stats(m)?)?;
                }
            }
            _ => unreachable!("weighted strategy"),
        }
        let stats = self.transport.gather_stats::<S>()?;
        let d = distance_matrix(&stats)?;
        let w = build_weight_matrix(&d, lambda)?;
        info!("similarity weights ready for {n} clients");
        Ok(self.weights.insert(w))
    }

    /// Local training on every client, each pushing its model to the server.
    pub fn local_update(&mut self) -> Result<(), FedError> {
        let up = self.transport.uplink();
        let prox_mu = match self.strategy {
            Strategy::FedProx { mu } => Some(mu),
            _ => None,
        };
        let work = |i: usize| -> Result<(), FedError> {
            let model = &self.models[i];
            if self.train.epochs == 0 {
                return up.push_model(i, model);
            }
            let cfg = LocalTrainConfig {
                epochs: self.train.epochs,
                lr: self.train.lr,
                momentum: self.train.momentum,
                batch_size: self.train.batch_size,
                seed: derive_seed(self.seed, Stream::LocalTrain, &[i as u64, self.round as u64]),
            };
            let prox = prox_mu.map(|mu| ProximalTerm {
                mu,
                anchor: trainable(model),
            });
            let trained = train_local(model, &self.splits[i].train, &cfg, prox.as_ref())?;
            up.push_model(i, &trained)
        };
        if self.parallel {
            (0..self.clients()).into_par_iter().try_for_each(work)?;
        } else {
            (0..self.clients()).try_for_each(work)?;
        }
        self.models = self.transport.gather_models()?;
        Ok(())
    }

    /// Server aggregation followed by distribution back to the clients.
    pub fn aggregate_step(&mut self) -> Result<(), FedError> {
        let shared: Vec<ParamSet<S>> = match self.aggregation() {
            Aggregation::None => return Ok(()),
            Aggregation::AverageAll => {
                let avg = average(&self.models.iter().map(Model::state_dict).collect::<Vec<_>>())?;
                vec![avg; self.clients()]
            }
            Aggregation::AverageNonBn => {
                let avg = average(&self.models.iter().map(|m| partition_params(m).1).collect::<Vec<_>>())?;
                vec![avg; self.clients()]
            }
            Aggregation::AverageBelow(cut) => {
                let avg = average(&self.models.iter().map(|m| layers_below(m, cut)).collect::<Vec<_>>())?;
                vec![avg; self.clients()]
            }
            Aggregation::Weighted { share_bn } => {
                let w = self.weights.as_ref().ok_or(FedError::MissingWeights)?;
                let sets: Vec<ParamSet<S>> = self
                    .models
                    .iter()
                    .map(|m| {
                        if share_bn {
                            m.state_dict()
                        } else {
                            partition_params(m).1
                        }
                    })
                    .collect();
                aggregate(&sets, w)?
            }
        };
        for (i, (model, params)) in self.models.iter_mut().zip(&shared).enumerate() {
            model.load_params(params)?;
            self.transport.distribute(i, model)?;
        }
        for i in 0..self.models.len() {
            self.models[i] = self.transport.receive(i)?;
        }
        Ok(())
    }

    /// One round: local training, aggregation, then evaluation of every
    /// client on its own test split.
    pub fn run_round(&mut self) -> Result<&MetricsRecord, FedError> {
        let start = Instant::now();
        let phase = if self.in_warm_up() {
            Phase::WarmUp
        } else {
            Phase::Federated
        };
        self.local_update()?;
        self.aggregate_step()?;
        let mut rec = evaluate(&self.models, &self.splits, self.train.batch_size, self.round, phase)?;
        rec.wall_clock_ms = start.elapsed().as_millis() as u64;
        info!(
            "round {} ({}) avg accuracy {:.4}",
            self.round,
            self.strategy.tag(),
            rec.avg_accuracy
        );
        self.round += 1;
        self.log.push(rec);
        Ok(self.log.last().expect("just pushed"))
    }
}

fn trainable<S: Scalar>(model: &Model<S>) -> ParamSet<S> {
    model
        .trainable_names()
        .into_iter()
        .map(|n| {
            let t = model.tensor(&n).expect("trainable name").clone();
            (n, t)
        })
        .collect()
}
