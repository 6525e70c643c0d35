use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FeatureShiftSpec, SyntheticSpec};
use crate::federation::{Ablation, Strategy};
use crate::harness::HarnessError;
use crate::nn::{BnConfig, LayerSpec};

fn default_train_fraction() -> f64 {
    0.5
}
fn default_min_client_samples() -> usize {
    1
}
fn default_pretrain_fraction() -> f64 {
    0.2
}
fn default_pretrain_epochs() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_epochs() -> usize {
    1
}
fn default_lr() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    32
}
fn default_bn_momentum() -> f64 {
    0.1
}
fn default_bn_epsilon() -> f64 {
    1e-5
}

/// One experiment. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Required before running; the CLI sets it from `--seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub clients: usize,
    /// Dirichlet concentration of the label-skewed partition.
    pub alpha: f64,
    /// Smallest number of samples a client may receive.
    #[serde(default = "default_min_client_samples")]
    pub min_client_samples: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Share of the pooled data held out to pretrain the statistics model.
    /// Removed before partitioning whatever the strategy.
    #[serde(default = "default_pretrain_fraction")]
    pub pretrain_fraction: f64,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    pub max_rounds: usize,
    #[serde(default = "default_true")]
    pub parallel: bool,
    pub data: DataSource,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub bn: BnSettings,
    pub strategy: Strategy,
    #[serde(default)]
    pub ablation: Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_shift: Option<FeatureShiftSpec>,
    },
}

impl DataSource {
    pub fn feature_shift(&self) -> Option<&FeatureShiftSpec> {
        match self {
            DataSource::Synthetic(s) => s.feature_shift.as_ref(),
            DataSource::File { feature_shift, .. } => feature_shift.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `flatten`, then `dense -> batchnorm -> relu` per hidden width, then
    /// the classifier.
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_true")]
        batch_norm: bool,
    },
    /// `conv1d -> batchnorm -> relu` per entry of `channels`, then `flatten`
    /// and the MLP part.
    Conv {
        channels: Vec<usize>,
        kernel: usize,
        stride: usize,
        hidden: Vec<usize>,
    },
    /// Explicit layer list; the last layer must be dense.
    Layers { layers: Vec<LayerSpec> },
}

impl ModelConfig {
    pub fn layer_specs(&self, channels: usize, width: usize, num_classes: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mlp = |specs: &mut Vec<LayerSpec>, mut features: usize, hidden: &[usize], bn: bool| {
            for &h in hidden {
                specs.push(LayerSpec::Dense {
                    in_features: features,
                    out_features: h,
                });
                if bn {
                    specs.push(LayerSpec::BatchNorm { channels: h });
                }
                specs.push(LayerSpec::Relu);
                features = h;
            }
            specs.push(LayerSpec::Dense {
                in_features: features,
                out_features: num_classes,
            });
        };
        match self {
            ModelConfig::Mlp { hidden, batch_norm } => {
                specs.push(LayerSpec::Flatten);
                mlp(&mut specs, channels * width, hidden, *batch_norm);
            }
            ModelConfig::Conv {
                channels: convs,
                kernel,
                stride,
                hidden,
            } => {
                let (mut c, mut w) = (channels, width);
                for &out in convs {
                    specs.push(LayerSpec::Conv1d {
                        in_channels: c,
                        out_channels: out,
                        kernel: *kernel,
                        stride: *stride,
                    });
                    specs.push(LayerSpec::BatchNorm { channels: out });
                    specs.push(LayerSpec::Relu);
                    w = if *stride == 0 || w < *kernel {
                        0
                    } else {
                        (w - kernel) / stride + 1
                    };
                    c = out;
                }
                specs.push(LayerSpec::Flatten);
                mlp(&mut specs, c * w, hidden, true);
            }
            ModelConfig::Layers { layers } => specs = layers.clone(),
        }
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            momentum: 0.0,
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnSettings {
    #[serde(default = "default_bn_momentum")]
    pub momentum: f64,
    #[serde(default = "default_bn_epsilon")]
    pub epsilon: f64,
}

impl Default for BnSettings {
    fn default() -> Self {
        Self {
            momentum: default_bn_momentum(),
            epsilon: default_bn_epsilon(),
        }
    }
}

impl From<BnSettings> for BnConfig {
    fn from(b: BnSettings) -> Self {
        BnConfig {
            momentum: b.momentum,
            epsilon: b.epsilon,
        }
    }
}

/// A single invalid configuration value.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("no seed given")]
    MissingSeed,
    #[error("clients must be at least 1, got {0}")]
    Clients(usize),
    #[error("alpha must be positive, got {0}")]
    Alpha(f64),
    #[error("train_fraction must lie in (0, 1), got {0}")]
    TrainFraction(f64),
    #[error("pretrain_fraction must lie in [0, 1), got {0}")]
    PretrainFraction(f64),
    #[error("pretrain_epochs must be at least 1 when a pretrained model is needed")]
    PretrainEpochs,
    #[error("strategy `{0}` needs a pretrain pool (pretrain_fraction > 0)")]
    NoPretrainPool(&'static str),
    #[error("max_rounds must be at least 1")]
    MaxRounds,
    #[error("training.epochs must be at least 1")]
    Epochs,
    #[error("training.lr must be positive, got {0}")]
    LearningRate(f64),
    #[error("training.momentum must lie in [0, 1), got {0}")]
    Momentum(f64),
    #[error("training.batch_size must be at least 1")]
    BatchSize,
    #[error("bn.momentum must lie in (0, 1) and bn.epsilon be non-negative")]
    Bn,
    #[error("lambda must lie in (0, 1], got {0}")]
    Lambda(f64),
    #[error("fedprox mu must be non-negative, got {0}")]
    ProxMu(f64),
    #[error("warm_up_rounds must lie in [1, max_rounds), got {0}")]
    WarmUpRounds(usize),
    #[error("ablation switches need a weighted strategy, got `{0}`")]
    Ablation(&'static str),
    #[error("model has no hidden or convolutional layers listed")]
    EmptyModel,
    #[error("weighted strategies need at least 2 clients")]
    WeightedClients,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::ConfigParse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or(ConfigError::MissingSeed)
    }

    /// Checks every value whose validity does not depend on the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.seed()?;
        if self.clients == 0 {
            return Err(ConfigError::Clients(0));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(ConfigError::TrainFraction(self.train_fraction));
        }
        if !(self.pretrain_fraction >= 0.0 && self.pretrain_fraction < 1.0) {
            return Err(ConfigError::PretrainFraction(self.pretrain_fraction));
        }
        if self.max_rounds == 0 {
            return Err(ConfigError::MaxRounds);
        }
        let t = &self.training;
        if t.epochs == 0 {
            return Err(ConfigError::Epochs);
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(ConfigError::LearningRate(t.lr));
        }
        if !(t.momentum >= 0.0 && t.momentum < 1.0) {
            return Err(ConfigError::Momentum(t.momentum));
        }
        if t.batch_size == 0 {
            return Err(ConfigError::BatchSize);
        }
        if !(self.bn.momentum > 0.0 && self.bn.momentum < 1.0 && self.bn.epsilon >= 0.0) {
            return Err(ConfigError::Bn);
        }
        if let ModelConfig::Conv { channels, .. } = &self.model {
            if channels.is_empty() {
                return Err(ConfigError::EmptyModel);
            }
        }
        match self.strategy {
            Strategy::FedProx { mu } if !(mu >= 0.0 && mu.is_finite()) => return Err(ConfigError::ProxMu(mu)),
            Strategy::WeightedRunning { warm_up_rounds, .. }
                if !self.ablation.uniform_weights && (warm_up_rounds == 0 || warm_up_rounds >= self.max_rounds) =>
            {
                return Err(ConfigError::WarmUpRounds(warm_up_rounds))
            }
            _ => {}
        }
        if let Some(lambda) = self.strategy.lambda() {
            if !(lambda > 0.0 && lambda <= 1.0) {
                return Err(ConfigError::Lambda(lambda));
            }
            if self.clients < 2 {
                return Err(ConfigError::WeightedClients);
            }
        } else if self.ablation.is_active() {
            return Err(ConfigError::Ablation(self.strategy.tag()));
        }
        if self.strategy.needs_pretrained() && !self.ablation.uniform_weights {
            if self.pretrain_fraction == 0.0 {
                return Err(ConfigError::NoPretrainPool(self.strategy.tag()));
            }
            if self.pretrain_epochs == 0 {
                return Err(ConfigError::PretrainEpochs);
            }
        }
        Ok(())
    }

    /// Strategy tag plus any active ablation switches, e.g.
    /// `weighted_bn+share_bn`.
    pub fn run_label(&self) -> String {
        let mut label = self.strategy.tag().to_string();
        if self.ablation.uniform_weights {
            label.push_str("+uniform_weights");
        }
        if self.ablation.share_bn {
            label.push_str("+share_bn");
        }
        label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
seed = 7
output_dir = "out"
clients = 4
alpha = 0.5
max_rounds = 3

[data]
source = "synthetic"
num_classes = 3
channels = 1
width = 8
samples_per_class = 40
separation = 3.0
noise = 1.0

[model]
kind = "mlp"
hidden = [16]

[training]
epochs = 1
lr = 0.05
batch_size = 16

[strategy]
kind = "weighted_bn"
lambda = 0.5
"#;

    #[test]
    fn parses_and_validates_example() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train_fraction, 0.5);
        assert_eq!(cfg.pretrain_fraction, 0.2);
        assert_eq!(cfg.bn, BnSettings::default());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn feature_shift_nests_under_data() {
        let text = EXAMPLE.replace(
            "noise = 1.0\n",
            "noise = 1.0\n\n[data.feature_shift]\nmax_scale_delta = 0.3\nmax_offset = 1.0\n",
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let fs = cfg.data.feature_shift().unwrap();
        assert_eq!((fs.max_scale_delta, fs.max_offset), (0.3, 1.0));
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            format!("bogus = 1\n{EXAMPLE}"),
            EXAMPLE.replace("lr = 0.05", "learning_rate = 0.05"),
            EXAMPLE.replace("noise = 1.0", "noise = 1.0\ncolour = 2"),
            EXAMPLE.replace("lambda = 0.5", "lambda = 0.5\nmu = 0.1"),
        ] {
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn each_bad_value_has_its_own_error() {
        let base = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let check = |f: &dyn Fn(&mut ExperimentConfig), want: ConfigError| {
            let mut c = base.clone();
            f(&mut c);
            assert_eq!(c.validate(), Err(want));
        };
        check(&|c| c.seed = None, ConfigError::MissingSeed);
        check(&|c| c.clients = 0, ConfigError::Clients(0));
        check(&|c| c.alpha = 0.0, ConfigError::Alpha(0.0));
        check(&|c| c.train_fraction = 1.0, ConfigError::TrainFraction(1.0));
        check(&|c| c.pretrain_fraction = -0.1, ConfigError::PretrainFraction(-0.1));
        check(&|c| c.max_rounds = 0, ConfigError::MaxRounds);
        check(&|c| c.training.epochs = 0, ConfigError::Epochs);
        check(&|c| c.training.lr = 0.0, ConfigError::LearningRate(0.0));
        check(&|c| c.training.momentum = 1.0, ConfigError::Momentum(1.0));
        check(&|c| c.training.batch_size = 0, ConfigError::BatchSize);
        check(
            &|c| c.strategy = Strategy::WeightedBn { lambda: 0.0 },
            ConfigError::Lambda(0.0),
        );
        check(
            &|c| c.strategy = Strategy::FedProx { mu: -1.0 },
            ConfigError::ProxMu(-1.0),
        );
        check(
            &|c| {
                c.strategy = Strategy::WeightedRunning {
                    lambda: 0.5,
                    warm_up_rounds: 0,
                }
            },
            ConfigError::WarmUpRounds(0),
        );
        check(
            &|c| {
                c.strategy = Strategy::FedBn {};
                c.ablation.share_bn = true;
            },
            ConfigError::Ablation("fedbn"),
        );
        check(
            &|c| c.pretrain_fraction = 0.0,
            ConfigError::NoPretrainPool("weighted_bn"),
        );
        check(&|c| c.clients = 1, ConfigError::WeightedClients);
    }

    #[test]
    fn mlp_and_conv_layer_lists() {
        let mlp = ModelConfig::Mlp {
            hidden: vec![8, 4],
            batch_norm: true,
        };
        let specs = mlp.layer_specs(2, 5, 3);
        assert_eq!(specs.len(), 1 + 3 + 3 + 1);
        crate::nn::validate_specs(&[2, 5], &specs).unwrap();
        let conv = ModelConfig::Conv {
            channels: vec![4, 6],
            kernel: 3,
            stride: 1,
            hidden: vec![8],
        };
        crate::nn::validate_specs(&[2, 10], &conv.layer_specs(2, 10, 3)).unwrap();
    }
}
