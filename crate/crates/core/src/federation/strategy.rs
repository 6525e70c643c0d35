use serde::{Deserialize, Serialize};

pub const DEFAULT_PROX_MU: f64 = 0.01;
pub const DEFAULT_WARM_UP_ROUNDS: usize = 5;

fn default_prox_mu() -> f64 {
    DEFAULT_PROX_MU
}

fn default_warm_up_rounds() -> usize {
    DEFAULT_WARM_UP_ROUNDS
}

/// Aggregation rule applied after each round of local training.
///
/// The three `weighted_*` strategies average the non-BN parameters with a
/// client-similarity matrix and keep BN state local; they differ in the
/// statistics the similarity is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Local training only.
    Base {},
    /// Uniform average of every tensor, BN state included.
    #[serde(rename = "fedavg")]
    FedAvg {},
    /// Uniform average of the non-BN tensors.
    #[serde(rename = "fedbn")]
    FedBn {},
    /// FedAvg with a proximal term `(mu / 2) ||theta - theta_global||^2`.
    #[serde(rename = "fedprox")]
    FedProx {
        #[serde(default = "default_prox_mu")]
        mu: f64,
    },
    /// Uniform average of the layers below `cut`; the rest stays local.
    /// Defaults to the index of the classifier head.
    #[serde(rename = "fedper")]
    FedPer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cut: Option<usize>,
    },
    /// Similarity from BN-layer input statistics of a pretrained model.
    WeightedBn { lambda: f64 },
    /// Similarity from classifier-input statistics of a pretrained model.
    WeightedFeature { lambda: f64 },
    /// Similarity from BN running statistics after `warm_up_rounds` rounds
    /// of FedBN.
    WeightedRunning {
        lambda: f64,
        #[serde(default = "default_warm_up_rounds")]
        warm_up_rounds: usize,
    },
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::Base {} => "base",
            Strategy::FedAvg {} => "fedavg",
            Strategy::FedBn {} => "fedbn",
            Strategy::FedProx { .. } => "fedprox",
            Strategy::FedPer { .. } => "fedper",
            Strategy::WeightedBn { .. } => "weighted_bn",
            Strategy::WeightedFeature { .. } => "weighted_feature",
            Strategy::WeightedRunning { .. } => "weighted_running",
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match *self {
            Strategy::WeightedBn { lambda }
            | Strategy::WeightedFeature { lambda }
            | Strategy::WeightedRunning { lambda, .. } => Some(lambda),
            _ => None,
        }
    }

    pub fn is_weighted(&self) -> bool {
        self.lambda().is_some()
    }

    /// Whether the similarity statistics come from a pretrained model.
    pub fn needs_pretrained(&self) -> bool {
        matches!(self, Strategy::WeightedBn { .. } | Strategy::WeightedFeature { .. })
    }

    pub fn warm_up_rounds(&self) -> usize {
        match *self {
            Strategy::WeightedRunning { warm_up_rounds, .. } => warm_up_rounds,
            _ => 0,
        }
    }
}

/// Switches that disable parts of the weighted strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    /// Aggregate BN state together with the other parameters.
    #[serde(default)]
    pub share_bn: bool,
    /// Replace the similarity matrix with uniform `1 / N` weights.
    #[serde(default)]
    pub uniform_weights: bool,
}

impl Ablation {
    pub fn is_active(&self) -> bool {
        self.share_bn || self.uniform_weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Deserialize)]
    struct Wrap {
        strategy: Strategy,
    }

    fn parse(s: &str) -> Result<Strategy, toml::de::Error> {
        toml::from_str::<Wrap>(s).map(|w| w.strategy)
    }

    #[test]
    fn tags_and_defaults() {
        assert_eq!(parse("[strategy]\nkind = \"fedbn\"").unwrap(), Strategy::FedBn {});
        assert_eq!(
            parse("[strategy]\nkind = \"fedprox\"").unwrap(),
            Strategy::FedProx { mu: 0.01 }
        );
        assert_eq!(
            parse("[strategy]\nkind = \"weighted_running\"\nlambda = 0.5").unwrap(),
            Strategy::WeightedRunning {
                lambda: 0.5,
                warm_up_rounds: 5
            }
        );
        assert_eq!(
            parse("[strategy]\nkind = \"fedper\"").unwrap(),
            Strategy::FedPer { cut: None }
        );
    }

    #[test]
    fn knobs_only_where_required() {
        assert!(parse("[strategy]\nkind = \"weighted_bn\"").is_err());
        assert!(parse("[strategy]\nkind = \"fedavg\"\nlambda = 0.5").is_err());
        assert!(parse("[strategy]\nkind = \"base\"\nmu = 0.1").is_err());
        assert!(parse("[strategy]\nkind = \"fedsgd\"").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        for s in [
            Strategy::Base {},
            Strategy::FedPer { cut: Some(3) },
            Strategy::WeightedFeature { lambda: 0.25 },
        ] {
            let text = toml::to_string(&toml::Table::from_iter([(
                "strategy".to_string(),
                toml::Value::try_from(s).unwrap(),
            )]))
            .unwrap();
            assert_eq!(parse(&text).unwrap(), s);
        }
    }
}
