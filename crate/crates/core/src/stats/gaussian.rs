use crate::scalar::Scalar;

/// Diagonal Gaussian over the channels of one activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGaussian<S> {
    pub mean: Vec<S>,
    /// Per-channel (population) variances, the covariance diagonal.
    pub var: Vec<S>,
}

impl<S: Scalar> LayerGaussian<S> {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn is_valid(&self) -> bool {
        self.mean.len() == self.var.len()
            && self.mean.iter().all(|v| v.is_finite())
            && self.var.iter().all(|&v| v.is_finite() && v >= S::zero())
    }
}

/// Which activations a [`ClientStats`] summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsVariant {
    /// Collected inputs of every BN layer of a pretrained model.
    BnLayers,
    /// Collected inputs of the classifier head.
    DomainFeatures,
    /// Running statistics stored in the BN layers themselves.
    BnRunning,
}

impl StatsVariant {
    pub fn tag(&self) -> &'static str {
        match self {
            StatsVariant::BnLayers => "bn_layers",
            StatsVariant::DomainFeatures => "domain_features",
            StatsVariant::BnRunning => "bn_running",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "bn_layers" => Some(StatsVariant::BnLayers),
            "domain_features" => Some(StatsVariant::DomainFeatures),
            "bn_running" => Some(StatsVariant::BnRunning),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientStats<S> {
    pub variant: StatsVariant,
    pub layers: Vec<LayerGaussian<S>>,
}

impl<S: Scalar> ClientStats<S> {
    /// Same variant and the same channel count at every layer.
    pub fn is_congruent(&self, other: &ClientStats<S>) -> bool {
        self.variant == other.variant
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.channels() == b.channels())
    }
}
