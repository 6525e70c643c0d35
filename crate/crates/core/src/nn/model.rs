use std::collections::BTreeMap;

use rand::Rng;

use crate::nn::batchnorm::{self, BatchNormState, BnCache};
use crate::nn::layer::{self, LayerSpec};
use crate::nn::loss::cross_entropy;
use crate::nn::{Gradients, NnError, ParamSet, Tensor};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activation capture points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tap {
    /// Input of the `l`-th batch-norm layer (counting BN layers only).
    BnInput(usize),
    /// Input of the final dense layer.
    ClassifierInput,
}

/// BN hyperparameters applied to every BN layer of a freshly built model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            momentum: batchnorm::DEFAULT_MOMENTUM,
            epsilon: batchnorm::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerParams<S> {
    Affine { weight: Tensor<S>, bias: Tensor<S> },
    BatchNorm(BatchNormState<S>),
    Stateless,
}

/// A feed-forward classifier: ordered layers, their parameters and a mode.
/// The last layer is always a dense classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    pub(crate) layers: Vec<LayerParams<S>>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    pub logits: Tensor<S>,
    pub taps: BTreeMap<Tap, Tensor<S>>,
}

enum Cache<S> {
    Input(Tensor<S>),
    Bn(BnCache<S>),
    Flatten(Vec<usize>),
}

struct Trace<S> {
    logits: Tensor<S>,
    taps: BTreeMap<Tap, Tensor<S>>,
    caches: Vec<Cache<S>>,
    moments: Vec<Option<(Vec<S>, Vec<S>)>>,
}

pub const RUNNING_MEAN: &str = "running_mean";
pub const RUNNING_VAR: &str = "running_var";
const BN_FIELDS: [&str; 4] = ["gamma", "beta", RUNNING_MEAN, RUNNING_VAR];

/// Checks that the layer chain composes from `input_shape` and ends in a
/// dense head. Returns the per-layer output shapes.
pub fn validate_specs(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>, NnError> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(NnError::InputShape {
            expected: input_shape.to_vec(),
            got: input_shape.to_vec(),
        });
    }
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = input_shape.to_vec();
    for (i, s) in specs.iter().enumerate() {
        cur = s.output_shape(&cur).ok_or_else(|| NnError::LayerShape {
            layer: i,
            kind: s.name(),
            input: cur.clone(),
        })?;
        shapes.push(cur.clone());
    }
    match specs.last() {
        Some(LayerSpec::Dense { .. }) => Ok(shapes),
        _ => Err(NnError::MissingClassifier),
    }
}

impl<S: Scalar> Model<S> {
    /// Builds a model with uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// weights, identity BN (`gamma = 1`, `beta = 0`) and running
    /// statistics at `(0, 1)`. Starts in train mode.
    pub fn new<R: Rng + ?Sized>(
        input_shape: &[usize],
        specs: Vec<LayerSpec>,
        bn: BnConfig,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        validate_specs(input_shape, &specs)?;
        if !(bn.momentum > 0.0 && bn.momentum < 1.0) || !(bn.epsilon >= 0.0) {
            return Err(NnError::BnConfig {
                momentum: bn.momentum,
                epsilon: bn.epsilon,
            });
        }
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let k = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| cast(rng.random_range(-k..k)))
        };
        let layers = specs
            .iter()
            .map(|s| match *s {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => LayerParams::Affine {
                    weight: uniform(&[out_features, in_features], in_features),
                    bias: uniform(&[out_features], in_features),
                },
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => LayerParams::Affine {
                    weight: uniform(&[out_channels, in_channels, kernel], in_channels * kernel),
                    bias: uniform(&[out_channels], in_channels * kernel),
                },
                LayerSpec::BatchNorm { channels } => {
                    LayerParams::BatchNorm(BatchNormState::new(channels, cast(bn.momentum), cast(bn.epsilon)))
                }
                LayerSpec::Relu | LayerSpec::Flatten => LayerParams::Stateless,
            })
            .collect();
        Ok(Self {
            input_shape: input_shape.to_vec(),
            specs,
            layers,
            mode: Mode::Train,
        })
    }

    pub(crate) fn from_parts(
        input_shape: Vec<usize>,
        specs: Vec<LayerSpec>,
        layers: Vec<LayerParams<S>>,
        mode: Mode,
    ) -> Self {
        Self {
            input_shape,
            specs,
            layers,
            mode,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn num_classes(&self) -> usize {
        match self.specs.last() {
            Some(LayerSpec::Dense { out_features, .. }) => *out_features,
            _ => unreachable!("validated at construction"),
        }
    }

    /// Layer indices of the BN layers, in order.
    pub fn bn_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, LayerParams::BatchNorm(_)).then_some(i))
            .collect()
    }

    pub fn bn_states(&self) -> impl Iterator<Item = &BatchNormState<S>> {
        self.layers.iter().filter_map(|l| match l {
            LayerParams::BatchNorm(s) => Some(s),
            _ => None,
        })
    }

    pub fn bn_states_mut(&mut self) -> impl Iterator<Item = &mut BatchNormState<S>> {
        self.layers.iter_mut().filter_map(|l| match l {
            LayerParams::BatchNorm(s) => Some(s),
            _ => None,
        })
    }

    pub fn num_bn_layers(&self) -> usize {
        self.bn_states().count()
    }

    /// Every named tensor in layer order: `"{layer}.weight"`, `"{layer}.bias"`
    /// for dense/conv layers and `"{layer}.gamma"`, `"{layer}.beta"`,
    /// `"{layer}.running_mean"`, `"{layer}.running_var"` for BN layers.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                LayerParams::Affine { weight, bias } => {
                    out.push((format!("{i}.weight"), weight));
                    out.push((format!("{i}.bias"), bias));
                }
                LayerParams::BatchNorm(s) => {
                    for (f, t) in BN_FIELDS
                        .iter()
                        .zip([&s.gamma, &s.beta, &s.running_mean, &s.running_var])
                    {
                        out.push((format!("{i}.{f}"), t));
                    }
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }

    /// Whether `name` is one of the four per-BN-layer tensors.
    pub fn is_bn_tensor(&self, name: &str) -> bool {
        self.parse_name(name)
            .map(|(i, _)| matches!(self.layers[i], LayerParams::BatchNorm(_)))
            .unwrap_or(false)
    }

    /// Layer index a tensor name belongs to.
    pub fn layer_of(&self, name: &str) -> Option<usize> {
        self.parse_name(name).map(|(i, _)| i)
    }

    fn parse_name<'a>(&self, name: &'a str) -> Option<(usize, &'a str)> {
        let (idx, field) = name.split_once('.')?;
        let i: usize = idx.parse().ok()?;
        let valid = match self.layers.get(i)? {
            LayerParams::Affine { .. } => field == "weight" || field == "bias",
            LayerParams::BatchNorm(_) => BN_FIELDS.contains(&field),
            LayerParams::Stateless => false,
        };
        valid.then_some((i, field))
    }

    /// Full model state including BN running statistics.
    pub fn state_dict(&self) -> ParamSet<S> {
        self.named_tensors().into_iter().map(|(k, v)| (k, v.clone())).collect()
    }

    /// Names of tensors updated by gradient descent (running stats excluded).
    pub fn trainable_names(&self) -> Vec<String> {
        self.named_tensors()
            .into_iter()
            .map(|(k, _)| k)
            .filter(|k| !k.ends_with(RUNNING_MEAN) && !k.ends_with(RUNNING_VAR))
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<S>> {
        let (i, field) = self.parse_name(name)?;
        match &self.layers[i] {
            LayerParams::Affine { weight, bias } => Some(if field == "weight" { weight } else { bias }),
            LayerParams::BatchNorm(s) => Some(match field {
                "gamma" => &s.gamma,
                "beta" => &s.beta,
                RUNNING_MEAN => &s.running_mean,
                _ => &s.running_var,
            }),
            LayerParams::Stateless => None,
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        let (i, field) = self.parse_name(name)?;
        match &mut self.layers[i] {
            LayerParams::Affine { weight, bias } => Some(if field == "weight" { weight } else { bias }),
            LayerParams::BatchNorm(s) => Some(match field {
                "gamma" => &mut s.gamma,
                "beta" => &mut s.beta,
                RUNNING_MEAN => &mut s.running_mean,
                _ => &mut s.running_var,
            }),
            LayerParams::Stateless => None,
        }
    }

    /// Overwrites the named tensors present in `params`; others are kept.
    /// Validates every name and shape before writing anything.
    pub fn load_params(&mut self, params: &ParamSet<S>) -> Result<(), NnError> {
        for (name, t) in params.iter() {
            let cur = self
                .tensor(name)
                .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
            if !cur.same_shape(t) {
                return Err(NnError::ParamShape {
                    name: name.to_string(),
                    expected: cur.shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            if name.ends_with(RUNNING_VAR) && t.data().iter().any(|&v| v < S::zero()) {
                return Err(NnError::NegativeRunningVar(name.to_string()));
            }
        }
        for (name, t) in params.iter() {
            *self.tensor_mut(name).expect("checked above") = t.clone();
        }
        Ok(())
    }

    /// Same layer specs and input shape.
    pub fn same_architecture(&self, other: &Model<S>) -> bool {
        self.input_shape == other.input_shape && self.specs == other.specs
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<(), NnError> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::InputShape {
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &Tensor<S>, taps: &[Tap], train: bool, keep_cache: bool) -> Result<Trace<S>, NnError> {
        self.check_input(x)?;
        let bn_count = self.num_bn_layers();
        for t in taps {
            if let Tap::BnInput(l) = t {
                if *l >= bn_count {
                    return Err(NnError::InvalidTap(*t));
                }
            }
        }
        let last = self.specs.len() - 1;
        let mut captured = BTreeMap::new();
        let mut caches = Vec::new();
        let mut moments = Vec::new();
        let mut bn_idx = 0;
        let mut cur = x.clone();
        for (i, (spec, params)) in self.specs.iter().zip(&self.layers).enumerate() {
            if i == last && taps.contains(&Tap::ClassifierInput) {
                captured.insert(Tap::ClassifierInput, cur.clone());
            }
            let mut moment = None;
            let (next, cache) = match (spec, params) {
                (LayerSpec::Dense { .. }, LayerParams::Affine { weight, bias }) => {
                    (layer::dense_forward(&cur, weight, bias), Cache::Input(cur))
                }
                (LayerSpec::Conv1d { stride, .. }, LayerParams::Affine { weight, bias }) => {
                    (layer::conv1d_forward(&cur, weight, bias, *stride), Cache::Input(cur))
                }
                (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm(state)) => {
                    if taps.contains(&Tap::BnInput(bn_idx)) {
                        captured.insert(Tap::BnInput(bn_idx), cur.clone());
                    }
                    bn_idx += 1;
                    if train {
                        let (y, c, m) = batchnorm::forward_train(state, &cur);
                        moment = Some(m);
                        (y, Cache::Bn(c))
                    } else {
                        let y = batchnorm::forward_eval(state, &cur);
                        (y, Cache::Flatten(Vec::new()))
                    }
                }
                (LayerSpec::Relu, _) => (layer::relu_forward(&cur), Cache::Input(cur)),
                (LayerSpec::Flatten, _) => {
                    let shape = cur.shape().to_vec();
                    let b = shape[0];
                    let flat = cur.reshape(&[b, shape[1..].iter().product()])?;
                    (flat, Cache::Flatten(shape))
                }
                _ => unreachable!("params built from specs"),
            };
            if !next.all_finite() {
                return Err(NnError::NonFinite { layer: i });
            }
            if keep_cache {
                caches.push(cache);
            }
            moments.push(moment);
            cur = next;
        }
        Ok(Trace {
            logits: cur,
            taps: captured,
            caches,
            moments,
        })
    }

    fn apply_running_updates(&mut self, moments: Vec<Option<(Vec<S>, Vec<S>)>>) {
        for (params, m) in self.layers.iter_mut().zip(moments) {
            if let (LayerParams::BatchNorm(state), Some((mean, var))) = (params, m) {
                batchnorm::update_running(state, &mean, &var);
            }
        }
    }

    /// Forward pass honouring the current mode. In train mode BN uses batch
    /// statistics and updates its running estimates; in eval mode it uses
    /// the running estimates.
    pub fn forward(&mut self, x: &Tensor<S>, taps: &[Tap]) -> Result<ForwardOutput<S>, NnError> {
        match self.mode {
            Mode::Eval => self.forward_eval(x, taps),
            Mode::Train => {
                let trace = self.trace(x, taps, true, false)?;
                self.apply_running_updates(trace.moments);
                Ok(ForwardOutput {
                    logits: trace.logits,
                    taps: trace.taps,
                })
            }
        }
    }

    /// Eval-mode forward regardless of the current mode. Never mutates.
    pub fn forward_eval(&self, x: &Tensor<S>, taps: &[Tap]) -> Result<ForwardOutput<S>, NnError> {
        let trace = self.trace(x, taps, false, false)?;
        Ok(ForwardOutput {
            logits: trace.logits,
            taps: trace.taps,
        })
    }

    /// Train-mode loss without touching running statistics.
    pub fn train_loss(&self, x: &Tensor<S>, labels: &[usize]) -> Result<S, NnError> {
        let trace = self.trace(x, &[], true, false)?;
        Ok(cross_entropy(&trace.logits, labels)?.0)
    }

    /// Mean cross-entropy and its gradient with respect to every trainable
    /// tensor. Runs a train-mode forward, so BN running statistics advance
    /// by one batch.
    pub fn backward(&mut self, x: &Tensor<S>, labels: &[usize]) -> Result<(S, Gradients<S>), NnError> {
        if self.mode != Mode::Train {
            return Err(NnError::EvalModeBackward);
        }
        let trace = self.trace(x, &[], true, true)?;
        let (loss, mut grad) = cross_entropy(&trace.logits, labels)?;
        let mut grads = ParamSet::new();
        for (i, ((spec, params), cache)) in self.specs.iter().zip(&self.layers).zip(&trace.caches).enumerate().rev() {
            grad = match (spec, params, cache) {
                (LayerSpec::Dense { .. }, LayerParams::Affine { weight, .. }, Cache::Input(inp)) => {
                    let (dx, dw, db) = layer::dense_backward(inp, weight, &grad);
                    grads.insert(format!("{i}.weight"), dw);
                    grads.insert(format!("{i}.bias"), db);
                    dx
                }
                (LayerSpec::Conv1d { stride, .. }, LayerParams::Affine { weight, .. }, Cache::Input(inp)) => {
                    let (dx, dw, db) = layer::conv1d_backward(inp, weight, &grad, *stride);
                    grads.insert(format!("{i}.weight"), dw);
                    grads.insert(format!("{i}.bias"), db);
                    dx
                }
                (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm(state), Cache::Bn(c)) => {
                    let (dx, dg, dbeta) = batchnorm::backward(state, c, &grad);
                    grads.insert(format!("{i}.gamma"), dg);
                    grads.insert(format!("{i}.beta"), dbeta);
                    dx
                }
                (LayerSpec::Relu, _, Cache::Input(inp)) => layer::relu_backward(inp, &grad),
                (LayerSpec::Flatten, _, Cache::Flatten(shape)) => grad.reshape(shape)?,
                _ => unreachable!("cache kinds follow specs"),
            };
            if !grad.all_finite() {
                return Err(NnError::NonFinite { layer: i });
            }
        }
        self.apply_running_updates(trace.moments);
        Ok((loss, grads))
    }

    /// Class predictions (argmax of eval-mode logits).
    pub fn predict(&self, x: &Tensor<S>) -> Result<Vec<usize>, NnError> {
        Ok(self.forward_eval(x, &[])?.logits.argmax_rows())
    }
}
