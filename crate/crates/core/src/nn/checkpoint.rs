//! Model checkpoint file.
//!
//! ```text
//! FEDCKPT v1
//! input <d0> <d1> ...
//! mode <train|eval>
//! layer <i> dense <in> <out>
//! layer <i> conv1d <in_channels> <out_channels> <kernel> <stride>
//! layer <i> batchnorm <channels> <momentum> <epsilon> <batches_tracked>
//! layer <i> relu
//! layer <i> flatten
//! tensor <name> <d0> <d1> ...
//! end
//! <little-endian f64 payload, tensors in manifest order>
//! ```
//!
//! Reals in the manifest use the shortest round-trip decimal form, so a
//! load followed by a save reproduces the input bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::nn::batchnorm::BatchNormState;
use crate::nn::model::{validate_specs, LayerParams};
use crate::nn::{LayerSpec, Mode, Model, NnError, Tensor};
use crate::scalar::Scalar;

const MAGIC: &str = "FEDCKPT v1";

impl<S: Scalar> Model<S> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let dims = |d: &[usize]| d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(head, "{MAGIC}").unwrap();
        writeln!(head, "input {}", dims(self.input_shape())).unwrap();
        let mode = match self.mode() {
            Mode::Train => "train",
            Mode::Eval => "eval",
        };
        writeln!(head, "mode {mode}").unwrap();
        for (i, (spec, params)) in self.specs().iter().zip(&self.layers).enumerate() {
            let line = match (*spec, params) {
                (
                    LayerSpec::Dense {
                        in_features,
                        out_features,
                    },
                    _,
                ) => {
                    format!("dense {in_features} {out_features}")
                }
                (
                    LayerSpec::Conv1d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    _,
                ) => format!("conv1d {in_channels} {out_channels} {kernel} {stride}"),
                (LayerSpec::BatchNorm { channels }, LayerParams::BatchNorm(s)) => format!(
                    "batchnorm {channels} {:?} {:?} {}",
                    s.momentum.to_f64_lossy(),
                    s.epsilon.to_f64_lossy(),
                    s.num_batches_tracked
                ),
                (LayerSpec::Relu, _) => "relu".into(),
                (LayerSpec::Flatten, _) => "flatten".into(),
                _ => unreachable!("params built from specs"),
            };
            writeln!(head, "layer {i} {line}").unwrap();
        }
        let tensors = self.named_tensors();
        for (name, t) in &tensors {
            writeln!(head, "tensor {name} {}", dims(t.shape())).unwrap();
        }
        writeln!(head, "end").unwrap();
        let mut out = head.into_bytes();
        for (_, t) in &tensors {
            for &v in t.data() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |msg: String| NnError::CheckpointHeader(msg);
        let end_marker = b"\nend\n";
        let head_end = bytes
            .windows(end_marker.len())
            .position(|w| w == end_marker)
            .ok_or_else(|| bad("missing `end` line".into()))?
            + end_marker.len();
        let head = std::str::from_utf8(&bytes[..head_end]).map_err(|_| bad("manifest is not UTF-8".into()))?;
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("bad magic".into()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer `{s}`")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad real `{s}`")));

        let mut input_shape = Vec::new();
        let mut mode = Mode::Train;
        let mut specs = Vec::new();
        let mut bn_meta = Vec::new();
        let mut manifest = Vec::new();
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["input", dims @ ..] => {
                    input_shape = dims.iter().map(|d| num(d)).collect::<Result<_, _>>()?;
                }
                ["mode", "train"] => mode = Mode::Train,
                ["mode", "eval"] => mode = Mode::Eval,
                ["layer", idx, rest @ ..] => {
                    if num(idx)? != specs.len() {
                        return Err(bad(format!("layer index {idx} out of order")));
                    }
                    let spec = match rest {
                        ["dense", a, b] => LayerSpec::Dense {
                            in_features: num(a)?,
                            out_features: num(b)?,
                        },
                        ["conv1d", a, b, k, s] => LayerSpec::Conv1d {
                            in_channels: num(a)?,
                            out_channels: num(b)?,
                            kernel: num(k)?,
                            stride: num(s)?,
                        },
                        ["batchnorm", c, m, e, n] => {
                            bn_meta.push((
                                real(m)?,
                                real(e)?,
                                n.parse::<u64>().map_err(|_| bad(format!("bad count `{n}`")))?,
                            ));
                            LayerSpec::BatchNorm { channels: num(c)? }
                        }
                        ["relu"] => LayerSpec::Relu,
                        ["flatten"] => LayerSpec::Flatten,
                        _ => return Err(bad(format!("bad layer line `{line}`"))),
                    };
                    specs.push(spec);
                }
                ["tensor", name, dims @ ..] => {
                    let shape: Vec<usize> = dims.iter().map(|d| num(d)).collect::<Result<_, _>>()?;
                    manifest.push((name.to_string(), shape));
                }
                ["end"] => break,
                _ => return Err(bad(format!("unrecognized line `{line}`"))),
            }
        }
        validate_specs(&input_shape, &specs)?;

        let payload = &bytes[head_end..];
        let expected: usize = manifest.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>() * 8;
        if payload.len() != expected {
            return Err(NnError::CheckpointPayload {
                expected,
                got: payload.len(),
            });
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| S::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
        let mut take = |shape: &[usize]| -> Result<Tensor<S>, NnError> {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), values.by_ref().take(n).collect())
        };

        let mut tensors = manifest.iter();
        let mut next = |expect_name: String, expect_shape: Vec<usize>| -> Result<Tensor<S>, NnError> {
            let (name, shape) = tensors
                .next()
                .ok_or_else(|| bad(format!("missing tensor {expect_name}")))?;
            if *name != expect_name || *shape != expect_shape {
                return Err(bad(format!(
                    "tensor `{name}` {shape:?} where `{expect_name}` {expect_shape:?} expected"
                )));
            }
            take(shape)
        };
        let mut bn_iter = bn_meta.into_iter();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            layers.push(match *spec {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => LayerParams::Affine {
                    weight: next(format!("{i}.weight"), vec![out_features, in_features])?,
                    bias: next(format!("{i}.bias"), vec![out_features])?,
                },
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => LayerParams::Affine {
                    weight: next(format!("{i}.weight"), vec![out_channels, in_channels, kernel])?,
                    bias: next(format!("{i}.bias"), vec![out_channels])?,
                },
                LayerSpec::BatchNorm { channels } => {
                    let (m, e, n) = bn_iter.next().expect("one meta per BN layer");
                    let state = BatchNormState {
                        gamma: next(format!("{i}.gamma"), vec![channels])?,
                        beta: next(format!("{i}.beta"), vec![channels])?,
                        running_mean: next(format!("{i}.running_mean"), vec![channels])?,
                        running_var: next(format!("{i}.running_var"), vec![channels])?,
                        momentum: S::from_f64_lossy(m),
                        epsilon: S::from_f64_lossy(e),
                        num_batches_tracked: n,
                    };
                    if !state.is_consistent() {
                        return Err(NnError::NegativeRunningVar(format!("{i}.running_var")));
                    }
                    LayerParams::BatchNorm(state)
                }
                LayerSpec::Relu | LayerSpec::Flatten => LayerParams::Stateless,
            });
        }
        if tensors.next().is_some() {
            return Err(bad("extra tensors in manifest".into()));
        }
        Ok(Model::from_parts(input_shape, specs, layers, mode))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| NnError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| NnError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
