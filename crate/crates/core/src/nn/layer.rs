use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Shape-level description of one layer. Per-sample activation shapes are
/// `[features]` for dense stacks and `[channels, width]` for conv stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    /// Per-sample output shape, or `None` when `input` does not fit.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (input == [in_features] && out_features > 0).then(|| vec![out_features]),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 2
                    || input[0] != in_channels
                    || kernel == 0
                    || stride == 0
                    || out_channels == 0
                    || input[1] < kernel
                {
                    return None;
                }
                Some(vec![out_channels, (input[1] - kernel) / stride + 1])
            }
            LayerSpec::BatchNorm { channels } => {
                (channels > 0 && matches!(input.len(), 1 | 2) && input[0] == channels).then(|| input.to_vec())
            }
            LayerSpec::Relu => Some(input.to_vec()),
            LayerSpec::Flatten => Some(vec![input.iter().product()]),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
        }
    }
}

/// `y[b, o] = bias[o] + sum_i weight[o, i] * x[b, i]`
pub(crate) fn dense_forward<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let b = x.rows();
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut y = Vec::with_capacity(b * out);
    for bi in 0..b {
        let xr = &xd[bi * inp..(bi + 1) * inp];
        for o in 0..out {
            let wr = &wd[o * inp..(o + 1) * inp];
            let mut acc = bd[o];
            for (&w, &xv) in wr.iter().zip(xr) {
                acc += w * xv;
            }
            y.push(acc);
        }
    }
    Tensor::new(vec![b, out], y).expect("dense output shape")
}

/// Returns `(dx, dweight, dbias)`.
pub(crate) fn dense_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let b = x.rows();
    let (xd, wd, dyd) = (x.data(), weight.data(), dy.data());
    let mut dw = vec![S::zero(); out * inp];
    let mut db = vec![S::zero(); out];
    let mut dx = vec![S::zero(); b * inp];
    for bi in 0..b {
        let xr = &xd[bi * inp..(bi + 1) * inp];
        let dxr = &mut dx[bi * inp..(bi + 1) * inp];
        for o in 0..out {
            let g = dyd[bi * out + o];
            db[o] += g;
            let wr = &wd[o * inp..(o + 1) * inp];
            let dwr = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx shape"),
        Tensor::new(weight.shape().to_vec(), dw).expect("dw shape"),
        Tensor::new(vec![out], db).expect("db shape"),
    )
}

/// Valid (unpadded) strided 1-D convolution. `weight` is `(out, in, kernel)`.
pub(crate) fn conv1d_forward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
) -> Tensor<S> {
    let (b, cin, win) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (weight.shape()[0], weight.shape()[2]);
    let wout = (win - k) / stride + 1;
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut y = vec![S::zero(); b * cout * wout];
    for bi in 0..b {
        for o in 0..cout {
            for t in 0..wout {
                let mut acc = bd[o];
                for i in 0..cin {
                    let xrow = &xd[(bi * cin + i) * win + t * stride..];
                    let wrow = &wd[(o * cin + i) * k..(o * cin + i + 1) * k];
                    for (kk, &w) in wrow.iter().enumerate() {
                        acc += w * xrow[kk];
                    }
                }
                y[(bi * cout + o) * wout + t] = acc;
            }
        }
    }
    Tensor::new(vec![b, cout, wout], y).expect("conv output shape")
}

pub(crate) fn conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
    stride: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (b, cin, win) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (weight.shape()[0], weight.shape()[2]);
    let wout = dy.shape()[2];
    let (xd, wd, dyd) = (x.data(), weight.data(), dy.data());
    let mut dx = vec![S::zero(); xd.len()];
    let mut dw = vec![S::zero(); wd.len()];
    let mut db = vec![S::zero(); cout];
    for bi in 0..b {
        for o in 0..cout {
            for t in 0..wout {
                let g = dyd[(bi * cout + o) * wout + t];
                db[o] += g;
                for i in 0..cin {
                    let xoff = (bi * cin + i) * win + t * stride;
                    let woff = (o * cin + i) * k;
                    for kk in 0..k {
                        dw[woff + kk] += g * xd[xoff + kk];
                        dx[xoff + kk] += g * wd[woff + kk];
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx shape"),
        Tensor::new(weight.shape().to_vec(), dw).expect("dw shape"),
        Tensor::new(vec![cout], db).expect("db shape"),
    )
}

pub(crate) fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub(crate) fn relu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
    dx
}
