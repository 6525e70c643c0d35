//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use fedsim::federation::WeightMatrix;
use fedsim::harness::ExperimentConfig;
use fedsim::nn::{LayerSpec, Model, Tensor};

pub const BENCHMARK_TOML: &str = include_str!("../../../../configs/benchmark.toml");

/// Writes one verdict line straight to the process stderr so that it shows
/// up even when the harness captures test output.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("{verdict} criterion {criterion}: {detail}\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

pub fn benchmark_config(seed: u64, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(BENCHMARK_TOML).expect("benchmark config parses");
    cfg.seed = Some(seed);
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// A small, fast experiment with the given `[strategy]` table body.
pub fn small_config(strategy: &str, seed: u64) -> ExperimentConfig {
    let text = format!(
        r#"
seed = {seed}
output_dir = "unused"
clients = 4
alpha = 0.5
min_client_samples = 12
max_rounds = 10
pretrain_epochs = 2

[data]
source = "synthetic"
num_classes = 4
channels = 1
width = 8
samples_per_class = 40
separation = 3.0
noise = 1.0

[model]
kind = "mlp"
hidden = [12, 8]

[training]
epochs = 1
lr = 0.05
momentum = 0.5
batch_size = 8

[strategy]
{strategy}
"#
    );
    ExperimentConfig::from_toml(&text).expect("small config parses")
}

pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates whose step crossed a ReLU kink.
    pub kinks: usize,
}

/// Denominator floor of the relative error. Gradients that vanish
/// analytically (a bias feeding BN) otherwise divide roundoff by ~0.
pub const FD_FLOOR: f64 = 1e-6;

/// Central finite differences of the train-mode loss against `backward`.
///
/// A coordinate whose one-sided slopes disagree by more than the central
/// estimate disagrees with the analytic gradient sits on a ReLU kink; it
/// is counted in `kinks` instead of `max_rel`. On smooth coordinates the
/// one-sided gap is O(h) and cannot mask a wrong gradient.
pub fn fd_check(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize], h: f64) -> FdReport {
    let mut m = model.clone();
    let (_, grads) = m.backward(x, labels).expect("backward");
    let mut probe = model.clone();
    let f0 = probe.train_loss(x, labels).expect("loss");
    let mut rep = FdReport {
        max_rel: 0.0,
        checked: 0,
        kinks: 0,
    };
    for name in model.trainable_names() {
        let g = grads.get(&name).expect("gradient for every trainable tensor");
        for k in 0..g.len() {
            let orig = probe.tensor(&name).unwrap().data()[k];
            probe.tensor_mut(&name).unwrap().data_mut()[k] = orig + h;
            let fp = probe.train_loss(x, labels).unwrap();
            probe.tensor_mut(&name).unwrap().data_mut()[k] = orig - h;
            let fm = probe.train_loss(x, labels).unwrap();
            probe.tensor_mut(&name).unwrap().data_mut()[k] = orig;
            let central = (fp - fm) / (2.0 * h);
            let a = g.data()[k];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(FD_FLOOR);
            let one_sided_gap = ((fp - f0) / h - (f0 - fm) / h).abs();
            if rel >= 1e-4 && one_sided_gap >= (a - central).abs() {
                rep.kinks += 1;
                continue;
            }
            rep.checked += 1;
            rep.max_rel = rep.max_rel.max(rel);
        }
    }
    rep
}

/// Models that between them contain every layer kind.
pub fn fd_models() -> Vec<(Vec<usize>, Vec<LayerSpec>)> {
    vec![
        (
            vec![1, 6],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: 6,
                    out_features: 5,
                },
                LayerSpec::BatchNorm { channels: 5 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_features: 5,
                    out_features: 4,
                },
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_features: 4,
                    out_features: 3,
                },
            ],
        ),
        (
            vec![2, 9],
            vec![
                LayerSpec::Conv1d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::BatchNorm { channels: 3 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: 12,
                    out_features: 3,
                },
            ],
        ),
    ]
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Share of triples `(i, j, k)` with distinct `j, k != i` on which the two
/// matrices order `w[i][j]` and `w[i][k]` the same way.
pub fn ordering_agreement(a: &WeightMatrix, b: &WeightMatrix) -> f64 {
    let n = a.len();
    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            for k in j + 1..n {
                if j == i || k == i {
                    continue;
                }
                total += 1;
                let sa = a.get(i, j).partial_cmp(&a.get(i, k));
                let sb = b.get(i, j).partial_cmp(&b.get(i, k));
                agree += usize::from(sa == sb);
            }
        }
    }
    agree as f64 / total as f64
}
