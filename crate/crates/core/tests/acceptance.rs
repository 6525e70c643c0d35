//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and prints a single `PASS`/`FAIL` line before asserting.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{benchmark_config, fd_check, fd_models, ordering_agreement, pearson, report, small_config};
use fedsim::data::{make_synthetic, split_train_test, ClientSplit, SyntheticSpec};
use fedsim::federation::{build_weight_matrix, partition_params, Ablation, FederationState, Strategy, TrainSettings};
use fedsim::harness::{emit_results, rounds_to_threshold, run_experiment, setup_experiment, Setup};
use fedsim::nn::{train_local, BnConfig, LocalTrainConfig, Mode, Model, ParamSet, Tensor};
use fedsim::stats::{
    collect_bn_input_stats, extract_bn_running_stats, w2_diag, w2_full, DistanceMatrix, LayerGaussian,
};

fn bits(p: &ParamSet<f64>) -> Vec<(String, Vec<u64>)> {
    p.iter()
        .map(|(k, t)| (k.to_string(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = Instant::now();
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for seed in 0..50u64 {
        for (shape, specs) in fd_models() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = Model::<f64>::new(&shape, specs, BnConfig::default(), &mut rng).unwrap();
            // Move BN away from the identity so gamma and beta matter.
            for st in model.bn_states_mut() {
                for g in st.gamma.data_mut() {
                    *g = rng.random_range(0.5..1.5);
                }
                for b in st.beta.data_mut() {
                    *b = rng.random_range(-0.5..0.5);
                }
            }
            let batch = 8;
            let mut dims = vec![batch];
            dims.extend_from_slice(&shape);
            let x = Tensor::from_fn(&dims, |_| rng.random_range(-2.0..2.0));
            let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
            let rep = fd_check(&model, &x, &labels, 1e-5);
            worst = worst.max(rep.max_rel);
            checked += rep.checked;
            kinks += rep.kinks;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    // A kink is a ReLU crossing, not a gradient error; they must stay rare.
    let pass = worst < 1e-4 && secs < 60.0 && kinks * 100 <= checked;
    report(
        1,
        pass,
        &format!(
            "max relative error {worst:.2e} (< 1e-4) over {checked} coordinates, {kinks} kink crossings skipped, {secs:.1}s (< 60s)"
        ),
    );
    assert!(pass);
}

fn random_diag(rng: &mut ChaCha8Rng, c: usize) -> LayerGaussian<f64> {
    LayerGaussian {
        mean: (0..c).map(|_| rng.random_range(-5.0..5.0)).collect(),
        var: (0..c).map(|_| rng.random_range(0.0..4.0)).collect(),
    }
}

#[test]
fn criterion_02_full_and_diagonal_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(1..8);
        let (a, b) = (random_diag(&mut rng, c), random_diag(&mut rng, c));
        let full = w2_full(
            &DVector::from_vec(a.mean.clone()),
            &DMatrix::from_diagonal(&DVector::from_vec(a.var.clone())),
            &DVector::from_vec(b.mean.clone()),
            &DMatrix::from_diagonal(&DVector::from_vec(b.var.clone())),
        )
        .unwrap();
        worst = worst.max((full - w2_diag(&a, &b).unwrap()).abs());
    }
    let a = LayerGaussian {
        mean: vec![0.0, 0.0],
        var: vec![1.0, 1.0],
    };
    let b = LayerGaussian {
        mean: vec![3.0, 0.0],
        var: vec![4.0, 1.0],
    };
    let hand = (w2_diag(&a, &b).unwrap() - 10f64.sqrt()).abs();
    let pass = worst < 1e-9 && hand <= 1e-12;
    report(
        2,
        pass,
        &format!("max |full - diag| {worst:.2e} (< 1e-9) on 1000 pairs; sqrt(10) case off by {hand:.1e} (<= 1e-12)"),
    );
    assert!(pass);
}

fn random_distances(rng: &mut ChaCha8Rng) -> DistanceMatrix<f64> {
    let n = rng.random_range(2..12);
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.01..10.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    DistanceMatrix::from_rows(d).unwrap()
}

#[test]
fn criterion_03_weight_matrix_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let mut max_row_err = 0.0f64;
    for t in 0..500 {
        let d = random_distances(&mut rng);
        let n = d.len();
        // Power-of-two factors scale exactly in binary floating point.
        let c = 2f64.powi(rng.random_range(-8..9));
        let scaled = DistanceMatrix::from_rows(
            d.to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| v * c).collect())
                .collect(),
        )
        .unwrap();
        for lambda in [0.1, 0.5, 0.9] {
            let w = build_weight_matrix(&d, lambda).unwrap();
            let ws = build_weight_matrix(&scaled, lambda).unwrap();
            for i in 0..n {
                let row: f64 = (0..n).map(|j| w.get(i, j)).sum();
                max_row_err = max_row_err.max((row - 1.0).abs());
                if w.get(i, i) != lambda {
                    failures.push(format!("matrix {t}: diagonal {i} is {}", w.get(i, i)));
                }
                for j in 0..n {
                    if w.get(i, j) != ws.get(i, j) {
                        failures.push(format!("matrix {t}: scale by {c} changed w[{i}][{j}]"));
                    }
                    for k in 0..n {
                        if j != i && k != i && d.get(i, j) < d.get(i, k) && w.get(i, j) <= w.get(i, k) {
                            failures.push(format!("matrix {t}: ordering broken at ({i},{j},{k})"));
                        }
                    }
                }
            }
        }
    }
    let hand = build_weight_matrix(
        &DistanceMatrix::from_rows(vec![vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 2.0], vec![3.0, 2.0, 0.0]]).unwrap(),
        0.5,
    )
    .unwrap();
    let hand_row: Vec<f64> = (0..3).map(|j| hand.get(0, j)).collect();
    let hand_ok = hand_row
        .iter()
        .zip([0.5, 0.375, 0.125])
        .all(|(a, b)| (a - b).abs() < 1e-15);
    let pass = failures.is_empty() && max_row_err <= 1e-12 && hand_ok;
    report(
        3,
        pass,
        &format!(
            "500 matrices x 3 lambdas: max row-sum error {max_row_err:.1e} (<= 1e-12), {} diagonal/scale/ordering violations, hand row {hand_row:?}",
            failures.len()
        ),
    );
    assert!(pass, "{:?}", &failures[..failures.len().min(5)]);
}

/// Runs ten rounds and compares every BN tensor, bit for bit, just before
/// and just after each aggregation.
fn bn_survives_aggregation(strategy: &str) -> Result<usize, String> {
    let mut cfg = small_config(strategy, 4);
    cfg.max_rounds = 15;
    let Setup {
        mut state, pretrained, ..
    } = setup_experiment::<f64>(&cfg, None).map_err(|e| e.to_string())?;
    if cfg.strategy.is_weighted() {
        state.setup_weights(pretrained.as_ref()).map_err(|e| e.to_string())?;
    }
    let mut psi_moved = 0;
    for round in 0..10 {
        state.local_update().map_err(|e| e.to_string())?;
        let before: Vec<_> = state.models.iter().map(partition_params).collect();
        state.aggregate_step().map_err(|e| e.to_string())?;
        for (i, (m, (phi, psi))) in state.models.iter().zip(&before).enumerate() {
            let (phi_after, psi_after) = partition_params(m);
            if bits(phi) != bits(&phi_after) {
                return Err(format!("{strategy}: client {i} BN changed in round {round}"));
            }
            psi_moved += usize::from(bits(psi) != bits(&psi_after));
        }
        state.round += 1;
    }
    Ok(psi_moved)
}

#[test]
fn criterion_04_bn_tensors_stay_local() {
    let strategies = [
        "kind = \"fedbn\"",
        "kind = \"weighted_bn\"\nlambda = 0.5",
        "kind = \"weighted_feature\"\nlambda = 0.5",
        "kind = \"weighted_running\"\nlambda = 0.5\nwarm_up_rounds = 3",
    ];
    let mut lines = Vec::new();
    let mut pass = true;
    for s in strategies {
        match bn_survives_aggregation(s) {
            // Aggregation must have touched the shared part, or the check is vacuous.
            Ok(moved) => {
                pass &= moved > 0;
                lines.push(format!("{} ok ({moved} non-BN updates)", s.lines().next().unwrap()));
            }
            Err(e) => {
                pass = false;
                lines.push(e);
            }
        }
    }
    report(
        4,
        pass,
        &format!("BN bit-identical across 10 aggregations: {}", lines.join("; ")),
    );
    assert!(pass);
}

fn max_model_diff(a: &[Model<f64>], b: &[Model<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.state_dict().max_abs_diff(&y.state_dict()).expect("same architecture"))
        .fold(0.0, f64::max)
}

/// Steps two experiments side by side and returns the largest parameter
/// gap seen after any round.
fn trajectory_gap(a: &str, ab: Ablation, b: &str, rounds: usize) -> f64 {
    // Three clients so that the uniform weight 1/3 is inexact in binary.
    let mut ca = small_config(a, 5);
    ca.clients = 3;
    ca.ablation = ab;
    let mut cb = small_config(b, 5);
    cb.clients = 3;
    let Setup {
        state: mut sa,
        pretrained: pa,
        ..
    } = setup_experiment::<f64>(&ca, None).unwrap();
    let Setup { state: mut sb, .. } = setup_experiment::<f64>(&cb, None).unwrap();
    sa.setup_weights(pa.as_ref()).unwrap();
    let mut gap = max_model_diff(&sa.models, &sb.models);
    for _ in 0..rounds {
        sa.run_round().unwrap();
        sb.run_round().unwrap();
        gap = gap.max(max_model_diff(&sa.models, &sb.models));
    }
    gap
}

#[test]
fn criterion_05_reductions() {
    let t = Instant::now();
    let uniform = Ablation {
        share_bn: true,
        uniform_weights: true,
    };
    let gap_a = trajectory_gap("kind = \"weighted_bn\"\nlambda = 0.5", uniform, "kind = \"fedavg\"", 5);
    let secs_a = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let gap_b = trajectory_gap(
        "kind = \"weighted_bn\"\nlambda = 1.0",
        Ablation::default(),
        "kind = \"base\"",
        5,
    );
    let secs_b = t.elapsed().as_secs_f64();
    let pass = gap_a <= 1e-9 && gap_b <= 1e-9 && secs_a < 120.0 && secs_b < 120.0;
    report(
        5,
        pass,
        &format!(
            "(a) uniform W + shared BN vs fedavg max gap {gap_a:.1e} in {secs_a:.1}s; (b) lambda=1 vs base max gap {gap_b:.1e} in {secs_b:.1}s (<= 1e-9, < 120s each)"
        ),
    );
    assert!(pass);
}

const BENCH_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const BENCH_STRATEGIES: [&str; 4] = ["base", "fedavg", "fedbn", "weighted_bn"];

struct Bench {
    /// strategy -> per-seed average-accuracy curve
    curves: BTreeMap<&'static str, Vec<Vec<f64>>>,
    secs: f64,
}

fn bench() -> &'static Bench {
    static CELL: OnceLock<Bench> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let jobs: Vec<(&'static str, u64)> = BENCH_STRATEGIES
            .iter()
            .flat_map(|&s| BENCH_SEEDS.iter().map(move |&seed| (s, seed)))
            .collect();
        let done: Vec<(&str, u64, Vec<f64>)> = jobs
            .par_iter()
            .map(|&(s, seed)| {
                let mut cfg = benchmark_config(seed, std::path::Path::new("unused"));
                match s {
                    "base" => cfg.strategy = Strategy::Base {},
                    "fedavg" => cfg.strategy = Strategy::FedAvg {},
                    "fedbn" => cfg.strategy = Strategy::FedBn {},
                    _ => {}
                }
                let res = run_experiment::<f64>(&cfg).unwrap();
                (s, seed, res.avg_accuracy_curve())
            })
            .collect();
        let mut curves: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
        for seed in BENCH_SEEDS {
            for (s, sd, c) in &done {
                if *sd == seed {
                    curves.entry(s).or_default().push(c.clone());
                }
            }
        }
        Bench {
            curves,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_06_label_shift_benchmark() {
    let b = bench();
    let mean: BTreeMap<&str, f64> = b
        .curves
        .iter()
        .map(|(s, cs)| {
            (
                *s,
                cs.iter().map(|c| c.last().unwrap()).sum::<f64>() / cs.len() as f64 * 100.0,
            )
        })
        .collect();
    let ours = mean["weighted_bn"];
    let pass = ours >= mean["fedavg"] + 5.0 && ours >= mean["base"] && ours >= mean["fedbn"] && b.secs < 600.0;
    report(
        6,
        pass,
        &format!(
            "mean final avg accuracy over 5 seeds: weighted_bn {ours:.2}, fedavg {:.2} (need +5), base {:.2}, fedbn {:.2}; {:.1}s (< 600s)",
            mean["fedavg"], mean["base"], mean["fedbn"], b.secs
        ),
    );
    assert!(pass);
}

fn split_in_two(d: &fedsim::data::Dataset<f64>, seed: u64) -> ClientSplit<f64> {
    let s = split_train_test(d, 0.5, seed).unwrap();
    ClientSplit {
        train: s.train,
        test: s.test,
    }
}

#[test]
fn criterion_07_similar_clients_weigh_more() {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10u64 {
        let spec = SyntheticSpec {
            num_classes: 3,
            channels: 1,
            width: 8,
            samples_per_class: 60,
            separation: 3.0,
            noise: 1.0,
            feature_shift: None,
        };
        let a = make_synthetic::<f64>(&spec, seed).unwrap();
        let idx = |r: usize| (0..a.len()).filter(|i| i % 2 == r).collect::<Vec<_>>();
        let (a1, a2) = (a.subset(&idx(0)), a.subset(&idx(1)));
        let mut b = make_synthetic::<f64>(&spec, seed + 1000).unwrap().subset(&idx(0));
        b.apply_affine(1.5, 3.0);
        let splits: Vec<ClientSplit<f64>> = [&a1, &a2, &b].iter().map(|d| split_in_two(d, seed)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = fedsim::harness::ModelConfig::Mlp {
            hidden: vec![8],
            batch_norm: true,
        }
        .layer_specs(1, 8, 3);
        let init = Model::<f64>::new(&[1, 8], specs, BnConfig::default(), &mut rng).unwrap();
        let pool = fedsim::data::Dataset::concat(&[&splits[0].train, &splits[1].train, &splits[2].train]).unwrap();
        let lc = LocalTrainConfig {
            epochs: 3,
            lr: 0.05,
            momentum: 0.0,
            batch_size: 16,
            seed,
        };
        let mut pre = train_local(&init, &pool, &lc, None).unwrap();
        pre.set_mode(Mode::Eval);
        let train = TrainSettings {
            epochs: 1,
            lr: 0.01,
            momentum: 0.0,
            batch_size: 16,
        };
        let mut state = FederationState::new(
            vec![init.clone(), init.clone(), init],
            splits,
            Strategy::WeightedBn { lambda: 0.5 },
            Ablation::default(),
            train,
            seed,
        )
        .unwrap();
        let w = state.setup_weights(Some(&pre)).unwrap();
        let ok = w.get(0, 1) > w.get(0, 2) && w.get(1, 0) > w.get(1, 2);
        wins += usize::from(ok);
        if !ok {
            detail.push(format!("seed {seed}: w01 {:.4} w02 {:.4}", w.get(0, 1), w.get(0, 2)));
        }
    }
    let pass = wins == 10;
    report(
        7,
        pass,
        &format!("w(A1,A2) > w(A1,B) on {wins}/10 seeds (need 10) {}", detail.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_running_stats_premise() {
    let mut min_corr = f64::INFINITY;
    let mut agreements = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut cfg = benchmark_config(seed, std::path::Path::new("unused"));
        let lambda = cfg.strategy.lambda().unwrap();
        cfg.strategy = Strategy::WeightedRunning {
            lambda,
            warm_up_rounds: 5,
        };
        let Setup { mut state, .. } = setup_experiment::<f64>(&cfg, None).unwrap();
        let w_running = state.setup_weights(None).unwrap().clone();
        for (m, split) in state.models.iter().zip(&state.splits) {
            let run = extract_bn_running_stats(m).unwrap();
            let col = collect_bn_input_stats(m, &split.train, 64).unwrap();
            let a: Vec<f64> = run.layers.iter().flat_map(|l| l.mean.clone()).collect();
            let b: Vec<f64> = col.layers.iter().flat_map(|l| l.mean.clone()).collect();
            min_corr = min_corr.min(pearson(&a, &b));
        }
        cfg.strategy = Strategy::WeightedBn { lambda };
        let Setup {
            mut state, pretrained, ..
        } = setup_experiment::<f64>(&cfg, None).unwrap();
        let w_bn = state.setup_weights(pretrained.as_ref()).unwrap();
        agreements.push(ordering_agreement(&w_running, w_bn));
    }
    let mean_agree = agreements.iter().sum::<f64>() / agreements.len() as f64;
    let pass = min_corr >= 0.9 && mean_agree >= 0.8;
    report(
        8,
        pass,
        &format!(
            "min per-client Pearson(running mean, collected mean) {min_corr:.3} (>= 0.9); W ordering agreement per seed {agreements:.3?}, mean {mean_agree:.3} (>= 0.8)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_convergence_speed() {
    let b = bench();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for (ours, theirs) in b.curves["weighted_bn"].iter().zip(&b.curves["fedbn"]) {
        let r_ours = rounds_to_threshold(ours, 0.95);
        let r_theirs = rounds_to_threshold(theirs, 0.95);
        let ok =
            matches!((r_ours, r_theirs), (Some(a), Some(b)) if a <= b) || matches!((r_ours, r_theirs), (Some(_), None));
        wins += usize::from(ok);
        pairs.push(format!("{r_ours:?}<={r_theirs:?}"));
    }
    let pass = wins >= 4;
    report(
        9,
        pass,
        &format!(
            "rounds to 95% of final: weighted_bn vs fedbn {} -> {wins}/5 seeds (need 4)",
            pairs.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    let strategies = [
        "kind = \"weighted_running\"\nlambda = 0.5\nwarm_up_rounds = 2",
        "kind = \"weighted_bn\"\nlambda = 0.5",
        "kind = \"fedprox\"\nmu = 0.01",
    ];
    for (si, s) in strategies.iter().enumerate() {
        let mut outs = Vec::new();
        for (run, parallel) in [true, true, false].into_iter().enumerate() {
            let mut cfg = small_config(s, 10);
            cfg.max_rounds = 5;
            cfg.parallel = parallel;
            let res = run_experiment::<f64>(&cfg).unwrap();
            let out = dir.path().join(format!("{si}_{run}"));
            emit_results(&out, &res).unwrap();
            outs.push(out);
        }
        for f in ["metrics.jsonl", "table.csv", "table_marks.csv"] {
            let first = fs::read(outs[0].join(f)).unwrap();
            for o in &outs[1..] {
                if fs::read(o.join(f)).unwrap() != first {
                    mismatches.push(format!("{} {f}", s.lines().next().unwrap()));
                }
            }
        }
    }
    let pass = mismatches.is_empty();
    report(
        10,
        pass,
        &format!("3 strategies x (parallel, parallel, sequential): byte mismatches {mismatches:?}"),
    );
    assert!(pass);
}
