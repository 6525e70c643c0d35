use std::path::PathBuf;

use rayon::prelude::*;

use crate::federation::{Ablation, Strategy};
use crate::harness::config::ExperimentConfig;
use crate::harness::emit::{emit_results, emit_table, TableRow};
use crate::harness::experiment::{run_experiment, ExperimentResult};
use crate::harness::HarnessError;

/// The one hyper-parameter a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// With `epoch_budget`, each run gets `budget / E` rounds so the total
    /// number of local epochs stays fixed.
    LocalEpochs {
        values: Vec<usize>,
        epoch_budget: Option<usize>,
    },
    Clients(Vec<usize>),
    Lambda(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::LocalEpochs { .. } => "epochs",
            SweepAxis::Clients(_) => "clients",
            SweepAxis::Lambda(_) => "lambda",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::LocalEpochs { values, .. } => values.len(),
            SweepAxis::Clients(v) => v.len(),
            SweepAxis::Lambda(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value_label(&self, i: usize) -> String {
        match self {
            SweepAxis::LocalEpochs { values, .. } => values[i].to_string(),
            SweepAxis::Clients(v) => v[i].to_string(),
            SweepAxis::Lambda(v) => v[i].to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axis: SweepAxis,
}

pub struct SweepRun<S> {
    pub index: usize,
    pub value: String,
    pub output_dir: PathBuf,
    pub result: Result<ExperimentResult<S>, HarnessError>,
}

/// The configuration of run `i`: the base with one value changed. The seed
/// is the base seed for every run so runs are paired.
pub fn sweep_config(spec: &SweepSpec, i: usize) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = spec.base.clone();
    cfg.output_dir = spec
        .base
        .output_dir
        .join(format!("{:02}_{}_{}", i, spec.axis.name(), spec.axis.value_label(i)));
    match &spec.axis {
        SweepAxis::LocalEpochs { values, epoch_budget } => {
            let e = values[i];
            cfg.training.epochs = e;
            if let Some(budget) = epoch_budget {
                if e == 0 || budget % e != 0 {
                    return Err(HarnessError::Sweep(format!(
                        "epoch budget {budget} is not a multiple of E = {e}"
                    )));
                }
                cfg.max_rounds = budget / e;
            }
        }
        SweepAxis::Clients(v) => cfg.clients = v[i],
        SweepAxis::Lambda(v) => {
            let lambda = v[i];
            cfg.strategy = match cfg.strategy {
                Strategy::WeightedBn { .. } => Strategy::WeightedBn { lambda },
                Strategy::WeightedFeature { .. } => Strategy::WeightedFeature { lambda },
                Strategy::WeightedRunning { warm_up_rounds, .. } => {
                    Strategy::WeightedRunning { lambda, warm_up_rounds }
                }
                other => {
                    return Err(HarnessError::Sweep(format!(
                        "lambda sweep needs a weighted strategy, got `{}`",
                        other.tag()
                    )))
                }
            };
        }
    }
    Ok(cfg)
}

/// Runs every value of the axis, each isolated in its own directory. A
/// failing run is reported in its slot and the others continue. Writes
/// `sweep.csv` (one row per value, final results) under the base output
/// directory.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRun<f64>>, HarnessError> {
    if spec.axis.is_empty() {
        return Err(HarnessError::Sweep("no values to sweep".into()));
    }
    let runs: Vec<SweepRun<f64>> = (0..spec.axis.len())
        .into_par_iter()
        .map(|i| {
            let cfg = sweep_config(spec, i);
            let output_dir = cfg
                .as_ref()
                .map(|c| c.output_dir.clone())
                .unwrap_or_else(|_| spec.base.output_dir.clone());
            let result = cfg.and_then(|c| {
                let r = run_experiment::<f64>(&c)?;
                emit_results(&c.output_dir, &r)?;
                Ok(r)
            });
            SweepRun {
                index: i,
                value: spec.axis.value_label(i),
                output_dir,
                result,
            }
        })
        .collect();
    write_summary(spec, &runs)?;
    Ok(runs)
}

fn write_summary(spec: &SweepSpec, runs: &[SweepRun<f64>]) -> Result<(), HarnessError> {
    let dir = &spec.base.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;
    let path = dir.join("sweep.csv");
    let err = |e: csv::Error| HarnessError::Csv {
        path: path.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record([
        "index",
        "axis",
        "value",
        "seed",
        "rounds",
        "final_avg_accuracy",
        "status",
    ])
    .map_err(err)?;
    let seed = spec.base.seed.map(|s| s.to_string()).unwrap_or_default();
    for r in runs {
        let (rounds, acc, status) = match &r.result {
            Ok(res) => (
                res.log.len().to_string(),
                res.final_record()
                    .map(|f| f.avg_accuracy.to_string())
                    .unwrap_or_default(),
                "ok".to_string(),
            ),
            Err(e) => (String::new(), String::new(), format!("error: {e}")),
        };
        w.write_record([
            r.index.to_string(),
            spec.axis.name().into(),
            r.value.clone(),
            seed.clone(),
            rounds,
            acc,
            status,
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

/// Named ablation presets for a weighted strategy.
pub const ABLATIONS: [(&str, Ablation); 3] = [
    (
        "full",
        Ablation {
            share_bn: false,
            uniform_weights: false,
        },
    ),
    (
        "weighting_off",
        Ablation {
            share_bn: false,
            uniform_weights: true,
        },
    ),
    (
        "shared_bn",
        Ablation {
            share_bn: true,
            uniform_weights: false,
        },
    ),
];

/// Runs the base configuration under each preset in [`ABLATIONS`] and
/// writes a combined table with one row per preset.
pub fn run_ablation(base: &ExperimentConfig) -> Result<Vec<(String, ExperimentResult<f64>)>, HarnessError> {
    if !base.strategy.is_weighted() {
        return Err(HarnessError::Sweep(format!(
            "ablations need a weighted strategy, got `{}`",
            base.strategy.tag()
        )));
    }
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for (name, ablation) in ABLATIONS {
        let mut cfg = base.clone();
        cfg.ablation = ablation;
        cfg.output_dir = base.output_dir.join(name);
        let res = run_experiment::<f64>(&cfg)?;
        emit_results(&cfg.output_dir, &res)?;
        if let Some(f) = res.final_record() {
            rows.push(TableRow::from_record(cfg.run_label(), f));
        }
        out.push((name.to_string(), res));
    }
    emit_table(&base.output_dir, &rows)?;
    Ok(out)
}
