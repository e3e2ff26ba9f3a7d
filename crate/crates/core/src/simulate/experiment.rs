use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_paths, SimulationConfig};
use crate::choice::{Model, PathSet};
use crate::error::Result;
use crate::estimate::{estimate, EstimationResult, EstimatorSettings, Status};
use crate::network::{PathObservation, StateGraph};
use crate::prism::StageConstraint;
use crate::utility::UtilitySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartPoint {
    pub label: String,
    pub theta: Vec<f64>,
}

impl StartPoint {
    pub fn new(label: &str, theta: &[f64]) -> Self {
        Self {
            label: label.to_string(),
            theta: theta.to_vec(),
        }
    }
}

/// Simulate from the universal model at `truth`, then estimate RL and Prism-RL
/// on each sample from each start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthExperiment {
    pub truth: Vec<f64>,
    pub simulation: SimulationConfig,
    /// The simulated observations are split into this many samples.
    pub samples: usize,
    pub starts: Vec<StartPoint>,
    /// T of the prism model.
    pub prism_stages: usize,
    /// Template for every run; `start` and `reference` are overwritten.
    pub settings: EstimatorSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub sample: usize,
    pub start: String,
    pub result: EstimationResult,
}

/// Means over the converged samples of one (model, start) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub model: String,
    pub start: String,
    pub converged: usize,
    pub runs: usize,
    pub estimates: Vec<f64>,
    pub std_err: Vec<f64>,
    pub t_vs_truth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub param_names: Vec<String>,
    pub truth: Vec<f64>,
    pub observations: usize,
    pub breaches: usize,
    pub rows: Vec<ExperimentRow>,
    pub averages: Vec<AverageRow>,
}

impl TruthReport {
    pub fn rows_for<'a>(&'a self, model: &'a str, start: &'a str) -> impl Iterator<Item = &'a ExperimentRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.result.model == model && r.start == start)
    }

    pub fn average(&self, model: &str, start: &str) -> Option<&AverageRow> {
        self.averages.iter().find(|a| a.model == model && a.start == start)
    }
}

/// Splits grouped observations into `samples` parts, dealing each OD's draws round-robin.
pub fn split_samples(observations: &[PathObservation], samples: usize) -> Vec<Vec<PathObservation>> {
    let parts = samples.max(1);
    let mut out = vec![Vec::new(); parts];
    let mut index = 0;
    let mut last = None;
    for o in observations {
        let od = (o.origin, o.destination);
        if last != Some(od) {
            last = Some(od);
            index = 0;
        }
        out[index % parts].push(o.clone());
        index += 1;
    }
    out
}

pub fn reproduce_truth_experiment(
    graph: Arc<StateGraph>,
    spec: &UtilitySpec,
    experiment: &TruthExperiment,
) -> Result<TruthReport> {
    let truth_model = Arc::new(Model::new(graph.clone(), spec.clone(), PathSet::Universal)?);
    let simulated = simulate_paths(&truth_model.fit(&experiment.truth)?, &experiment.simulation)?;
    let samples = split_samples(&simulated.observations, experiment.samples);

    let models = [
        Arc::new(Model::new(graph.clone(), spec.clone(), PathSet::Universal)?),
        Arc::new(Model::new(
            graph,
            spec.clone(),
            PathSet::Prism(StageConstraint::Scalar(experiment.prism_stages)),
        )?),
    ];
    let jobs: Vec<(usize, usize, usize)> = (0..samples.len())
        .flat_map(|s| (0..models.len()).flat_map(move |m| (0..experiment.starts.len()).map(move |p| (s, m, p))))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(s, m, p)| {
            let start = &experiment.starts[p];
            let settings = EstimatorSettings {
                start: start.theta.clone(),
                reference: Some(experiment.truth.clone()),
                ..experiment.settings.clone()
            };
            Ok(ExperimentRow {
                sample: s,
                start: start.label.clone(),
                result: estimate(models[m].clone(), &samples[s], &settings)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut averages = Vec::new();
    for m in &models {
        for start in &experiment.starts {
            let model = m.kind().to_string();
            let runs: Vec<&EstimationResult> = rows
                .iter()
                .filter(|r| r.result.model == model && r.start == start.label)
                .map(|r| &r.result)
                .collect();
            let ok: Vec<&&EstimationResult> = runs.iter().filter(|r| r.status == Status::Converged).collect();
            let mean = |f: &dyn Fn(&EstimationResult) -> Vec<f64>| -> Vec<f64> {
                let dim = spec.n_params();
                let mut acc = vec![0.0; dim];
                for r in &ok {
                    acc.iter_mut().zip(f(r)).for_each(|(a, x)| *a += x);
                }
                acc.iter().map(|a| a / ok.len() as f64).collect()
            };
            averages.push(AverageRow {
                model,
                start: start.label.clone(),
                converged: ok.len(),
                runs: runs.len(),
                estimates: mean(&|r| r.estimates.clone()),
                std_err: mean(&|r| r.std_err.clone()),
                t_vs_truth: mean(&|r| r.t_vs_truth.clone().unwrap_or_default()),
            });
        }
    }
    Ok(TruthReport {
        param_names: spec.param_names(),
        truth: experiment.truth.clone(),
        observations: simulated.observations.len(),
        breaches: simulated.breaches,
        rows,
        averages,
    })
}

/// One prism estimation per T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TRow {
    pub stages: usize,
    pub result: EstimationResult,
}

/// Estimates the prism model once per value of T, sequentially so the
/// recorded wall-clock times are comparable.
pub fn t_sensitivity(
    graph: Arc<StateGraph>,
    spec: &UtilitySpec,
    observations: &[PathObservation],
    stages: &[usize],
    settings: &EstimatorSettings,
) -> Result<Vec<TRow>> {
    stages
        .iter()
        .map(|&t| {
            let model = Arc::new(Model::new(graph.clone(), spec.clone(), PathSet::Prism(StageConstraint::Scalar(t)))?);
            Ok(TRow {
                stages: t,
                result: estimate(model, observations, settings)?,
            })
        })
        .collect()
}
