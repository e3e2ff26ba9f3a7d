use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{Model, PathSet};
use crate::error::{Error, Result};
use crate::estimate::{estimate, EstimatorSettings, Status};
use crate::network::{PathObservation, StateGraph};
use crate::prism::{stage_constraint, ChoiceStagePolicy, StageConstraint, StageMode};
use crate::utility::UtilitySpec;

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub folds: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub seed: u64,
    /// Stage policy for prism models; `None` estimates the universal model.
    pub policy: Option<ChoiceStagePolicy>,
    /// Enlarge T so out-of-prism holdout paths can be scored too.
    #[serde(default)]
    pub score_out_of_prism: bool,
    pub settings: EstimatorSettings,
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Spec("cross-validation needs at least two folds".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Spec("train fraction must lie in (0, 1)".into()));
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train: usize,
    pub holdout: usize,
    /// Holdout paths that entered the log-likelihood.
    pub scored: usize,
    /// Holdout paths outside the prism built from the estimation sample.
    pub out_of_prism: usize,
    pub status: Status,
    pub estimates: Vec<f64>,
    pub holdout_ll: f64,
    /// `holdout_ll / scored`.
    pub ll_per_path: f64,
    /// Mean of `ll_per_path` over this and all earlier folds.
    pub running_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutOfPrismCell {
    pub gamma: f64,
    pub t_min: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub folds: Vec<FoldReport>,
    pub mean_ll_per_path: f64,
}

/// Random train/holdout split of `n` indices for one fold.
fn split(n: usize, fraction: f64, seed: u64, fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let cut = (n as f64 * fraction).round() as usize;
    let mut train = idx[..cut].to_vec();
    let mut holdout = idx[cut..].to_vec();
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

fn pick(observations: &[PathObservation], idx: &[usize]) -> Vec<PathObservation> {
    idx.iter().map(|&i| observations[i].clone()).collect()
}

fn outside(constraint: &StageConstraint, o: &PathObservation) -> bool {
    o.transitions() > constraint.stages(o.origin, o.destination)
}

/// Widens `constraint` so every path in `extra` fits.
fn widen(constraint: &StageConstraint, extra: &[PathObservation]) -> StageConstraint {
    let mut c = constraint.clone();
    for o in extra {
        let j = o.transitions();
        match &mut c {
            StageConstraint::Scalar(t) => *t = (*t).max(j),
            StageConstraint::PerDestination { stages, default } => {
                let e = stages.entry(o.destination).or_insert(*default);
                *e = (*e).max(j);
            }
            StageConstraint::PerOd { stages, default } => {
                let e = stages.entry((o.origin, o.destination)).or_insert(*default);
                *e = (*e).max(j);
            }
        }
    }
    c
}

/// Repeated random 80/20 splits: estimate on one part, score the other.
///
/// T is derived from the estimation sample only. Holdout paths outside the
/// resulting prisms are counted and, unless `score_out_of_prism` is set, left
/// out of the holdout log-likelihood.
pub fn cross_validate(
    graph: Arc<StateGraph>,
    spec: &UtilitySpec,
    observations: &[PathObservation],
    config: &ValidationConfig,
) -> Result<ValidationReport> {
    config.validate()?;
    let mut folds = (0..config.folds)
        .into_par_iter()
        .map(|fold| run_fold(&graph, spec, observations, config, fold))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut count = 0;
    for f in &mut folds {
        if f.ll_per_path.is_finite() {
            sum += f.ll_per_path;
            count += 1;
        }
        f.running_mean = sum / count as f64;
    }
    Ok(ValidationReport {
        mean_ll_per_path: sum / count as f64,
        folds,
    })
}

fn run_fold(
    graph: &Arc<StateGraph>,
    spec: &UtilitySpec,
    observations: &[PathObservation],
    config: &ValidationConfig,
    fold: usize,
) -> Result<FoldReport> {
    let (train_idx, holdout_idx) = split(observations.len(), config.train_fraction, config.seed, fold);
    let train = pick(observations, &train_idx);
    let holdout = pick(observations, &holdout_idx);
    let constraint = config
        .policy
        .as_ref()
        .map(|p| stage_constraint(&train, graph, p))
        .transpose()?;
    let path_set = constraint.clone().map_or(PathSet::Universal, PathSet::Prism);
    let model = Arc::new(Model::new(graph.clone(), spec.clone(), path_set)?);
    let result = estimate(model.clone(), &train, &config.settings)?;

    let (inside, out): (Vec<PathObservation>, Vec<PathObservation>) = match &constraint {
        Some(c) => holdout.iter().cloned().partition(|o| !outside(c, o)),
        None => (holdout.clone(), Vec::new()),
    };
    let scored: Vec<PathObservation> = if config.score_out_of_prism {
        holdout.clone()
    } else {
        inside
    };
    let holdout_ll = if result.status.is_infeasible() {
        f64::NAN
    } else {
        let scoring_model = match (&constraint, config.score_out_of_prism && !out.is_empty()) {
            (Some(c), true) => Arc::new(Model::new(graph.clone(), spec.clone(), PathSet::Prism(widen(c, &out)))?),
            _ => model,
        };
        let fit = scoring_model.fit(&result.estimates)?;
        fit.score(&scored)?.iter().map(|s| s.log_prob).sum()
    };
    Ok(FoldReport {
        fold,
        train: train.len(),
        holdout: holdout.len(),
        scored: scored.len(),
        out_of_prism: out.len(),
        status: result.status,
        estimates: result.estimates,
        holdout_ll,
        ll_per_path: holdout_ll / scored.len() as f64,
        running_mean: f64::NAN,
    })
}

/// Share of holdout paths outside the prism for every `(γ, Ṯ)`, as mean, min
/// and max over folds. Uses the folds of `config` and the stage mode of its
/// policy (per destination when unset).
pub fn out_of_prism_grid(
    graph: &StateGraph,
    observations: &[PathObservation],
    config: &ValidationConfig,
    gammas: &[f64],
    t_mins: &[usize],
) -> Result<Vec<OutOfPrismCell>> {
    config.validate()?;
    let mode = config.policy.as_ref().map_or(StageMode::Destination, |p| p.mode);
    if mode == StageMode::Scalar {
        return Err(Error::Spec("out-of-prism accounting needs per-destination or per-OD stages".into()));
    }
    let splits: Vec<(Vec<PathObservation>, Vec<PathObservation>)> = (0..config.folds)
        .map(|f| {
            let (a, b) = split(observations.len(), config.train_fraction, config.seed, f);
            (pick(observations, &a), pick(observations, &b))
        })
        .collect();
    let cells: Vec<(f64, usize)> = gammas.iter().flat_map(|&g| t_mins.iter().map(move |&t| (g, t))).collect();
    cells
        .par_iter()
        .map(|&(gamma, t_min)| {
            let policy = ChoiceStagePolicy {
                mode,
                t: None,
                gamma,
                t_min,
            };
            let ratios = splits
                .iter()
                .map(|(train, holdout)| {
                    let c = stage_constraint(train, graph, &policy)?;
                    let n = holdout.iter().filter(|o| outside(&c, o)).count();
                    Ok(n as f64 / holdout.len().max(1) as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(OutOfPrismCell {
                gamma,
                t_min,
                mean: ratios.iter().sum::<f64>() / ratios.len() as f64,
                min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
                max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}
