//! Monte Carlo path generation and the experiment harnesses built on it.

mod experiment;
mod validation;

pub use experiment::{
    reproduce_truth_experiment, split_samples, t_sensitivity, AverageRow, ExperimentRow, StartPoint, TRow,
    TruthExperiment, TruthReport,
};
pub use validation::{
    cross_validate, out_of_prism_grid, FoldReport, OutOfPrismCell, ValidationConfig, ValidationReport,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::FittedModel;
use crate::error::{Error, Result};
use crate::network::{NodeId, PathObservation, StateGraph, StateId};

fn default_max_steps() -> usize {
    1000
}

fn default_breach_rate() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// `(origin, destination)` pairs.
    pub ods: Vec<(NodeId, NodeId)>,
    pub per_od: usize,
    pub seed: u64,
    /// Transitions allowed before a draw is discarded and resampled.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Abort when more than this fraction of draws breach the cap.
    #[serde(default = "default_breach_rate")]
    pub max_breach_rate: f64,
}

impl SimulationConfig {
    /// Every pair of the given origins and destinations with distinct nodes.
    pub fn all_pairs(origins: &[NodeId], destinations: &[NodeId], per_od: usize, seed: u64) -> Self {
        let ods = origins
            .iter()
            .flat_map(|&o| destinations.iter().filter(move |&&d| d != o).map(move |&d| (o, d)))
            .collect();
        Self {
            ods,
            per_od,
            seed,
            max_steps: default_max_steps(),
            max_breach_rate: default_breach_rate(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ods.is_empty() || self.per_od == 0 || self.max_steps == 0 {
            return Err(Error::Spec("simulation needs OD pairs, a positive count and a positive step cap".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    /// Grouped by OD pair in configuration order, then by draw.
    pub observations: Vec<PathObservation>,
    pub draws: usize,
    /// Draws discarded for exceeding the step cap.
    pub breaches: usize,
}

/// Samples paths transition by transition from the fitted model.
///
/// Each OD pair draws from its own ChaCha stream derived from the seed, so the
/// output does not depend on thread scheduling.
pub fn simulate_paths(fit: &FittedModel, config: &SimulationConfig) -> Result<Simulated> {
    config.validate()?;
    let per_od: Vec<(Vec<PathObservation>, usize, usize)> = config
        .ods
        .par_iter()
        .enumerate()
        .map(|(i, &(o, d))| simulate_od(fit, config, i as u64, o, d))
        .collect::<Result<_>>()?;
    let mut out = Simulated {
        observations: Vec::with_capacity(config.ods.len() * config.per_od),
        draws: 0,
        breaches: 0,
    };
    for (obs, draws, breaches) in per_od {
        out.observations.extend(obs);
        out.draws += draws;
        out.breaches += breaches;
    }
    Ok(out)
}

fn simulate_od(
    fit: &FittedModel,
    config: &SimulationConfig,
    stream: u64,
    origin: NodeId,
    destination: NodeId,
) -> Result<(Vec<PathObservation>, usize, usize)> {
    let graph = fit.graph();
    let start = graph
        .origin_state(origin)
        .ok_or_else(|| Error::Simulation(format!("node {origin} is not an origin of the state graph")))?;
    let end = graph
        .dest_state(destination)
        .ok_or_else(|| Error::Simulation(format!("node {destination} is not a destination of the state graph")))?;
    let ctx = fit.model().context_of(origin, destination)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let allowed = (config.max_breach_rate * config.per_od as f64).floor() as usize;
    let mut out = Vec::with_capacity(config.per_od);
    let (mut draws, mut breaches) = (0, 0);
    while out.len() < config.per_od {
        draws += 1;
        match draw(fit, ctx, graph, start, end, config.max_steps, &mut rng)? {
            Some(states) => {
                let id = format!("{origin}-{destination}-{}", out.len());
                out.push(PathObservation::from_states(id, graph, &states)?);
            }
            None => {
                breaches += 1;
                if breaches > allowed {
                    return Err(Error::Simulation(format!(
                        "{breaches} of {draws} draws for OD ({origin}, {destination}) exceeded {} steps",
                        config.max_steps
                    )));
                }
            }
        }
    }
    Ok((out, draws, breaches))
}

/// One path as a state sequence, or `None` if it did not absorb within `max_steps`.
fn draw(
    fit: &FittedModel,
    ctx: usize,
    graph: &StateGraph,
    start: StateId,
    end: StateId,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<StateId>>> {
    let mut states = vec![start];
    let mut k = start;
    let staged = fit.kind().is_prism();
    for t in 0..max_steps {
        if k == end {
            return Ok(Some(states));
        }
        let probs = fit.log_transitions(ctx, if staged { t } else { 0 }, k)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = None;
        for &(e, lp) in &probs {
            let p = lp.exp();
            if p == 0.0 {
                continue;
            }
            acc += p;
            next = Some(e);
            if u < acc {
                break;
            }
        }
        let e = next.ok_or_else(|| Error::Simulation(format!("{} has no admissible action", graph.label(k))))?;
        k = graph.target(e);
        states.push(k);
    }
    Ok((k == end).then_some(states))
}

#[cfg(test)]
mod tests;
