//! Transition and path probabilities, path translation, and the log-likelihood.

mod likelihood;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    length_distances, min_steps, Direction, NodeId, PathObservation, StateGraph, StateId, StepDistanceMap,
};
use crate::prism::{build_prism, Prism, StageConstraint};
use crate::utility::{EdgeFeatures, UtilitySpec, WeightMatrix};
use crate::value::{edge_log_weight, LogSum, solve_nrl, solve_rl, solve_staged, StagedValueTable, ValueTable};

pub use likelihood::{GradientMode, Problem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Rl,
    Nrl,
    PrismRl,
    PrismNrl,
}

impl ModelKind {
    pub fn new(prism: bool, nested: bool) -> Self {
        match (prism, nested) {
            (false, false) => Self::Rl,
            (false, true) => Self::Nrl,
            (true, false) => Self::PrismRl,
            (true, true) => Self::PrismNrl,
        }
    }

    pub fn is_prism(self) -> bool {
        matches!(self, Self::PrismRl | Self::PrismNrl)
    }

    pub fn is_nested(self) -> bool {
        matches!(self, Self::Nrl | Self::PrismNrl)
    }

    /// The same utility structure without the prism.
    pub fn universal(self) -> Self {
        Self::new(false, self.is_nested())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rl => "RL",
            Self::Nrl => "NRL",
            Self::PrismRl => "Prism-RL",
            Self::PrismNrl => "Prism-NRL",
        })
    }
}

/// Which paths the model admits.
#[derive(Clone, Debug, PartialEq)]
pub enum PathSet {
    Universal,
    Prism(StageConstraint),
}

/// An observation as a stage-indexed state sequence padded at the absorbing state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranslatedPath {
    states: Vec<StateId>,
    transitions: usize,
    destination: NodeId,
}

impl TranslatedPath {
    /// T; the sequence has `T + 1` entries.
    pub fn stages(&self) -> usize {
        self.states.len() - 1
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    /// J_n, the transitions before padding.
    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn destination(&self) -> NodeId {
        self.destination
    }
}

/// Pads an observation to `stages` transitions; fails when `J_n > T`.
pub fn translate_path(obs: &PathObservation, graph: &StateGraph, stages: usize) -> Result<TranslatedPath> {
    let mut states = obs.states(graph)?;
    let transitions = states.len() - 1;
    if transitions > stages {
        return Err(Error::OutOfPrism {
            id: obs.id.clone(),
            destination: obs.destination,
            transitions,
            stages,
        });
    }
    let absorbing = *states.last().unwrap();
    states.resize(stages + 1, absorbing);
    Ok(TranslatedPath {
        states,
        transitions,
        destination: obs.destination,
    })
}

/// Identifies one value-function solve: a destination, plus an origin for per-OD prisms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    pub destination: NodeId,
    pub origin: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub(crate) struct Context {
    pub key: Key,
    pub prism: Option<Prism>,
    /// `√SP_kd`, present for nested models.
    pub sqrt_sp: Option<Vec<f64>>,
}

/// Model structure shared by every parameter vector: state graph, compiled
/// utility features, path set and per-destination (or per-OD) prisms.
#[derive(Debug)]
pub struct Model {
    graph: Arc<StateGraph>,
    spec: UtilitySpec,
    features: EdgeFeatures,
    path_set: PathSet,
    contexts: Vec<Context>,
    index: BTreeMap<Key, usize>,
    missing: BTreeMap<Key, usize>,
}

impl Model {
    pub fn new(graph: Arc<StateGraph>, spec: UtilitySpec, path_set: PathSet) -> Result<Self> {
        let features = EdgeFeatures::compile(&spec, &graph)?;
        let destinations: Vec<NodeId> = graph.destinations().collect();
        let steps: BTreeMap<NodeId, StepDistanceMap> = destinations
            .iter()
            .map(|&d| Ok((d, min_steps(&graph, d, Direction::ToDestination)?)))
            .collect::<Result<_>>()?;
        let sqrt_sp: BTreeMap<NodeId, Vec<f64>> = if spec.is_nested() {
            destinations
                .iter()
                .map(|&d| Ok((d, length_distances(&graph, d)?.as_slice().iter().map(|x| x.sqrt()).collect())))
                .collect::<Result<_>>()?
        } else {
            BTreeMap::new()
        };

        let mut contexts = Vec::new();
        let mut missing = BTreeMap::new();
        let mut push = |key: Key, prism: Option<Prism>| {
            contexts.push(Context {
                key,
                prism,
                sqrt_sp: sqrt_sp.get(&key.destination).cloned(),
            });
        };
        match &path_set {
            PathSet::Universal => {
                for &d in &destinations {
                    push(Key { destination: d, origin: None }, None);
                }
            }
            PathSet::Prism(c) if !c.is_per_od() => {
                for &d in &destinations {
                    let prism = build_prism(&graph, &steps[&d], c.destination_stages(d), None)?;
                    push(Key { destination: d, origin: None }, Some(prism));
                }
            }
            PathSet::Prism(c) => {
                let origins: Vec<NodeId> = graph.origins().collect();
                for &o in &origins {
                    let from_o = min_steps(&graph, o, Direction::FromOrigin)?;
                    for &d in &destinations {
                        let key = Key { destination: d, origin: Some(o) };
                        let t = c.stages(o, d);
                        match build_prism(&graph, &steps[&d], t, Some(&from_o)) {
                            Ok(p) => push(key, Some(p)),
                            Err(Error::EmptyPrism { .. }) => {
                                missing.insert(key, t);
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        let index = contexts.iter().enumerate().map(|(i, c)| (c.key, i)).collect();
        Ok(Self {
            graph,
            spec,
            features,
            path_set,
            contexts,
            index,
            missing,
        })
    }

    pub fn graph(&self) -> &StateGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<StateGraph> {
        self.graph.clone()
    }

    pub fn spec(&self) -> &UtilitySpec {
        &self.spec
    }

    pub fn features(&self) -> &EdgeFeatures {
        &self.features
    }

    pub fn path_set(&self) -> &PathSet {
        &self.path_set
    }

    pub fn kind(&self) -> ModelKind {
        ModelKind::new(matches!(self.path_set, PathSet::Prism(_)), self.spec.is_nested())
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    pub(crate) fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    /// The prism used for an OD pair, if the model is prism-constrained.
    pub fn prism(&self, origin: NodeId, destination: NodeId) -> Result<Option<&Prism>> {
        Ok(self.contexts[self.context_of(origin, destination)?].prism.as_ref())
    }

    pub(crate) fn context_of(&self, origin: NodeId, destination: NodeId) -> Result<usize> {
        let per_od = matches!(&self.path_set, PathSet::Prism(c) if c.is_per_od());
        let key = Key {
            destination,
            origin: per_od.then_some(origin),
        };
        if let Some(&i) = self.index.get(&key) {
            return Ok(i);
        }
        match self.missing.get(&key) {
            Some(&stages) => Err(Error::EmptyPrism { destination, stages }),
            None => Err(Error::UnknownNode(destination)),
        }
    }

    /// Solves the value function of one context.
    pub(crate) fn solve_context(&self, ctx: usize, v: &[f64], omega: f64) -> Result<Solved> {
        let c = &self.contexts[ctx];
        let scales: Option<Vec<f64>> = c
            .sqrt_sp
            .as_ref()
            .map(|s| s.iter().map(|x| if x.is_finite() { (omega * x).exp() } else { 1.0 }).collect());
        let values = match (&c.prism, &scales) {
            (Some(p), mu) => Values::Staged(solve_staged(&self.graph, v, mu.as_deref(), p)),
            (None, None) => {
                let w = WeightMatrix::from_utilities(v.to_vec());
                Values::Universal(solve_rl(&self.graph, &w, c.key.destination)?)
            }
            (None, Some(mu)) => {
                let w = WeightMatrix::from_utilities(v.to_vec());
                Values::Universal(solve_nrl(&self.graph, &w, mu, c.key.destination)?)
            }
        };
        Ok(Solved { values, scales })
    }

    /// Solves every context at `theta`.
    pub fn fit(self: &Arc<Self>, theta: &[f64]) -> Result<FittedModel> {
        let (beta, omega) = self.spec.split(theta)?;
        let v = self.features.utilities(beta);
        let solved = (0..self.contexts.len())
            .into_par_iter()
            .map(|i| self.solve_context(i, &v, omega))
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedModel {
            model: self.clone(),
            theta: theta.to_vec(),
            v,
            solved,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Values {
    Universal(ValueTable),
    Staged(StagedValueTable),
}

#[derive(Clone, Debug)]
pub(crate) struct Solved {
    pub values: Values,
    pub scales: Option<Vec<f64>>,
}

impl Solved {
    #[inline]
    pub fn log_z(&self, t: usize, k: StateId) -> f64 {
        match &self.values {
            Values::Universal(v) => v.log_z[k],
            Values::Staged(s) => s.log_z(t, k),
        }
    }

    #[inline]
    pub fn mu(&self, k: StateId) -> f64 {
        self.scales.as_ref().map_or(1.0, |s| s[k])
    }

    /// `ln z` at the successor stage.
    #[inline]
    pub fn log_z_next(&self, t: usize, a: StateId) -> f64 {
        match &self.values {
            Values::Universal(v) => v.log_z[a],
            Values::Staged(s) => s.log_z(t + 1, a),
        }
    }

    pub fn is_staged(&self) -> bool {
        matches!(self.values, Values::Staged(_))
    }
}

/// Per-observation scoring result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationScore {
    pub id: String,
    /// `ln P(σ_n)`; `-∞` when the path is outside the model's path set.
    pub log_prob: f64,
    pub feasible: bool,
}

/// A model with solved value functions at one parameter vector.
#[derive(Clone, Debug)]
pub struct FittedModel {
    model: Arc<Model>,
    theta: Vec<f64>,
    v: Vec<f64>,
    solved: Vec<Solved>,
}

impl FittedModel {
    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn graph(&self) -> &StateGraph {
        self.model.graph()
    }

    /// Instantaneous utility of every edge.
    pub fn utilities(&self) -> &[f64] {
        &self.v
    }

    /// `V(t, k) = μ_k ln z_{t,k}` (`t` is ignored for universal models).
    pub fn value(&self, origin: NodeId, destination: NodeId, t: usize, k: StateId) -> Result<f64> {
        let s = &self.solved[self.model.context_of(origin, destination)?];
        Ok(s.mu(k) * s.log_z(t, k))
    }

    /// Log transition probabilities over `A(k)` at stage `t`, as `(edge, ln p)`.
    pub(crate) fn log_transitions(&self, ctx: usize, t: usize, k: StateId) -> Result<Vec<(usize, f64)>> {
        let graph = self.model.graph();
        let s = &self.solved[ctx];
        let lk = s.log_z(t, k);
        if lk == f64::NEG_INFINITY {
            return Err(Error::Spec(format!(
                "{} at stage {t} is outside the path set",
                graph.label(k)
            )));
        }
        let mu_k = s.mu(k);
        let mut weights: Vec<(usize, f64)> = graph
            .actions(k)
            .map(|e| {
                let a = graph.target(e);
                (e, edge_log_weight(self.v[e], mu_k, s.mu(a), s.log_z_next(t, a)))
            })
            .collect();
        // normalize locally so iterative solves do not leak their tolerance into the sum
        let mut norm = LogSum::new();
        weights.iter().for_each(|w| norm.add(w.1));
        let norm = norm.value();
        weights.iter_mut().for_each(|w| w.1 -= norm);
        Ok(weights)
    }

    /// Probabilities of every action of `k` at stage `t` (ignored for universal models).
    ///
    /// Actions leaving the prism get probability zero. The absorbing state has no
    /// actions; its padding transition has probability one and is not listed.
    pub fn transition_probs(
        &self,
        origin: NodeId,
        destination: NodeId,
        t: usize,
        k: StateId,
    ) -> Result<Vec<(StateId, f64)>> {
        let ctx = self.model.context_of(origin, destination)?;
        let graph = self.model.graph();
        if let Some(p) = &self.model.contexts()[ctx].prism {
            if t >= p.stages() || !p.is_active(t, k) {
                return Err(Error::Spec(format!("{} is not in the prism at stage {t}", graph.label(k))));
            }
        }
        Ok(self
            .log_transitions(ctx, t, k)?
            .into_iter()
            .map(|(e, lp)| (graph.target(e), lp.exp()))
            .collect())
    }

    /// `ln P(σ)` as the sum of log transition probabilities; padding contributes 0.
    pub fn path_log_probability(&self, obs: &PathObservation) -> Result<f64> {
        let graph = self.model.graph();
        let ctx = self.model.context_of(obs.origin, obs.destination)?;
        let states = obs.states(graph)?;
        if let Some(p) = &self.model.contexts()[ctx].prism {
            if !p.contains_states(graph, &states) {
                return Ok(f64::NEG_INFINITY);
            }
        }
        let mut total = 0.0;
        for (t, w) in states.windows(2).enumerate() {
            let (k, a) = (w[0], w[1]);
            if self.solved[ctx].log_z(t, k) == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            let e = graph.edge(k, a).expect("validated path");
            let lp = self.log_transitions(ctx, t, k)?;
            total += lp.iter().find(|x| x.0 == e).map_or(f64::NEG_INFINITY, |x| x.1);
        }
        Ok(total)
    }

    pub fn path_probability(&self, obs: &PathObservation) -> Result<f64> {
        Ok(self.path_log_probability(obs)?.exp())
    }

    /// `ln P(σ) = v(σ) + V(T, d) − V(0, o)` with μ = 1; `None` for nested models.
    pub fn path_log_probability_telescoped(&self, obs: &PathObservation) -> Result<Option<f64>> {
        if self.model.spec().is_nested() {
            return Ok(None);
        }
        let graph = self.model.graph();
        let ctx = self.model.context_of(obs.origin, obs.destination)?;
        let states = obs.states(graph)?;
        if let Some(p) = &self.model.contexts()[ctx].prism {
            if !p.contains_states(graph, &states) {
                return Ok(Some(f64::NEG_INFINITY));
            }
        }
        let v: f64 = states
            .windows(2)
            .map(|w| self.v[graph.edge(w[0], w[1]).expect("validated path")])
            .sum();
        Ok(Some(v - self.solved[ctx].log_z(0, states[0])))
    }

    /// Scores each observation, flagging those outside the path set instead of failing.
    pub fn score(&self, observations: &[PathObservation]) -> Result<Vec<ObservationScore>> {
        observations
            .iter()
            .map(|o| {
                let lp = self.path_log_probability(o)?;
                Ok(ObservationScore {
                    id: o.id.clone(),
                    log_prob: lp,
                    feasible: lp > f64::NEG_INFINITY,
                })
            })
            .collect()
    }
}

/// Log-likelihood of `observations` under `spec` at `theta` (closed form).
pub fn log_likelihood(
    graph: Arc<StateGraph>,
    spec: &UtilitySpec,
    theta: &[f64],
    observations: &[PathObservation],
    path_set: PathSet,
) -> Result<f64> {
    let model = Arc::new(Model::new(graph, spec.clone(), path_set)?);
    Problem::new(model, observations)?.log_likelihood(theta)
}
