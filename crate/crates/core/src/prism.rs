//! Stage-indexed prisms: the states that can still reach the destination
//! within the remaining choice stages, and the choice-stage constraints
//! derived from observed detours.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::choice::TranslatedPath;
use crate::error::{Error, Result};
use crate::network::{min_steps, Direction, NodeId, PathObservation, StateGraph, StateId, StateKind, StepDistanceMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    /// One T for every destination.
    Scalar,
    /// T_d per destination.
    Destination,
    /// T_od per origin-destination pair, with doubly constrained prisms.
    Od,
}

fn one() -> f64 {
    1.0
}

fn one_stage() -> usize {
    1
}

/// How choice-stage constraints are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceStagePolicy {
    pub mode: StageMode,
    /// T for `Scalar` mode.
    #[serde(default)]
    pub t: Option<usize>,
    /// Detour rate γ ≥ 1.
    #[serde(default = "one")]
    pub gamma: f64,
    /// Minimum constraint Ṯ ≥ 1.
    #[serde(default = "one_stage")]
    pub t_min: usize,
}

impl ChoiceStagePolicy {
    pub fn scalar(t: usize) -> Self {
        Self {
            mode: StageMode::Scalar,
            t: Some(t),
            gamma: 1.0,
            t_min: 1,
        }
    }

    pub fn per_destination(gamma: f64, t_min: usize) -> Self {
        Self {
            mode: StageMode::Destination,
            t: None,
            gamma,
            t_min,
        }
    }

    pub fn per_od(gamma: f64, t_min: usize) -> Self {
        Self {
            mode: StageMode::Od,
            ..Self::per_destination(gamma, t_min)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(Error::Spec(format!("detour rate must be at least 1, got {}", self.gamma)));
        }
        if self.t_min < 1 {
            return Err(Error::Spec("minimum stage constraint must be at least 1".into()));
        }
        match (self.mode, self.t) {
            (StageMode::Scalar, None) => Err(Error::Spec("scalar stage mode requires `t`".into())),
            (StageMode::Scalar, Some(0)) => Err(Error::Spec("`t` must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Resolved choice-stage constraints.
#[derive(Clone, Debug, PartialEq)]
pub enum StageConstraint {
    Scalar(usize),
    PerDestination {
        stages: BTreeMap<NodeId, usize>,
        default: usize,
    },
    PerOd {
        stages: BTreeMap<(NodeId, NodeId), usize>,
        default: usize,
    },
}

impl StageConstraint {
    pub fn stages(&self, origin: NodeId, destination: NodeId) -> usize {
        match self {
            Self::Scalar(t) => *t,
            Self::PerDestination { stages, default } => stages.get(&destination).copied().unwrap_or(*default),
            Self::PerOd { stages, default } => stages.get(&(origin, destination)).copied().unwrap_or(*default),
        }
    }

    /// Stage count for a destination-level prism (the largest per-OD value when per OD).
    pub fn destination_stages(&self, destination: NodeId) -> usize {
        match self {
            Self::Scalar(t) => *t,
            Self::PerDestination { stages, default } => stages.get(&destination).copied().unwrap_or(*default),
            Self::PerOd { stages, default } => stages
                .iter()
                .filter(|((_, d), _)| *d == destination)
                .map(|(_, &t)| t)
                .max()
                .unwrap_or(*default),
        }
    }

    pub fn is_per_od(&self) -> bool {
        matches!(self, Self::PerOd { .. })
    }
}

/// `⌈γ·D⌉`, tolerant of the rounding in products such as (4/3)·3.
fn detour_bound(gamma: f64, d: usize) -> usize {
    (gamma * d as f64 - 1e-9).ceil().max(0.0) as usize
}

fn origin_steps(graph: &StateGraph, steps: &StepDistanceMap, o: &PathObservation) -> Result<usize> {
    let s = graph
        .origin_state(o.origin)
        .ok_or_else(|| Error::observation(&o.id, format!("no origin state for node {}", o.origin)))?;
    steps.get(s).ok_or_else(|| Error::UnreachableOd {
        id: o.id.clone(),
        origin: o.origin,
        destination: o.destination,
    })
}

/// Step distances to every destination of the graph.
pub fn destination_steps(graph: &StateGraph) -> Result<BTreeMap<NodeId, StepDistanceMap>> {
    graph
        .destinations()
        .map(|d| Ok((d, min_steps(graph, d, Direction::ToDestination)?)))
        .collect()
}

/// `T_d = max{Ṯ, max_n max{⌈γ·D^d(o_n)⌉, J_n}}`, and `Ṯ` for destinations without observations.
pub fn choose_t(
    observations: &[PathObservation],
    graph: &StateGraph,
    steps: &BTreeMap<NodeId, StepDistanceMap>,
    gamma: f64,
    t_min: usize,
) -> Result<BTreeMap<NodeId, usize>> {
    let mut out: BTreeMap<NodeId, usize> = graph.destinations().map(|d| (d, t_min)).collect();
    for o in observations {
        let map = steps.get(&o.destination).ok_or(Error::UnknownNode(o.destination))?;
        let d = origin_steps(graph, map, o)?;
        let t = detour_bound(gamma, d).max(o.transitions());
        let entry = out.entry(o.destination).or_insert(t_min);
        *entry = (*entry).max(t);
    }
    Ok(out)
}

/// Per-OD analogue of [`choose_t`].
pub fn choose_t_od(
    observations: &[PathObservation],
    graph: &StateGraph,
    steps: &BTreeMap<NodeId, StepDistanceMap>,
    gamma: f64,
    t_min: usize,
) -> Result<BTreeMap<(NodeId, NodeId), usize>> {
    let mut out = BTreeMap::new();
    for o in observations {
        let map = steps.get(&o.destination).ok_or(Error::UnknownNode(o.destination))?;
        let d = origin_steps(graph, map, o)?;
        let t = detour_bound(gamma, d).max(o.transitions()).max(t_min);
        let entry = out.entry((o.origin, o.destination)).or_insert(t);
        *entry = (*entry).max(t);
    }
    Ok(out)
}

/// Applies a policy to a set of observations.
pub fn stage_constraint(
    observations: &[PathObservation],
    graph: &StateGraph,
    policy: &ChoiceStagePolicy,
) -> Result<StageConstraint> {
    policy.validate()?;
    if policy.mode == StageMode::Scalar {
        return Ok(StageConstraint::Scalar(policy.t.unwrap_or(policy.t_min)));
    }
    let steps = destination_steps(graph)?;
    Ok(match policy.mode {
        StageMode::Destination => StageConstraint::PerDestination {
            stages: choose_t(observations, graph, &steps, policy.gamma, policy.t_min)?,
            default: policy.t_min,
        },
        _ => StageConstraint::PerOd {
            stages: choose_t_od(observations, graph, &steps, policy.gamma, policy.t_min)?,
            default: policy.t_min,
        },
    })
}

/// Summary of detour ratios `J_n / D^{d_n}(o_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetourSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(ratios: &[f64]) -> DetourSummary {
    let mut s = ratios.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    DetourSummary {
        count: n,
        mean,
        std,
        min: s.first().copied().unwrap_or(f64::NAN),
        q25: quantile(&s, 0.25),
        q50: quantile(&s, 0.5),
        q75: quantile(&s, 0.75),
        max: s.last().copied().unwrap_or(f64::NAN),
    }
}

pub fn detour_ratios(
    observations: &[PathObservation],
    graph: &StateGraph,
    steps: &BTreeMap<NodeId, StepDistanceMap>,
) -> Result<Vec<f64>> {
    observations
        .iter()
        .map(|o| {
            let map = steps.get(&o.destination).ok_or(Error::UnknownNode(o.destination))?;
            let d = origin_steps(graph, map, o)?;
            Ok(o.transitions() as f64 / d as f64)
        })
        .collect()
}

pub fn detour_statistics(
    observations: &[PathObservation],
    graph: &StateGraph,
    steps: &BTreeMap<NodeId, StepDistanceMap>,
) -> Result<DetourSummary> {
    Ok(summarize(&detour_ratios(observations, graph, steps)?))
}

/// Per-stage existence masks `I(t, k)` for one destination (and optionally one origin).
#[derive(Clone, Debug)]
pub struct Prism {
    destination: NodeId,
    origin: Option<NodeId>,
    absorbing: StateId,
    masks: Vec<FixedBitSet>,
}

/// Builds a prism with `stages` choice stages.
///
/// `I(t,k) = [D^d(k) ≤ T − t]`, and with an origin map also `[D^o(k) ≤ t]`.
/// States whose successors are all masked are then removed by a backward sweep,
/// and states no retained predecessor can enter by a forward sweep, so every
/// retained `(t, k)` lies on some feasible stage path.
pub fn build_prism(
    graph: &StateGraph,
    to_destination: &StepDistanceMap,
    stages: usize,
    from_origin: Option<&StepDistanceMap>,
) -> Result<Prism> {
    let absorbing = to_destination.anchor();
    let StateKind::Destination(destination) = graph.kind(absorbing) else {
        return Err(Error::Spec("step map is not anchored at an absorbing state".into()));
    };
    let origin = match from_origin {
        Some(m) => match graph.kind(m.anchor()) {
            StateKind::Origin(o) => Some(o),
            _ => return Err(Error::Spec("origin step map is not anchored at an origin state".into())),
        },
        None => None,
    };
    let n = graph.n_states();
    let mut masks = vec![FixedBitSet::with_capacity(n); stages + 1];
    for (t, mask) in masks.iter_mut().enumerate() {
        for k in 0..n {
            let Some(dk) = to_destination.get(k) else { continue };
            let fits_d = dk <= stages - t;
            let fits_o = from_origin.is_none_or(|m| m.get(k).is_some_and(|ok| ok <= t));
            if fits_d && fits_o {
                mask.insert(k);
            }
        }
    }

    for t in (0..stages).rev() {
        let (head, tail) = masks.split_at_mut(t + 1);
        let (cur, next) = (&mut head[t], &tail[0]);
        let dead: Vec<StateId> = cur
            .ones()
            .filter(|&k| k != absorbing && !graph.actions(k).any(|e| next.contains(graph.target(e))))
            .collect();
        for k in dead {
            cur.set(k, false);
        }
    }
    for t in 0..stages {
        let mut reach = FixedBitSet::with_capacity(n);
        for k in masks[t].ones() {
            if k == absorbing {
                reach.insert(k);
            }
            for e in graph.actions(k) {
                reach.insert(graph.target(e));
            }
        }
        masks[t + 1].intersect_with(&reach);
    }

    let empty = match from_origin {
        Some(m) => !masks[0].contains(m.anchor()),
        None => masks[0].ones().all(|k| k == absorbing),
    };
    if empty {
        return Err(Error::EmptyPrism { destination, stages });
    }
    Ok(Prism {
        destination,
        origin,
        absorbing,
        masks,
    })
}

impl Prism {
    pub fn destination(&self) -> NodeId {
        self.destination
    }

    pub fn origin(&self) -> Option<NodeId> {
        self.origin
    }

    pub fn absorbing(&self) -> StateId {
        self.absorbing
    }

    /// T, the number of choice stages.
    pub fn stages(&self) -> usize {
        self.masks.len() - 1
    }

    pub fn is_active(&self, t: usize, k: StateId) -> bool {
        self.masks.get(t).is_some_and(|m| m.contains(k))
    }

    pub fn mask(&self, t: usize) -> &FixedBitSet {
        &self.masks[t]
    }

    pub fn stage_states(&self, t: usize) -> impl Iterator<Item = StateId> + '_ {
        self.masks[t].ones()
    }

    pub fn stage_counts(&self) -> Vec<usize> {
        self.masks.iter().map(|m| m.count_ones(..)).collect()
    }

    /// Edges `(k, a)` with `Δ_t(a|k) = 1`.
    pub fn stage_edges<'a>(&'a self, graph: &'a StateGraph, t: usize) -> impl Iterator<Item = usize> + 'a {
        let next = &self.masks[t + 1];
        self.masks[t]
            .ones()
            .flat_map(move |k| graph.actions(k))
            .filter(move |&e| next.contains(graph.target(e)))
    }

    pub fn edge_counts(&self, graph: &StateGraph) -> Vec<usize> {
        (0..self.stages()).map(|t| self.stage_edges(graph, t).count()).collect()
    }

    /// True iff every transition of the translated path stays inside the prism.
    pub fn contains_path(&self, graph: &StateGraph, path: &TranslatedPath) -> bool {
        path.stages() == self.stages()
            && path.destination() == self.destination
            && self.contains_states(graph, path.states())
    }

    /// Checks an untranslated state sequence, padding it at the absorbing state.
    pub fn contains_states(&self, graph: &StateGraph, states: &[StateId]) -> bool {
        let t_max = self.stages();
        if states.is_empty() || states.len() - 1 > t_max {
            return false;
        }
        let at = |t: usize| states.get(t).copied().unwrap_or(self.absorbing);
        if *states.last().unwrap() != self.absorbing {
            return false;
        }
        (0..t_max).all(|t| {
            let (k, a) = (at(t), at(t + 1));
            let step_ok = if k == self.absorbing {
                a == self.absorbing
            } else {
                graph.incidence(k, a)
            };
            step_ok && self.is_active(t, k) && self.is_active(t + 1, a)
        }) && self.is_active(t_max, at(t_max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_state_graph, synthetic};

    #[test]
    fn choose_t_formula() {
        // line of two links: D(o) = 3
        let net = synthetic::line(&[(1, 2, 1.0), (2, 3, 1.0), (2, 4, 1.0), (4, 2, 1.0)]);
        let g = build_state_graph(&net, &[3], &[1]).unwrap();
        let steps = destination_steps(&g).unwrap();
        // 1 -> 2 -> 4 -> 2 -> 3 : J = 5
        let obs = PathObservation::new("a", 1, 3, vec![1, 3, 4, 2], &net).unwrap();
        assert_eq!(obs.transitions(), 5);
        let t = choose_t(std::slice::from_ref(&obs), &g, &steps, 4.0 / 3.0, 1).unwrap();
        assert_eq!(t[&3], 5);
        let t = choose_t(std::slice::from_ref(&obs), &g, &steps, 2.0, 1).unwrap();
        assert_eq!(t[&3], 6);
        let t = choose_t(&[obs], &g, &steps, 1.0, 1).unwrap();
        assert_eq!(t[&3], 5);
    }

    #[test]
    fn unseen_destination_gets_minimum() {
        let net = synthetic::grid(3, 3, |_, _| 1.0);
        let g = build_state_graph(&net, &[9, 7], &[1]).unwrap();
        let steps = destination_steps(&g).unwrap();
        let obs = PathObservation::new("a", 1, 9, vec![1, 4, 8, 12], &net);
        let obs = match obs {
            Ok(o) => vec![o],
            Err(_) => vec![],
        };
        let t = choose_t(&obs, &g, &steps, 1.0, 20).unwrap();
        assert_eq!(t[&7], 20);
    }

    #[test]
    fn detour_summary_basics() {
        let s = summarize(&[1.0, 2.0]);
        assert_eq!((s.count, s.mean, s.min, s.max), (2, 1.5, 1.0, 2.0));
        let s = summarize(&[1.0; 7]);
        assert_eq!((s.q25, s.q50, s.q75), (1.0, 1.0, 1.0));
    }

    #[test]
    fn line_prism() {
        let net = synthetic::line(&[(1, 2, 1.0), (2, 3, 1.0)]);
        let g = build_state_graph(&net, &[3], &[1]).unwrap();
        let d = min_steps(&g, 3, Direction::ToDestination).unwrap();
        let p = build_prism(&g, &d, 3, None).unwrap();
        let o = g.origin_state(1).unwrap();
        let (l1, l2) = (g.link_state(1).unwrap(), g.link_state(2).unwrap());
        let dummy = g.dest_state(3).unwrap();
        assert!(p.is_active(0, o));
        assert!(p.is_active(1, l1));
        assert!(p.is_active(2, l2));
        assert_eq!(p.stage_states(3).collect::<Vec<_>>(), vec![dummy]);
        assert!(p.contains_states(&g, &[o, l1, l2, dummy]));
        assert!(build_prism(&g, &d, 2, Some(&min_steps(&g, 1, Direction::FromOrigin).unwrap())).is_err());
    }

    #[test]
    fn tight_doubly_constrained_prism_keeps_shortest_paths_only() {
        let net = synthetic::grid(3, 3, |_, _| 1.0);
        let g = build_state_graph(&net, &[9], &[1]).unwrap();
        let d = min_steps(&g, 9, Direction::ToDestination).unwrap();
        let o = min_steps(&g, 1, Direction::FromOrigin).unwrap();
        let t = d.get(g.origin_state(1).unwrap()).unwrap();
        let p = build_prism(&g, &d, t, Some(&o)).unwrap();
        // every retained link state lies on a monotone (right/down) path
        for s in 0..t {
            for k in p.stage_states(s) {
                if let StateKind::Link { tail, head, .. } = g.kind(k) {
                    assert!(head > tail, "non-monotone link {tail}->{head} at stage {s}");
                }
            }
        }
        assert_eq!(p.stage_counts(), vec![1, 2, 4, 4, 2, 1]);
    }
}
