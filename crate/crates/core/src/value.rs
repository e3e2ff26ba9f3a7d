//! Value functions of the recursive logit family and feasibility diagnostics.
//!
//! Values are carried as `ln z` where `z = exp(V/μ)`, with `-∞` marking states
//! that cannot reach the destination (or are outside the prism at a stage).

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{min_steps, Direction, NodeId, StateGraph, StateId};
use crate::prism::Prism;
use crate::utility::{EdgeFeatures, UtilitySpec, WeightMatrix};

/// Residual bound certified by [`solve_rl`] (relative to `‖b‖ = 1`).
pub const RL_RESIDUAL_TOL: f64 = 1e-10;
/// Increment tolerance of NRL value iteration.
pub const NRL_TOL: f64 = 1e-12;
/// Iteration cap of NRL value iteration.
pub const NRL_MAX_ITER: usize = 10_000;
/// Divergence threshold of NRL value iteration.
pub const NRL_DIVERGENCE: f64 = 1e300;
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Whether a valid value function was (or, from ρ alone, is expected to be) obtained.
    pub solvable: bool,
    /// Power-iteration estimate of ρ(M).
    pub spectral_radius: f64,
    pub power_iterations: usize,
    pub power_converged: bool,
    /// Link states with at least one link action.
    pub rows: usize,
    /// Fraction of those rows with `Σ_a M_ka < 1`, summing over link actions.
    pub row_sum_below_one: f64,
    pub max_row_sum: f64,
    pub failure: Option<String>,
}

/// Spectral radius and row-sum statistics of `M` restricted to link-to-link transitions.
pub fn check_feasibility(graph: &StateGraph, weights: &WeightMatrix) -> FeasibilityReport {
    let n = graph.n_states();
    let mut rows = 0usize;
    let mut below = 0usize;
    let mut max_row = 0.0f64;
    for k in (0..n).filter(|&k| graph.is_link(k)) {
        let mut s = 0.0;
        let mut any = false;
        for e in graph.actions(k) {
            if graph.is_link(graph.target(e)) {
                s += weights.m[e];
                any = true;
            }
        }
        if any {
            rows += 1;
            below += usize::from(s < 1.0);
            max_row = max_row.max(s);
        }
    }

    // power iteration on M + I, whose dominant eigenvalue is ρ(M) + 1 for
    // nonnegative M and which is not fooled by periodic (cyclic) structure
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut converged = n == 0;
    while !converged && iterations < POWER_MAX_ITER {
        iterations += 1;
        for k in 0..n {
            y[k] = x[k] + graph.actions(k).map(|e| weights.m[e] * x[graph.target(e)]).sum::<f64>();
        }
        let norm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !norm.is_finite() || norm == 0.0 {
            lambda = norm;
            break;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        converged = (norm - lambda).abs() <= POWER_TOL * norm.max(1.0);
        lambda = norm;
    }
    let rho = if n == 0 { 0.0 } else { (lambda - 1.0).max(0.0) };
    FeasibilityReport {
        solvable: rho < 1.0,
        spectral_radius: rho,
        power_iterations: iterations,
        power_converged: converged,
        rows,
        row_sum_below_one: if rows == 0 { 1.0 } else { below as f64 / rows as f64 },
        max_row_sum: max_row,
        failure: None,
    }
}

fn infeasible(graph: &StateGraph, weights: &WeightMatrix, why: String) -> Error {
    let mut report = check_feasibility(graph, weights);
    report.solvable = false;
    report.failure = Some(why);
    Error::InfeasibleValueFunction(Box::new(report))
}

/// Unstaged value function for one destination.
#[derive(Clone, Debug)]
pub struct ValueTable {
    pub destination: NodeId,
    pub log_z: Vec<f64>,
    /// `‖z − F(z)‖_∞` at the returned solution.
    pub residual: f64,
    /// Value-iteration sweeps (0 for the direct solve).
    pub iterations: usize,
}

impl ValueTable {
    pub fn z(&self) -> Vec<f64> {
        self.log_z.iter().map(|l| l.exp()).collect()
    }

    /// `V(k) = μ_k·ln z_k`.
    pub fn value(&self, k: StateId, mu: f64) -> f64 {
        mu * self.log_z[k]
    }
}

/// Sparse LU solve of `A x = r` for several right-hand sides.
pub(crate) fn sparse_solve(n: usize, triplets: &[Triplet<usize, usize, f64>], rhs: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    if n == 0 {
        return Some(rhs.to_vec());
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, triplets).ok()?;
    let lu = a.sp_lu().ok()?;
    let b = Mat::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
    let x = lu.solve(&b);
    let out: Vec<Vec<f64>> = (0..rhs.len()).map(|j| (0..n).map(|i| x[(i, j)]).collect()).collect();
    out.iter().flatten().all(|v| v.is_finite()).then_some(out)
}

/// States that can reach the absorbing state of `destination`, in state order.
pub(crate) fn reachable(graph: &StateGraph, destination: NodeId) -> Result<(Vec<StateId>, Vec<usize>)> {
    let steps = min_steps(graph, destination, Direction::ToDestination)?;
    let states: Vec<StateId> = (0..graph.n_states()).filter(|&k| steps.is_reachable(k)).collect();
    let mut index = vec![usize::MAX; graph.n_states()];
    for (i, &k) in states.iter().enumerate() {
        index[k] = i;
    }
    Ok((states, index))
}

/// `z = (I − M)^{-1} b` with `b` the unit vector at the absorbing state.
///
/// Only states that can reach the destination enter the system; all others get
/// `z = 0`. The solution is accepted when it is finite, strictly positive on
/// the reachable states, and satisfies the residual bound.
pub fn solve_rl(graph: &StateGraph, weights: &WeightMatrix, destination: NodeId) -> Result<ValueTable> {
    let (states, index) = reachable(graph, destination)?;
    let absorbing = graph.dest_state(destination).ok_or(Error::UnknownNode(destination))?;
    let n = states.len();
    let mut triplets = Vec::with_capacity(n + graph.n_edges());
    for (i, &k) in states.iter().enumerate() {
        triplets.push(Triplet::new(i, i, 1.0));
        for e in graph.actions(k) {
            let j = index[graph.target(e)];
            if j != usize::MAX {
                triplets.push(Triplet::new(i, j, -weights.m[e]));
            }
        }
    }
    let mut b = vec![0.0; n];
    b[index[absorbing]] = 1.0;

    let residual_of = |z: &[f64]| -> Vec<f64> {
        let mut r = b.clone();
        for t in &triplets {
            r[t.row] -= t.val * z[t.col];
        }
        r
    };
    let Some(mut sol) = sparse_solve(n, &triplets, std::slice::from_ref(&b)) else {
        return Err(infeasible(graph, weights, "linear system is singular".into()));
    };
    let mut z = sol.pop().unwrap();
    let mut res = residual_of(&z);
    let mut res_norm = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // iterative refinement for ill-conditioned but solvable systems
    for _ in 0..3 {
        if res_norm < RL_RESIDUAL_TOL {
            break;
        }
        let Some(mut d) = sparse_solve(n, &triplets, std::slice::from_ref(&res)) else { break };
        for (zi, di) in z.iter_mut().zip(d.pop().unwrap()) {
            *zi += di;
        }
        res = residual_of(&z);
        res_norm = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }

    if let Some((i, _)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(infeasible(graph, weights, format!("non-finite z at {}", graph.label(states[i]))));
    }
    if let Some((i, v)) = z.iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(infeasible(
            graph,
            weights,
            format!("non-positive z = {v:e} at {}", graph.label(states[i])),
        ));
    }
    if !(res_norm < RL_RESIDUAL_TOL) {
        return Err(infeasible(graph, weights, format!("residual {res_norm:e} exceeds tolerance")));
    }

    let mut log_z = vec![f64::NEG_INFINITY; graph.n_states()];
    for (i, &k) in states.iter().enumerate() {
        log_z[k] = z[i].ln();
    }
    Ok(ValueTable {
        destination,
        log_z,
        residual: res_norm,
        iterations: 0,
    })
}

/// Nested fixed point `z_k = Σ_a exp(v(a|k)/μ_k)·z_a^{μ_a/μ_k} + b_k` by value
/// iteration from `z = b`.
pub fn solve_nrl(
    graph: &StateGraph,
    weights: &WeightMatrix,
    scales: &[f64],
    destination: NodeId,
) -> Result<ValueTable> {
    let absorbing = graph.dest_state(destination).ok_or(Error::UnknownNode(destination))?;
    if let Some(bad) = scales.iter().find(|&&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::Spec(format!("scale {bad} is not positive")));
    }
    let n = graph.n_states();
    let coef: Vec<(f64, f64)> = (0..graph.n_edges())
        .map(|e| {
            let (k, a) = (graph.source(e), graph.target(e));
            ((weights.v[e] / scales[k]).exp(), scales[a] / scales[k])
        })
        .collect();
    let apply = |z: &[f64], out: &mut [f64]| {
        for k in 0..n {
            let mut s = if k == absorbing { 1.0 } else { 0.0 };
            for e in graph.actions(k) {
                let za = z[graph.target(e)];
                if za > 0.0 {
                    let (w, p) = coef[e];
                    s += w * za.powf(p);
                }
            }
            out[k] = s;
        }
    };

    let mut z = vec![0.0; n];
    z[absorbing] = 1.0;
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    loop {
        if iterations == NRL_MAX_ITER {
            return Err(infeasible(
                graph,
                weights,
                format!("value iteration did not converge in {NRL_MAX_ITER} iterations"),
            ));
        }
        iterations += 1;
        apply(&z, &mut next);
        let mut diff = 0.0f64;
        for (a, b) in z.iter().zip(&next) {
            diff = diff.max((a - b).abs());
        }
        std::mem::swap(&mut z, &mut next);
        if let Some((k, _)) = z.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > NRL_DIVERGENCE) {
            return Err(infeasible(
                graph,
                weights,
                format!("value iteration diverged at {}", graph.label(k)),
            ));
        }
        if diff < NRL_TOL {
            break;
        }
    }
    apply(&z, &mut next);
    let residual = z.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ValueTable {
        destination,
        log_z: z.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect(),
        residual,
        iterations,
    })
}

/// Value function over `(t, k)` for a prism with T stages.
#[derive(Clone, Debug)]
pub struct StagedValueTable {
    stages: usize,
    n: usize,
    log_z: Vec<f64>,
}

impl StagedValueTable {
    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn log_z(&self, t: usize, k: StateId) -> f64 {
        self.log_z[t * self.n + k]
    }

    pub fn z(&self, t: usize, k: StateId) -> f64 {
        self.log_z(t, k).exp()
    }

    pub fn stage(&self, t: usize) -> &[f64] {
        &self.log_z[t * self.n..(t + 1) * self.n]
    }
}

/// Running `ln Σ exp(x)`.
#[derive(Clone, Copy)]
pub(crate) struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub(crate) fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    pub(crate) fn value(self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Log-weight of edge `e` given the successor's log value: `(v + μ_a·L_a)/μ_k`.
#[inline]
pub(crate) fn edge_log_weight(v: f64, mu_k: f64, mu_a: f64, log_z_next: f64) -> f64 {
    if log_z_next == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        (v + mu_a * log_z_next) / mu_k
    }
}

pub(crate) fn solve_staged(graph: &StateGraph, v: &[f64], scales: Option<&[f64]>, prism: &Prism) -> StagedValueTable {
    let n = graph.n_states();
    let stages = prism.stages();
    let absorbing = prism.absorbing();
    let mut log_z = vec![f64::NEG_INFINITY; (stages + 1) * n];
    log_z[stages * n + absorbing] = 0.0;
    let mu = |k: StateId| scales.map_or(1.0, |s| s[k]);
    for t in (0..stages).rev() {
        let (cur, next) = log_z[t * n..(t + 2) * n].split_at_mut(n);
        for k in prism.stage_states(t) {
            if k == absorbing {
                cur[k] = 0.0;
                continue;
            }
            let mut acc = LogSum::new();
            let mu_k = mu(k);
            for e in graph.actions(k) {
                let a = graph.target(e);
                acc.add(edge_log_weight(v[e], mu_k, mu(a), next[a]));
            }
            cur[k] = acc.value();
        }
    }
    StagedValueTable { stages, n, log_z }
}

/// Backward recursion `z_t = M'_t z_{t+1} + b`, computed in the log domain.
pub fn solve_prism_rl(graph: &StateGraph, weights: &WeightMatrix, prism: &Prism) -> StagedValueTable {
    solve_staged(graph, &weights.v, None, prism)
}

/// Backward recursion `z_t = [M'_t ∘ X(z_{t+1})] e + b` with `X_ka = z_a^{μ_a/μ_k}`.
pub fn solve_prism_nrl(graph: &StateGraph, weights: &WeightMatrix, scales: &[f64], prism: &Prism) -> StagedValueTable {
    solve_staged(graph, &weights.v, Some(scales), prism)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub beta1: f64,
    pub beta2: f64,
    pub feasible: bool,
}

/// RL feasibility over a grid of two-parameter vectors: a point is feasible when
/// [`solve_rl`] succeeds for every destination of the graph.
pub fn scan_feasible_region(
    graph: &StateGraph,
    spec: &UtilitySpec,
    beta1: &[f64],
    beta2: &[f64],
) -> Result<Vec<ScanPoint>> {
    if spec.n_params() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: spec.n_params(),
        });
    }
    let features = EdgeFeatures::compile(spec, graph)?;
    let destinations: Vec<NodeId> = graph.destinations().collect();
    let points: Vec<(f64, f64)> = beta1
        .iter()
        .flat_map(|&a| beta2.iter().map(move |&b| (a, b)))
        .collect();
    Ok(points
        .par_iter()
        .map(|&(b1, b2)| {
            let w = WeightMatrix::from_utilities(features.utilities(&[b1, b2]));
            let feasible = destinations.iter().all(|&d| solve_rl(graph, &w, d).is_ok());
            ScanPoint {
                beta1: b1,
                beta2: b2,
                feasible,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_state_graph, synthetic};

    fn weights(g: &StateGraph, f: impl Fn(StateId, StateId) -> f64) -> WeightMatrix {
        WeightMatrix::from_utilities((0..g.n_edges()).map(|e| f(g.source(e), g.target(e))).collect())
    }

    fn len_utils(g: &StateGraph, beta: f64) -> WeightMatrix {
        let col = g.network().attr_index("Length").unwrap();
        WeightMatrix::from_utilities((0..g.n_edges()).map(|e| beta * g.target_attr(e, col)).collect())
    }

    #[test]
    fn single_link_logsum() {
        let net = synthetic::line(&[(1, 2, 1.0)]);
        let g = build_state_graph(&net, &[2], &[1]).unwrap();
        let w = len_utils(&g, -1.0);
        let z = solve_rl(&g, &w, 2).unwrap();
        let o = g.origin_state(1).unwrap();
        assert!((z.log_z[o] + 1.0).abs() < 1e-14);
        assert!((z.value(o, 1.0) + 1.0).abs() < 1e-14);
        assert!(z.residual < RL_RESIDUAL_TOL);
    }

    #[test]
    fn parallel_routes_logsum() {
        // two single-link routes from 1 to 2
        let net = synthetic::line(&[(1, 2, 1.0), (1, 2, 2.0)]);
        let g = build_state_graph(&net, &[2], &[1]).unwrap();
        let w = len_utils(&g, -1.0);
        let z = solve_rl(&g, &w, 2).unwrap();
        let o = g.origin_state(1).unwrap();
        let expect = (-1.0f64).exp() + (-2.0f64).exp();
        assert!((z.z()[o] - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_utility_cycle_is_infeasible() {
        // a two-link cycle with an exit: z = 1 + z on the cycle diverges
        let net = synthetic::line(&[(1, 2, 1.0), (2, 1, 1.0), (2, 3, 1.0)]);
        let g = build_state_graph(&net, &[3], &[1]).unwrap();
        let w = weights(&g, |_, _| 0.0);
        let err = solve_rl(&g, &w, 3).unwrap_err();
        let Error::InfeasibleValueFunction(report) = err else { panic!() };
        assert!(report.spectral_radius >= 1.0 - 1e-9);
        assert!(!report.solvable);
    }

    #[test]
    fn feasibility_of_empty_and_two_cycle() {
        let net = synthetic::line(&[(1, 2, 1.0), (3, 4, 1.0)]);
        let g = build_state_graph(&net, &[], &[]).unwrap();
        let r = check_feasibility(&g, &weights(&g, |_, _| 0.0));
        assert_eq!(r.spectral_radius, 0.0);
        assert!(r.solvable);

        let net = synthetic::line(&[(1, 2, 1.0), (2, 1, 1.0)]);
        let g = build_state_graph(&net, &[], &[]).unwrap();
        for w in [0.3, 0.9, 1.7] {
            let r = check_feasibility(&g, &weights(&g, |_, _| f64::ln(w)));
            assert!((r.spectral_radius - w).abs() < 1e-6, "{w}: {r:?}");
            assert!((r.max_row_sum - w).abs() < 1e-12);
            assert_eq!(r.row_sum_below_one, if w < 1.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn nrl_reduces_to_rl_with_uniform_scales() {
        let net = synthetic::grid(3, 3, |t, h| 1.0 + ((t * 7 + h * 3) % 5) as f64 * 0.2);
        let g = build_state_graph(&net, &[9], &[1]).unwrap();
        let w = len_utils(&g, -1.2);
        let rl = solve_rl(&g, &w, 9).unwrap();
        let nrl = solve_nrl(&g, &w, &vec![1.0; g.n_states()], 9).unwrap();
        let (a, b) = (rl.z(), nrl.z());
        for k in 0..g.n_states() {
            assert!((a[k] - b[k]).abs() < 1e-10);
        }
        assert!(nrl.residual < 1e-10);
    }

    #[test]
    fn nrl_single_link_scale() {
        let net = synthetic::line(&[(1, 2, 1.0)]);
        let g = build_state_graph(&net, &[2], &[1]).unwrap();
        let w = len_utils(&g, -1.0);
        let mut mu = vec![1.0; g.n_states()];
        mu[g.origin_state(1).unwrap()] = 2.0;
        let z = solve_nrl(&g, &w, &mu, 2).unwrap();
        assert!((z.log_z[g.origin_state(1).unwrap()] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn prism_single_link_and_counting() {
        let net = synthetic::line(&[(1, 2, 1.0)]);
        let g = build_state_graph(&net, &[2], &[1]).unwrap();
        let d = min_steps(&g, 2, Direction::ToDestination).unwrap();
        let p = crate::prism::build_prism(&g, &d, 3, None).unwrap();
        let z = solve_prism_rl(&g, &len_utils(&g, -1.0), &p);
        assert!((z.log_z(0, g.origin_state(1).unwrap()) + 1.0).abs() < 1e-14);

        // zero utilities count stage paths: from the 3x3 corner with T = 5 there are 6 monotone paths
        let net = synthetic::grid(3, 3, |_, _| 1.0);
        let g = build_state_graph(&net, &[9], &[1]).unwrap();
        let d = min_steps(&g, 9, Direction::ToDestination).unwrap();
        let p = crate::prism::build_prism(&g, &d, 5, None).unwrap();
        let z = solve_prism_rl(&g, &weights(&g, |_, _| 0.0), &p);
        assert!((z.z(0, g.origin_state(1).unwrap()) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn prism_is_finite_where_rl_is_not() {
        let net = synthetic::line(&[(1, 2, 1.0), (2, 1, 1.0), (2, 3, 1.0)]);
        let g = build_state_graph(&net, &[3], &[1]).unwrap();
        let w = weights(&g, |_, _| 5.0);
        assert!(solve_rl(&g, &w, 3).is_err());
        let d = min_steps(&g, 3, Direction::ToDestination).unwrap();
        let p = crate::prism::build_prism(&g, &d, 40, None).unwrap();
        let z = solve_prism_rl(&g, &w, &p);
        for t in 0..=40 {
            for k in p.stage_states(t) {
                assert!(z.log_z(t, k).is_finite());
            }
        }
    }
}
