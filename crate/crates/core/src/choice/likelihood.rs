use std::collections::BTreeMap;
use std::sync::Arc;

use faer::sparse::Triplet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, Solved, Values};
use crate::error::{Error, Result};
use crate::network::{PathObservation, StateId};
use crate::value::{edge_log_weight, sparse_solve, LogSum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Differentiates the value recursion (or the linear system) alongside the values.
    Analytic,
    /// Central differences of the log-likelihood.
    Central,
}

/// Observed transition counts of the observations sharing one value-function solve.
#[derive(Clone, Debug)]
struct Block {
    ctx: usize,
    /// Observed transition counts per (stage, edge); stage 0 for universal models.
    transitions: Vec<(usize, usize, f64)>,
}

/// Observations bound to a model, ready for repeated likelihood evaluation.
#[derive(Clone, Debug)]
pub struct Problem {
    model: Arc<Model>,
    blocks: Vec<Block>,
    n_obs: usize,
}

impl Problem {
    /// Groups observations by value-function context and aggregates their statistics.
    ///
    /// For prism models every observation must lie inside its prism.
    pub fn new(model: Arc<Model>, observations: &[PathObservation]) -> Result<Self> {
        let graph = model.graph();
        let staged = model.kind().is_prism();
        let mut grouped: BTreeMap<usize, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
        for obs in observations {
            let ctx = model.context_of(obs.origin, obs.destination)?;
            let states = obs.states(graph)?;
            if let Some(p) = &model.contexts()[ctx].prism {
                if !p.contains_states(graph, &states) {
                    return Err(Error::OutOfPrism {
                        id: obs.id.clone(),
                        destination: obs.destination,
                        transitions: states.len() - 1,
                        stages: p.stages(),
                    });
                }
            }
            let counts = grouped.entry(ctx).or_default();
            for (t, w) in states.windows(2).enumerate() {
                let e = graph.edge(w[0], w[1]).expect("validated path");
                *counts.entry((if staged { t } else { 0 }, e)).or_insert(0.0) += 1.0;
            }
        }
        let blocks = grouped
            .into_iter()
            .map(|(ctx, counts)| Block {
                ctx,
                transitions: counts.into_iter().map(|((t, e), c)| (t, e, c)).collect(),
            })
            .collect();
        Ok(Self {
            model,
            blocks,
            n_obs: observations.len(),
        })
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn prepare(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (beta, omega) = self.model.spec().split(theta)?;
        Ok((self.model.features().utilities(beta), omega))
    }

    fn reduce<T: Send>(&self, f: impl Fn(&Block) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        // blocks are independent; collecting in order keeps the sums reproducible
        self.blocks.par_iter().map(f).collect()
    }

    /// Log-likelihood at `theta`.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let (v, omega) = self.prepare(theta)?;
        let parts = self.reduce(|b| {
            let s = self.model.solve_context(b.ctx, &v, omega)?;
            Ok(self.block_ll(b, &s, &v))
        })?;
        let ll: f64 = parts.iter().sum();
        if !ll.is_finite() {
            return Err(Error::NonFinite(format!("log-likelihood {ll} at {theta:?}")));
        }
        Ok(ll)
    }

    /// `Σ c·ln p(a|k)` over the block's transitions, normalizing over each action set.
    fn block_ll(&self, b: &Block, s: &Solved, v: &[f64]) -> f64 {
        let graph = self.model.graph();
        let mut cached: Option<(usize, StateId, f64)> = None;
        let mut ll = 0.0;
        for &(t, e, c) in &b.transitions {
            let k = graph.source(e);
            let norm = match cached {
                Some((ct, ck, n)) if ct == t && ck == k => n,
                _ => {
                    let mut sum = LogSum::new();
                    for e2 in graph.actions(k) {
                        sum.add(self.log_weight(s, v, t, e2));
                    }
                    let n = sum.value();
                    cached = Some((t, k, n));
                    n
                }
            };
            ll += c * (self.log_weight(s, v, t, e) - norm);
        }
        ll
    }

    #[inline]
    fn log_weight(&self, s: &Solved, v: &[f64], t: usize, e: usize) -> f64 {
        let graph = self.model.graph();
        let (k, a) = (graph.source(e), graph.target(e));
        let la = s.log_z_next(t, a);
        if la == f64::NEG_INFINITY {
            return la;
        }
        edge_log_weight(v[e], s.mu(k), s.mu(a), la)
    }

    /// Gradient of the log-likelihood.
    pub fn gradient(&self, theta: &[f64], mode: GradientMode, step: f64) -> Result<Vec<f64>> {
        match mode {
            GradientMode::Analytic => Ok(self.value_and_gradient(theta)?.1),
            GradientMode::Central => self.central_gradient(theta, step),
        }
    }

    /// Central differences with step `step·max(|θ_i|, 1)`.
    pub fn central_gradient(&self, theta: &[f64], step: f64) -> Result<Vec<f64>> {
        let mut x = theta.to_vec();
        (0..theta.len())
            .map(|i| {
                let h = step * theta[i].abs().max(1.0);
                x[i] = theta[i] + h;
                let up = self.log_likelihood(&x)?;
                x[i] = theta[i] - h;
                let down = self.log_likelihood(&x)?;
                x[i] = theta[i];
                Ok((up - down) / (2.0 * h))
            })
            .collect()
    }

    /// Log-likelihood and its analytic gradient.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, omega) = self.prepare(theta)?;
        let dim = self.n_params();
        let parts = self.reduce(|b| {
            let s = self.model.solve_context(b.ctx, &v, omega)?;
            let sens = self.sensitivities(b.ctx, &s, &v)?;
            let graph = self.model.graph();
            let mut g = vec![0.0; dim];
            let mut dl = vec![0.0; dim];
            let mut expected = vec![0.0; dim];
            let mut cached: Option<(usize, StateId)> = None;
            for &(t, e, c) in &b.transitions {
                let k = graph.source(e);
                if cached != Some((t, k)) {
                    // E[∂ℓ] under p(·|k) equals ∂ ln z_{t,k}; recomputing it locally keeps
                    // forced transitions exactly zero
                    let mut sum = LogSum::new();
                    let w: Vec<(usize, f64)> = graph.actions(k).map(|e2| (e2, self.log_weight(&s, &v, t, e2))).collect();
                    w.iter().for_each(|x| sum.add(x.1));
                    let norm = sum.value();
                    expected.iter_mut().for_each(|x| *x = 0.0);
                    for (e2, l) in w {
                        if l == f64::NEG_INFINITY {
                            continue;
                        }
                        let p = (l - norm).exp();
                        self.edge_derivative(b.ctx, &s, &v, &sens, t, e2, &mut dl);
                        expected.iter_mut().zip(&dl).for_each(|(x, d)| *x += p * d);
                    }
                    cached = Some((t, k));
                }
                self.edge_derivative(b.ctx, &s, &v, &sens, t, e, &mut dl);
                for ((gi, d), r) in g.iter_mut().zip(&dl).zip(&expected) {
                    *gi += c * (d - r);
                }
            }
            let ll = self.block_ll(b, &s, &v);
            Ok((ll, g))
        })?;
        let mut ll = 0.0;
        let mut grad = vec![0.0; dim];
        for (l, g) in parts {
            ll += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("log-likelihood or gradient at {theta:?}")));
        }
        Ok((ll, grad))
    }

    /// `∂ℓ_e/∂θ` where `ℓ_e = (v_e + μ_a L_a)/μ_k` is the log weight of edge `e` at stage `t`.
    #[allow(clippy::too_many_arguments)]
    fn edge_derivative(&self, ctx: usize, s: &Solved, v: &[f64], sens: &Sensitivities, t: usize, e: usize, out: &mut [f64]) {
        let graph = self.model.graph();
        let features = self.model.features();
        let (k, a) = (graph.source(e), graph.target(e));
        let (mu_k, mu_a) = (s.mu(k), s.mu(a));
        let ra = sens.at(t + usize::from(s.is_staged()), a);
        let x = features.row(e);
        let nb = x.len();
        for i in 0..nb {
            out[i] = (x[i] + mu_a * ra[i]) / mu_k;
        }
        if out.len() > nb {
            let sq = self.model.contexts()[ctx].sqrt_sp.as_ref().expect("nested model");
            let (sk, sa) = (sq[k], sq[a]);
            let la = s.log_z_next(t, a);
            out[nb] = (-sk * v[e] + (sa - sk) * mu_a * la + mu_a * ra[nb]) / mu_k;
        }
    }

    /// `R = ∂ ln z / ∂θ` for every active (stage, state).
    fn sensitivities(&self, ctx: usize, s: &Solved, v: &[f64]) -> Result<Sensitivities> {
        let graph = self.model.graph();
        let n = graph.n_states();
        let dim = self.n_params();
        let mut dl = vec![0.0; dim];
        match &s.values {
            Values::Staged(table) => {
                let prism = self.model.contexts()[ctx].prism.as_ref().expect("staged values need a prism");
                let stages = table.stages();
                let mut sens = Sensitivities {
                    n,
                    dim,
                    staged: true,
                    r: vec![0.0; (stages + 1) * n * dim],
                };
                for t in (0..stages).rev() {
                    for k in prism.stage_states(t) {
                        if k == prism.absorbing() {
                            continue;
                        }
                        let lk = table.log_z(t, k);
                        let mut acc = vec![0.0; dim];
                        for e in graph.actions(k) {
                            let a = graph.target(e);
                            let la = table.log_z(t + 1, a);
                            if la == f64::NEG_INFINITY {
                                continue;
                            }
                            let p = (edge_log_weight(v[e], s.mu(k), s.mu(a), la) - lk).exp();
                            self.edge_derivative(ctx, s, v, &sens, t, e, &mut dl);
                            for (r, d) in acc.iter_mut().zip(&dl) {
                                *r += p * d;
                            }
                        }
                        sens.at_mut(t, k).copy_from_slice(&acc);
                    }
                }
                Ok(sens)
            }
            Values::Universal(table) => {
                // R_k = Σ_a p(a|k) [c_e + (μ_a/μ_k) R_a], solved as (I − P̃) R = c
                let zero = Sensitivities {
                    n,
                    dim,
                    staged: false,
                    r: vec![0.0; n * dim],
                };
                let states: Vec<StateId> = (0..n).filter(|&k| table.log_z[k] > f64::NEG_INFINITY).collect();
                let mut index = vec![usize::MAX; n];
                for (i, &k) in states.iter().enumerate() {
                    index[k] = i;
                }
                let m = states.len();
                let mut triplets = Vec::with_capacity(m + graph.n_edges());
                let mut rhs = vec![vec![0.0; m]; dim];
                for (i, &k) in states.iter().enumerate() {
                    triplets.push(Triplet::new(i, i, 1.0));
                    let lk = table.log_z[k];
                    for e in graph.actions(k) {
                        let a = graph.target(e);
                        let j = index[a];
                        if j == usize::MAX {
                            continue;
                        }
                        let (mu_k, mu_a) = (s.mu(k), s.mu(a));
                        let p = (edge_log_weight(v[e], mu_k, mu_a, table.log_z[a]) - lk).exp();
                        // with R = 0 the edge derivative is exactly c_e
                        self.edge_derivative(ctx, s, v, &zero, 0, e, &mut dl);
                        for (col, d) in rhs.iter_mut().zip(&dl) {
                            col[i] += p * d;
                        }
                        triplets.push(Triplet::new(i, j, -p * mu_a / mu_k));
                    }
                }
                let sol = sparse_solve(m, &triplets, &rhs)
                    .ok_or_else(|| Error::NonFinite("singular sensitivity system".into()))?;
                let mut sens = zero;
                for (i, &k) in states.iter().enumerate() {
                    for (d, col) in sol.iter().enumerate() {
                        sens.r[k * dim + d] = col[i];
                    }
                }
                Ok(sens)
            }
        }
    }
}

struct Sensitivities {
    n: usize,
    dim: usize,
    staged: bool,
    r: Vec<f64>,
}

impl Sensitivities {
    fn at(&self, t: usize, k: StateId) -> &[f64] {
        let t = if self.staged { t } else { 0 };
        let o = (t * self.n + k) * self.dim;
        &self.r[o..o + self.dim]
    }

    fn at_mut(&mut self, t: usize, k: StateId) -> &mut [f64] {
        let t = if self.staged { t } else { 0 };
        let o = (t * self.n + k) * self.dim;
        &mut self.r[o..o + self.dim]
    }
}
