//! Maximum-likelihood estimation: nested fixed point with BFGS, standard errors
//! from a finite-difference Hessian, and the two-phase procedure.

mod bfgs;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::choice::{GradientMode, Model, ModelKind, PathSet, Problem};
use crate::error::{Error, Result};
use crate::network::{PathObservation, StateGraph};
use crate::prism::StageConstraint;
use crate::utility::UtilitySpec;
use bfgs::{EvalError, EventKind, Options, Termination};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    /// Starting point over all parameters (including fixed ones, whose values are overridden).
    pub start: Vec<f64>,
    /// Tolerance on the ∞-norm of the gradient of the mean log-likelihood.
    pub gtol: f64,
    pub max_iter: usize,
    /// `None` picks analytic for prism models and central differences otherwise.
    pub gradient: Option<GradientMode>,
    /// Relative step for central-difference gradients.
    pub fd_step: f64,
    /// Relative step for the finite-difference Hessian.
    pub hessian_step: f64,
    /// Stop at the first infeasible trial point instead of shrinking the step.
    pub strict_infeasible: bool,
    /// Halvings allowed per line search when trials are infeasible.
    pub max_halvings: usize,
    /// Parameters held at a given value, by name.
    pub fixed: BTreeMap<String, f64>,
    /// Reference values for t-tests (for example the true parameters of a simulation).
    pub reference: Option<Vec<f64>>,
    /// Skip the Hessian and report no standard errors.
    pub skip_std_errors: bool,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            start: Vec::new(),
            gtol: 1e-5,
            max_iter: 500,
            gradient: None,
            fd_step: 1e-6,
            hessian_step: 1e-5,
            strict_infeasible: false,
            max_halvings: 20,
            fixed: BTreeMap::new(),
            reference: None,
            skip_std_errors: false,
        }
    }
}

impl EstimatorSettings {
    pub fn from_start(start: &[f64]) -> Self {
        Self {
            start: start.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self, spec: &UtilitySpec) -> Result<()> {
        let n = spec.n_params();
        if self.start.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.start.len(),
            });
        }
        if let Some(r) = &self.reference {
            if r.len() != n {
                return Err(Error::Dimension { expected: n, got: r.len() });
            }
        }
        let positive = [self.gtol, self.fd_step, self.hessian_step];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Spec("tolerances and steps must be positive".into()));
        }
        let names = spec.param_names();
        if let Some(name) = self.fixed.keys().find(|k| !names.contains(k)) {
            return Err(Error::Spec(format!("fixed parameter {name} is not in the utility spec")));
        }
        Ok(())
    }

    fn gradient_mode(&self, kind: ModelKind) -> GradientMode {
        self.gradient.unwrap_or(if kind.is_prism() {
            GradientMode::Analytic
        } else {
            GradientMode::Central
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "at", rename_all = "kebab-case")]
pub enum Status {
    Converged,
    /// The search reached a point where the value function does not exist.
    InfeasibleAt(Vec<f64>),
    MaxIterations,
    /// The line search found no acceptable step before the gradient tolerance was met.
    Stalled,
}

impl Status {
    pub fn is_converged(&self) -> bool {
        matches!(self, Self::Converged)
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Self::InfeasibleAt(_))
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Converged => f.write_str("converged"),
            Self::InfeasibleAt(x) => write!(f, "infeasible-at({})", join(x)),
            Self::MaxIterations => f.write_str("max-iterations"),
            Self::Stalled => f.write_str("stalled"),
        }
    }
}

fn join(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    /// An iterate accepted by the line search (iteration 0 is the start).
    Accepted,
    /// A feasible line-search trial.
    Trial,
    /// A trial point where the value function does not exist.
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub kind: PointKind,
    pub theta: Vec<f64>,
    pub log_likelihood: Option<f64>,
    /// ∞-norm of the gradient of the mean log-likelihood.
    pub grad_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub model: String,
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    /// `NaN` for fixed parameters or when the Hessian was not computed.
    pub std_err: Vec<f64>,
    pub t_vs_zero: Vec<f64>,
    pub t_vs_truth: Option<Vec<f64>>,
    /// Log-likelihood at the last accepted iterate.
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    pub status: Status,
    pub trajectory: Vec<TrajectoryPoint>,
    pub seconds: f64,
    /// The negative Hessian was not positive definite; standard errors use a pseudo-inverse.
    pub hessian_warning: bool,
    /// Set on the second phase of a two-phase estimation.
    pub two_phase: bool,
}

/// Parameters split into the free ones searched by BFGS and the fixed ones.
struct Layout {
    full: Vec<f64>,
    free: Vec<usize>,
}

impl Layout {
    fn new(spec: &UtilitySpec, settings: &EstimatorSettings) -> Self {
        let mut full = settings.start.clone();
        let mut free = Vec::new();
        for (i, name) in spec.param_names().iter().enumerate() {
            match settings.fixed.get(name) {
                Some(&v) => full[i] = v,
                None => free.push(i),
            }
        }
        Self { full, free }
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut t = self.full.clone();
        for (&i, &v) in self.free.iter().zip(x) {
            t[i] = v;
        }
        t
    }

    fn restrict(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| theta[i]).collect()
    }
}

fn classify(e: Error) -> EvalError {
    match e {
        Error::InfeasibleValueFunction(_) | Error::NonFinite(_) => EvalError::Infeasible,
        e => EvalError::Fatal(e),
    }
}

/// Estimates the model by maximum likelihood from `settings.start`.
pub fn estimate(model: Arc<Model>, observations: &[PathObservation], settings: &EstimatorSettings) -> Result<EstimationResult> {
    let problem = Problem::new(model, observations)?;
    estimate_problem(&problem, settings)
}

/// Builds the model for `path_set` and estimates it.
pub fn estimate_with(
    graph: Arc<StateGraph>,
    spec: &UtilitySpec,
    observations: &[PathObservation],
    path_set: PathSet,
    settings: &EstimatorSettings,
) -> Result<EstimationResult> {
    let model = Arc::new(Model::new(graph, spec.clone(), path_set)?);
    estimate(model, observations, settings)
}

pub fn estimate_problem(problem: &Problem, settings: &EstimatorSettings) -> Result<EstimationResult> {
    let started = Instant::now();
    let model = problem.model();
    let spec = model.spec();
    settings.validate(spec)?;
    if problem.n_obs() == 0 {
        return Err(Error::Spec("no observations to estimate from".into()));
    }
    let layout = Layout::new(spec, settings);
    let mode = settings.gradient_mode(model.kind());
    let scale = 1.0 / problem.n_obs() as f64;

    let objective = |x: &[f64]| -> bfgs::Eval {
        let theta = layout.expand(x);
        let (ll, g) = match mode {
            GradientMode::Analytic => problem.value_and_gradient(&theta).map_err(classify)?,
            GradientMode::Central => {
                let ll = problem.log_likelihood(&theta).map_err(classify)?;
                (ll, problem.central_gradient(&theta, settings.fd_step).map_err(classify)?)
            }
        };
        Ok((-ll * scale, layout.restrict(&g).iter().map(|g| -g * scale).collect()))
    };
    let opts = Options {
        gtol: settings.gtol,
        max_iter: settings.max_iter,
        strict_infeasible: settings.strict_infeasible,
        max_halvings: settings.max_halvings,
    };
    let out = bfgs::minimize(objective, &layout.restrict(&layout.full), &opts)?;

    let n = problem.n_obs() as f64;
    let trajectory = out
        .events
        .iter()
        .map(|e| TrajectoryPoint {
            iteration: e.iteration,
            kind: match e.kind {
                EventKind::Accepted => PointKind::Accepted,
                EventKind::Trial => PointKind::Trial,
                EventKind::Infeasible => PointKind::Infeasible,
            },
            theta: layout.expand(&e.x),
            log_likelihood: e.f.map(|f| -f * n),
            grad_norm: e.gnorm,
        })
        .collect();
    let status = match out.termination {
        Termination::Converged => Status::Converged,
        Termination::MaxIterations => Status::MaxIterations,
        Termination::Stalled => Status::Stalled,
        Termination::Infeasible(x) => Status::InfeasibleAt(layout.expand(&x)),
    };
    let estimates = layout.expand(&out.x);
    let dim = estimates.len();
    let (std_err, hessian_warning) = if status.is_infeasible() || settings.skip_std_errors || !out.f.is_finite() {
        (vec![f64::NAN; dim], false)
    } else {
        let se = std_errors_free(problem, &estimates, &layout.free, settings.hessian_step)?;
        let mut full = vec![f64::NAN; dim];
        for (&i, s) in layout.free.iter().zip(&se.std_err) {
            full[i] = *s;
        }
        (full, se.warning)
    };
    let t_vs_zero = estimates.iter().zip(&std_err).map(|(b, s)| b / s).collect();
    let t_vs_truth = settings
        .reference
        .as_ref()
        .map(|r| estimates.iter().zip(&std_err).zip(r).map(|((b, s), r)| (b - r) / s).collect());
    Ok(EstimationResult {
        model: model.kind().to_string(),
        param_names: spec.param_names(),
        estimates,
        std_err,
        t_vs_zero,
        t_vs_truth,
        log_likelihood: -out.f * n,
        n_obs: problem.n_obs(),
        iterations: out.iterations,
        grad_norm: out.g.iter().fold(0.0, |m, g| m.max(g.abs())),
        status,
        trajectory,
        seconds: started.elapsed().as_secs_f64(),
        hessian_warning,
        two_phase: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StdErrors {
    pub std_err: Vec<f64>,
    /// Covariance `(−H)⁻¹`.
    pub covariance: DMatrix<f64>,
    /// `−H` was not positive definite and a pseudo-inverse was used.
    pub warning: bool,
}

/// Standard errors at `theta` from the finite-difference Hessian of the log-likelihood.
pub fn std_errors(problem: &Problem, theta: &[f64], hessian_step: f64) -> Result<StdErrors> {
    let all: Vec<usize> = (0..theta.len()).collect();
    std_errors_free(problem, theta, &all, hessian_step)
}

fn std_errors_free(problem: &Problem, theta: &[f64], free: &[usize], step: f64) -> Result<StdErrors> {
    let sub = |x: &[f64]| -> Result<Vec<f64>> {
        let mut t = theta.to_vec();
        for (&i, &v) in free.iter().zip(x) {
            t[i] = v;
        }
        let g = problem.value_and_gradient(&t)?.1;
        Ok(free.iter().map(|&i| g[i]).collect())
    };
    let x: Vec<f64> = free.iter().map(|&i| theta[i]).collect();
    hessian_std_errors(&x, step, sub)
}

/// Standard errors from central differences of `gradient`, a log-likelihood gradient.
///
/// The Hessian is symmetrized before inversion; if `−H` is not positive
/// definite the covariance falls back to its pseudo-inverse and `warning` is set.
pub fn hessian_std_errors(
    theta: &[f64],
    step: f64,
    mut gradient: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<StdErrors> {
    let n = theta.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut x = theta.to_vec();
    for j in 0..n {
        let hj = step * theta[j].abs().max(1.0);
        x[j] = theta[j] + hj;
        let up = gradient(&x)?;
        x[j] = theta[j] - hj;
        let down = gradient(&x)?;
        x[j] = theta[j];
        for i in 0..n {
            h[(i, j)] = (up[i] - down[i]) / (2.0 * hj);
        }
    }
    let neg = -(&h + h.transpose()) / 2.0;
    let (covariance, warning) = match neg.clone().cholesky() {
        Some(c) => (c.inverse(), false),
        None => (
            neg.pseudo_inverse(1e-12).map_err(|e| Error::NonFinite(e.to_string()))?,
            true,
        ),
    };
    let std_err = (0..n)
        .map(|i| {
            let v = covariance[(i, i)];
            if v > 0.0 {
                v.sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(StdErrors {
        std_err,
        covariance,
        warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseResult {
    /// Prism model estimated from the configured start.
    pub phase1: EstimationResult,
    /// Unconstrained model started at the phase-1 estimates.
    pub phase2: EstimationResult,
}

/// Estimates the prism model, then the unconstrained model from the prism estimates.
pub fn two_phase_estimate(
    graph: Arc<StateGraph>,
    spec: &UtilitySpec,
    observations: &[PathObservation],
    stages: StageConstraint,
    settings: &EstimatorSettings,
) -> Result<TwoPhaseResult> {
    let phase1 = estimate_with(graph.clone(), spec, observations, PathSet::Prism(stages), settings)?;
    let second = EstimatorSettings {
        start: phase1.estimates.clone(),
        ..settings.clone()
    };
    let mut phase2 = estimate_with(graph, spec, observations, PathSet::Universal, &second)?;
    phase2.two_phase = true;
    Ok(TwoPhaseResult { phase1, phase2 })
}
