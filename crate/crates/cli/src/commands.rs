//! Subcommand implementations. Each writes its artifacts into the run directory
//! and prints a short summary.

use std::fmt;
use std::sync::Arc;

use anyhow::{Context, Result};
use routechoice_core::network::{min_steps, Direction, NodeId};
use routechoice_core::prism::{destination_steps, detour_statistics, stage_constraint};
use routechoice_core::utility::evaluate_utilities;
use routechoice_core::value::scan_feasible_region;
use routechoice_core::{
    build_prism, check_feasibility, cross_validate, estimate_with, load_observations, out_of_prism_grid,
    reproduce_truth_experiment, simulate_paths, solve_rl, t_sensitivity, two_phase_estimate,
    write_observations, EstimationResult, Model, Network, PathObservation, PathSet, Problem, SimulationConfig,
    StageConstraint, StageMode, StateGraph, TruthExperiment, UtilitySpec, ValidationConfig,
};
use serde_json::json;

use crate::config::{RunConfig, SimulationSection};
use crate::output::{join, ll, num, RunDir, Table};

/// A problem with the configuration, reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Estimation stopped at an infeasible point in strict mode, reported with exit status 4.
#[derive(Debug)]
pub struct StrictInfeasible(pub String);

impl fmt::Display for StrictInfeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "estimation stopped at an infeasible point: {}", self.0)
    }
}

impl std::error::Error for StrictInfeasible {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub struct RunContext {
    pub cfg: RunConfig,
    pub spec: UtilitySpec,
    pub network: Network,
    pub run: RunDir,
}

impl RunContext {
    fn simulation(&self) -> Result<&SimulationSection> {
        self.cfg
            .simulation
            .as_ref()
            .ok_or_else(|| config_error("this command needs a `simulation` section"))
    }

    fn simulation_config(&self) -> Result<SimulationConfig> {
        let s = self.simulation()?;
        let mut c = SimulationConfig::all_pairs(&s.origins, &s.destinations, s.per_od, self.cfg.seed);
        if let Some(m) = s.max_steps {
            c.max_steps = m;
        }
        if let Some(r) = s.max_breach_rate {
            c.max_breach_rate = r;
        }
        Ok(c)
    }

    fn graph(&self, observations: &[PathObservation]) -> Result<Arc<StateGraph>> {
        let (mut origins, mut dests) = self.cfg.simulation_nodes();
        for o in observations {
            origins.insert(o.origin);
            dests.insert(o.destination);
        }
        if dests.is_empty() {
            return Err(config_error("no destinations: give observations or a `simulation` section"));
        }
        let origins: Vec<NodeId> = origins.into_iter().collect();
        let dests: Vec<NodeId> = dests.into_iter().collect();
        Ok(Arc::new(StateGraph::new(self.network.clone(), &dests, &origins)?))
    }

    /// Observed paths from the configured file, or simulated from the universal
    /// model at the simulation truth.
    fn data(&mut self) -> Result<(Vec<PathObservation>, Arc<StateGraph>)> {
        if let Some(path) = &self.cfg.observations {
            let obs = load_observations(path, &self.network)?;
            let graph = self.graph(&obs)?;
            return Ok((obs, graph));
        }
        let graph = self.graph(&[])?;
        let obs = self.simulate(&graph)?;
        Ok((obs, graph))
    }

    fn simulate(&mut self, graph: &Arc<StateGraph>) -> Result<Vec<PathObservation>> {
        let truth = self.simulation()?.truth.clone();
        let model = Arc::new(Model::new(graph.clone(), self.spec.clone(), PathSet::Universal)?);
        let sim = simulate_paths(&model.fit(&truth)?, &self.simulation_config()?)?;
        let tmp = self.run.path(".observations.csv.tmp");
        write_observations(&tmp, &sim.observations)?;
        std::fs::rename(&tmp, self.run.path("observations.csv")).context("cannot move observations.csv")?;
        self.run.write_json(
            "simulation.json",
            &json!({
                "truth": truth,
                "observations": sim.observations.len(),
                "draws": sim.draws,
                "breaches": sim.breaches,
            }),
        )?;
        self.run.record("observations.csv");
        Ok(sim.observations)
    }

    fn settings(&self) -> Result<routechoice_core::EstimatorSettings> {
        let mut s = self.cfg.estimator.clone();
        if s.start.is_empty() {
            return Err(config_error("estimator.start is required (or pass --start)"));
        }
        if s.reference.is_none() {
            s.reference = self.cfg.simulation.as_ref().map(|sim| sim.truth.clone());
        }
        Ok(s)
    }

    fn path_set(&self, observations: &[PathObservation], graph: &StateGraph) -> Result<PathSet> {
        match (self.cfg.model.is_prism(), self.cfg.policy()) {
            (true, Some(p)) => Ok(PathSet::Prism(stage_constraint(observations, graph, p)?)),
            _ => Ok(PathSet::Universal),
        }
    }
}

fn estimates_table(r: &EstimationResult) -> Table {
    let mut t = Table::new(&["param", "estimate", "std_err", "t_vs_zero", "t_vs_truth"]);
    for (i, name) in r.param_names.iter().enumerate() {
        let truth = r.t_vs_truth.as_ref().map_or(String::new(), |t| num(t[i]));
        t.push(vec![name.clone(), num(r.estimates[i]), num(r.std_err[i]), num(r.t_vs_zero[i]), truth]);
    }
    t
}

fn trajectory_table(r: &EstimationResult) -> Table {
    let mut header = vec!["iteration".to_string(), "kind".to_string()];
    header.extend(r.param_names.iter().cloned());
    header.extend(["log_likelihood".to_string(), "grad_norm".to_string()]);
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for p in &r.trajectory {
        let mut row = vec![p.iteration.to_string(), format!("{:?}", p.kind).to_lowercase()];
        row.extend(p.theta.iter().map(|x| num(*x)));
        row.push(p.log_likelihood.map_or(String::new(), ll));
        row.push(p.grad_norm.map_or(String::new(), num));
        t.push(row);
    }
    t
}

fn summary_markdown(results: &[&EstimationResult]) -> String {
    let mut out = String::new();
    for r in results {
        let flag = if r.two_phase { " (two-phase)" } else { "" };
        out.push_str(&format!("## {}{flag}\n\n", r.model));
        let mut t = Table::new(&["param", "estimate", "std.err", "t-test (0)", "t-test (truth)"]);
        for row in estimates_table(r).rows {
            t.push(row);
        }
        out.push_str(&t.markdown());
        out.push_str(&format!(
            "\nLL = {}, N = {}, status = {}, iterations = {}, seconds = {:.3}{}\n\n",
            ll(r.log_likelihood),
            r.n_obs,
            r.status,
            r.iterations,
            r.seconds,
            if r.hessian_warning { ", Hessian not negative definite" } else { "" }
        ));
    }
    out
}

fn print_result(r: &EstimationResult) {
    println!(
        "{}: status {}, LL {}, {} iterations, {:.2}s",
        r.model,
        r.status,
        ll(r.log_likelihood),
        r.iterations,
        r.seconds
    );
    for (i, name) in r.param_names.iter().enumerate() {
        println!("  {name:>12} {:>12} ({})", num(r.estimates[i]), num(r.std_err[i]));
    }
}

pub fn estimate(ctx: &mut RunContext) -> Result<()> {
    let (obs, graph) = ctx.data()?;
    let settings = ctx.settings()?;
    let result = if ctx.cfg.two_phase {
        let policy = ctx.cfg.policy().expect("validated");
        let constraint = stage_constraint(&obs, &graph, policy)?;
        let r = two_phase_estimate(graph, &ctx.spec, &obs, constraint, &settings)?;
        ctx.run.write_csv("estimates_phase1.csv", &estimates_table(&r.phase1))?;
        ctx.run.write_csv("trajectory_phase1.csv", &trajectory_table(&r.phase1))?;
        ctx.run.write_json("result_phase1.json", &r.phase1)?;
        ctx.run.write("summary.md", summary_markdown(&[&r.phase1, &r.phase2]).as_bytes())?;
        print_result(&r.phase1);
        r.phase2
    } else {
        let path_set = ctx.path_set(&obs, &graph)?;
        let r = estimate_with(graph, &ctx.spec, &obs, path_set, &settings)?;
        ctx.run.write("summary.md", summary_markdown(&[&r]).as_bytes())?;
        r
    };
    ctx.run.write_csv("estimates.csv", &estimates_table(&result))?;
    ctx.run.write_csv("trajectory.csv", &trajectory_table(&result))?;
    ctx.run.write_json("result.json", &result)?;
    print_result(&result);
    if settings.strict_infeasible && result.status.is_infeasible() {
        return Err(StrictInfeasible(result.status.to_string()).into());
    }
    Ok(())
}

pub fn simulate(ctx: &mut RunContext) -> Result<()> {
    ctx.simulation()?;
    let graph = ctx.graph(&[])?;
    let obs = ctx.simulate(&graph)?;
    println!("simulated {} paths into {}", obs.len(), ctx.run.path("observations.csv").display());
    Ok(())
}

pub fn loglik(ctx: &mut RunContext) -> Result<()> {
    let (obs, graph) = ctx.data()?;
    let settings = ctx.settings()?;
    let path_set = ctx.path_set(&obs, &graph)?;
    let model = Arc::new(Model::new(graph, ctx.spec.clone(), path_set)?);
    let kind = model.kind();
    let problem = Problem::new(model.clone(), &obs)?;
    let (value, gradient) = problem.value_and_gradient(&settings.start)?;
    let mut scores = Table::new(&["obs_id", "origin", "destination", "log_prob", "feasible"]);
    for (o, s) in obs.iter().zip(model.fit(&settings.start)?.score(&obs)?) {
        scores.push(vec![
            s.id,
            o.origin.to_string(),
            o.destination.to_string(),
            ll(s.log_prob),
            u8::from(s.feasible).to_string(),
        ]);
    }
    ctx.run.write_csv("loglik.csv", &scores)?;
    ctx.run.write_json(
        "loglik.json",
        &json!({
            "model": kind.to_string(),
            "params": ctx.spec.param_names(),
            "theta": settings.start,
            "log_likelihood": value,
            "n_obs": obs.len(),
            "mean": value / obs.len() as f64,
            "gradient": gradient,
        }),
    )?;
    println!("{kind}: LL {} over {} paths at {}", ll(value), obs.len(), join(&settings.start));
    Ok(())
}

pub fn feasibility(ctx: &mut RunContext) -> Result<()> {
    let beta = ctx
        .cfg
        .feasibility
        .as_ref()
        .ok_or_else(|| config_error("this command needs a `feasibility` section"))?
        .beta
        .clone();
    let obs = match &ctx.cfg.observations {
        Some(p) => load_observations(p, &ctx.network)?,
        None => Vec::new(),
    };
    let graph = ctx.graph(&obs)?;
    let weights = evaluate_utilities(&ctx.spec, &beta, &graph)?;
    let report = check_feasibility(&graph, &weights);
    let per_destination: Vec<_> = graph
        .destinations()
        .map(|d| match solve_rl(&graph, &weights, d) {
            Ok(v) => json!({"destination": d, "solvable": true, "residual": v.residual}),
            Err(e) => json!({"destination": d, "solvable": false, "failure": e.to_string()}),
        })
        .collect();
    ctx.run.write_json(
        "feasibility.json",
        &json!({
            "beta": beta,
            "spectral_radius": report.spectral_radius,
            "power_iterations": report.power_iterations,
            "power_converged": report.power_converged,
            "rows": report.rows,
            "row_sum_below_one": report.row_sum_below_one,
            "max_row_sum": report.max_row_sum,
            "solvable": per_destination.iter().all(|d| d["solvable"] == true),
            "destinations": per_destination,
        }),
    )?;
    println!(
        "beta {}: spectral radius {}, max row sum {}, {:.1}% rows below one",
        join(&beta),
        num(report.spectral_radius),
        num(report.max_row_sum),
        100.0 * report.row_sum_below_one
    );
    Ok(())
}

pub fn prism(ctx: &mut RunContext) -> Result<()> {
    let policy = ctx
        .cfg
        .policy()
        .cloned()
        .ok_or_else(|| config_error("this command needs a `prism` policy"))?;
    let obs = match &ctx.cfg.observations {
        Some(p) => load_observations(p, &ctx.network)?,
        None => Vec::new(),
    };
    let graph = ctx.graph(&obs)?;
    let constraint = stage_constraint(&obs, &graph, &policy)?;
    let mut table = Table::new(&["destination", "origin", "stages", "states", "max_stage_states", "edges"]);
    let mut masks = Table::new(&["destination", "origin", "t", "state", "label", "I"]);
    let mut summaries = Vec::new();
    let mut keys: Vec<(Option<NodeId>, NodeId, usize)> = Vec::new();
    match &constraint {
        StageConstraint::PerOd { stages, .. } => keys.extend(stages.iter().map(|(&(o, d), &t)| (Some(o), d, t))),
        _ => keys.extend(graph.destinations().map(|d| (None, d, constraint.destination_stages(d)))),
    }
    for (origin, d, t) in keys {
        let to_dest = min_steps(&graph, d, Direction::ToDestination)?;
        let from_origin = origin.map(|o| min_steps(&graph, o, Direction::FromOrigin)).transpose()?;
        let p = build_prism(&graph, &to_dest, t, from_origin.as_ref())?;
        let counts = p.stage_counts();
        let origin_cell = origin.map_or(String::new(), |o| o.to_string());
        for stage in 0..=p.stages() {
            for k in 0..graph.n_states() {
                masks.push(vec![
                    d.to_string(),
                    origin_cell.clone(),
                    stage.to_string(),
                    k.to_string(),
                    graph.label(k),
                    u8::from(p.is_active(stage, k)).to_string(),
                ]);
            }
        }
        summaries.push(json!({
            "destination": d,
            "origin": origin,
            "stages": t,
            "stage_counts": counts,
            "edge_counts": p.edge_counts(&graph),
        }));
        table.push(vec![
            d.to_string(),
            origin_cell,
            t.to_string(),
            counts.iter().sum::<usize>().to_string(),
            counts.iter().max().copied().unwrap_or(0).to_string(),
            p.edge_counts(&graph).iter().sum::<usize>().to_string(),
        ]);
    }
    ctx.run.write_csv("prism.csv", &masks)?;
    ctx.run.write_csv("prism_summary.csv", &table)?;
    let detours = if obs.is_empty() {
        None
    } else {
        Some(detour_statistics(&obs, &graph, &destination_steps(&graph)?)?)
    };
    ctx.run.write_json(
        "prism.json",
        &json!({"policy": policy, "detours": detours, "prisms": summaries}),
    )?;
    print!("{}", table.markdown());
    Ok(())
}

pub fn validate(ctx: &mut RunContext) -> Result<()> {
    let section = ctx
        .cfg
        .validation
        .clone()
        .ok_or_else(|| config_error("this command needs a `validation` section"))?;
    let (obs, graph) = ctx.data()?;
    let config = ValidationConfig {
        folds: section.folds,
        train_fraction: section.train_fraction,
        seed: ctx.cfg.seed,
        policy: if ctx.cfg.model.is_prism() { ctx.cfg.prism.clone() } else { None },
        score_out_of_prism: section.score_out_of_prism,
        settings: ctx.settings()?,
    };
    let report = cross_validate(graph.clone(), &ctx.spec, &obs, &config)?;
    let mut header = vec![
        "fold", "train", "holdout", "scored", "out_of_prism", "status", "holdout_ll", "ll_per_path", "running_mean",
    ];
    let names = ctx.spec.param_names();
    header.extend(names.iter().map(String::as_str));
    let mut table = Table::new(&header);
    for f in &report.folds {
        let mut row = vec![
            f.fold.to_string(),
            f.train.to_string(),
            f.holdout.to_string(),
            f.scored.to_string(),
            f.out_of_prism.to_string(),
            f.status.to_string(),
            ll(f.holdout_ll),
            ll(f.ll_per_path),
            ll(f.running_mean),
        ];
        row.extend(f.estimates.iter().map(|x| num(*x)));
        table.push(row);
    }
    ctx.run.write_csv("validation.csv", &table)?;
    let finite = report.folds.iter().filter(|f| f.ll_per_path.is_finite()).count();
    if finite == 0 {
        println!("{} folds, none produced a finite holdout log-likelihood", report.folds.len());
    } else {
        println!(
            "{} folds ({finite} scored), mean holdout LL per path {}",
            report.folds.len(),
            ll(report.mean_ll_per_path)
        );
    }

    if !section.gammas.is_empty() {
        let mut grid_cfg = config.clone();
        let mode = match config.policy.as_ref().map(|p| p.mode) {
            Some(StageMode::Od) => StageMode::Od,
            _ => StageMode::Destination,
        };
        grid_cfg.policy = Some(routechoice_core::ChoiceStagePolicy {
            mode,
            t: None,
            gamma: section.gammas[0],
            t_min: section.t_mins[0],
        });
        let cells = out_of_prism_grid(&graph, &obs, &grid_cfg, &section.gammas, &section.t_mins)?;
        let mut table = Table::new(&["gamma", "t_min", "mean", "min", "max"]);
        for c in &cells {
            table.push(vec![num(c.gamma), c.t_min.to_string(), num(c.mean), num(c.min), num(c.max)]);
        }
        ctx.run.write_csv("out_of_prism.csv", &table)?;
        let mut header = vec!["T_min".to_string()];
        header.extend(section.gammas.iter().map(|g| format!("gamma={g}")));
        let mut md = Table {
            header,
            rows: Vec::new(),
        };
        for &t in &section.t_mins {
            let mut row = vec![t.to_string()];
            for &g in &section.gammas {
                let c = cells.iter().find(|c| c.gamma == g && c.t_min == t).expect("grid cell");
                row.push(format!("{:.2} [{:.2}, {:.2}]", c.mean, c.min, c.max));
            }
            md.push(row);
        }
        ctx.run.write("out_of_prism.md", md.markdown().as_bytes())?;
        print!("{}", md.markdown());
    }
    Ok(())
}

pub fn experiment(ctx: &mut RunContext) -> Result<()> {
    let section = ctx
        .cfg
        .experiment
        .clone()
        .ok_or_else(|| config_error("this command needs an `experiment` section"))?;
    let truth = ctx.simulation()?.truth.clone();
    let graph = ctx.graph(&[])?;
    let experiment = TruthExperiment {
        truth: truth.clone(),
        simulation: ctx.simulation_config()?,
        samples: section.samples,
        starts: section.starts.clone(),
        prism_stages: section.prism_stages,
        settings: routechoice_core::EstimatorSettings {
            start: section.starts[0].theta.clone(),
            ..ctx.cfg.estimator.clone()
        },
    };
    let report = reproduce_truth_experiment(graph.clone(), &ctx.spec, &experiment)?;
    let names = &report.param_names;

    let mut rows = Table::new(&[
        "model", "start", "sample", "param", "estimate", "std_err", "t_vs_truth", "status", "log_likelihood",
        "iterations",
    ]);
    let mut timings = Vec::new();
    let mut traces = Table::new(&["model", "start", "sample", "iteration", "kind", "theta", "log_likelihood"]);
    for r in &report.rows {
        let res = &r.result;
        for (i, name) in names.iter().enumerate() {
            rows.push(vec![
                res.model.clone(),
                r.start.clone(),
                r.sample.to_string(),
                name.clone(),
                num(res.estimates[i]),
                num(res.std_err[i]),
                res.t_vs_truth.as_ref().map_or(String::new(), |t| num(t[i])),
                res.status.to_string(),
                ll(res.log_likelihood),
                res.iterations.to_string(),
            ]);
        }
        timings.push(json!({"model": res.model, "start": r.start, "sample": r.sample, "seconds": res.seconds}));
        for p in &res.trajectory {
            traces.push(vec![
                res.model.clone(),
                r.start.clone(),
                r.sample.to_string(),
                p.iteration.to_string(),
                format!("{:?}", p.kind).to_lowercase(),
                join(&p.theta),
                p.log_likelihood.map_or(String::new(), ll),
            ]);
        }
    }
    ctx.run.write_csv("experiment.csv", &rows)?;
    ctx.run.write_csv("trajectory.csv", &traces)?;

    let mut averages = Table::new(&["model", "start", "converged", "runs", "param", "estimate", "std_err", "t_vs_truth"]);
    let mut md = String::new();
    for a in &report.averages {
        for (i, name) in names.iter().enumerate() {
            averages.push(vec![
                a.model.clone(),
                a.start.clone(),
                a.converged.to_string(),
                a.runs.to_string(),
                name.clone(),
                num(a.estimates[i]),
                num(a.std_err[i]),
                a.t_vs_truth.get(i).map_or(String::new(), |t| num(*t)),
            ]);
        }
    }
    for a in &report.averages {
        let mut header = vec!["sample".to_string()];
        for n in names {
            header.extend([n.clone(), "std.err".to_string(), "t-test".to_string()]);
        }
        let mut t = Table {
            header,
            rows: Vec::new(),
        };
        for r in report.rows_for(&a.model, &a.start) {
            let mut row = vec![(r.sample + 1).to_string()];
            for i in 0..names.len() {
                row.push(num(r.result.estimates[i]));
                row.push(num(r.result.std_err[i]));
                row.push(r.result.t_vs_truth.as_ref().map_or(String::new(), |t| num(t[i])));
            }
            t.push(row);
        }
        let mut avg = vec!["Average".to_string()];
        for i in 0..names.len() {
            avg.push(num(a.estimates[i]));
            avg.push(num(a.std_err[i]));
            avg.push(a.t_vs_truth.get(i).map_or(String::new(), |t| num(*t)));
        }
        t.push(avg);
        md.push_str(&format!(
            "## {} from {} ({} of {} converged)\n\n{}\n",
            a.model,
            a.start,
            a.converged,
            a.runs,
            t.markdown()
        ));
        println!("{} from {}: {}/{} converged, average {}", a.model, a.start, a.converged, a.runs, join(&a.estimates));
    }
    ctx.run.write_csv("experiment_averages.csv", &averages)?;

    let mut timings_sweep = None;
    if !section.t_values.is_empty() {
        let obs = ctx.simulate(&graph)?;
        let sweep = t_sensitivity(graph, &ctx.spec, &obs, &section.t_values, &experiment.settings)?;
        let mut header = vec!["T".to_string()];
        header.extend(names.iter().cloned());
        header.extend(names.iter().map(|n| format!("{n}_std_err")));
        header.extend(["log_likelihood", "status", "iterations"].map(String::from));
        let mut t = Table {
            header: header.clone(),
            rows: Vec::new(),
        };
        header.push("seconds".to_string());
        let mut timed = Table {
            header,
            rows: Vec::new(),
        };
        let mut sweep_timings = Vec::new();
        for row in &sweep {
            let r = &row.result;
            let mut cells = vec![row.stages.to_string()];
            cells.extend(r.estimates.iter().map(|x| format!("{x:.8}")));
            cells.extend(r.std_err.iter().map(|x| format!("{x:.8}")));
            cells.extend([ll(r.log_likelihood), r.status.to_string(), r.iterations.to_string()]);
            t.push(cells.clone());
            cells.push(format!("{:.3}", r.seconds));
            timed.push(cells);
            sweep_timings.push(json!({"t": row.stages, "seconds": r.seconds}));
        }
        ctx.run.write_csv("t_sensitivity.csv", &t)?;
        timings_sweep = Some(sweep_timings);
        md.push_str(&format!("## T sensitivity\n\n{}", timed.markdown()));
        print!("{}", timed.markdown());
    }
    ctx.run.write("experiment.md", md.as_bytes())?;
    // wall-clock times are kept out of the CSV artifacts so reruns reproduce them byte for byte
    ctx.run.write_json("timings.json", &json!({"samples": timings, "t_sensitivity": timings_sweep}))?;
    Ok(())
}

pub fn scan(ctx: &mut RunContext) -> Result<()> {
    let section = ctx
        .cfg
        .scan
        .clone()
        .ok_or_else(|| config_error("this command needs a `scan` section"))?;
    let obs = match &ctx.cfg.observations {
        Some(p) => load_observations(p, &ctx.network)?,
        None => Vec::new(),
    };
    let graph = ctx.graph(&obs)?;
    let points = scan_feasible_region(&graph, &ctx.spec, &section.beta1.values(), &section.beta2.values())?;
    let mut table = Table::new(&["beta1", "beta2", "feasible"]);
    for p in &points {
        table.push(vec![num(p.beta1), num(p.beta2), u8::from(p.feasible).to_string()]);
    }
    ctx.run.write_csv("scan.csv", &table)?;
    let feasible = points.iter().filter(|p| p.feasible).count();
    println!("{feasible} of {} grid points feasible", points.len());
    Ok(())
}
