use std::collections::HashMap;
use std::sync::Arc;

use super::*;
use crate::choice::{Model, PathSet};
use crate::estimate::EstimatorSettings;
use crate::network::{synthetic, LinkId, Network, LENGTH};
use crate::prism::{ChoiceStagePolicy, StageConstraint};
use crate::utility::{Term, UtilitySpec, UTURN};

fn spec() -> UtilitySpec {
    UtilitySpec::new(vec![Term::new("len", &[LENGTH])]).with_fixed(-10.0, &[UTURN])
}

fn fit_on(net: &Network, dests: &[NodeId], origins: &[NodeId], path_set: PathSet, theta: &[f64]) -> FittedModel {
    let g = Arc::new(StateGraph::new(net.clone(), dests, origins).unwrap());
    Arc::new(Model::new(g, spec(), path_set).unwrap()).fit(theta).unwrap()
}

fn config(ods: Vec<(NodeId, NodeId)>, per_od: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        ods,
        per_od,
        seed,
        max_steps: 1000,
        max_breach_rate: 0.01,
    }
}

#[test]
fn forced_route_is_always_drawn() {
    let net = synthetic::line(&[(1, 2, 1.0), (2, 3, 1.0)]);
    let fit = fit_on(&net, &[3], &[1], PathSet::Universal, &[-1.0]);
    let sim = simulate_paths(&fit, &config(vec![(1, 3)], 50, 1)).unwrap();
    assert_eq!(sim.observations.len(), 50);
    assert_eq!(sim.breaches, 0);
    assert!(sim.observations.iter().all(|o| o.links == vec![1, 2]));
    assert_eq!(sim.observations[7].id, "1-3-7");
}

#[test]
fn symmetric_routes_split_evenly() {
    let net = synthetic::line(&[(1, 2, 1.0), (2, 4, 1.0), (1, 3, 1.0), (3, 4, 1.0)]);
    let fit = fit_on(&net, &[4], &[1], PathSet::Prism(StageConstraint::Scalar(3)), &[-1.0]);
    let sim = simulate_paths(&fit, &config(vec![(1, 4)], 10_000, 3)).unwrap();
    let upper = sim.observations.iter().filter(|o| o.links[0] == 1).count() as f64 / 10_000.0;
    assert!((upper - 0.5).abs() < 0.015, "{upper}");
}

#[test]
fn path_frequencies_follow_model_probabilities() {
    let net = synthetic::grid(3, 3, |t, h| 1.0 + 0.2 * ((t + 2 * h) % 3) as f64);
    let n = 20_000;
    for path_set in [PathSet::Universal, PathSet::Prism(StageConstraint::Scalar(7))] {
        let fit = fit_on(&net, &[9], &[1], path_set, &[-1.5]);
        let sim = simulate_paths(&fit, &config(vec![(1, 9)], n, 11)).unwrap();
        let mut counts: HashMap<Vec<LinkId>, (usize, PathObservation)> = HashMap::new();
        for o in &sim.observations {
            counts.entry(o.links.clone()).or_insert((0, o.clone())).0 += 1;
        }
        let mut total = 0.0;
        for (count, obs) in counts.values() {
            let p = fit.path_probability(obs).unwrap();
            assert!(p > 0.0);
            total += p;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = *count as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * se + 1.0 / n as f64, "{:?}: {freq} vs {p}", obs.links);
        }
        assert!(total <= 1.0 + 1e-9);
    }
}

#[test]
fn same_seed_gives_same_paths() {
    let net = synthetic::grid(3, 3, |_, _| 1.0);
    let fit = fit_on(&net, &[9, 7], &[1, 3], PathSet::Universal, &[-1.0]);
    let cfg = SimulationConfig::all_pairs(&[1, 3], &[9, 7], 200, 5);
    let a = simulate_paths(&fit, &cfg).unwrap();
    let b = simulate_paths(&fit, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.observations.len(), 4 * 200);
    let c = simulate_paths(&fit, &SimulationConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.observations, c.observations);
}

#[test]
fn step_cap_breaches_are_resampled_then_abort() {
    let net = synthetic::grid(3, 3, |_, _| 1.0);
    let fit = fit_on(&net, &[9], &[1], PathSet::Universal, &[-1.2]);
    // the shortest path takes five transitions, so a cap of six discards many draws
    let tight = SimulationConfig {
        max_steps: 6,
        ..config(vec![(1, 9)], 100, 2)
    };
    assert!(matches!(simulate_paths(&fit, &tight), Err(Error::Simulation(_))));
    let tolerant = SimulationConfig {
        max_breach_rate: 1000.0,
        ..tight
    };
    let sim = simulate_paths(&fit, &tolerant).unwrap();
    assert!(sim.breaches > 0);
    assert_eq!(sim.draws, 100 + sim.breaches);
    assert!(sim.observations.iter().all(|o| o.transitions() <= 6));
}

#[test]
fn unknown_od_is_rejected() {
    let net = synthetic::grid(2, 2, |_, _| 1.0);
    let fit = fit_on(&net, &[4], &[1], PathSet::Universal, &[-1.0]);
    assert!(simulate_paths(&fit, &config(vec![(2, 4)], 1, 0)).is_err());
    assert!(simulate_paths(&fit, &config(vec![], 1, 0)).is_err());
}

#[test]
fn samples_are_dealt_round_robin_per_od() {
    let net = synthetic::line(&[(1, 2, 1.0), (2, 3, 1.0)]);
    let mk = |id: &str, o, d, links: Vec<LinkId>| PathObservation::new(id, o, d, links, &net).unwrap();
    let obs = vec![
        mk("a0", 1, 3, vec![1, 2]),
        mk("a1", 1, 3, vec![1, 2]),
        mk("a2", 1, 3, vec![1, 2]),
        mk("b0", 2, 3, vec![2]),
        mk("b1", 2, 3, vec![2]),
    ];
    let parts = split_samples(&obs, 2);
    let ids = |p: &[PathObservation]| p.iter().map(|o| o.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&parts[0]), ["a0", "a2", "b0"]);
    assert_eq!(ids(&parts[1]), ["a1", "b1"]);
}

fn validation_data() -> (Arc<StateGraph>, Vec<PathObservation>) {
    let net = synthetic::grid(3, 3, |t, h| 1.0 + 0.3 * ((t * 3 + h) % 4) as f64);
    let g = Arc::new(StateGraph::new(net.clone(), &[9, 3], &[1, 7]).unwrap());
    let fit = Arc::new(Model::new(g.clone(), spec(), PathSet::Universal).unwrap()).fit(&[-1.0]).unwrap();
    let sim = simulate_paths(&fit, &SimulationConfig::all_pairs(&[1, 7], &[9, 3], 150, 9)).unwrap();
    (g, sim.observations)
}

fn validation_config(policy: Option<ChoiceStagePolicy>) -> ValidationConfig {
    ValidationConfig {
        folds: 3,
        train_fraction: 0.8,
        seed: 4,
        policy,
        score_out_of_prism: false,
        settings: EstimatorSettings::from_start(&[-0.5]),
    }
}

#[test]
fn cross_validation_reports_every_fold() {
    let (g, obs) = validation_data();
    let report = cross_validate(g.clone(), &spec(), &obs, &validation_config(Some(ChoiceStagePolicy::per_destination(1.0, 5))))
        .unwrap();
    assert_eq!(report.folds.len(), 3);
    for f in &report.folds {
        assert_eq!(f.train + f.holdout, obs.len());
        assert_eq!(f.holdout, obs.len() - (obs.len() as f64 * 0.8).round() as usize);
        assert_eq!(f.scored + f.out_of_prism, f.holdout);
        assert!(f.ll_per_path < 0.0);
        assert!((f.estimates[0] + 1.0).abs() < 0.3, "{:?}", f.estimates);
    }
    let mean = report.folds.iter().map(|f| f.ll_per_path).sum::<f64>() / 3.0;
    assert!((report.mean_ll_per_path - mean).abs() < 1e-12);
    assert_eq!(report.folds[2].running_mean, report.mean_ll_per_path);
    assert_eq!(report.folds[0].running_mean, report.folds[0].ll_per_path);

    let again = cross_validate(g, &spec(), &obs, &validation_config(Some(ChoiceStagePolicy::per_destination(1.0, 5))))
        .unwrap();
    assert_eq!(report, again);
}

#[test]
fn scoring_out_of_prism_paths_widens_the_prism() {
    let (g, obs) = validation_data();
    // a tight prism leaves some holdout paths outside
    let mut cfg = validation_config(Some(ChoiceStagePolicy::per_destination(1.0, 1)));
    let plain = cross_validate(g.clone(), &spec(), &obs, &cfg).unwrap();
    assert!(plain.folds.iter().any(|f| f.out_of_prism > 0));
    cfg.score_out_of_prism = true;
    let widened = cross_validate(g, &spec(), &obs, &cfg).unwrap();
    for (a, b) in plain.folds.iter().zip(&widened.folds) {
        assert_eq!(b.scored, b.holdout);
        assert_eq!(a.out_of_prism, b.out_of_prism);
        assert!(b.holdout_ll.is_finite());
    }
}

#[test]
fn out_of_prism_share_shrinks_with_gamma_and_t_min() {
    let (g, obs) = validation_data();
    let cfg = validation_config(Some(ChoiceStagePolicy::per_destination(1.0, 1)));
    let gammas = [1.0, 1.5, 3.0];
    let t_mins = [1, 20];
    let cells = out_of_prism_grid(&g, &obs, &cfg, &gammas, &t_mins).unwrap();
    assert_eq!(cells.len(), 6);
    let at = |gamma: f64, t_min| cells.iter().find(|c| c.gamma == gamma && c.t_min == t_min).unwrap();
    assert!(at(1.0, 1).mean >= at(1.5, 1).mean && at(1.5, 1).mean >= at(3.0, 1).mean);
    for &gamma in &gammas {
        assert!(at(gamma, 1).mean >= at(gamma, 20).mean);
        assert!(at(gamma, 1).min <= at(gamma, 1).mean && at(gamma, 1).mean <= at(gamma, 1).max);
    }
    assert_eq!(at(1.0, 20).max, 0.0);
    let scalar = validation_config(Some(ChoiceStagePolicy::scalar(10)));
    assert!(out_of_prism_grid(&g, &obs, &scalar, &gammas, &t_mins).is_err());
}
