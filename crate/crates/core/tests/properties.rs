use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routechoice_core::network::{synthetic, LENGTH};
use routechoice_core::utility::UTURN;
use routechoice_core::{
    load_observations, simulate_paths, write_observations, Model, Network, PathSet, Problem, SimulationConfig,
    StageConstraint, StateGraph, Term, UtilitySpec,
};

fn network(seed: u64, directed: bool) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs = |_, _| vec![rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)];
    if directed {
        synthetic::directed_grid(3, 4, &[LENGTH, "Noise"], &mut attrs)
    } else {
        synthetic::grid_with(3, 3, &[LENGTH, "Noise"], &mut attrs)
    }
}

fn spec() -> UtilitySpec {
    UtilitySpec::new(vec![Term::new("len", &[LENGTH]), Term::new("noise", &["Noise"])]).with_fixed(-10.0, &[UTURN])
}

fn model(graph: &Arc<StateGraph>, path_set: PathSet) -> Arc<Model> {
    Arc::new(Model::new(graph.clone(), spec(), path_set).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prism_transition_rows_are_distributions(
        seed in 0u64..1000,
        len in -3.0f64..-0.5,
        noise in -1.0f64..1.0,
        extra in 0usize..5,
    ) {
        let graph = Arc::new(StateGraph::new(network(seed, false), &[9], &[1]).unwrap());
        let m = model(&graph, PathSet::Prism(StageConstraint::Scalar(4 + extra)));
        let fit = m.fit(&[len, noise]).unwrap();
        let prism = m.prism(1, 9).unwrap().unwrap();
        let absorbing = graph.dest_state(9).unwrap();
        for t in 0..prism.stages() {
            for k in prism.stage_states(t).filter(|&k| k != absorbing) {
                let row = fit.transition_probs(1, 9, t, k).unwrap();
                let sum: f64 = row.iter().map(|(_, p)| p).sum();
                prop_assert!((sum - 1.0).abs() < 1e-12, "t={t} k={k} sum={sum}");
                prop_assert!(row.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn simulated_paths_fit_the_prism_and_have_finite_likelihood(
        seed in 0u64..1000,
        len in -2.5f64..-0.8,
        t in 7usize..12,
    ) {
        let graph = Arc::new(StateGraph::new(network(seed, false), &[9, 3], &[1, 7]).unwrap());
        let m = model(&graph, PathSet::Prism(StageConstraint::Scalar(t)));
        let config = SimulationConfig::all_pairs(&[1, 7], &[9, 3], 20, seed);
        let obs = simulate_paths(&m.fit(&[len, 0.3]).unwrap(), &config).unwrap().observations;
        prop_assert_eq!(obs.len(), 80);
        for o in &obs {
            prop_assert!(o.transitions() <= t, "{} transitions with T = {}", o.transitions(), t);
        }
        let ll = Problem::new(m, &obs).unwrap().log_likelihood(&[len, 0.3]).unwrap();
        prop_assert!(ll.is_finite() && ll < 0.0);
    }

    #[test]
    fn wide_prisms_match_the_universal_model_on_acyclic_networks(
        seed in 0u64..1000,
        len in -3.0f64..0.0,
        noise in -2.0f64..2.0,
    ) {
        // every path of a 3x4 right/down grid has 5 links, so T = 8 admits them all
        let graph = Arc::new(StateGraph::new(network(seed, true), &[12], &[1]).unwrap());
        let rl = model(&graph, PathSet::Universal);
        let obs = simulate_paths(
            &rl.fit(&[len, noise]).unwrap(),
            &SimulationConfig::all_pairs(&[1], &[12], 30, seed),
        )
        .unwrap()
        .observations;
        let a = Problem::new(rl, &obs).unwrap().log_likelihood(&[len, noise]).unwrap();
        let prism = model(&graph, PathSet::Prism(StageConstraint::Scalar(8)));
        let b = Problem::new(prism, &obs).unwrap().log_likelihood(&[len, noise]).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn observations_survive_a_file_round_trip(seed in 0u64..1000, per_od in 1usize..15) {
        let net = network(seed, false);
        let graph = Arc::new(StateGraph::new(net.clone(), &[9], &[1, 5]).unwrap());
        let m = model(&graph, PathSet::Prism(StageConstraint::Scalar(6)));
        let obs = simulate_paths(
            &m.fit(&[-1.5, 0.0]).unwrap(),
            &SimulationConfig::all_pairs(&[1, 5], &[9], per_od, seed),
        )
        .unwrap()
        .observations;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        write_observations(&path, &obs).unwrap();
        prop_assert_eq!(load_observations(&path, &net).unwrap(), obs);
    }
}
