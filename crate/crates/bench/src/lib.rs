//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use routechoice_core::network::synthetic;
use routechoice_core::{simulate_paths, Model, PathObservation, PathSet, SimulationConfig, StateGraph, UtilitySpec};

pub const ORIGINS: [u32; 6] = [4, 7, 12, 16, 17, 21];
pub const DESTINATIONS: [u32; 4] = [5, 8, 11, 15];
pub const TRUTH: [f64; 2] = [-2.0, -1.5];

/// Sioux Falls state graph over the benchmark OD set.
pub fn sioux_falls() -> Arc<StateGraph> {
    Arc::new(StateGraph::new(synthetic::sioux_falls(), &DESTINATIONS, &ORIGINS).expect("Sioux Falls graph"))
}

/// `per_od` paths per OD pair drawn from the universal model at [`TRUTH`].
pub fn observations(graph: &Arc<StateGraph>, per_od: usize) -> Vec<PathObservation> {
    let model = Arc::new(Model::new(graph.clone(), UtilitySpec::sioux_falls(), PathSet::Universal).expect("model"));
    let config = SimulationConfig::all_pairs(&ORIGINS, &DESTINATIONS, per_od, 1);
    simulate_paths(&model.fit(&TRUTH).expect("fit"), &config)
        .expect("simulation")
        .observations
}
