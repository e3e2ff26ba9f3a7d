//! Route choice estimation with recursive logit models over link-based networks.
//!
//! Supports the universal recursive logit (RL), its nested variant (NRL), and
//! their prism-constrained counterparts that restrict choice sets to paths of
//! bounded length.

pub mod choice;
pub mod error;
pub mod estimate;
pub mod network;
pub mod prism;
pub mod simulate;
pub mod utility;
pub mod value;

pub use choice::{log_likelihood, FittedModel, GradientMode, Model, ModelKind, PathSet, Problem, TranslatedPath};
pub use error::{Error, Result};
pub use estimate::{
    estimate, estimate_problem, estimate_with, two_phase_estimate, EstimationResult, EstimatorSettings, PointKind,
    Status, TrajectoryPoint, TwoPhaseResult,
};
pub use network::{
    load_network, load_observations, write_observations, Link, LinkId, Network, Node, NodeId, PathObservation,
    StateGraph, StateId, StateKind,
};
pub use prism::{build_prism, ChoiceStagePolicy, Prism, StageConstraint, StageMode};
pub use simulate::{
    cross_validate, out_of_prism_grid, reproduce_truth_experiment, simulate_paths, t_sensitivity, SimulationConfig,
    Simulated, StartPoint, TruthExperiment, TruthReport, ValidationConfig, ValidationReport,
};
pub use utility::{EdgeFeatures, Scale, Term, UtilitySpec, WeightMatrix};
pub use value::{check_feasibility, solve_nrl, solve_prism_nrl, solve_prism_rl, solve_rl, FeasibilityReport, ValueTable};
