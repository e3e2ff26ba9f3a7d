//! Versioned JSON run configuration and command-line overrides.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use routechoice_core::network::{synthetic, NodeId};
use routechoice_core::{ChoiceStagePolicy, EstimatorSettings, Network, StageMode, StartPoint, UtilitySpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkSource {
    /// The bundled Sioux Falls network.
    SiouxFalls,
    /// A TNTP link file, a `links.csv` next to `nodes.csv`, or a directory holding both.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UtilitySource {
    /// `"sioux-falls"` for the two-term Sioux Falls specification.
    Preset(String),
    Spec(UtilitySpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Rl,
    Nrl,
    PrismRl,
    PrismNrl,
}

impl ModelChoice {
    pub fn is_prism(self) -> bool {
        matches!(self, Self::PrismRl | Self::PrismNrl)
    }

    pub fn is_nested(self) -> bool {
        matches!(self, Self::Nrl | Self::PrismNrl)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Parameters of the simulating model.
    pub truth: Vec<f64>,
    pub origins: Vec<NodeId>,
    pub destinations: Vec<NodeId>,
    pub per_od: usize,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub max_breach_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub folds: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub score_out_of_prism: bool,
    /// γ values of the out-of-prism grid; the grid is skipped when empty.
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub t_mins: Vec<usize>,
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub samples: usize,
    pub starts: Vec<StartPoint>,
    /// T of the prism model in the reproducibility runs.
    pub prism_stages: usize,
    /// T values of the sensitivity sweep on the full simulated sample.
    #[serde(default)]
    pub t_values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilitySection {
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.steps <= 1 {
            return vec![self.from];
        }
        let h = (self.to - self.from) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.from + h * i as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub beta1: Axis,
    pub beta2: Axis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub network: NetworkSource,
    /// Observed paths; when absent, commands that need data simulate them.
    #[serde(default)]
    pub observations: Option<PathBuf>,
    pub model: ModelChoice,
    pub utility: UtilitySource,
    #[serde(default)]
    pub prism: Option<ChoiceStagePolicy>,
    /// Estimate the prism model first and start the universal model from it.
    #[serde(default)]
    pub two_phase: bool,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub validation: Option<ValidationSection>,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
    #[serde(default)]
    pub feasibility: Option<FeasibilitySection>,
    #[serde(default)]
    pub scan: Option<ScanSection>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/latest")
}

/// Flag overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub start: Option<Vec<f64>>,
    pub stages: Option<Vec<usize>>,
    pub strict_infeasible: bool,
}

impl RunConfig {
    /// Reads and validates a config; relative paths are resolved against its directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let NetworkSource::File { path } = &mut cfg.network {
            *path = base.join(&*path);
        }
        if let Some(obs) = &mut cfg.observations {
            *obs = base.join(&*obs);
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.output {
            self.output = out.clone();
        }
        if let Some(start) = &o.start {
            self.estimator.start = start.clone();
        }
        if let Some(stages) = &o.stages {
            if let Some(exp) = &mut self.experiment {
                exp.t_values = stages.clone();
            }
            if let (Some(p), [t]) = (&mut self.prism, stages.as_slice()) {
                if p.mode == StageMode::Scalar {
                    p.t = Some(*t);
                }
            }
        }
        if o.strict_infeasible {
            self.estimator.strict_infeasible = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == SCHEMA_VERSION,
            "config version {} is not supported (expected {SCHEMA_VERSION})",
            self.version
        );
        let spec = self.utility_spec()?;
        if self.model.is_prism() || self.two_phase {
            ensure!(self.prism.is_some(), "model {:?} needs a `prism` policy", self.model);
        }
        if self.two_phase {
            ensure!(!self.model.is_prism(), "two-phase estimation targets a universal model (rl or nrl)");
        }
        if let Some(p) = &self.prism {
            p.validate()?;
        }
        if !self.estimator.start.is_empty() {
            self.estimator.validate(&spec)?;
        }
        if let Some(sim) = &self.simulation {
            ensure!(
                sim.truth.len() == spec.n_params(),
                "simulation truth has {} values, the utility spec has {} parameters",
                sim.truth.len(),
                spec.n_params()
            );
            ensure!(sim.per_od > 0, "simulation per_od must be positive");
            ensure!(
                !sim.origins.is_empty() && !sim.destinations.is_empty(),
                "simulation needs origins and destinations"
            );
        }
        if let Some(v) = &self.validation {
            ensure!(v.folds >= 2, "validation needs at least two folds");
            ensure!(
                v.train_fraction > 0.0 && v.train_fraction < 1.0,
                "train_fraction must lie in (0, 1)"
            );
            ensure!(
                v.gammas.is_empty() == v.t_mins.is_empty(),
                "out-of-prism grid needs both gammas and t_mins"
            );
        }
        if let Some(e) = &self.experiment {
            ensure!(e.samples > 0 && !e.starts.is_empty(), "experiment needs samples and start points");
            for s in &e.starts {
                ensure!(
                    s.theta.len() == spec.n_params(),
                    "start {} has {} values, expected {}",
                    s.label,
                    s.theta.len(),
                    spec.n_params()
                );
            }
        }
        if let Some(f) = &self.feasibility {
            ensure!(f.beta.len() == spec.n_params(), "feasibility beta has the wrong length");
        }
        if let Some(s) = &self.scan {
            ensure!(spec.n_params() == 2, "scan needs a two-parameter utility spec");
            ensure!(s.beta1.steps > 0 && s.beta2.steps > 0, "scan axes need at least one step");
        }
        Ok(())
    }

    pub fn utility_spec(&self) -> Result<UtilitySpec> {
        let spec = match &self.utility {
            UtilitySource::Preset(name) if name == "sioux-falls" => UtilitySpec::sioux_falls(),
            UtilitySource::Preset(name) => bail!("unknown utility preset `{name}`"),
            UtilitySource::Spec(s) => s.clone(),
        };
        ensure!(!spec.terms.is_empty(), "utility spec has no estimated terms");
        Ok(if self.model.is_nested() && !spec.is_nested() {
            spec.nested()
        } else {
            spec
        })
    }

    pub fn load_network(&self) -> routechoice_core::Result<Network> {
        match &self.network {
            NetworkSource::SiouxFalls => Ok(synthetic::sioux_falls()),
            NetworkSource::File { path } => routechoice_core::load_network(path),
        }
    }

    /// SHA-256 of the effective configuration (after overrides).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn policy(&self) -> Option<&ChoiceStagePolicy> {
        self.prism.as_ref()
    }

    /// Origins and destinations named by the simulation section.
    pub fn simulation_nodes(&self) -> (BTreeSet<NodeId>, BTreeSet<NodeId>) {
        match &self.simulation {
            Some(s) => (s.origins.iter().copied().collect(), s.destinations.iter().copied().collect()),
            None => Default::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "version": 1,
            "network": {"source": "sioux-falls"},
            "model": "prism-rl",
            "utility": "sioux-falls",
            "prism": {"mode": "scalar", "t": 15},
            "estimator": {"start": [-1.0, -1.0]}
        })
    }

    fn parse(v: serde_json::Value) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse(minimal()).unwrap();
        assert_eq!(cfg.estimator.gtol, 1e-5);
        assert_eq!(cfg.output, PathBuf::from("runs/latest"));
        assert_eq!(cfg.utility_spec().unwrap().n_params(), 2);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let mut v = minimal();
        v["version"] = 2.into();
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["bogus"] = 1.into();
        assert!(parse(v).is_err());
        let mut v = minimal();
        v.as_object_mut().unwrap().remove("prism");
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["estimator"]["start"] = serde_json::json!([-1.0]);
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["utility"] = "nope".into();
        assert!(parse(v).is_err());
    }

    #[test]
    fn overrides_replace_seed_start_and_t() {
        let mut cfg = parse(minimal()).unwrap();
        let before = cfg.hash();
        cfg.apply(&Overrides {
            seed: Some(9),
            start: Some(vec![-2.0, 0.5]),
            stages: Some(vec![25]),
            strict_infeasible: true,
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.estimator.start, vec![-2.0, 0.5]);
        assert_eq!(cfg.prism.as_ref().unwrap().t, Some(25));
        assert!(cfg.estimator.strict_infeasible);
        assert_ne!(cfg.hash(), before);
    }

    #[test]
    fn nested_models_get_nested_specs() {
        let mut v = minimal();
        v["model"] = "prism-nrl".into();
        v["estimator"]["start"] = serde_json::json!([-1.0, -1.0, 0.1]);
        let cfg = parse(v).unwrap();
        assert_eq!(cfg.utility_spec().unwrap().param_names().last().unwrap(), "omega");
    }

    #[test]
    fn axis_values_span_the_range() {
        let a = Axis {
            from: -1.0,
            to: 1.0,
            steps: 5,
        };
        assert_eq!(a.values(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }
}
