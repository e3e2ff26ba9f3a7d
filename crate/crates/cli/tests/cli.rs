use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn base(out: &Path) -> Value {
    json!({
        "version": 1,
        "network": {"source": "sioux-falls"},
        "model": "prism-rl",
        "utility": "sioux-falls",
        "prism": {"mode": "scalar", "t": 15},
        "estimator": {"start": [-1.0, -1.0]},
        "simulation": {
            "truth": [-2.0, -1.5],
            "origins": [4, 7],
            "destinations": [5, 15],
            "per_od": 60
        },
        "output": out,
        "seed": 5
    })
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn config(&self, name: &str, value: &Value) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
        p
    }

    fn exec(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_routechoice"))
            .args(args)
            .env("ROUTECHOICE_THREADS", "2")
            .output()
            .unwrap()
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.out().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn meta(&self) -> Value {
        serde_json::from_str(&self.read("run_meta.json")).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn estimate_writes_estimates_trace_and_metadata() {
    let run = Run::new();
    let cfg = run.config("c.json", &base(&run.out()));
    let o = run.exec(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let est = run.read("estimates.csv");
    let lines: Vec<&str> = est.lines().collect();
    assert_eq!(lines[0], "param,estimate,std_err,t_vs_zero,t_vs_truth");
    assert!(lines[1].starts_with("len,") && lines[2].starts_with("cap,"));
    let len: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((len + 2.0).abs() < 0.5, "len estimate {len}");

    let trace = run.read("trajectory.csv");
    assert!(trace.starts_with("iteration,kind,len,cap,log_likelihood,grad_norm"));
    assert!(trace.lines().nth(1).unwrap().starts_with("0,accepted,-1.000000,-1.000000,"));
    assert!(run.read("summary.md").contains("Prism-RL"));

    let meta = run.meta();
    assert_eq!(meta["command"], "estimate");
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["threads"], 2);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    let artifacts: Vec<&str> = meta["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    for name in ["observations.csv", "estimates.csv", "trajectory.csv", "result.json"] {
        assert!(artifacts.contains(&name), "{name} missing from {artifacts:?}");
    }
    assert!(fs::read_dir(run.out()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn same_seed_reproduces_the_simulation_and_a_new_seed_changes_it() {
    let run = Run::new();
    let cfg = run.config("c.json", &base(&run.out()));
    let path = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for (dir, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = run.dir.path().join(dir);
        let o = run.exec(&["simulate", "-c", path, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(fs::read_to_string(out.join("observations.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
    assert_eq!(outputs[0].lines().count(), 1 + 4 * 60);
}

#[test]
fn estimation_from_an_observation_file() {
    let run = Run::new();
    let sim_out = run.dir.path().join("sim");
    let cfg = run.config("sim.json", &base(&sim_out));
    assert_eq!(code(&run.exec(&["simulate", "-c", cfg.to_str().unwrap()])), 0);

    let mut v = base(&run.out());
    v.as_object_mut().unwrap().remove("simulation");
    v["observations"] = json!("sim/observations.csv");
    v["model"] = json!("rl");
    v["prism"] = Value::Null;
    let cfg = run.config("est.json", &v);
    let o = run.exec(&["estimate", "-c", cfg.to_str().unwrap(), "--start=-1.5,-1.0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("RL: status converged"));
    // no truth without a simulation section
    assert!(run.read("estimates.csv").lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn overrides_change_start_stages_and_hash() {
    let run = Run::new();
    let cfg = run.config("c.json", &base(&run.out()));
    let path = cfg.to_str().unwrap();
    assert_eq!(code(&run.exec(&["loglik", "-c", path])), 0);
    let first = run.meta();
    let ll1: Value = serde_json::from_str(&run.read("loglik.json")).unwrap();

    let o = run.exec(&["loglik", "-c", path, "--start=-2,-1.5", "--t", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let second = run.meta();
    let ll2: Value = serde_json::from_str(&run.read("loglik.json")).unwrap();
    assert_ne!(first["config_hash"], second["config_hash"]);
    assert_eq!(second["config"]["prism"]["t"], 20);
    assert_eq!(ll2["theta"], json!([-2.0, -1.5]));
    assert!(ll2["log_likelihood"].as_f64().unwrap() > ll1["log_likelihood"].as_f64().unwrap());
    assert_eq!(ll2["gradient"].as_array().unwrap().len(), 2);
    let per_obs = run.read("loglik.csv");
    assert_eq!(per_obs.lines().count(), 1 + 4 * 60);
    let sum: f64 = per_obs.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap()).sum();
    assert!((sum - ll2["log_likelihood"].as_f64().unwrap()).abs() < 1e-5);
}

#[test]
fn strict_infeasible_estimation_exits_with_4() {
    let run = Run::new();
    let mut v = base(&run.out());
    v["model"] = json!("rl");
    v["prism"] = Value::Null;
    v["simulation"]["truth"] = json!([-2.5, 2.0]);
    let cfg = run.config("c.json", &v);
    let o = run.exec(&["estimate", "-c", cfg.to_str().unwrap(), "--strict-infeasible"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"));
    // artifacts are still written
    assert!(run.read("trajectory.csv").contains("infeasible"));
    assert_eq!(run.meta()["ok"], false);
}

#[test]
fn two_phase_estimation_writes_both_phases() {
    let run = Run::new();
    let mut v = base(&run.out());
    v["model"] = json!("rl");
    v["two_phase"] = json!(true);
    v["prism"] = json!({"mode": "destination", "gamma": 1.5, "t_min": 10});
    v["simulation"]["truth"] = json!([-2.5, 2.0]);
    v["estimator"]["strict_infeasible"] = json!(true);
    let cfg = run.config("c.json", &v);
    let o = run.exec(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p1 = run.read("estimates_phase1.csv");
    let p2 = run.read("estimates.csv");
    let first = |s: &str| s.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!((first(&p1) - first(&p2)).abs() < 1e-3);
    let summary = run.read("summary.md");
    assert!(summary.contains("## Prism-RL") && summary.contains("## RL (two-phase)"));
}

#[test]
fn config_errors_exit_with_2() {
    let run = Run::new();
    let mut v = base(&run.out());
    v["unexpected"] = json!(1);
    let cfg = run.config("a.json", &v);
    let o = run.exec(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unexpected"));

    let mut v = base(&run.out());
    v["utility"] = json!({"terms": [{"name": "x", "attrs": ["Missing"]}]});
    v["estimator"]["start"] = json!([-1.0]);
    v["simulation"]["truth"] = json!([-1.0]);
    let cfg = run.config("b.json", &v);
    assert_eq!(code(&run.exec(&["estimate", "-c", cfg.to_str().unwrap()])), 2);

    let o = run.exec(&["estimate", "-c", run.dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_observations_exit_with_3() {
    let run = Run::new();
    fs::write(run.dir.path().join("obs.csv"), "obs_id,origin_node,dest_node,link_sequence\na,4,5,9999\n").unwrap();
    let mut v = base(&run.out());
    v["observations"] = json!("obs.csv");
    let cfg = run.config("c.json", &v);
    let o = run.exec(&["estimate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn validation_reports_folds_and_the_out_of_prism_grid() {
    let run = Run::new();
    let mut v = base(&run.out());
    v["prism"] = json!({"mode": "destination", "gamma": 1.5, "t_min": 5});
    v["validation"] = json!({"folds": 3, "gammas": [1.0, 2.0], "t_mins": [1, 40]});
    let cfg = run.config("c.json", &v);
    let o = run.exec(&["validate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let folds = run.read("validation.csv");
    assert_eq!(folds.lines().count(), 4);
    assert!(folds.starts_with("fold,train,holdout,scored,out_of_prism,status,holdout_ll"));
    let grid = run.read("out_of_prism.csv");
    assert_eq!(grid.lines().count(), 5);
    let md = run.read("out_of_prism.md");
    assert!(md.starts_with("| T_min | gamma=1 | gamma=2 |"));
}

#[test]
fn diagnostics_commands_write_their_reports() {
    let run = Run::new();
    let mut v = base(&run.out());
    v["feasibility"] = json!({"beta": [-1.0, -1.0]});
    v["scan"] = json!({"beta1": {"from": -2.0, "to": 0.0, "steps": 3}, "beta2": {"from": 0.0, "to": 2.0, "steps": 2}});
    let cfg = run.config("c.json", &v);
    let path = cfg.to_str().unwrap();

    assert_eq!(code(&run.exec(&["feasibility", "-c", path])), 0);
    let f: Value = serde_json::from_str(&run.read("feasibility.json")).unwrap();
    assert_eq!(f["solvable"], true);
    assert!(f["spectral_radius"].as_f64().unwrap() < 1.0);

    assert_eq!(code(&run.exec(&["scan", "-c", path])), 0);
    let scan = run.read("scan.csv");
    assert_eq!(scan.lines().count(), 1 + 6);
    assert!(scan.contains("-2.000000,0.000000,1"));

    assert_eq!(code(&run.exec(&["prism", "-c", path])), 0);
    let summary = run.read("prism_summary.csv");
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().nth(1).unwrap().starts_with("5,,15,"));
    let masks = run.read("prism.csv");
    assert!(masks.starts_with("destination,origin,t,state,label,I\n"));
    let active = masks.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    let states: usize = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(active, states);
}

#[test]
fn reruns_reproduce_csv_artifacts_byte_for_byte() {
    let run = Run::new();
    let mut v = base(&run.out());
    v["simulation"]["per_od"] = json!(40);
    v["experiment"] = json!({
        "samples": 2,
        "starts": [{"label": "A", "theta": [-1.0, -1.0]}],
        "prism_stages": 15,
        "t_values": [12, 20]
    });
    let cfg = run.config("c.json", &v);
    let path = cfg.to_str().unwrap();
    let dirs = ["one", "two"].map(|d| run.dir.path().join(d));
    for dir in &dirs {
        for cmd in ["estimate", "experiment"] {
            let out = dir.join(cmd);
            let o = run.exec(&[cmd, "-c", path, "--out", out.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
    }
    let mut compared = 0;
    for cmd in ["estimate", "experiment"] {
        for entry in fs::read_dir(dirs[0].join(cmd)).unwrap() {
            let name = entry.unwrap().file_name();
            if name.to_string_lossy().ends_with(".csv") {
                let a = fs::read(dirs[0].join(cmd).join(&name)).unwrap();
                let b = fs::read(dirs[1].join(cmd).join(&name)).unwrap();
                assert!(a == b, "{cmd}/{name:?} differs between runs");
                compared += 1;
            }
        }
    }
    assert!(compared >= 7, "only {compared} CSV files compared");
    let exp = dirs[0].join("experiment");
    assert!(fs::read_to_string(exp.join("t_sensitivity.csv")).unwrap().starts_with("T,len,cap,len_std_err"));
    let timings: Value = serde_json::from_str(&fs::read_to_string(exp.join("timings.json")).unwrap()).unwrap();
    assert_eq!(timings["samples"].as_array().unwrap().len(), 4);
    assert_eq!(timings["t_sensitivity"].as_array().unwrap().len(), 2);
}
