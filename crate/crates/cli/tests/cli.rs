use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use packetdos_cli::ExperimentConfig;
use packetdos_core::attack_iid::optimal_alpha_udp;
use packetdos_core::{EpisodeConfig, Simulator};
use serde_json::{json, Value};

fn scalar_config() -> Value {
    json!({
        "system": {
            "A": [[1.03, 0.005], [0.35, 0.5]],
            "B": [[1.0, 0.0], [0.0, 1.0]],
            "Sigma_W": [[0.01, 0.0], [0.0, 0.01]],
            "Sigma_X": [[0.01, 0.0], [0.0, 0.01]],
            "X_bar": [1.0, 1.0],
            "N": 4
        },
        "channel": { "M_diag": [0.7], "L_diag": [0.1], "shared": true },
        "protocol": "udp_like",
        "attack": { "kind": "iid" },
        "simulation": { "T": 20, "R": 50, "seed": 3, "initial_state": "sampled" }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn packetdos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_packetdos")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = packetdos(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn parse_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn config_round_trips_through_json() {
    let cfg = ExperimentConfig::from_json(&scalar_config().to_string()).unwrap();
    let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.build().unwrap().model, again.build().unwrap().model);
}

#[test]
fn penalties_accept_one_block_or_the_full_horizon() {
    let mut block = scalar_config();
    block["system"]["Omega_diag"] = json!([2.0, 3.0]);
    let mut full = scalar_config();
    full["system"]["Omega_diag"] = json!([2.0, 3.0, 2.0, 3.0, 2.0, 3.0, 2.0, 3.0]);
    let a = ExperimentConfig::from_json(&block.to_string()).unwrap().build().unwrap();
    let b = ExperimentConfig::from_json(&full.to_string()).unwrap().build().unwrap();
    assert_eq!(a.model, b.model);
}

#[test]
fn validation_lists_every_problem() {
    let mut cfg = scalar_config();
    cfg["channel"]["M_diag"] = json!([0.7, 0.5, 0.2]);
    cfg["simulation"]["T"] = json!(0);
    let err = ExperimentConfig::from_json(&cfg.to_string()).unwrap().build().unwrap_err();
    assert_eq!(err.0.len(), 2, "{err}");
}

#[test]
fn nominal_mean_of_one_is_rejected() {
    let mut cfg = scalar_config();
    cfg["channel"]["M_diag"] = json!([1.0]);
    assert!(ExperimentConfig::from_json(&cfg.to_string()).unwrap().build().is_err());
}

#[test]
fn synthesize_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &scalar_config());
    let out = dir.path().join("out");
    run_ok(&["synthesize", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let report = read_json(&out.join("synthesis.json"));
    let alpha = report["iid_scalar"]["alpha_star"].as_f64().unwrap();
    assert!((0.6..=0.8).contains(&alpha));

    let exp = ExperimentConfig::load(&config).unwrap().build().unwrap();
    let cfg = EpisodeConfig::new(exp.protocol(), exp.channel.clone(), exp.detection.clone());
    let sim = Simulator::new(exp.model.clone(), cfg).unwrap();
    let ch = optimal_alpha_udp(&sim.context(&exp.model.x_mean).unwrap()).unwrap();
    assert_eq!(alpha.to_bits(), ch.alpha_star.to_bits());
    assert!(report["nonstationary"]["objective"].as_f64().unwrap() >= report["iid"]["objective"].as_f64().unwrap() - 1e-9);
}

#[test]
fn zero_half_width_pins_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = scalar_config();
    cfg["channel"]["L_diag"] = json!([0.0]);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    run_ok(&["synthesize", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let report = read_json(&out.join("synthesis.json"));
    assert_eq!(report["iid_scalar"]["alpha_star"].as_f64().unwrap(), 0.7);
}

#[test]
fn simulate_writes_parseable_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &scalar_config());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run_ok(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--realizations", "40"]);
    }
    for name in ["summary.json", "mean_trajectory.csv", "realizations.csv", "trace_0.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let (header, rows) = parse_csv(&a.join("mean_trajectory.csv"));
    assert_eq!(header, ["step", "x1", "x2", "cost"]);
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().flatten().all(|v| v.is_finite()));
    let summary = read_json(&a.join("summary.json"));
    assert_eq!(summary["realizations"], 40);
    let terminal = summary["terminal"]["mean"].as_f64().unwrap();
    let last_cost = rows.last().unwrap()[3];
    assert!((terminal - last_cost).abs() <= 1e-9 * terminal.abs());
}

#[test]
fn analyze_reports_every_regime() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &scalar_config());
    let out = dir.path().join("out");
    run_ok(&[
        "analyze",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--realizations",
        "200",
    ]);
    let report = read_json(&out.join("analysis.json"));
    let regimes = report["regimes"].as_array().unwrap();
    let names: Vec<&str> = regimes.iter().map(|r| r["regime"].as_str().unwrap()).collect();
    assert_eq!(names, ["alpha_to_0", "alpha_1", "alpha_max", "optimal_iid", "nonstationary"]);
    assert!(regimes[0]["report"]["increase"].as_f64().unwrap() > 0.0);
    for r in regimes {
        assert!(r.get("skipped").is_some() || r["empirical"]["within_3se"].is_boolean());
    }
}

#[test]
fn analyze_without_attack_reports_baseline_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = scalar_config();
    cfg.as_object_mut().unwrap().remove("attack");
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    run_ok(&["analyze", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let report = read_json(&out.join("analysis.json"));
    assert!(report["baseline"].as_f64().unwrap() > 0.0);
    assert!(report["regimes"].as_array().unwrap().is_empty());
}

#[test]
fn compare_pairs_every_attack() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &scalar_config());
    let out = dir.path().join("out");
    run_ok(&[
        "compare",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--attacks",
        "none,iid,all_drop",
        "--realizations",
        "30",
    ]);
    let report = read_json(&out.join("comparison.json"));
    assert_eq!(report["attacks"].as_array().unwrap().len(), 3);
    assert_eq!(report["differences"].as_array().unwrap().len(), 3);
    for name in ["none", "iid", "all_drop"] {
        assert!(out.join(format!("mean_trajectory_{name}.csv")).exists());
    }
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = |cfg: &Value, extra: &[&str]| {
        let config = write_config(dir.path(), cfg);
        let mut args = vec!["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        packetdos(&args).status.code()
    };

    let mut unknown = scalar_config();
    unknown["system"]["Z"] = json!(1);
    assert_eq!(code(&unknown, &[]), Some(2));

    let mut bad_dims = scalar_config();
    bad_dims["system"]["X_bar"] = json!([1.0]);
    assert_eq!(code(&bad_dims, &[]), Some(2));

    let mut infeasible = scalar_config();
    infeasible["attack"] = json!({ "kind": "fixed", "means": [1.5] });
    assert_eq!(code(&infeasible, &[]), Some(4));

    assert_eq!(code(&scalar_config(), &["--realizations", "0"]), Some(2));
    let missing = packetdos(&["synthesize", "--config", "/nonexistent.json", "--out", out.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn bundled_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["scalar_channel.json", "two_channel.json"] {
        let cfg = ExperimentConfig::load(&root.join(name)).unwrap();
        cfg.build().unwrap();
    }
}
