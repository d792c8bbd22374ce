use std::path::Path;
use std::process::Command;

use lrsearch::harness::archive::load_archive;
use lrsearch::harness::cli::run_cli;
use lrsearch::harness::read_rows;
use lrsearch::rng::seeded;
use lrsearch::{PolicyBounds, PolicyClassSpec, PolicyParams};

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("lrsearch").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bandit_grid_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let code = run(&[
        "bandit", "--problem", "ht", "--n", "10,30,100", "--p-star", "0,1", "--runs", "4", "--seed", "7", "--restarts",
        "1", "--output", path_str(&out),
    ]);
    assert_eq!(code, 0);
    let rows = read_rows(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.experiment == "bandit-ht" && r.base_seed == 7 && r.runs == 4));
    assert!(rows.iter().all(|r| (-1.0..=1.0).contains(&r.mean_value)));
}

#[test]
fn bounds_writes_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    let code = run(&[
        "bounds", "--v-max", "1", "--eps", "0.1", "--delta", "0.1", "--t", "2", "--c-lo", "0.1", "--c-hi", "0.9",
        "--capacity", "10", "--output", path_str(&out),
    ]);
    assert_eq!(code, 0);
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let header = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let get = |name: &str| rows[0][header.iter().position(|h| h == name).unwrap()].to_string();
    assert_eq!(get("eta"), "0.81");
    assert!(get("required_n").parse::<u64>().unwrap() > 1);
    assert!(get("note").contains("order-of-magnitude"));

    let sweep = dir.path().join("s.csv");
    let code = run(&[
        "bounds", "--v-max", "1", "--eps", "0.1", "--delta", "0.1", "--t", "2", "--c-lo", "0.1", "--c-hi", "0.9",
        "--capacity", "10", "--sweep-n", "1:10:3", "--output", path_str(&sweep),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n,sup_deviation,variance_bound,pac_confidence");
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn archive_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("a.jsonl");
    let code = run(&[
        "archive", "--experiment", "bandit-hf", "--n", "8", "--seed", "3", "--output", path_str(&archive),
    ]);
    assert_eq!(code, 0);
    assert_eq!(load_archive(&archive).unwrap().header.records, 8);

    let spec = PolicyClassSpec::reactive(1, 2, PolicyBounds::default()).unwrap();
    let policy = dir.path().join("p.json");
    std::fs::write(&policy, PolicyParams::random(&spec, &mut seeded(1)).to_json()).unwrap();
    let result = dir.path().join("e.json");
    let code = run(&[
        "evaluate", "--archive", path_str(&archive), "--policy", path_str(&policy), "--output", path_str(&result),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(v["records"], 8);
    assert!(v["wis"]["value"].is_f64());
    assert_eq!(v["wis"]["gradient"].as_array().unwrap().len(), 2);

    // A policy from another class is a runtime failure.
    let wrong = PolicyClassSpec::reactive(2, 2, PolicyBounds::default()).unwrap();
    std::fs::write(&policy, PolicyParams::uniform(&wrong).to_json()).unwrap();
    let code = run(&["evaluate", "--archive", path_str(&archive), "--policy", path_str(&policy)]);
    assert_eq!(code, 1);
}

#[test]
fn run_reads_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    let out = dir.path().join("r.csv");
    std::fs::write(
        &config,
        r#"{"experiment": "load-unload", "n_values": [2, 4], "runs": 2, "positions": 3, "horizon": 8, "p_star": [0.5],
            "classes": [{"kind": "reactive"}], "optimizer": {"restarts": 1}}"#,
    )
    .unwrap();
    assert_eq!(run(&["run", "--config", path_str(&config), "--output", path_str(&out), "--threads", "2"]), 0);
    let rows = read_rows(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.experiment == "load-unload" && r.runs == 2));
}

#[test]
fn exit_codes_separate_usage_config_and_runtime_errors() {
    assert_eq!(run(&["bandit", "--bogus"]), 2);
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["bandit", "--runs", "0"]), 2);
    assert_eq!(run(&["loadunload", "--classes", "reactive,banana"]), 2);
    assert_eq!(run(&["run", "--config", "/nonexistent/config.json"]), 2);
    assert_eq!(
        run(&["bounds", "--v-max", "1", "--eps", "0.1", "--delta", "2", "--t", "2", "--c-lo", "0.1", "--c-hi", "0.9", "--capacity", "10"]),
        2
    );
    assert_eq!(run(&["archive", "--experiment", "bandit-ht"]), 2);
    assert_eq!(run(&["evaluate", "--archive", "/nonexistent/a.jsonl", "--policy", "/nonexistent/p.json"]), 1);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_lrsearch");
    let status = Command::new(bin).arg("--unknown").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("Usage"));
    let ok = Command::new(bin)
        .args(["bounds", "--v-max", "1", "--eps", "0.5", "--delta", "0.1", "--t", "1", "--c-lo", "0.1"])
        .args(["--c-hi", "0.9", "--capacity", "2"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("needs T >= 2"));
}
