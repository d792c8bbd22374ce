mod common;

use std::io::Cursor;
use std::path::Path;

use lrsearch::env::{make_load_unload, make_tabular, Bandit};
use lrsearch::harness::archive::{archive_policies, load_archive, load_experience, read_archive, save_dataset, write_archive};
use lrsearch::harness::{
    read_rows, rows_to_csv, run_experiment, run_experiment_with, run_units, Algorithm, ClassConfig, ExperimentConfig,
    ExperimentKind,
};
use lrsearch::rng::seeded;
use lrsearch::{
    Action, Dataset, EnvModel, Environment, Error, Observation, PolicyBounds, PolicyClassSpec, PolicyParams, Transition,
};
use rand::RngCore;

use common::{random_dataset, random_model};

fn small_bandit() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::BanditHt);
    cfg.n_values = vec![6, 3];
    cfg.p_star = vec![0.0, 1.0];
    cfg.runs = 6;
    cfg.base_seed = 42;
    cfg.optimizer.restarts = 1;
    cfg
}

fn small_load_unload() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::LoadUnload);
    cfg.classes = vec![ClassConfig::reactive(), ClassConfig::controller(2)];
    cfg.algorithms = vec![Algorithm::Learn, Algorithm::Reinforce];
    cfg.n_values = vec![2, 5];
    cfg.runs = 3;
    cfg.positions = 4;
    cfg.horizon = 12;
    cfg.optimizer.restarts = 1;
    cfg.optimizer.max_iterations = 40;
    cfg
}

fn csv_for(cfg: &ExperimentConfig) -> String {
    rows_to_csv(&run_experiment(cfg).unwrap()).unwrap()
}

#[test]
fn output_does_not_depend_on_threads_or_prefix_sharing() {
    for base in [small_bandit(), small_load_unload()] {
        let sequential = csv_for(&base);
        let mut one = base.clone();
        one.threads = Some(1);
        let mut eight = base.clone();
        eight.threads = Some(8);
        let mut separate = base.clone();
        separate.share_prefixes = false;
        assert_eq!(csv_for(&one), sequential);
        assert_eq!(csv_for(&eight), sequential);
        assert_eq!(csv_for(&separate), sequential);
        assert_eq!(csv_for(&base), sequential);
    }
}

#[test]
fn csv_has_one_row_per_curve_and_n() {
    let cfg = small_load_unload();
    let text = csv_for(&cfg);
    assert!(text.starts_with(
        "experiment,policy_class,memory,n,p_star,algorithm,mean_value,std_error,runs,base_seed,scoring\n"
    ));
    let rows = read_rows(&text).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert_eq!(rows_to_csv(&rows).unwrap(), text);
    assert!(rows.iter().all(|r| r.scoring == "exact" && r.runs == 3 && r.experiment == "load-unload"));
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    assert_eq!(ns, [2, 5, 2, 5, 2, 5, 2, 5]);
    assert_eq!(rows[4].policy_class, "controller");
    assert_eq!(rows[4].memory, 2);
    assert_eq!(rows[2].algorithm, "reinforce");
    assert_eq!(rows_to_csv(&[]).unwrap().lines().count(), 1);
}

#[test]
fn every_checkpoint_consumes_exactly_its_budget() {
    for cfg in [small_bandit(), small_load_unload()] {
        let factory = lrsearch::harness::environment_factory(&cfg).unwrap();
        let units = run_units(&cfg, factory.as_ref()).unwrap();
        assert_eq!(units.len(), cfg.curves().len());
        for runs in &units {
            assert_eq!(runs.len(), cfg.runs);
            for u in runs {
                assert_eq!(u.trials, cfg.n_grid());
            }
        }
    }
}

struct Hidden(Bandit);

impl Environment for Hidden {
    fn name(&self) -> &str {
        "hidden"
    }
    fn num_observations(&self) -> usize {
        1
    }
    fn num_actions(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        1
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        self.0.reset(rng)
    }
    fn step(&mut self, action: Action, rng: &mut dyn RngCore) -> Transition {
        self.0.step(action, rng)
    }
}

#[test]
fn environments_without_a_model_are_scored_by_rollouts() {
    let mut cfg = small_bandit();
    cfg.experiment = ExperimentKind::Custom;
    cfg.model = Some("unused.json".into());
    cfg.mc_rollouts = 200;
    let factory = || -> lrsearch::Result<Box<dyn Environment>> { Ok(Box::new(Hidden(Bandit::hidden_failure()))) };
    let rows = run_experiment_with(&cfg, &factory).unwrap();
    assert!(rows.iter().all(|r| r.scoring == "monte-carlo:200"));
    assert_eq!(rows, run_experiment_with(&cfg, &factory).unwrap());
}

#[test]
fn custom_models_load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(3, 2, 2, 4, &mut seeded(1));
    let path = dir.path().join("model.json");
    std::fs::write(&path, serde_json::to_string(&model).unwrap()).unwrap();
    assert_eq!(EnvModel::from_path(&path).unwrap(), model);
    let cfg = ExperimentConfig::from_json_str(&format!(
        r#"{{"experiment": "custom", "model": {:?}, "n_values": [2, 4], "p_star": [0.5], "runs": 2,
            "classes": [{{"kind": "controller", "memory_states": 2}}], "optimizer": {{"restarts": 1}}}}"#,
        path.to_str().unwrap()
    ))
    .unwrap();
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.scoring == "exact" && r.memory == 2));
}

#[test]
fn bad_configs_are_config_errors() {
    assert!(ExperimentConfig::from_json_str(r#"{"experiment": "bandit-ht", "bogus": 1}"#).unwrap_err().is_config());
    assert!(ExperimentConfig::from_json_str(r#"{"experiment": "chess"}"#).unwrap_err().is_config());
    let cfg = ExperimentConfig::from_json_str(r#"{"experiment": "bandit-hf"}"#).unwrap();
    assert_eq!(cfg.n_values, [10, 30, 100]);
    assert_eq!(cfg.runs, 100);
    for broken in [
        ExperimentConfig { runs: 0, ..small_bandit() },
        ExperimentConfig { n_values: vec![0, 3], ..small_bandit() },
        ExperimentConfig { p_star: vec![1.2], ..small_bandit() },
        ExperimentConfig { threads: Some(0), ..small_bandit() },
        ExperimentConfig { classes: vec![ClassConfig::controller(1)], ..small_bandit() },
        ExperimentConfig { bounds: PolicyBounds { lo: 0.6, hi: 0.4 }, ..small_bandit() },
        ExperimentConfig { experiment: ExperimentKind::Custom, ..small_bandit() },
    ] {
        assert!(matches!(run_experiment(&broken), Err(Error::Config(_))), "{broken:?}");
    }
}

fn load_unload_data(n: usize, seed: u64) -> (Dataset, PolicyClassSpec) {
    let mut env = make_load_unload(5, 20).unwrap();
    let spec = env.controller_spec(2, PolicyBounds::default()).unwrap();
    (random_dataset(&mut env, &spec, n, seed), spec)
}

#[test]
fn archives_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.jsonl");
    let (data, spec) = load_unload_data(25, 3);
    save_dataset(&path, &data, "load-unload", 20, 3).unwrap();
    let loaded = load_archive(&path).unwrap();
    assert_eq!(loaded.header.records, 25);
    assert_eq!(loaded.header.environment, "load-unload");
    assert_eq!(loaded.dataset.mix_denominators(), data.mix_denominators());
    let mut rng = seeded(4);
    for _ in 0..10 {
        let q = PolicyParams::random(&spec, &mut rng);
        let (a, b) = (data.evaluate_wis(&q).unwrap(), loaded.dataset.evaluate_wis(&q).unwrap());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.gradient, b.gradient);
    }
}

#[test]
fn verbose_archives_keep_steps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    let mut env = make_tabular(random_model(3, 2, 2, 5, &mut seeded(6))).unwrap();
    let spec = PolicyClassSpec::controller(2, 2, 2, PolicyBounds::default()).unwrap();
    let mut rng = seeded(7);
    let policies: Vec<_> = (0..4).map(|_| PolicyParams::random(&spec, &mut rng)).collect();
    let data = archive_policies(&mut env, &policies, 11, true, &path).unwrap();
    let loaded = load_experience(&path).unwrap();
    assert!(loaded.is_verbose());
    for (a, b) in data.records().iter().zip(loaded.records()) {
        assert_eq!(a.history(), b.history());
        assert_eq!(b.history().len(), 5);
    }
    assert!(matches!(archive_policies(&mut env, &[], 0, false, &path), Err(Error::Config(_))));
}

#[test]
fn empty_dataset_round_trips_to_empty() {
    let spec = PolicyClassSpec::reactive(3, 2, PolicyBounds::default()).unwrap();
    let mut buf = Vec::new();
    write_archive(&mut buf, &Dataset::new(spec), "x", 5, 0).unwrap();
    let a = read_archive(Cursor::new(buf), Path::new("mem")).unwrap();
    assert!(a.dataset.is_empty());
    assert_eq!(a.dataset.spec(), &spec);
}

fn archive_text() -> String {
    let (data, _) = load_unload_data(3, 1);
    let mut buf = Vec::new();
    write_archive(&mut buf, &data, "load-unload", 20, 1).unwrap();
    String::from_utf8(buf).unwrap()
}

fn load_err(text: &str) -> (usize, String) {
    match read_archive(Cursor::new(text.as_bytes()), Path::new("a.jsonl")) {
        Err(Error::Parse { line, message, .. }) => (line, message),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn damaged_archives_name_the_problem() {
    let text = archive_text();
    let lines: Vec<&str> = text.lines().collect();

    let mut corrupt = lines.clone();
    corrupt[2] = "{\"policy\": 3";
    let (line, msg) = load_err(&corrupt.join("\n"));
    assert_eq!(line, 3);
    assert!(msg.contains("corrupt record"), "{msg}");

    let (line, msg) = load_err(&lines[..3].join("\n"));
    assert_eq!(line, 4);
    assert!(msg.contains("truncated archive: 2 of 3"), "{msg}");

    let (line, msg) = load_err(&text.replacen("\"version\":1", "\"version\":7", 1));
    assert_eq!(line, 1);
    assert!(msg.contains("unsupported archive version 7"), "{msg}");

    let (_, msg) = load_err(&text.replacen("lrsearch-archive", "tarball", 1));
    assert!(msg.contains("not an experience archive"), "{msg}");

    let extra = format!("{text}{}\n", lines[1]);
    let (line, msg) = load_err(&extra);
    assert_eq!(line, 5);
    assert!(msg.contains("more records"), "{msg}");

    let (line, msg) = load_err("");
    assert_eq!(line, 1);
    assert!(msg.contains("empty"), "{msg}");

    let err = read_archive(Cursor::new(b"{}".to_vec()), Path::new("a.jsonl")).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().starts_with("a.jsonl: line 1:"));
}
