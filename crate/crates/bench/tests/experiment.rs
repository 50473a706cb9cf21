use std::path::Path;
use std::process::Command;

use rcse_bench::{run_experiment, ExperimentSpec};
use rcse_core::estimators::Method;
use rcse_core::grid::RedundancyLevel;
use rcse_core::scenario::ScenarioConfig;

fn small_cell(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::desk("case33bw", RedundancyLevel::High);
    cfg.pool_size = 120;
    cfg.test_size = 3;
    cfg.window_size = 30;
    cfg.grid_cardinality = 4;
    cfg.master_seed = seed;
    cfg
}

fn spec(cells: Vec<ScenarioConfig>, methods: &[Method]) -> ExperimentSpec {
    ExperimentSpec {
        cells,
        methods: methods.to_vec(),
        out_dir: None,
        jobs: None,
        dataset_dir: None,
    }
}

#[test]
fn persistent_only_cell_has_one_row() {
    let report = run_experiment(&spec(vec![small_cell(1)], &[Method::Persistent])).unwrap();
    let rows: Vec<_> = report.rows().collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, Method::Persistent);
    assert_eq!(rows[0].non_converged, 0);
}

#[test]
fn one_row_per_cell_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(
        vec![small_cell(1), small_cell(2)],
        &[Method::Vanilla, Method::Persistent, Method::Retrospective],
    );
    s.out_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&s).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.rows().count(), 6);
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(!csv.lines().next().unwrap().contains("time"));
}

#[test]
fn anticipative_is_closest_to_the_retrospective_state() {
    let report = run_experiment(&spec(vec![small_cell(3)], &[Method::Rcse, Method::Anticipative])).unwrap();
    for inst in &report.cells[0].instances {
        let retro = inst.x_retro.as_ref().unwrap();
        let a = inst.estimate(Method::Anticipative).unwrap().x_hat.squared_distance(retro);
        let r = inst.estimate(Method::Rcse).unwrap().x_hat.squared_distance(retro);
        assert!(a <= r + 1e-12, "instance {}: {a} > {r}", inst.test_id);
    }
}

fn rcse(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_rcse"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string(value).unwrap()).unwrap();
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    assert_eq!(rcse(&["bench", "--config", &p("missing.json")]), 1);
    std::fs::write(p("bad.json"), "{ not json").unwrap();
    assert_eq!(rcse(&["bench", "--config", &p("bad.json")]), 1);
    assert_eq!(rcse(&["bench", "--bogus"]), 1);

    let mut invalid = small_cell(1);
    invalid.k = 0;
    write_json(&dir.path().join("invalid.json"), &spec(vec![invalid], &[Method::Vanilla]));
    assert_eq!(rcse(&["bench", "--config", &p("invalid.json")]), 1);

    write_json(&dir.path().join("cell.json"), &small_cell(1));
    assert_eq!(rcse(&["gen", "--config", &p("cell.json"), "--out", &p("ds.jsonl")]), 0);
    assert_eq!(
        rcse(&["estimate", "--config", &p("cell.json"), "--dataset", &p("ds.jsonl"), "--method", "vanilla", "--out", &p("est.json")]),
        0
    );
    assert!(std::fs::read_to_string(p("est.json")).unwrap().contains("x_hat"));
    assert_eq!(rcse(&["estimate", "--config", &p("cell.json"), "--dataset", &p("ds.jsonl"), "--instance", "99"]), 1);

    let mut ok = spec(vec![small_cell(1)], &[Method::Persistent]);
    ok.out_dir = Some(dir.path().join("out"));
    write_json(&dir.path().join("ok.json"), &ok);
    assert_eq!(rcse(&["bench", "--config", &p("ok.json")]), 0);
    assert!(dir.path().join("out/manifest.json").exists());

    // A dataset cache path that is a regular file makes the cell fail.
    std::fs::write(p("blocker"), "").unwrap();
    let mut failing = spec(vec![small_cell(1)], &[Method::Persistent]);
    failing.dataset_dir = Some(dir.path().join("blocker"));
    write_json(&dir.path().join("failing.json"), &failing);
    assert_eq!(rcse(&["bench", "--config", &p("failing.json")]), 2);
}
