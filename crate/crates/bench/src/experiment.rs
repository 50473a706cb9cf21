use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rcse_core::estimators::{
    persistent_estimate, robust_candidates, select_candidate, vanilla_estimate, wls_estimate,
    CandidateSet, EstimateRecord, EstimatorError, Method, SelectionRule,
};
use rcse_core::grid::RedundancyLevel;
use rcse_core::powerflow::{StateVector, Subset};
use rcse_core::scenario::{
    build_history, generate_dataset, read_dataset, write_dataset, Dataset, ScenarioConfig,
    ScenarioError,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::apparent_power_sq_error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    pub fn is_config(&self) -> bool {
        matches!(self, BenchError::Config(_) | BenchError::Json(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub cells: Vec<ScenarioConfig>,
    pub methods: Vec<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Datasets are loaded from here when present and saved after generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.cells.is_empty() {
            return Err(BenchError::Config("no cells".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no methods".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(BenchError::Config("duplicate method".into()));
        }
        if self.jobs == Some(0) {
            return Err(BenchError::Config("jobs must be positive".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            c.validate()
                .map_err(|e| BenchError::Config(format!("cell {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Reads an experiment from a spec file or from a run manifest.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec, BenchError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let spec: ExperimentSpec = match value.get("spec") {
        Some(inner) if value.get("tool").is_some() => serde_json::from_value(inner.clone())?,
        _ => serde_json::from_value(value)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// One row per (cell, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub network: String,
    pub delta: f64,
    pub window_size: usize,
    pub k: usize,
    pub redundancy: RedundancyLevel,
    pub method: Method,
    pub rmse_x: f64,
    pub rmse_s: f64,
    /// Kept out of `results.csv` so reruns stay byte-identical.
    #[serde(skip_serializing)]
    pub mean_solve_time_s: f64,
    pub non_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateDiagnostics {
    pub rho: f64,
    pub objective: f64,
    pub dual_objective: f64,
    pub warm_objective: f64,
    pub max_lp_gap: f64,
    pub duality_gap: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub record: Result<EstimateRecord, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct InstanceResult {
    pub test_id: usize,
    pub x_true: StateVector,
    pub x_retro: Option<StateVector>,
    pub outcomes: Vec<MethodOutcome>,
    pub candidates: Vec<CandidateDiagnostics>,
}

impl InstanceResult {
    pub fn estimate(&self, method: Method) -> Option<&EstimateRecord> {
        self.outcomes
            .iter()
            .find(|o| o.method == method)
            .and_then(|o| o.record.as_ref().ok())
    }
}

#[derive(Debug)]
pub struct CellReport {
    pub config: ScenarioConfig,
    pub rows: Vec<ResultRow>,
    pub instances: Vec<InstanceResult>,
}

#[derive(Debug)]
pub struct CellFailure {
    pub index: usize,
    pub config: ScenarioConfig,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ExperimentReport {
    pub cells: Vec<CellReport>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentReport {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.cells.iter().flat_map(|c| c.rows.iter())
    }
}

pub fn config_hash(config: &ScenarioConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn dataset_for(config: &ScenarioConfig, dir: Option<&Path>) -> Result<Dataset, ScenarioError> {
    let Some(dir) = dir else {
        return generate_dataset(config);
    };
    let path = dir.join(format!("{}-{}.jsonl", config.case_name, &config_hash(config)[..16]));
    if path.exists() {
        let ds = read_dataset(BufReader::new(File::open(&path)?))?;
        if ds.config == *config {
            return Ok(ds);
        }
    }
    let ds = generate_dataset(config)?;
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(&path)?);
    write_dataset(&ds, &mut out, false)?;
    out.flush()?;
    Ok(ds)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn diagnostics(set: &CandidateSet) -> Vec<CandidateDiagnostics> {
    set.candidates
        .iter()
        .map(|c| match &c.result {
            Ok((_, s)) => CandidateDiagnostics {
                rho: c.rho,
                objective: s.objective,
                dual_objective: s.dual_objective,
                warm_objective: s.warm_objective,
                max_lp_gap: s.max_lp_gap,
                duality_gap: s.duality_gap,
                dual_residual: s.dual_residual,
                converged: s.converged,
                error: None,
            },
            Err(e) => CandidateDiagnostics {
                rho: c.rho,
                objective: f64::NAN,
                dual_objective: f64::NAN,
                warm_objective: f64::NAN,
                max_lp_gap: f64::NAN,
                duality_gap: f64::NAN,
                dual_residual: f64::NAN,
                converged: false,
                error: Some(e.clone()),
            },
        })
        .collect()
}

/// Runs every requested method on one test instance. RC-SE and the
/// anticipative baseline share one set of robust candidates; each is
/// charged the full time of building it.
pub fn run_instance(ds: &Dataset, test_id: usize, methods: &[Method]) -> InstanceResult {
    let inst = &ds.instances[test_id];
    let model = &ds.model;
    let k = ds.config.k;
    let x_retro = ds.retro_state(test_id).ok().cloned();
    let mut result = InstanceResult {
        test_id,
        x_true: inst.x_true.clone(),
        x_retro: x_retro.clone(),
        outcomes: Vec::new(),
        candidates: Vec::new(),
    };
    let fail_all = |result: &mut InstanceResult, msg: String| {
        for &method in methods {
            result.outcomes.push(MethodOutcome {
                method,
                record: Err(msg.clone()),
                seconds: 0.0,
            });
        }
    };
    let window = match build_history(ds, test_id, ds.config.window_size) {
        Ok(w) => w,
        Err(e) => {
            fail_all(&mut result, e.to_string());
            return result;
        }
    };
    let z = &inst.z_a;
    let needs_set = methods
        .iter()
        .any(|m| matches!(m, Method::Rcse | Method::Anticipative));
    let mut shared: Option<(Result<CandidateSet, String>, f64)> = None;
    if needs_set {
        let (set, secs) = timed(|| {
            robust_candidates(model, &window, z, k, ds.config.grid_cardinality)
                .map_err(|e| e.to_string())
        });
        if let Ok(s) = &set {
            result.candidates = diagnostics(s);
        }
        shared = Some((set, secs));
    }
    let err = |e: EstimatorError| e.to_string();
    for &method in methods {
        let (record, seconds) = match method {
            Method::Retrospective => timed(|| {
                wls_estimate(model, &inst.z_a, &inst.z_d)
                    .map(|(x, rep)| EstimateRecord::simple(method, x, rep.converged))
                    .map_err(err)
            }),
            Method::Vanilla => timed(|| {
                vanilla_estimate(model, &window, z, k)
                    .map(|(x, rep)| EstimateRecord::simple(method, x, rep.converged))
                    .map_err(err)
            }),
            Method::Persistent => timed(|| {
                persistent_estimate(&window, z, &model.weights(Subset::Available))
                    .map(|x| EstimateRecord::simple(method, x, true))
                    .map_err(err)
            }),
            Method::Rcse | Method::Anticipative => {
                let (set, base) = shared.as_ref().expect("candidate set built");
                let (rec, secs) = timed(|| {
                    let set = set.as_ref().map_err(Clone::clone)?;
                    let rule = if method == Method::Rcse {
                        SelectionRule::NeighborAverage(&window)
                    } else {
                        let target = x_retro
                            .as_ref()
                            .ok_or("retrospective state unavailable")?;
                        SelectionRule::Oracle(target)
                    };
                    select_candidate(set, rule, method).map_err(err)
                });
                (rec, base + secs)
            }
        };
        result.outcomes.push(MethodOutcome {
            method,
            record,
            seconds,
        });
    }
    result
}

fn aggregate(ds: &Dataset, methods: &[Method], instances: &[InstanceResult]) -> Vec<ResultRow> {
    let cfg = &ds.config;
    methods
        .iter()
        .map(|&method| {
            let mut sx = 0.0;
            let mut ss = 0.0;
            let mut n = 0usize;
            let mut time = 0.0;
            let mut non_converged = 0;
            for inst in instances {
                let o = inst.outcomes.iter().find(|o| o.method == method).unwrap();
                time += o.seconds;
                match &o.record {
                    Ok(rec) => {
                        if !rec.flags.converged {
                            non_converged += 1;
                        }
                        sx += rec.x_hat.squared_distance(&inst.x_true);
                        ss += apparent_power_sq_error(&rec.x_hat, &inst.x_true, &ds.model.case, &ds.model.ybus);
                        n += 1;
                    }
                    Err(_) => non_converged += 1,
                }
            }
            let rmse = |s: f64| if n == 0 { f64::NAN } else { (s / n as f64).sqrt() };
            ResultRow {
                network: cfg.case_name.clone(),
                delta: cfg.delta,
                window_size: cfg.window_size,
                k: cfg.k,
                redundancy: cfg.redundancy,
                method,
                rmse_x: rmse(sx),
                rmse_s: rmse(ss),
                mean_solve_time_s: time / instances.len().max(1) as f64,
                non_converged,
            }
        })
        .collect()
}

pub fn run_cell(
    config: &ScenarioConfig,
    methods: &[Method],
    dataset_dir: Option<&Path>,
) -> Result<CellReport, ScenarioError> {
    let ds = dataset_for(config, dataset_dir)?;
    Ok(run_cell_on(&ds, methods))
}

/// Runs `methods` on every test instance of an existing dataset.
pub fn run_cell_on(ds: &Dataset, methods: &[Method]) -> CellReport {
    let instances: Vec<InstanceResult> = ds
        .test_ids
        .par_iter()
        .map(|&t| run_instance(ds, t, methods))
        .collect();
    CellReport {
        config: ds.config.clone(),
        rows: aggregate(ds, methods, &instances),
        instances,
    }
}

/// Runs every cell and, when the spec names an output directory, writes
/// `results.csv`, `timings.csv`, `plot_data.csv`, `instances.csv`,
/// `diagnostics.csv` and `manifest.json` there.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, BenchError> {
    spec.validate()?;
    let run = || {
        let mut report = ExperimentReport::default();
        for (index, cell) in spec.cells.iter().enumerate() {
            match run_cell(cell, &spec.methods, spec.dataset_dir.as_deref()) {
                Ok(c) => report.cells.push(c),
                Err(e) => report.failures.push(CellFailure {
                    index,
                    config: cell.clone(),
                    message: e.to_string(),
                }),
            }
        }
        report
    };
    let report = match spec.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| BenchError::Config(e.to_string()))?
            .install(run),
        None => run(),
    };
    if let Some(dir) = &spec.out_dir {
        write_outputs(spec, &report, dir)?;
    }
    Ok(report)
}

fn cell_label(c: &ScenarioConfig) -> String {
    format!(
        "{}/{}/delta={}/window={}/k={}",
        c.case_name, c.redundancy, c.delta, c.window_size, c.k
    )
}

#[derive(Serialize)]
struct TimingRow<'a> {
    network: &'a str,
    delta: f64,
    window_size: usize,
    k: usize,
    redundancy: RedundancyLevel,
    method: Method,
    mean_solve_time_s: f64,
}

#[derive(Serialize)]
struct PlotRow<'a> {
    cell: String,
    method: Method,
    metric: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct InstanceRow {
    cell: String,
    test_id: usize,
    method: Method,
    sq_error_x: Option<f64>,
    sq_error_to_retro: Option<f64>,
    rho_selected: Option<f64>,
    converged: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct DiagnosticRow<'a> {
    cell: String,
    test_id: usize,
    rho: f64,
    objective: f64,
    dual_objective: f64,
    warm_objective: f64,
    max_lp_gap: f64,
    duality_gap: f64,
    dual_residual: f64,
    converged: bool,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct ManifestCell {
    index: usize,
    config_sha256: String,
    master_seed: u64,
    status: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: String,
    spec: &'a ExperimentSpec,
    cells: Vec<ManifestCell>,
    files: BTreeMap<String, String>,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outputs(
    spec: &ExperimentSpec,
    report: &ExperimentReport,
    dir: &Path,
) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("results.csv"), report.rows())?;
    write_csv(
        &dir.join("timings.csv"),
        report.rows().map(|r| TimingRow {
            network: &r.network,
            delta: r.delta,
            window_size: r.window_size,
            k: r.k,
            redundancy: r.redundancy,
            method: r.method,
            mean_solve_time_s: r.mean_solve_time_s,
        }),
    )?;
    write_csv(
        &dir.join("plot_data.csv"),
        report.cells.iter().flat_map(|c| {
            c.rows.iter().flat_map(move |r| {
                [("rmse_x", r.rmse_x), ("rmse_s", r.rmse_s)].map(|(metric, value)| PlotRow {
                    cell: cell_label(&c.config),
                    method: r.method,
                    metric,
                    value,
                })
            })
        }),
    )?;
    write_csv(
        &dir.join("instances.csv"),
        report.cells.iter().flat_map(|c| {
            c.instances.iter().flat_map(move |inst| {
                inst.outcomes.iter().map(move |o| {
                    let rec = o.record.as_ref().ok();
                    InstanceRow {
                        cell: cell_label(&c.config),
                        test_id: inst.test_id,
                        method: o.method,
                        sq_error_x: rec.map(|r| r.x_hat.squared_distance(&inst.x_true)),
                        sq_error_to_retro: rec
                            .zip(inst.x_retro.as_ref())
                            .map(|(r, x)| r.x_hat.squared_distance(x)),
                        rho_selected: rec.and_then(|r| r.rho_selected),
                        converged: rec.is_some_and(|r| r.flags.converged),
                        error: o.record.as_ref().err().cloned(),
                    }
                })
            })
        }),
    )?;
    write_csv(
        &dir.join("diagnostics.csv"),
        report.cells.iter().flat_map(|c| {
            c.instances.iter().flat_map(move |inst| {
                inst.candidates.iter().map(move |d| DiagnosticRow {
                    cell: cell_label(&c.config),
                    test_id: inst.test_id,
                    rho: d.rho,
                    objective: d.objective,
                    dual_objective: d.dual_objective,
                    warm_objective: d.warm_objective,
                    max_lp_gap: d.max_lp_gap,
                    duality_gap: d.duality_gap,
                    dual_residual: d.dual_residual,
                    converged: d.converged,
                    error: d.error.as_deref(),
                })
            })
        }),
    )?;

    let mut files = BTreeMap::new();
    for name in [
        "results.csv",
        "timings.csv",
        "plot_data.csv",
        "instances.csv",
        "diagnostics.csv",
    ] {
        files.insert(name.to_string(), hex::encode(Sha256::digest(fs::read(dir.join(name))?)));
    }
    let cells = spec
        .cells
        .iter()
        .enumerate()
        .map(|(index, c)| ManifestCell {
            index,
            config_sha256: config_hash(c),
            master_seed: c.master_seed,
            status: report
                .failures
                .iter()
                .find(|f| f.index == index)
                .map_or_else(|| "ok".to_string(), |f| format!("failed: {}", f.message)),
        })
        .collect();
    let manifest = Manifest {
        tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        spec,
        cells,
        files,
    };
    let mut out = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
