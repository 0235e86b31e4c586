//! Config-driven experiment runner: instance catalog, tuned and fixed runs,
//! CSV persistence, charts and bound reports.
//!
//! Output files are fully determined by the effective configuration. Work is
//! spread over a thread pool but results are gathered in a fixed order, and
//! measured wall times are only written when `record_timing` is set.

mod config;
mod records;
mod report;
pub mod svg;

use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;

pub use config::{ExperimentConfig, Overrides, UnlabeledRule};
pub use records::{
    append_records, read_records, records_for_row, write_records, write_table, ExperimentRecord, RECORD_COLUMNS,
};
pub use report::{
    bounds_report, separation_lambda_grid, separation_report, BoundsReport, BoundsRequest, Comparison, RidgeBounds,
    SeparationReport, SgdBounds,
};

use crate::problem::{InstanceSpec, ProblemInstance, SpectrumMode, TargetMode};
use crate::tuning::{
    evaluate_points, grid_points, heuristic_config, select_best, shared_test_set, Flag, GridRow, GridSpec, Method,
    Params,
};
use records::{fmt_f64, fmt_opt};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Compute(#[from] crate::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        if e.is_io_error() {
            HarnessError::io(path, e)
        } else {
            HarnessError::Config(format!("{}: {e}", path.display()))
        }
    }

    /// Process exit status: 2 for configuration or input errors, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Compute(_) => 2,
            HarnessError::Io { .. } => 3,
        }
    }
}

/// A problem instance with the identifier and caption used in outputs.
#[derive(Debug, Clone)]
pub struct NamedInstance {
    pub id: String,
    pub label: String,
    pub instance: ProblemInstance,
}

/// Panel identifiers and specifications of the six comparison instances:
/// spectra `1/i` and `1/i²` crossed with targets `1`, `1/i` and `i^-10`,
/// with `d = 200` and unit noise.
pub fn figure1_catalog() -> Vec<(&'static str, InstanceSpec)> {
    let spectra = [SpectrumMode::Inv1, SpectrumMode::Inv2];
    let targets = [TargetMode::Ones, TargetMode::Inv1, TargetMode::Inv10];
    let ids = ["a", "b", "c", "d", "e", "f"];
    let mut out = Vec::with_capacity(6);
    for (si, s) in spectra.iter().enumerate() {
        for (ti, t) in targets.iter().enumerate() {
            out.push((
                ids[3 * si + ti],
                InstanceSpec {
                    d: 200,
                    sigma2: 1.0,
                    spectrum: s.clone(),
                    target: t.clone(),
                },
            ));
        }
    }
    out
}

/// Human-readable description of a spec, used as chart title.
pub fn describe(spec: &InstanceSpec) -> String {
    let s = match &spec.spectrum {
        SpectrumMode::Inv1 => "lambda_i = 1/i",
        SpectrumMode::Inv2 => "lambda_i = 1/i^2",
        SpectrumMode::Custom { .. } => "custom spectrum",
    };
    let t = match &spec.target {
        TargetMode::Ones => "w*[i] = 1",
        TargetMode::Inv1 => "w*[i] = 1/i",
        TargetMode::Inv10 => "w*[i] = i^-10",
        TargetMode::Custom { .. } => "custom w*",
    };
    format!("{s}, {t}, d = {}, sigma^2 = {}", spec.d, spec.sigma2)
}

/// Catalog entries selected by panel id; an empty filter selects all.
pub fn figure1_instances(filter: &[String]) -> Result<Vec<NamedInstance>, HarnessError> {
    let catalog = figure1_catalog();
    if let Some(bad) = filter.iter().find(|f| !catalog.iter().any(|(id, _)| id == f)) {
        return Err(HarnessError::Config(format!("unknown panel `{bad}`; expected one of a-f")));
    }
    catalog
        .into_iter()
        .filter(|(id, _)| filter.is_empty() || filter.iter().any(|f| f == id))
        .map(|(id, spec)| {
            Ok(NamedInstance {
                id: id.to_string(),
                label: format!("({id}) {}", describe(&spec)),
                instance: spec.build()?,
            })
        })
        .collect()
}

pub fn write_instance(path: &Path, spec: &InstanceSpec) -> Result<(), HarnessError> {
    spec.build()?;
    std::fs::write(path, spec.to_toml()).map_err(|e| HarnessError::io(path, e))
}

pub fn load_instance(path: &Path) -> Result<(InstanceSpec, ProblemInstance), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let spec = InstanceSpec::from_toml(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let inst = spec.build()?;
    Ok((spec, inst))
}

/// Outcome of one (instance, method, N) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub instance_id: String,
    pub method: Method,
    pub n: usize,
    pub heuristic: bool,
    pub table: Vec<GridRow>,
    pub best: Option<Params>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn best_row(&self) -> Option<&GridRow> {
        let best = self.best?;
        self.table.iter().find(|r| r.params == best && r.flag == Flag::Ok)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub cells: Vec<CellResult>,
    pub records: PathBuf,
    pub grid: PathBuf,
    pub summary: PathBuf,
    pub charts: Vec<PathBuf>,
}

impl ExperimentOutput {
    pub fn cell(&self, instance_id: &str, method: Method, n: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.instance_id == instance_id && c.method == method && c.n == n)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start {workers} workers: {e}")))
}

fn run_cells(cfg: &ExperimentConfig, inst: &NamedInstance, seed: u64) -> Vec<CellResult> {
    let grid = &cfg.grid;
    let test = shared_test_set(&inst.instance, seed, grid.test_size);
    let mut cells = Vec::new();
    for &n in &cfg.n_values {
        let mut tuned: Vec<CellResult> = Vec::new();
        for &method in cfg.methods.iter().filter(|m| !cfg.heuristic.contains(m)) {
            let points = grid_points(method, grid);
            let (table, best, error) =
                match evaluate_points(method, &inst.instance, n, &points, grid.trials, &test, grid.metric, grid, seed) {
                    Ok(table) => match select_best(method, n, table.clone()) {
                        Ok(r) => (table, Some(r.best), None),
                        Err(e) => (table, None, Some(e.to_string())),
                    },
                    Err(e) => (Vec::new(), None, Some(e.to_string())),
                };
            info!("{} n={n} {method}: best {best:?}", inst.id);
            tuned.push(CellResult {
                instance_id: inst.id.clone(),
                method,
                n,
                heuristic: false,
                table,
                best,
                error,
            });
        }

        let mut reference = cfg.heuristic_lambda;
        let mut heuristic = Vec::new();
        for &method in &cfg.heuristic {
            if reference.is_none() {
                reference = Some(match tuned.iter().find(|c| c.method == Method::Ridge) {
                    Some(c) => c.best.and_then(|p| p.lambda).unwrap_or(f64::NAN),
                    None => crate::tuning::tune_with_test(Method::Ridge, &inst.instance, n, grid, seed, &test)
                        .map(|r| r.best.lambda.unwrap_or(f64::NAN))
                        .unwrap_or(f64::NAN),
                });
            }
            let lambda = reference.unwrap_or(f64::NAN);
            let evaluated = heuristic_config(method, &inst.instance, n, lambda).and_then(|p| {
                evaluate_points(method, &inst.instance, n, &[p], grid.trials, &test, grid.metric, grid, seed)
                    .map(|t| (p, t))
            });
            let cell = match evaluated {
                Ok((p, table)) => {
                    let ok = table[0].flag == Flag::Ok;
                    CellResult {
                        instance_id: inst.id.clone(),
                        method,
                        n,
                        heuristic: true,
                        error: (!ok).then(|| table[0].reason.clone().unwrap_or_else(|| table[0].flag.as_str().into())),
                        best: ok.then_some(p),
                        table,
                    }
                }
                Err(e) => CellResult {
                    instance_id: inst.id.clone(),
                    method,
                    n,
                    heuristic: true,
                    table: Vec::new(),
                    best: None,
                    error: Some(format!("heuristic at lambda {lambda}: {e}")),
                },
            };
            info!("{} n={n} {method} (heuristic): {:?}", inst.id, cell.best);
            heuristic.push(cell);
        }

        // keep the configured method order
        for &method in &cfg.methods {
            let pos = tuned.iter().position(|c| c.method == method);
            let cell = match pos {
                Some(i) => tuned.swap_remove(i),
                None => {
                    let i = heuristic.iter().position(|c| c.method == method).expect("every method ran");
                    heuristic.swap_remove(i)
                }
            };
            cells.push(cell);
        }
    }
    cells
}

const GRID_COLUMNS: [&str; 12] = [
    "instance_id",
    "method",
    "n",
    "selection",
    "eta",
    "beta",
    "lambda",
    "mean",
    "std",
    "trials",
    "flag",
    "reason",
];

const SUMMARY_COLUMNS: [&str; 14] = [
    "instance_id",
    "method",
    "n",
    "selection",
    "eta",
    "beta",
    "lambda",
    "mean_mse",
    "std_mse",
    "mean_excess",
    "std_excess",
    "trials",
    "flag",
    "reason",
];

fn selection(c: &CellResult) -> &'static str {
    if c.heuristic {
        "heuristic"
    } else {
        "tuned"
    }
}

/// One summary line per cell: metrics of the selected configuration, or a
/// failed line with the reason when nothing could be selected.
fn summary_line(c: &CellResult) -> [String; 14] {
    let head = [
        c.instance_id.clone(),
        c.method.to_string(),
        c.n.to_string(),
        selection(c).to_string(),
    ];
    let (params, stats, trials, flag, reason) = match c.best_row() {
        Some(r) => {
            let mse: Vec<f64> = r.outcomes.iter().map(|o| o.mse).collect();
            let exc: Vec<f64> = r.outcomes.iter().map(|o| o.excess).collect();
            let (m, s) = mean_std(&mse);
            let (me, se) = mean_std(&exc);
            (r.params, [m, s, me, se], r.trials, Flag::Ok, String::new())
        }
        None => (
            Params::default(),
            [f64::NAN; 4],
            0,
            Flag::Failed,
            c.error.clone().unwrap_or_default(),
        ),
    };
    let [h0, h1, h2, h3] = head;
    [
        h0,
        h1,
        h2,
        h3,
        fmt_opt(params.eta),
        fmt_opt(params.beta),
        fmt_opt(params.lambda),
        fmt_f64(stats[0]),
        fmt_f64(stats[1]),
        fmt_f64(stats[2]),
        fmt_f64(stats[3]),
        trials.to_string(),
        flag.as_str().to_string(),
        reason,
    ]
}

fn grid_lines(c: &CellResult) -> impl Iterator<Item = [String; 12]> + '_ {
    c.table.iter().map(move |r| {
        [
            c.instance_id.clone(),
            c.method.to_string(),
            c.n.to_string(),
            selection(c).to_string(),
            fmt_opt(r.params.eta),
            fmt_opt(r.params.beta),
            fmt_opt(r.params.lambda),
            fmt_f64(r.mean),
            fmt_f64(r.std),
            r.trials.to_string(),
            r.flag.as_str().to_string(),
            r.reason.clone().unwrap_or_default(),
        ]
    })
}

/// Tunes (or applies the heuristic to) every configured method at every
/// sample size on each instance, then writes `records.csv`, `grid.csv`,
/// `summary.csv`, `effective_config.toml`, `metadata.json` and, when
/// enabled, one chart per instance under `charts/`.
///
/// Computation anomalies are recorded per cell and never abort the run.
pub fn run_experiment(cfg: &ExperimentConfig, instances: &[NamedInstance]) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    if instances.is_empty() {
        return Err(HarnessError::Config("no instances selected".into()));
    }
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;

    let pool = thread_pool(cfg.workers)?;
    let mut cells = Vec::new();
    for inst in instances {
        cells.extend(pool.install(|| run_cells(cfg, inst, seed)));
    }

    let records: Vec<ExperimentRecord> = cells
        .iter()
        .flat_map(|c| {
            c.table
                .iter()
                .flat_map(|r| records_for_row(&c.instance_id, c.method, c.n, seed, r, cfg.grid.trials, cfg.record_timing))
        })
        .collect();
    let records_path = out.join("records.csv");
    write_records(&records_path, &records)?;
    let grid_path = out.join("grid.csv");
    write_table(&grid_path, &GRID_COLUMNS, cells.iter().flat_map(grid_lines))?;
    let summary_path = out.join("summary.csv");
    write_table(&summary_path, &SUMMARY_COLUMNS, cells.iter().map(summary_line))?;

    let mut effective = cfg.clone();
    effective.seed = Some(seed);
    let cfg_path = out.join("effective_config.toml");
    std::fs::write(&cfg_path, effective.to_toml()).map_err(|e| HarnessError::io(&cfg_path, e))?;
    let meta = json!({
        "package_version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "n_values": cfg.n_values,
        "retuned_per_n": true,
        "unlabeled_count": "equal_to_n",
        "test_set": "one set of grid.test_size rows shared by every method and sample size",
        "training_streams": "shared across methods and grid points (paired trials)",
        "trials": cfg.grid.trials,
        "test_size": cfg.grid.test_size,
        "metric": cfg.grid.metric,
        "methods": cfg.methods,
        "heuristic": cfg.heuristic,
        "instances": instances.iter().map(|i| json!({"id": i.id, "label": i.label})).collect::<Vec<_>>(),
    });
    let meta_path = out.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    std::fs::write(&meta_path, text).map_err(|e| HarnessError::io(&meta_path, e))?;

    let mut charts = Vec::new();
    if cfg.emit_svg {
        let dir = out.join("charts");
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        for inst in instances {
            let series: Vec<svg::Series> = cfg
                .methods
                .iter()
                .map(|&m| {
                    let pts = cells
                        .iter()
                        .filter(|c| c.instance_id == inst.id && c.method == m)
                        .filter_map(|c| {
                            let r = c.best_row()?;
                            let mse: Vec<f64> = r.outcomes.iter().map(|o| o.mse).collect();
                            let (mean, std) = mean_std(&mse);
                            Some((c.n as f64, mean, std))
                        })
                        .collect();
                    svg::Series::for_method(m, pts)
                })
                .collect();
            let path = dir.join(format!("{}.svg", inst.id));
            let body = svg::line_chart(&inst.label, "N", "test MSE", &series);
            std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
            charts.push(path);
        }
    }

    Ok(ExperimentOutput {
        cells,
        records: records_path,
        grid: grid_path,
        summary: summary_path,
        charts,
    })
}

/// Runs the configured methods on the six comparison panels (restricted
/// by `cfg.instances`).
pub fn run_figure1(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let instances = figure1_instances(&cfg.instances)?;
    run_experiment(cfg, &instances)
}

/// Runs the single instance named in `cfg.instance`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let spec = cfg
        .instance
        .as_ref()
        .ok_or_else(|| HarnessError::Config("sweep needs an [instance] table or --instance file".into()))?;
    let inst = NamedInstance {
        id: cfg.instance_id.clone(),
        label: describe(spec),
        instance: spec.build()?,
    };
    run_experiment(cfg, &[inst])
}

/// One method at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct FixedRun {
    pub instance_id: String,
    pub method: Method,
    pub params: Params,
    pub n: usize,
    pub trials: usize,
    pub test_size: usize,
    pub seed: u64,
    pub preridge_gamma_power: f64,
    pub record_timing: bool,
}

/// Evaluates one configuration over `trials` trials. Trial `t` uses the
/// same training stream as trial `t` of a grid search with the same seed,
/// so any record can be reproduced bit for bit.
pub fn run_fixed(inst: &ProblemInstance, run: &FixedRun) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let m = run.method;
    let missing = |name: &str| HarnessError::Config(format!("method {m} needs --{name}"));
    let mut params = Params::default();
    if m.uses_eta() {
        params.eta = Some(run.params.eta.ok_or_else(|| missing("eta"))?);
    }
    if m.uses_beta() {
        params.beta = Some(run.params.beta.unwrap_or(0.0));
    }
    if m.uses_lambda() {
        params.lambda = Some(run.params.lambda.ok_or_else(|| missing("lambda"))?);
    }
    let grid = GridSpec {
        eta: params.eta.into_iter().collect(),
        beta: params.beta.into_iter().collect(),
        lambda: params.lambda.into_iter().collect(),
        trials: run.trials,
        test_size: run.test_size,
        preridge_gamma_power: run.preridge_gamma_power,
        ..GridSpec::default()
    };
    grid.validate(m).map_err(|e| HarnessError::Config(e.to_string()))?;
    if run.n < 2 {
        return Err(HarnessError::Config("n must be at least 2".into()));
    }
    let test = shared_test_set(inst, run.seed, run.test_size);
    let rows = evaluate_points(m, inst, run.n, &[params], run.trials, &test, grid.metric, &grid, run.seed)?;
    Ok(records_for_row(
        &run.instance_id,
        m,
        run.n,
        run.seed,
        &rows[0],
        run.trials,
        run.record_timing,
    ))
}
