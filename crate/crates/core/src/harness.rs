//! Experiment runner: network → simulation → fit → 100-step evaluation, for
//! single configurations and for model × network × method grids.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alternating::{self, AsindConfig};
use crate::basis::BasisLibrary;
use crate::dynamics::{integrate_rk4, DynamicsSettings, DynamicsSpec, Model, Origin, Trajectory};
use crate::error::{Error, Result};
use crate::io::{self, fmt_f64, FittedModel};
use crate::metrics::{format_metric, score_prediction, MetricsReport, DEFAULT_HORIZON};
use crate::netgen::{AdjacencyMatrix, NetworkConfig, NetworkKind};
use crate::sindy::{self, SindyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Asind,
    Sindy,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Asind, Method::Sindy];

    pub fn key(self) -> &'static str {
        match self {
            Method::Asind => "asind",
            Method::Sindy => "sindy",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asind" => Ok(Method::Asind),
            "sindy" => Ok(Method::Sindy),
            other => Err(Error::Config(format!("unknown method `{other}` (valid: asind, sindy)"))),
        }
    }
}

/// Which methods a run fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Asind,
    Sindy,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Asind => vec![Method::Asind],
            MethodChoice::Sindy => vec![Method::Sindy],
            MethodChoice::Both => Method::ALL.to_vec(),
        }
    }
}

impl FromStr for MethodChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asind" => Ok(MethodChoice::Asind),
            "sindy" => Ok(MethodChoice::Sindy),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (valid: asind, sindy, both)"
            ))),
        }
    }
}

fn default_dynamics() -> DynamicsSettings {
    DynamicsSettings::new(Model::Sis)
}
fn default_method() -> MethodChoice {
    MethodChoice::Both
}
fn default_train_steps() -> usize {
    500
}
fn default_horizon() -> usize {
    DEFAULT_HORIZON
}
fn default_dt() -> f64 {
    0.01
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// One experiment. The run seed overrides `network.seed` and also seeds the
/// dynamics parameters and initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dynamics")]
    pub dynamics: DynamicsSettings,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    #[serde(default)]
    pub asind: AsindConfig,
    #[serde(default)]
    pub sindy: SindyConfig,
    /// Basis library; defaults to the built-in dictionary with the Hill
    /// exponent taken from the dynamics settings.
    #[serde(default)]
    pub library: Option<BasisLibrary>,
    /// Samples used for fitting.
    #[serde(default = "default_train_steps")]
    pub train_steps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Fit on finite-difference derivatives instead of exact ones.
    #[serde(default)]
    pub estimated_derivatives: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dynamics: default_dynamics(),
            network: NetworkConfig::default(),
            method: default_method(),
            asind: AsindConfig::default(),
            sindy: SindyConfig::default(),
            library: None,
            train_steps: default_train_steps(),
            horizon: default_horizon(),
            dt: default_dt(),
            seeds: default_seeds(),
            estimated_derivatives: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.train_steps < 3 {
            return Err(Error::Config("train_steps must be at least 3".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        self.network.validate()?;
        self.asind.validate()?;
        if let Some(lib) = &self.library {
            lib.validate()?;
        }
        if let Some(dir) = &self.output_dir {
            check_output_dir(dir)?;
        }
        Ok(())
    }

    pub fn library(&self) -> BasisLibrary {
        match &self.library {
            Some(l) => l.clone(),
            None if self.dynamics.h == 2.0 => BasisLibrary::default_library(),
            None => BasisLibrary::default_with_hill(self.dynamics.h),
        }
    }
}

/// The output directory may be created, but its parent must already exist.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        return Ok(());
    }
    if dir.exists() {
        return Err(Error::Path(format!("{} exists and is not a directory", dir.display())));
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(Error::Path(format!(
            "parent of output directory {} does not exist",
            dir.display()
        )));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Ground truth for one seed: network, dynamics, training window and the
/// held-out continuation starting at the split state.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub network: AdjacencyMatrix,
    pub spec: DynamicsSpec,
    pub train: Trajectory,
    pub truth: Trajectory,
}

impl SimulatedData {
    /// Training window followed by the held-out continuation.
    pub fn full_trajectory(&self) -> Result<Trajectory> {
        let (a, b) = (&self.train, &self.truth);
        let rows = a.len() + b.len() - 1;
        let stack = |x: &nalgebra::DMatrix<f64>, y: &nalgebra::DMatrix<f64>| {
            nalgebra::DMatrix::from_fn(rows, a.n(), |t, i| {
                if t < a.len() {
                    x[(t, i)]
                } else {
                    y[(t + 1 - a.len(), i)]
                }
            })
        };
        let derivs = match (&a.derivatives, &b.derivatives) {
            (Some(x), Some(y)) if a.origin == b.origin => Some(stack(x, y)),
            _ => None,
        };
        Trajectory::new(a.dt, stack(&a.states, &b.states), derivs, a.origin)
    }
}

pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<SimulatedData> {
    let mut net = cfg.network.clone();
    net.seed = seed;
    let network = net.generate()?;
    let (spec, x0) = cfg.dynamics.instantiate(net.n, seed)?;
    let steps = cfg.train_steps - 1 + cfg.horizon;
    let full = integrate_rk4(&spec, &network, &x0, cfg.dt, steps)?;
    let split = cfg.train_steps - 1;
    let mut train = full.slice(0, cfg.train_steps);
    if cfg.estimated_derivatives {
        train.derivatives = None;
        train.origin = Origin::Estimated;
        train = train.with_derivatives()?;
    }
    let truth = full.slice(split, split + cfg.horizon + 1);
    Ok(SimulatedData {
        network,
        spec,
        train,
        truth,
    })
}

/// Fit diagnostics kept for invariant checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    pub outer_iterations: usize,
    pub converged: bool,
    pub max_descent_violation: f64,
    pub qp_warnings: usize,
}

pub fn fit_method(
    cfg: &ExperimentConfig,
    method: Method,
    train: &Trajectory,
) -> Result<(FittedModel, Option<FitDiagnostics>)> {
    match method {
        Method::Asind => {
            let (model, state) = alternating::fit(train, &cfg.library(), &cfg.asind)?;
            let diag = FitDiagnostics {
                outer_iterations: state.iteration,
                converged: state.converged,
                max_descent_violation: state.max_descent_violation(),
                qp_warnings: state.qp_warnings,
            };
            Ok((FittedModel::Asind(model), Some(diag)))
        }
        Method::Sindy => Ok((FittedModel::Sindy(sindy::fit_sindy(train, &cfg.sindy)?), None)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// Prediction rollout blew up.
    Diverged,
    /// The fit itself failed (recorded as an unbounded error).
    FitFailed,
}

impl RunStatus {
    pub fn key(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::FitFailed => "fit-failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub model: Model,
    pub network: NetworkKind,
    pub method: Method,
    pub seed: u64,
    pub report: MetricsReport,
    pub status: RunStatus,
    pub error: Option<String>,
    pub wall_time: f64,
    pub fitted: Option<FittedModel>,
    pub diagnostics: Option<FitDiagnostics>,
    pub true_network: Option<AdjacencyMatrix>,
}

impl RunRecord {
    pub fn cell_name(&self) -> String {
        format!(
            "{}_{}_{}_seed{}",
            self.model.key(),
            self.network.short(),
            self.method.key(),
            self.seed
        )
    }
}

/// Runs one (config, method, seed). Failures are captured in the record.
pub fn run_single(cfg: &ExperimentConfig, method: Method, seed: u64) -> RunRecord {
    let start = Instant::now();
    let mut rec = RunRecord {
        model: cfg.dynamics.model,
        network: cfg.network.kind,
        method,
        seed,
        report: MetricsReport::diverged(0.0, cfg.horizon),
        status: RunStatus::FitFailed,
        error: None,
        wall_time: 0.0,
        fitted: None,
        diagnostics: None,
        true_network: None,
    };
    let outcome = (|| -> Result<()> {
        let data = simulate(cfg, seed)?;
        rec.true_network = Some(data.network.clone());
        let (fitted, diag) = fit_method(cfg, method, &data.train)?;
        rec.diagnostics = diag;
        let tol = cfg.asind.threshold_a;
        rec.report = score_prediction(&fitted, &data.truth, &data.network, tol)?;
        rec.status = if rec.report.diverged {
            RunStatus::Diverged
        } else {
            RunStatus::Ok
        };
        rec.fitted = Some(fitted);
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("{}: {e}", rec.cell_name());
        rec.error = Some(e.to_string());
    }
    rec.wall_time = start.elapsed().as_secs_f64();
    log::info!(
        "{} {} rmse={} mape={} jaccard={:.2} ({:.1}s)",
        rec.cell_name(),
        rec.status.key(),
        format_metric(rec.report.rmse),
        format_metric(rec.report.mape),
        rec.report.jaccard,
        rec.wall_time
    );
    rec
}

fn write_cell(dir: &Path, rec: &RunRecord) -> Result<()> {
    let cell = dir.join("cells").join(rec.cell_name());
    ensure_dir(&cell)?;
    if let Some(m) = &rec.fitted {
        io::save_fitted(m, &cell.join("model.json"))?;
        io::save_adjacency(&crate::metrics::Predictor::network(m), &cell.join("network_hat.csv"))?;
    }
    if let Some(a) = &rec.true_network {
        io::save_adjacency(a, &cell.join("network_true.csv"))?;
    }
    let mut s = String::from("step,rmse\n");
    if let Some(errs) = &rec.report.per_step_errors {
        for (k, e) in errs.iter().enumerate() {
            let _ = writeln!(s, "{},{}", k + 1, fmt_f64(*e));
        }
    }
    io::write_text(&cell.join("per_step.csv"), &s)?;
    io::write_json(&cell.join("metrics.json"), &rec.report)?;
    if let Some(e) = &rec.error {
        io::write_text(&cell.join("error.txt"), &format!("{e}\n"))?;
    }
    Ok(())
}

/// Combined results in deterministic (model, network, method, seed) order.
#[derive(Debug, Clone)]
pub struct ResultsTable {
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub model: Model,
    pub network: NetworkKind,
    pub method: Method,
    pub runs: usize,
    pub diverged: usize,
    pub rmse: (f64, f64),
    pub mape: (f64, f64),
    pub jaccard: (f64, f64),
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::INFINITY);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ResultsTable {
    /// `model,network,method,seed,rmse,mape,jaccard,diverged,status`.
    pub fn results_csv(&self) -> String {
        let mut s = String::from("model,network,method,seed,rmse,mape,jaccard,diverged,status\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.model.key(),
                r.network.short(),
                r.method.key(),
                r.seed,
                format_metric(r.report.rmse),
                format_metric(r.report.mape),
                format_metric(r.report.jaccard),
                r.report.diverged,
                r.status.key()
            );
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("model,network,method,seed,wall_time\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.3}",
                r.model.key(),
                r.network.short(),
                r.method.key(),
                r.seed,
                r.wall_time
            );
        }
        s
    }

    pub fn summary(&self) -> Vec<CellSummary> {
        let mut out: Vec<CellSummary> = Vec::new();
        for r in &self.records {
            let same = |c: &CellSummary| c.model == r.model && c.network == r.network && c.method == r.method;
            if out.iter().any(same) {
                continue;
            }
            let group: Vec<&RunRecord> = self
                .records
                .iter()
                .filter(|x| x.model == r.model && x.network == r.network && x.method == r.method)
                .collect();
            let pick = |f: fn(&MetricsReport) -> f64| group.iter().map(|x| f(&x.report)).collect::<Vec<_>>();
            out.push(CellSummary {
                model: r.model,
                network: r.network,
                method: r.method,
                runs: group.len(),
                diverged: group.iter().filter(|x| x.report.diverged).count(),
                rmse: mean_std(&pick(|m| m.rmse)),
                mape: mean_std(&pick(|m| m.mape)),
                jaccard: mean_std(&pick(|m| m.jaccard)),
            });
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "model,network,method,runs,diverged_runs,rmse_mean,rmse_std,mape_mean,mape_std,jaccard_mean,jaccard_std\n",
        );
        for c in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.model.key(),
                c.network.short(),
                c.method.key(),
                c.runs,
                c.diverged,
                format_metric(c.rmse.0),
                format_metric(c.rmse.1),
                format_metric(c.mape.0),
                format_metric(c.mape.1),
                format_metric(c.jaccard.0),
                format_metric(c.jaccard.1)
            );
        }
        s
    }

    fn models_networks(&self) -> (Vec<Model>, Vec<NetworkKind>) {
        let mut models: Vec<Model> = Vec::new();
        let mut nets: Vec<NetworkKind> = Vec::new();
        for r in &self.records {
            if !models.contains(&r.model) {
                models.push(r.model);
            }
            if !nets.contains(&r.network) {
                nets.push(r.network);
            }
        }
        (models, nets)
    }

    /// Prediction table: one row per (model, network), RMSE and MAPE (%) per
    /// method, seed means.
    pub fn prediction_table(&self) -> String {
        let summary = self.summary();
        let (models, nets) = self.models_networks();
        let methods: Vec<Method> = Method::ALL
            .into_iter()
            .filter(|m| self.records.iter().any(|r| r.method == *m))
            .collect();
        let fmt = |v: f64| {
            if v.is_infinite() {
                "inf".to_string()
            } else {
                format!("{v:.4}")
            }
        };
        let mut header = format!("{:<18}{:<9}", "Dynamics", "Network");
        for m in &methods {
            let name = m.key().to_uppercase();
            header.push_str(&format!(
                "{:>16}{:>16}",
                format!("{name} RMSE"),
                format!("{name} MAPE%")
            ));
        }
        let mut s = format!(
            "100-step prediction (mean over seeds)\n{header}\n{}\n",
            "-".repeat(header.len())
        );
        for model in &models {
            for net in &nets {
                let mut line = format!("{:<18}{:<9}", model.short(), net.short());
                for m in &methods {
                    match summary
                        .iter()
                        .find(|c| c.model == *model && c.network == *net && c.method == *m)
                    {
                        Some(c) => line.push_str(&format!("{:>16}{:>16}", fmt(c.rmse.0), fmt(c.mape.0))),
                        None => line.push_str(&format!("{:>16}{:>16}", "-", "-")),
                    }
                }
                s.push_str(line.trim_end());
                s.push('\n');
            }
        }
        s
    }

    /// Jaccard index (%) of the recovered network, one row per model.
    pub fn jaccard_table(&self, method: Method) -> String {
        let summary = self.summary();
        let (models, nets) = self.models_networks();
        let mut header = format!("{:<18}", "Dynamics");
        for n in &nets {
            header.push_str(&format!("{:>10}", n.short()));
        }
        let mut s = format!(
            "Jaccard index between true and recovered network, {} (%)\n{header}\n{}\n",
            method.key().to_uppercase(),
            "-".repeat(header.len())
        );
        for model in &models {
            let mut line = format!("{:<18}", model.short());
            for net in &nets {
                match summary
                    .iter()
                    .find(|c| c.model == *model && c.network == *net && c.method == method)
                {
                    Some(c) => line.push_str(&format!("{:>10.2}", c.jaccard.0)),
                    None => line.push_str(&format!("{:>10}", "-")),
                }
            }
            s.push_str(&line);
            s.push('\n');
        }
        s
    }

    /// Writes the combined tables. Per-cell artifacts are written by the
    /// workers.
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        io::write_text(&dir.join("results.csv"), &self.results_csv())?;
        io::write_text(&dir.join("summary.csv"), &self.summary_csv())?;
        io::write_text(&dir.join("timings.csv"), &self.timings_csv())?;
        io::write_text(&dir.join("table2.txt"), &self.prediction_table())?;
        io::write_text(&dir.join("table3.txt"), &self.jaccard_table(Method::Asind))?;
        Ok(())
    }
}

fn run_cells(cells: Vec<(ExperimentConfig, Method, u64)>, out: Option<&Path>) -> Result<ResultsTable> {
    if let Some(dir) = out {
        check_output_dir(dir)?;
        ensure_dir(dir)?;
    }
    let records: Vec<RunRecord> = cells
        .into_par_iter()
        .map(|(cfg, method, seed)| {
            let rec = run_single(&cfg, method, seed);
            if let Some(dir) = out {
                if let Err(e) = write_cell(dir, &rec) {
                    log::error!("{}: writing artifacts failed: {e}", rec.cell_name());
                }
            }
            rec
        })
        .collect();
    let table = ResultsTable { records };
    if let Some(dir) = out {
        table.write(dir)?;
    }
    Ok(table)
}

/// Every seed (and every method, for `both`) of one configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let cells = cfg
        .method
        .methods()
        .into_iter()
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s)))
        .map(|(m, s)| (cfg.clone(), m, s))
        .collect();
    run_cells(cells, cfg.output_dir.as_deref())
}

/// Cross product of models × networks × methods × seeds, run in parallel.
pub fn run_grid(
    base: &ExperimentConfig,
    models: &[Model],
    networks: &[NetworkKind],
    methods: &[Method],
) -> Result<ResultsTable> {
    if models.is_empty() || networks.is_empty() || methods.is_empty() {
        return Err(Error::Config("grid lists must not be empty".into()));
    }
    base.validate()?;
    let mut cells = Vec::new();
    for &model in models {
        for &kind in networks {
            for &method in methods {
                for &seed in &base.seeds {
                    let mut cfg = base.clone();
                    cfg.dynamics.model = model;
                    cfg.network.kind = kind;
                    cells.push((cfg, method, seed));
                }
            }
        }
    }
    run_cells(cells, base.output_dir.as_deref())
}

/// Parses comma-separated grid axis names; unknown names list the valid ones.
pub fn parse_list<T: FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>> {
    items
        .iter()
        .flat_map(|s| s.split(','))
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse())
        .collect()
}

/// The full table grid: all four models on all three networks, both methods.
pub fn reproduce_tables(base: &ExperimentConfig) -> Result<ResultsTable> {
    run_grid(base, &Model::ALL, &NetworkKind::ALL, &Method::ALL)
}
