//! Text formats for trajectories, networks and fitted models.
//!
//! Trajectories are CSV with a `t,node_0,...,node_{N-1}` header and one row
//! per sample. A `<stem>.meta.json` sidecar records `dt` and the origin, and
//! exact derivatives (when known) go to `<stem>.deriv.csv` in the same layout.
//! A CSV without a sidecar is treated as external data: `dt` is taken from the
//! time column and derivatives are estimated when first needed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::alternating::IdentifiedModel;
use crate::basis::BasisLibrary;
use crate::dynamics::{Origin, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::Predictor;
use crate::netgen::AdjacencyMatrix;
use crate::sindy::SindyModel;

/// Full-precision float text (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a JSON file, reporting the failing line.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_pretty(value)?)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn meta_path(path: &Path) -> PathBuf {
    sidecar(path, "meta.json")
}

pub fn deriv_path(path: &Path) -> PathBuf {
    sidecar(path, "deriv.csv")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub origin: Origin,
    pub nodes: usize,
    pub samples: usize,
    pub has_derivatives: bool,
}

fn matrix_csv(dt: f64, m: &DMatrix<f64>) -> String {
    let mut s = String::from("t");
    for i in 0..m.ncols() {
        let _ = write!(s, ",node_{i}");
    }
    s.push('\n');
    for t in 0..m.nrows() {
        s.push_str(&fmt_f64(t as f64 * dt));
        for i in 0..m.ncols() {
            s.push(',');
            s.push_str(&fmt_f64(m[(t, i)]));
        }
        s.push('\n');
    }
    s
}

/// Parses a `t,node_0,...` table into (times, values).
fn parse_matrix_csv(path: &Path, text: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(err(1, "missing column `t`".into()));
    }
    for (k, c) in cols.iter().enumerate().skip(1) {
        let want = format!("node_{}", k - 1);
        if *c != want {
            return Err(err(1, format!("missing column `{want}` (found `{c}`)")));
        }
    }
    let n = cols.len() - 1;
    if n == 0 {
        return Err(err(1, "no node columns".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n + 1 {
            let missing = cols.get(fields.len()).copied().unwrap_or("?");
            return Err(err(
                lineno,
                format!(
                    "expected {} fields, found {} (missing column `{missing}`)",
                    n + 1,
                    fields.len()
                ),
            ));
        }
        for (k, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("column `{}`: cannot parse `{f}`", cols[k])))?;
            if k == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if times.is_empty() {
        return Err(err(2, "no data rows".into()));
    }
    Ok((times.clone(), DMatrix::from_row_slice(times.len(), n, &values)))
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_text(path, &matrix_csv(traj.dt, &traj.states))?;
    if let Some(d) = &traj.derivatives {
        write_text(&deriv_path(path), &matrix_csv(traj.dt, d))?;
    }
    let meta = TrajectoryMeta {
        dt: traj.dt,
        origin: traj.origin,
        nodes: traj.n(),
        samples: traj.len(),
        has_derivatives: traj.derivatives.is_some(),
    };
    write_json(&meta_path(path), &meta)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let (times, states) = parse_matrix_csv(path, &read_text(path)?)?;
    let meta_file = meta_path(path);
    if meta_file.exists() {
        let meta: TrajectoryMeta = read_json(&meta_file)?;
        if meta.nodes != states.ncols() || meta.samples != states.nrows() {
            return Err(Error::Shape(format!(
                "{} declares {}×{}, data is {}×{}",
                meta_file.display(),
                meta.samples,
                meta.nodes,
                states.nrows(),
                states.ncols()
            )));
        }
        let derivatives = if meta.has_derivatives {
            let d = deriv_path(path);
            let (_, m) = parse_matrix_csv(&d, &read_text(&d)?)?;
            Some(m)
        } else {
            None
        };
        return Trajectory::new(meta.dt, states, derivatives, meta.origin);
    }
    if times.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: need two samples to infer dt",
            path.display()
        )));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.abs().max(1e-12) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 3,
                msg: "time column is not uniformly spaced".into(),
            });
        }
    }
    Trajectory::new(dt, states, None, Origin::Estimated)
}

/// Dense matrix CSV with a `node_0,...` header.
pub fn save_adjacency(a: &AdjacencyMatrix, path: &Path) -> Result<()> {
    let n = a.n();
    let mut s = (0..n).map(|j| format!("node_{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for i in 0..n {
        s.push_str(&(0..n).map(|j| fmt_f64(a.get(i, j))).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn load_adjacency(path: &Path) -> Result<AdjacencyMatrix> {
    let text = read_text(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let n = header.split(',').count();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| err(idx + 1, format!("cannot parse `{f}`")))
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(err(idx + 1, format!("expected {n} fields, found {}", row.len())));
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(err(n + 1, format!("expected {n} rows, found {}", rows.len())));
    }
    AdjacencyMatrix::from_rows(&rows)
}

/// `target,source,weight` rows for every nonzero entry; `target` is the row.
pub fn save_edge_list(a: &AdjacencyMatrix, path: &Path) -> Result<()> {
    let mut s = String::from("target,source,weight\n");
    for i in 0..a.n() {
        for j in 0..a.n() {
            let w = a.get(i, j);
            if w != 0.0 {
                let _ = writeln!(s, "{i},{j},{}", fmt_f64(w));
            }
        }
    }
    write_text(path, &s)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkModelFile {
    library: BasisLibrary,
    nodes: usize,
    /// One row of coefficients per node, in library order.
    coefficients: Vec<Vec<f64>>,
    adjacency: AdjacencyMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
enum ModelFile {
    Asind(NetworkModelFile),
    Sindy(SindyModel),
}

/// Either kind of fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Asind(IdentifiedModel),
    Sindy(SindyModel),
}

impl FittedModel {
    pub fn method(&self) -> &'static str {
        match self {
            FittedModel::Asind(_) => "asind",
            FittedModel::Sindy(_) => "sindy",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            FittedModel::Asind(m) => m.n(),
            FittedModel::Sindy(m) => m.n(),
        }
    }

    pub fn equations(&self) -> String {
        match self {
            FittedModel::Asind(m) => m.equations(),
            FittedModel::Sindy(m) => m.equations(),
        }
    }
}

impl Predictor for FittedModel {
    fn rollout(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory> {
        match self {
            FittedModel::Asind(m) => m.rollout(x0, dt, steps),
            FittedModel::Sindy(m) => m.rollout(x0, dt, steps),
        }
    }
    fn network(&self) -> AdjacencyMatrix {
        match self {
            FittedModel::Asind(m) => m.network(),
            FittedModel::Sindy(m) => m.network(),
        }
    }
}

pub fn model_to_json(model: &FittedModel) -> Result<String> {
    let file = match model {
        FittedModel::Asind(m) => ModelFile::Asind(NetworkModelFile {
            library: m.library.clone(),
            nodes: m.n(),
            coefficients: (0..m.n()).map(|i| m.coefficients(i)).collect(),
            adjacency: m.a_hat.clone(),
        }),
        FittedModel::Sindy(m) => ModelFile::Sindy(m.clone()),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

fn model_from_file(file: ModelFile) -> Result<FittedModel> {
    match file {
        ModelFile::Asind(f) => {
            let width = f.library.width();
            if f.coefficients.len() != f.nodes || f.coefficients.iter().any(|r| r.len() != width) {
                return Err(Error::Shape(format!("coefficients must be {} × {width}", f.nodes)));
            }
            if f.adjacency.n() != f.nodes {
                return Err(Error::Shape(format!("adjacency must be {0} × {0}", f.nodes)));
            }
            let w = DMatrix::from_fn(f.nodes, width, |i, m| f.coefficients[i][m]);
            Ok(FittedModel::Asind(IdentifiedModel {
                w,
                a_hat: f.adjacency,
                library: f.library,
            }))
        }
        ModelFile::Sindy(m) => {
            if m.coefficients.len() != m.library.len() || m.coefficients.iter().any(|r| r.len() != m.library.n) {
                return Err(Error::Shape(format!(
                    "coefficients must be {} × {}",
                    m.library.len(),
                    m.library.n
                )));
            }
            Ok(FittedModel::Sindy(m))
        }
    }
}

pub fn save_fitted(model: &FittedModel, path: &Path) -> Result<()> {
    write_text(path, &model_to_json(model)?)?;
    write_text(&path.with_extension("eqs.txt"), &model.equations())
}

pub fn load_fitted(path: &Path) -> Result<FittedModel> {
    model_from_file(read_json(path)?)
}

pub fn save_model(model: &IdentifiedModel, path: &Path) -> Result<()> {
    save_fitted(&FittedModel::Asind(model.clone()), path)
}

/// Loads a network model; a SINDy file is rejected.
pub fn load_model(path: &Path) -> Result<IdentifiedModel> {
    match load_fitted(path)? {
        FittedModel::Asind(m) => Ok(m),
        FittedModel::Sindy(_) => Err(Error::Config(format!(
            "{} holds a sindy model, expected asind",
            path.display()
        ))),
    }
}

/// `iteration,objective` rows.
pub fn save_objective_trace(trace: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("iteration,objective\n");
    for (k, v) in trace.iter().enumerate() {
        let _ = writeln!(s, "{k},{}", fmt_f64(*v));
    }
    write_text(path, &s)
}
