//! Prediction and structure metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::alternating::IdentifiedModel;
use crate::dynamics::{integrate_rk4, DynamicsSpec, Trajectory};
use crate::error::{Error, Result};
use crate::netgen::AdjacencyMatrix;
use crate::sindy::SindyModel;

pub const MAPE_EPS: f64 = 1e-8;
pub const DEFAULT_HORIZON: usize = 100;

fn same_shape(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction is {:?}, truth is {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

pub fn rmse_states(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    same_shape(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error; not symmetric in its arguments.
pub fn mape_states(pred: &DMatrix<f64>, truth: &DMatrix<f64>, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("mape eps must be positive, got {eps}")));
    }
    same_shape(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t).abs() / t.abs().max(eps))
        .sum();
    Ok(100.0 * s / pred.len() as f64)
}

/// Root mean squared error over all T·N entries.
pub fn rmse(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    rmse_states(&pred.states, &truth.states)
}

pub fn mape(pred: &Trajectory, truth: &Trajectory, eps: f64) -> Result<f64> {
    mape_states(&pred.states, &truth.states, eps)
}

/// Intersection over union (percent) of the off-diagonal supports `> tol`.
pub fn jaccard(a: &AdjacencyMatrix, a_hat: &AdjacencyMatrix, tol: f64) -> Result<f64> {
    if a.n() != a_hat.n() {
        return Err(Error::Shape(format!("networks have {} and {} nodes", a.n(), a_hat.n())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..a.n() {
        for j in 0..a.n() {
            if i == j {
                continue;
            }
            let (x, y) = (a.get(i, j) > tol, a_hat.get(i, j) > tol);
            inter += (x && y) as usize;
            union += (x || y) as usize;
        }
    }
    Ok(if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    })
}

/// Root mean squared error across nodes at each time row.
pub fn per_step_rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    same_shape(pred, truth)?;
    let n = pred.ncols().max(1) as f64;
    Ok((0..pred.nrows())
        .map(|t| {
            let ss: f64 = pred
                .row(t)
                .iter()
                .zip(truth.row(t).iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            (ss / n).sqrt()
        })
        .collect())
}

pub(crate) mod inf_float {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// Formats a metric for CSV output; infinite values print as `inf`.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.10e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "inf_float")]
    pub rmse: f64,
    #[serde(with = "inf_float")]
    pub mape: f64,
    pub jaccard: f64,
    pub horizon: usize,
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_step_errors: Option<Vec<f64>>,
}

impl MetricsReport {
    pub fn diverged(jaccard: f64, horizon: usize) -> Self {
        Self {
            rmse: f64::INFINITY,
            mape: f64::INFINITY,
            jaccard,
            horizon,
            diverged: true,
            per_step_errors: None,
        }
    }
}

/// Anything that can be rolled out from a state and exposes a network.
pub trait Predictor {
    fn rollout(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory>;
    fn network(&self) -> AdjacencyMatrix;
}

impl Predictor for IdentifiedModel {
    fn rollout(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory> {
        self.predict(x0, dt, steps)
    }
    fn network(&self) -> AdjacencyMatrix {
        self.a_hat.clone()
    }
}

impl Predictor for SindyModel {
    fn rollout(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory> {
        self.predict(x0, dt, steps)
    }
    fn network(&self) -> AdjacencyMatrix {
        self.implied_network()
    }
}

/// Scores a prediction against a given ground-truth continuation whose
/// first row is the split state. Rows `1..=horizon` are compared.
pub fn score_prediction<P: Predictor + ?Sized>(
    model: &P,
    truth: &Trajectory,
    truth_a: &AdjacencyMatrix,
    jaccard_tol: f64,
) -> Result<MetricsReport> {
    let horizon = truth.len().saturating_sub(1);
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    let j = jaccard(truth_a, &model.network(), jaccard_tol)?;
    let pred = match model.rollout(&truth.state(0), truth.dt, horizon) {
        Ok(p) => p,
        Err(Error::Divergence { .. }) => return Ok(MetricsReport::diverged(j, horizon)),
        Err(e) => return Err(e),
    };
    let p = pred.states.rows(1, horizon).into_owned();
    let t = truth.states.rows(1, horizon).into_owned();
    let rmse = rmse_states(&p, &t)?;
    let mape = mape_states(&p, &t, MAPE_EPS)?;
    if !rmse.is_finite() || !mape.is_finite() {
        return Ok(MetricsReport::diverged(j, horizon));
    }
    Ok(MetricsReport {
        rmse,
        mape,
        jaccard: j,
        horizon,
        diverged: false,
        per_step_errors: Some(per_step_rmse(&p, &t)?),
    })
}

/// Rolls out the model and the ground truth from `x_split` for `horizon`
/// steps and compares them.
pub fn evaluate_run<P: Predictor + ?Sized>(
    model: &P,
    truth_spec: &DynamicsSpec,
    truth_a: &AdjacencyMatrix,
    x_split: &[f64],
    dt: f64,
    horizon: usize,
    jaccard_tol: f64,
) -> Result<MetricsReport> {
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    let truth = integrate_rk4(truth_spec, truth_a, x_split, dt, horizon)?;
    score_prediction(model, &truth, truth_a, jaccard_tol)
}
