//! The four network dynamics models, RK4 integration, and finite-difference
//! derivative estimation.
//!
//! | model            | F(x_i)            | G(x_i, x_j)               |
//! |------------------|-------------------|---------------------------|
//! | Kuramoto         | ω_i               | (c/N)·sin(x_j − x_i)      |
//! | SIS              | −δ_i·x_i          | γ_i·(1 − x_i)·x_j         |
//! | Lotka–Volterra   | x_i(α_i − θ_i x_i)| −γ_i·x_i·x_j              |
//! | Michaelis–Menten | −x_i              | x_j^h / (1 + x_j^h)       |

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgen::AdjacencyMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Kuramoto,
    Sis,
    LotkaVolterra,
    MichaelisMenten,
}

impl Model {
    pub const ALL: [Model; 4] = [
        Model::Kuramoto,
        Model::Sis,
        Model::LotkaVolterra,
        Model::MichaelisMenten,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Model::Kuramoto => "kuramoto",
            Model::Sis => "sis",
            Model::LotkaVolterra => "lotka-volterra",
            Model::MichaelisMenten => "michaelis-menten",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Model::Kuramoto => "Kuramoto",
            Model::Sis => "SIS",
            Model::LotkaVolterra => "LV",
            Model::MichaelisMenten => "MM",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kuramoto" => Ok(Model::Kuramoto),
            "sis" => Ok(Model::Sis),
            "lotka-volterra" | "lv" => Ok(Model::LotkaVolterra),
            "michaelis-menten" | "mm" => Ok(Model::MichaelisMenten),
            other => Err(Error::Config(format!(
                "unknown model '{other}'; valid names: kuramoto, sis, lotka-volterra (lv), michaelis-menten (mm)"
            ))),
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// A fully parameterized dynamics model on `n` nodes.
///
/// Per-node vectors that a model does not use are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub model: Model,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omega: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta: Vec<f64>,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "two")]
    pub h: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

impl DynamicsSpec {
    pub fn kuramoto(omega: Vec<f64>, c: f64) -> Self {
        Self {
            model: Model::Kuramoto,
            n: omega.len(),
            omega,
            delta: vec![],
            gamma: vec![],
            alpha: vec![],
            theta: vec![],
            c,
            h: 2.0,
        }
    }

    pub fn sis(delta: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self {
            model: Model::Sis,
            n: delta.len(),
            omega: vec![],
            delta,
            gamma,
            alpha: vec![],
            theta: vec![],
            c: 1.0,
            h: 2.0,
        }
    }

    pub fn lotka_volterra(alpha: Vec<f64>, theta: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self {
            model: Model::LotkaVolterra,
            n: alpha.len(),
            omega: vec![],
            delta: vec![],
            gamma,
            alpha,
            theta,
            c: 1.0,
            h: 2.0,
        }
    }

    pub fn michaelis_menten(n: usize, h: f64) -> Self {
        Self {
            model: Model::MichaelisMenten,
            n,
            omega: vec![],
            delta: vec![],
            gamma: vec![],
            alpha: vec![],
            theta: vec![],
            c: 1.0,
            h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != self.n {
                return Err(Error::Parameter(format!(
                    "{} needs {} values of {name}, got {}",
                    self.model,
                    self.n,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be finite")));
            }
            Ok(())
        };
        match self.model {
            Model::Kuramoto => {
                need("omega", &self.omega)?;
                if !(self.c > 0.0) {
                    return Err(Error::Parameter(format!("coupling c = {} must be positive", self.c)));
                }
            }
            Model::Sis => {
                need("delta", &self.delta)?;
                need("gamma", &self.gamma)?;
                if self.delta.iter().any(|&d| d <= 0.0) {
                    return Err(Error::Parameter("SIS recovery rates must be positive".into()));
                }
                if self.gamma.iter().any(|&g| g < 0.0) {
                    return Err(Error::Parameter("SIS infection rates must be nonnegative".into()));
                }
            }
            Model::LotkaVolterra => {
                need("alpha", &self.alpha)?;
                need("theta", &self.theta)?;
                need("gamma", &self.gamma)?;
                if self.alpha.iter().chain(&self.theta).any(|&v| v <= 0.0) {
                    return Err(Error::Parameter("LV growth parameters must be positive".into()));
                }
            }
            Model::MichaelisMenten => {
                if !(self.h >= 1.0) {
                    return Err(Error::Parameter(format!(
                        "Hill coefficient h = {} must be >= 1",
                        self.h
                    )));
                }
            }
        }
        Ok(())
    }

    /// Self-dynamics term F(x_i).
    #[inline]
    pub fn eval_self(&self, i: usize, xi: f64) -> f64 {
        match self.model {
            Model::Kuramoto => self.omega[i],
            Model::Sis => -self.delta[i] * xi,
            Model::LotkaVolterra => xi * (self.alpha[i] - self.theta[i] * xi),
            Model::MichaelisMenten => -xi,
        }
    }

    /// Interaction term G(x_i, x_j).
    #[inline]
    pub fn eval_pair(&self, i: usize, _j: usize, xi: f64, xj: f64) -> f64 {
        match self.model {
            Model::Kuramoto => self.c / self.n as f64 * (xj - xi).sin(),
            Model::Sis => self.gamma[i] * (1.0 - xi) * xj,
            Model::LotkaVolterra => -self.gamma[i] * xi * xj,
            Model::MichaelisMenten => hill(xj, self.h),
        }
    }

    /// Writes F(x_i) + Σ_j A_ij G(x_i, x_j) into `out`. Summation order over
    /// `j` is fixed.
    pub fn rhs_into(&self, a: &AdjacencyMatrix, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let aij = a.get(i, j);
                if aij != 0.0 {
                    acc += aij * self.eval_pair(i, j, x[i], x[j]);
                }
            }
            out[i] = self.eval_self(i, x[i]) + acc;
        }
    }

    pub fn rhs(&self, a: &AdjacencyMatrix, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != a.n() || x.len() != self.n {
            return Err(Error::Shape(format!(
                "state has {} entries, network has {} nodes, model has {}",
                x.len(),
                a.n(),
                self.n
            )));
        }
        let mut out = vec![0.0; x.len()];
        self.rhs_into(a, x, &mut out);
        Ok(out)
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let p = |v: &Vec<f64>| {
            if v.is_empty() {
                vec![]
            } else {
                perm.iter().map(|&k| v[k]).collect()
            }
        };
        Self {
            omega: p(&self.omega),
            delta: p(&self.delta),
            gamma: p(&self.gamma),
            alpha: p(&self.alpha),
            theta: p(&self.theta),
            ..self.clone()
        }
    }
}

/// Saturating Hill term x^h / (1 + x^h); negative inputs are treated as 0.
#[inline]
pub fn hill(x: f64, h: f64) -> f64 {
    let p = if h == 2.0 { x * x } else { x.max(0.0).powf(h) };
    p / (1.0 + p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    SimulatedExact,
    Estimated,
}

/// Uniformly sampled node states, sample-major: `states[(t, i)]` is node `i`
/// at time `t·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: DMatrix<f64>,
    pub derivatives: Option<DMatrix<f64>>,
    pub origin: Origin,
}

impl Trajectory {
    pub fn new(dt: f64, states: DMatrix<f64>, derivatives: Option<DMatrix<f64>>, origin: Origin) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("dt = {dt} must be positive")));
        }
        if let Some((t, i)) = first_non_finite(&states) {
            return Err(Error::Parameter(format!("state ({t},{i}) is not finite")));
        }
        if let Some(d) = &derivatives {
            if d.shape() != states.shape() {
                return Err(Error::Shape(format!(
                    "derivatives {:?} do not match states {:?}",
                    d.shape(),
                    states.shape()
                )));
            }
        }
        Ok(Self {
            dt,
            states,
            derivatives,
            origin,
        })
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.states.ncols()
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, t: usize) -> Vec<f64> {
        self.states.row(t).iter().copied().collect()
    }

    pub fn last_state(&self) -> Vec<f64> {
        self.state(self.len() - 1)
    }

    /// Samples `[start, end)` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        let rows = end - start;
        Trajectory {
            dt: self.dt,
            states: self.states.rows(start, rows).into_owned(),
            derivatives: self.derivatives.as_ref().map(|d| d.rows(start, rows).into_owned()),
            origin: self.origin,
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Trajectory {
        let p = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |t, k| m[(t, perm[k])]);
        Trajectory {
            dt: self.dt,
            states: p(&self.states),
            derivatives: self.derivatives.as_ref().map(p),
            origin: self.origin,
        }
    }

    /// Derivative series, estimating them first if absent.
    pub fn with_derivatives(self) -> Result<Trajectory> {
        if self.derivatives.is_some() {
            Ok(self)
        } else {
            estimate_derivatives(&self)
        }
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for t in 0..m.nrows() {
        for i in 0..m.ncols() {
            if !m[(t, i)].is_finite() {
                return Some((t, i));
            }
        }
    }
    None
}

/// Classic RK4 over an arbitrary right-hand side. Returns `steps + 1` samples
/// with the right-hand side evaluated at every sample as the derivative
/// series.
pub fn rollout_rk4<F>(mut f: F, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt = {dt} must be positive")));
    }
    if steps < 1 {
        return Err(Error::Parameter("steps must be at least 1".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("initial state must be finite".into()));
    }
    let n = x0.len();
    let mut states = DMatrix::zeros(steps + 1, n);
    let mut derivs = DMatrix::zeros(steps + 1, n);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..=steps {
        f(&x, &mut k1);
        if k1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        for i in 0..n {
            states[(step, i)] = x[i];
            derivs[(step, i)] = k1[i];
        }
        if step == steps {
            break;
        }
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        f(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        f(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        f(&tmp, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: step + 1 });
        }
    }
    Trajectory::new(dt, states, Some(derivs), Origin::SimulatedExact)
}

/// Integrates the network dynamics from `x0` for `steps` RK4 steps.
pub fn integrate_rk4(
    spec: &DynamicsSpec,
    a: &AdjacencyMatrix,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    if x0.len() != a.n() || x0.len() != spec.n {
        return Err(Error::Shape(format!(
            "x0 has {} entries, network has {} nodes, model has {}",
            x0.len(),
            a.n(),
            spec.n
        )));
    }
    rollout_rk4(|x, out| spec.rhs_into(a, x, out), x0, dt, steps)
}

/// Fills the derivative series by finite differences: central differences in
/// the interior, second-order one-sided differences at both ends.
pub fn estimate_derivatives(traj: &Trajectory) -> Result<Trajectory> {
    let t_len = traj.len();
    if t_len < 3 {
        return Err(Error::InsufficientData(format!(
            "derivative estimation needs at least 3 samples, got {t_len}"
        )));
    }
    let x = &traj.states;
    let h = traj.dt;
    let n = traj.n();
    let last = t_len - 1;
    let d = DMatrix::from_fn(t_len, n, |t, i| {
        if t == 0 {
            (-3.0 * x[(0, i)] + 4.0 * x[(1, i)] - x[(2, i)]) / (2.0 * h)
        } else if t == last {
            (3.0 * x[(last, i)] - 4.0 * x[(last - 1, i)] + x[(last - 2, i)]) / (2.0 * h)
        } else {
            (x[(t + 1, i)] - x[(t - 1, i)]) / (2.0 * h)
        }
    });
    Ok(Trajectory {
        dt: traj.dt,
        states: traj.states.clone(),
        derivatives: Some(d),
        origin: Origin::Estimated,
    })
}

/// True when every sample lies in [0, 1] (the SIS invariant region).
pub fn within_unit_interval(traj: &Trajectory) -> bool {
    traj.states.iter().all(|&v| (0.0..=1.0).contains(&v))
}

fn default_omega_range() -> (f64, f64) {
    (-1.0, 1.0)
}
fn default_delta() -> f64 {
    0.5
}
fn default_sis_gamma() -> f64 {
    0.2
}
fn default_lv_gamma() -> f64 {
    0.1
}

/// Scalar parameter settings from which a [`DynamicsSpec`] and an initial
/// state are drawn for a given node count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSettings {
    pub model: Model,
    #[serde(default = "default_omega_range")]
    pub omega_range: (f64, f64),
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_sis_gamma")]
    pub sis_gamma: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "default_lv_gamma")]
    pub lv_gamma: f64,
    #[serde(default = "two")]
    pub h: f64,
    /// Overrides the model's default initial-state range.
    #[serde(default)]
    pub init_range: Option<(f64, f64)>,
}

impl DynamicsSettings {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            omega_range: default_omega_range(),
            c: 1.0,
            delta: default_delta(),
            sis_gamma: default_sis_gamma(),
            alpha: 1.0,
            theta: 1.0,
            lv_gamma: default_lv_gamma(),
            h: 2.0,
            init_range: None,
        }
    }

    pub fn init_range(&self) -> (f64, f64) {
        self.init_range.unwrap_or(match self.model {
            Model::Kuramoto => (0.0, 2.0 * PI),
            Model::Sis => (0.1, 0.9),
            Model::LotkaVolterra | Model::MichaelisMenten => (0.5, 1.5),
        })
    }

    /// Draws per-node parameters and the initial state. Parameters and the
    /// initial state use separate RNG streams of the same seed.
    pub fn instantiate(&self, n: usize, seed: u64) -> Result<(DynamicsSpec, Vec<f64>)> {
        let mut prng = ChaCha8Rng::seed_from_u64(seed);
        prng.set_stream(1);
        let spec = match self.model {
            Model::Kuramoto => {
                let (lo, hi) = self.omega_range;
                let omega = (0..n).map(|_| uniform(&mut prng, lo, hi)).collect();
                DynamicsSpec::kuramoto(omega, self.c)
            }
            Model::Sis => DynamicsSpec::sis(vec![self.delta; n], vec![self.sis_gamma; n]),
            Model::LotkaVolterra => {
                DynamicsSpec::lotka_volterra(vec![self.alpha; n], vec![self.theta; n], vec![self.lv_gamma; n])
            }
            Model::MichaelisMenten => DynamicsSpec::michaelis_menten(n, self.h),
        };
        spec.validate()?;
        let mut xrng = ChaCha8Rng::seed_from_u64(seed);
        xrng.set_stream(2);
        let (lo, hi) = self.init_range();
        let x0 = (0..n).map(|_| uniform(&mut xrng, lo, hi)).collect();
        Ok((spec, x0))
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_sis() -> (DynamicsSpec, AdjacencyMatrix) {
        let spec = DynamicsSpec::sis(vec![0.5, 0.5], vec![0.2, 0.2]);
        let a = AdjacencyMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        (spec, a)
    }

    #[test]
    fn self_terms() {
        let k = DynamicsSpec::kuramoto(vec![0.3, -0.7], 1.0);
        assert_eq!(k.eval_self(1, 123.0), -0.7);
        let s = DynamicsSpec::sis(vec![0.5], vec![0.2]);
        assert_eq!(s.eval_self(0, 2.0), -1.0);
        let lv = DynamicsSpec::lotka_volterra(vec![1.0], vec![1.0], vec![0.1]);
        assert_eq!(lv.eval_self(0, 0.5), 0.25);
    }

    #[test]
    fn pair_terms() {
        let k = DynamicsSpec::kuramoto(vec![0.3, -0.7], 1.0);
        assert_eq!(k.eval_pair(0, 1, 0.4, 0.4), 0.0);
        let s = DynamicsSpec::sis(vec![0.5], vec![0.2]);
        assert_eq!(s.eval_pair(0, 1, 1.0, 0.77), 0.0);
        let mm = DynamicsSpec::michaelis_menten(2, 2.0);
        assert_eq!(mm.eval_pair(0, 1, 0.3, 1.0), 0.5);
    }

    #[test]
    fn rhs_cases() {
        let (spec, a) = pair_sis();
        let r = spec.rhs(&a, &[0.5, 0.5]).unwrap();
        for v in r {
            assert!((v - (-0.25 + 0.2 * 0.5 * 0.5)).abs() < 1e-15);
        }
        let k = DynamicsSpec::kuramoto(vec![0.1, 0.2, 0.3], 2.0);
        let full =
            AdjacencyMatrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(k.rhs(&full, &[1.0, 1.0, 1.0]).unwrap(), vec![0.1, 0.2, 0.3]);
        let zero = AdjacencyMatrix::zeros(2);
        assert_eq!(spec.rhs(&zero, &[0.2, 0.4]).unwrap(), vec![-0.1, -0.2]);
        assert!(spec.rhs(&a, &[0.1]).is_err());
    }

    #[test]
    fn rk4_decay_matches_exponential() {
        let spec = DynamicsSpec::sis(vec![1.0], vec![0.0]);
        let a = AdjacencyMatrix::zeros(1);
        let tr = integrate_rk4(&spec, &a, &[1.0], 0.01, 100).unwrap();
        assert_eq!(tr.len(), 101);
        assert!((tr.states[(100, 0)] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.origin, Origin::SimulatedExact);
    }

    #[test]
    fn rk4_constant_when_static() {
        let spec = DynamicsSpec::kuramoto(vec![0.0; 3], 5.0);
        let a = AdjacencyMatrix::zeros(3);
        let tr = integrate_rk4(&spec, &a, &[0.1, 2.0, 3.0], 0.1, 20).unwrap();
        for t in 0..tr.len() {
            assert_eq!(tr.state(t), vec![0.1, 2.0, 3.0]);
        }
    }

    #[test]
    fn rk4_fourth_order() {
        let (spec, a) = pair_sis();
        let x0 = [0.7, 0.2];
        let reference = integrate_rk4(&spec, &a, &x0, 1e-5, 100_000).unwrap().last_state();
        let err = |dt: f64, steps: usize| {
            let end = integrate_rk4(&spec, &a, &x0, dt, steps).unwrap().last_state();
            end.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.2, 5) / err(0.1, 10);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rk4_reports_divergence() {
        // f(2) = 2^302 is finite, but the first stage update pushes x past
        // 1e90 and the next evaluation overflows
        let r = rollout_rk4(|x, out| out[0] = x[0] * x[0] * x[0].abs().powf(300.0), &[2.0], 0.5, 50);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn derivative_estimates() {
        let dt = 0.01;
        let lin = DMatrix::from_fn(50, 1, |t, _| 3.0 * t as f64 * dt);
        let tr = Trajectory::new(dt, lin, None, Origin::Estimated).unwrap();
        let d = estimate_derivatives(&tr).unwrap();
        assert!(d.derivatives.unwrap().iter().all(|v| (v - 3.0).abs() < 1e-10));

        let quad = DMatrix::from_fn(50, 1, |t, _| (t as f64 * dt).powi(2));
        let d = estimate_derivatives(&Trajectory::new(dt, quad, None, Origin::Estimated).unwrap()).unwrap();
        let dd = d.derivatives.unwrap();
        for t in 1..49 {
            assert!((dd[(t, 0)] - 2.0 * t as f64 * dt).abs() < 1e-10);
        }

        let sin = DMatrix::from_fn(700, 1, |t, _| (t as f64 * dt).sin());
        let d = estimate_derivatives(&Trajectory::new(dt, sin, None, Origin::Estimated).unwrap()).unwrap();
        let dd = d.derivatives.unwrap();
        let max_err = (1..699)
            .map(|t| (dd[(t, 0)] - (t as f64 * dt).cos()).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= dt * dt / 6.0 + 1e-12, "{max_err}");
        assert_eq!(d.origin, Origin::Estimated);
    }

    #[test]
    fn derivative_estimation_needs_three_samples() {
        let tr = Trajectory::new(0.1, DMatrix::zeros(2, 3), None, Origin::Estimated).unwrap();
        assert!(matches!(estimate_derivatives(&tr), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn trajectory_validation() {
        let mut m = DMatrix::zeros(3, 2);
        m[(1, 1)] = f64::NAN;
        assert!(Trajectory::new(0.1, m, None, Origin::Estimated).is_err());
        assert!(Trajectory::new(0.0, DMatrix::zeros(3, 2), None, Origin::Estimated).is_err());
        assert!(Trajectory::new(0.1, DMatrix::zeros(3, 2), Some(DMatrix::zeros(2, 2)), Origin::Estimated).is_err());
    }

    #[test]
    fn sis_stays_in_unit_box() {
        let settings = DynamicsSettings::new(Model::Sis);
        let a = crate::netgen::gen_er(16, 0.1, 3).unwrap();
        let (spec, x0) = settings.instantiate(16, 3).unwrap();
        let tr = integrate_rk4(&spec, &a, &x0, 0.01, 600).unwrap();
        assert!(within_unit_interval(&tr));
    }

    #[test]
    fn spec_validation() {
        assert!(DynamicsSpec::sis(vec![0.0], vec![0.2]).validate().is_err());
        assert!(DynamicsSpec::kuramoto(vec![0.1], 0.0).validate().is_err());
        assert!(DynamicsSpec::michaelis_menten(3, 0.5).validate().is_err());
        assert!(DynamicsSpec::lotka_volterra(vec![1.0], vec![-1.0], vec![0.1])
            .validate()
            .is_err());
    }
}
