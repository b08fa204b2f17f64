//! SINDy baseline: sequential thresholded least squares over a polynomial
//! library of all node states, with no knowledge of the network.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_rk4, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{lstsq, psd_solve};
use crate::netgen::AdjacencyMatrix;

fn default_order() -> u32 {
    2
}
fn default_threshold() -> f64 {
    0.05
}
fn default_ridge() -> f64 {
    1e-6
}
fn default_max_rounds() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SindyConfig {
    #[serde(default = "default_order")]
    pub order: u32,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Append `sin(x_j)`, `cos(x_j)` features.
    #[serde(default)]
    pub trig: bool,
}

impl Default for SindyConfig {
    fn default() -> Self {
        Self {
            order: default_order(),
            threshold: default_threshold(),
            ridge: default_ridge(),
            max_rounds: default_max_rounds(),
            trig: false,
        }
    }
}

/// Monomials up to `order` over `n` variables: constant, `x_j`, then
/// `x_j·x_k` for `j ≤ k`; optionally `sin(x_j)`, `cos(x_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyLibrary {
    pub n: usize,
    pub order: u32,
    pub trig: bool,
}

impl PolyLibrary {
    pub fn new(n: usize, order: u32, trig: bool) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(Error::Parameter(format!(
                "polynomial order {order} unsupported (1 or 2)"
            )));
        }
        Ok(Self { n, order, trig })
    }

    pub fn len(&self) -> usize {
        let quad = if self.order >= 2 { self.n * (self.n + 1) / 2 } else { 0 };
        let trig = if self.trig { 2 * self.n } else { 0 };
        1 + self.n + quad + trig
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["1".to_string()];
        names.extend((0..self.n).map(|j| format!("x_{j}")));
        if self.order >= 2 {
            for j in 0..self.n {
                for k in j..self.n {
                    names.push(if j == k {
                        format!("x_{j}^2")
                    } else {
                        format!("x_{j}*x_{k}")
                    });
                }
            }
        }
        if self.trig {
            names.extend((0..self.n).map(|j| format!("sin(x_{j})")));
            names.extend((0..self.n).map(|j| format!("cos(x_{j})")));
        }
        names
    }

    /// Nodes each feature depends on.
    pub fn feature_nodes(&self) -> Vec<Vec<usize>> {
        let mut deps = vec![vec![]];
        deps.extend((0..self.n).map(|j| vec![j]));
        if self.order >= 2 {
            for j in 0..self.n {
                for k in j..self.n {
                    deps.push(if j == k { vec![j] } else { vec![j, k] });
                }
            }
        }
        if self.trig {
            deps.extend((0..self.n).map(|j| vec![j]));
            deps.extend((0..self.n).map(|j| vec![j]));
        }
        deps
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out[0] = 1.0;
        out[1..=n].copy_from_slice(x);
        let mut k = n + 1;
        if self.order >= 2 {
            for j in 0..n {
                for l in j..n {
                    out[k] = x[j] * x[l];
                    k += 1;
                }
            }
        }
        if self.trig {
            for j in 0..n {
                out[k] = x[j].sin();
                k += 1;
            }
            for j in 0..n {
                out[k] = x[j].cos();
                k += 1;
            }
        }
    }

    /// T × features evaluation matrix.
    pub fn features(&self, states: &DMatrix<f64>) -> DMatrix<f64> {
        let t_len = states.nrows();
        let mut theta = DMatrix::zeros(t_len, self.len());
        let mut row = vec![0.0; self.len()];
        for t in 0..t_len {
            let x: Vec<f64> = states.row(t).iter().copied().collect();
            self.eval_into(&x, &mut row);
            for (k, &v) in row.iter().enumerate() {
                theta[(t, k)] = v;
            }
        }
        theta
    }
}

/// Monomial features of `states` up to `order` (1 or 2).
pub fn build_poly_features(states: &DMatrix<f64>, order: u32) -> Result<DMatrix<f64>> {
    Ok(PolyLibrary::new(states.ncols(), order, false)?.features(states))
}

/// Sequential thresholded least squares, column by column: ridge regression,
/// zero coefficients below `threshold`, re-solve on the survivors, until the
/// support stops changing or `max_rounds` is reached.
pub fn stlsq(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    threshold: f64,
    ridge: f64,
    max_rounds: usize,
) -> Result<DMatrix<f64>> {
    if threshold < 0.0 || ridge < 0.0 {
        return Err(Error::Parameter("threshold and ridge must be nonnegative".into()));
    }
    if features.nrows() != targets.nrows() {
        return Err(Error::Shape(format!(
            "features have {} rows, targets {}",
            features.nrows(),
            targets.nrows()
        )));
    }
    let p = features.ncols();
    let gram = features.tr_mul(features);
    let columns: Vec<DVector<f64>> = (0..targets.ncols())
        .into_par_iter()
        .map(|c| {
            let y = targets.column(c).into_owned();
            let rhs = features.tr_mul(&y);
            let solve = |support: &[usize]| -> DVector<f64> {
                let sub = DVector::from_fn(support.len(), |a, _| rhs[support[a]]);
                let mut g = DMatrix::from_fn(support.len(), support.len(), |a, b| gram[(support[a], support[b])]);
                if ridge > 0.0 {
                    for k in 0..support.len() {
                        g[(k, k)] += ridge;
                    }
                    if let Some(ch) = g.clone().cholesky() {
                        return ch.solve(&sub);
                    }
                    if let Some(x) = psd_solve(&g, &sub) {
                        return x;
                    }
                }
                let cols = DMatrix::from_fn(features.nrows(), support.len(), |t, k| features[(t, support[k])]);
                lstsq(&cols, &y)
            };
            let mut support: Vec<usize> = (0..p).collect();
            let mut coef = solve(&support);
            for _ in 0..max_rounds {
                let next: Vec<usize> = support
                    .iter()
                    .zip(coef.iter())
                    .filter(|(_, c)| c.abs() >= threshold)
                    .map(|(&k, _)| k)
                    .collect();
                if next.len() == support.len() {
                    break;
                }
                support = next;
                if support.is_empty() {
                    coef = DVector::zeros(0);
                    break;
                }
                coef = solve(&support);
            }
            let mut full = DVector::zeros(p);
            for (&k, &c) in support.iter().zip(coef.iter()) {
                full[k] = c;
            }
            full
        })
        .collect();
    Ok(DMatrix::from_columns(&columns))
}

/// Fitted polynomial ODE: `ẋ = Θ(x)ᵀ ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyModel {
    pub library: PolyLibrary,
    pub feature_names: Vec<String>,
    /// features × N.
    pub coefficients: Vec<Vec<f64>>,
}

impl SindyModel {
    pub fn n(&self) -> usize {
        self.library.n
    }

    fn coef_matrix(&self) -> DMatrix<f64> {
        let p = self.coefficients.len();
        DMatrix::from_fn(p, self.n(), |k, i| self.coefficients[k][i])
    }

    pub fn predict(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory> {
        if x0.len() != self.n() {
            return Err(Error::Shape(format!(
                "x0 has {} entries, model has {} nodes",
                x0.len(),
                self.n()
            )));
        }
        let xi = self.coef_matrix();
        let mut theta = vec![0.0; self.library.len()];
        rollout_rk4(
            |x, out| {
                self.library.eval_into(x, &mut theta);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = xi.column(i).iter().zip(&theta).map(|(c, f)| c * f).sum();
                }
            },
            x0,
            dt,
            steps,
        )
    }

    /// Network implied by the fitted coefficients: `j` influences `i` when a
    /// nonzero term of node `i` involves `x_j`.
    pub fn implied_network(&self) -> AdjacencyMatrix {
        let n = self.n();
        let mut a = AdjacencyMatrix::zeros(n);
        for (k, deps) in self.library.feature_nodes().iter().enumerate() {
            for i in 0..n {
                if self.coefficients[k][i] != 0.0 {
                    for &j in deps {
                        a.set(i, j, 1.0);
                    }
                }
            }
        }
        a
    }

    pub fn equations(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n() {
            let terms: Vec<String> = self
                .feature_names
                .iter()
                .zip(&self.coefficients)
                .filter(|(_, c)| c[i] != 0.0)
                .map(|(name, c)| {
                    if name == "1" {
                        format!("{:.6}", c[i])
                    } else {
                        format!("{:.6}*{name}", c[i])
                    }
                })
                .collect();
            let rhs = if terms.is_empty() {
                "0".to_string()
            } else {
                terms.join(" + ")
            };
            s.push_str(&format!("dx_{i}/dt = {}\n", rhs.replace("+ -", "- ")));
        }
        s
    }
}

pub fn fit_sindy(traj: &Trajectory, cfg: &SindyConfig) -> Result<SindyModel> {
    let deriv = traj
        .derivatives
        .as_ref()
        .ok_or_else(|| Error::Precondition("trajectory has no derivative series".into()))?;
    let library = PolyLibrary::new(traj.n(), cfg.order, cfg.trig)?;
    let theta = library.features(&traj.states);
    let xi = stlsq(&theta, deriv, cfg.threshold, cfg.ridge, cfg.max_rounds)?;
    Ok(SindyModel {
        library,
        feature_names: library.feature_names(),
        coefficients: (0..xi.nrows()).map(|k| xi.row(k).iter().copied().collect()).collect(),
    })
}

pub fn predict_sindy(model: &SindyModel, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory> {
    model.predict(x0, dt, steps)
}
