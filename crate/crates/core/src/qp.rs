//! Nonnegative quadratic programs of the form
//!
//! ```text
//! minimize  cᵀz + λᵀ(y − Bz) + (ρ/2)‖y − Bz‖²   subject to z ≥ 0
//! ```
//!
//! which is the shape of both the adjacency subproblem and the split
//! coefficient subproblem. The solver is accelerated projected gradient with
//! step `1/L`, `L` the largest eigenvalue of `ρBᵀB`, with function-value
//! restarts so the iterates never increase the objective. Every few iterations
//! the current face is minimized exactly (Cholesky on the free block plus a
//! feasibility-preserving line search), which finishes off the ill-conditioned
//! instances that plain projected gradient crawls on.

use nalgebra::{DMatrix, DVector};

use crate::basis::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::{largest_eigenvalue, psd_solve};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 50_000;

/// Iterations between exact face minimizations.
const POLISH_EVERY: usize = 10;
/// Safety margin on the power-iteration Lipschitz estimate.
const LIPSCHITZ_MARGIN: f64 = 1.05;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub design: DesignMatrix,
    pub multiplier: DVector<f64>,
    pub penalty: f64,
    pub linear_cost: DVector<f64>,
}

impl QpProblem {
    /// Problem with all-ones linear cost.
    pub fn new(design: DesignMatrix, multiplier: DVector<f64>, penalty: f64) -> Result<Self> {
        let cols = design.cols();
        Self::with_cost(design, multiplier, penalty, DVector::from_element(cols, 1.0))
    }

    pub fn with_cost(
        design: DesignMatrix,
        multiplier: DVector<f64>,
        penalty: f64,
        linear_cost: DVector<f64>,
    ) -> Result<Self> {
        if !(penalty > 0.0) || !penalty.is_finite() {
            return Err(Error::Parameter(format!("penalty {penalty} must be positive")));
        }
        if multiplier.len() != design.rows() {
            return Err(Error::Shape(format!(
                "multiplier has {} entries, design has {} rows",
                multiplier.len(),
                design.rows()
            )));
        }
        if linear_cost.len() != design.cols() {
            return Err(Error::Shape(format!(
                "linear cost has {} entries, design has {} columns",
                linear_cost.len(),
                design.cols()
            )));
        }
        if linear_cost.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(Error::Parameter("linear cost must be finite and nonnegative".into()));
        }
        if multiplier.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("multiplier must be finite".into()));
        }
        Ok(Self {
            design,
            multiplier,
            penalty,
            linear_cost,
        })
    }

    /// Objective at `z` evaluated directly from the definition.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let r = &self.design.target - &self.design.entries * z;
        self.linear_cost.dot(z) + self.multiplier.dot(&r) + 0.5 * self.penalty * r.norm_squared()
    }

    /// Objective gradient `c − Bᵀλ + ρBᵀ(Bz − y)`.
    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let b = &self.design.entries;
        let r = &self.design.target - b * z;
        &self.linear_cost - b.tr_mul(&self.multiplier) - b.tr_mul(&r) * self.penalty
    }

    pub fn quadratic(&self) -> NnQuadratic {
        let b = &self.design.entries;
        let y = &self.design.target;
        let rho = self.penalty;
        let h = b.tr_mul(b) * rho;
        let q = &self.linear_cost - b.tr_mul(&self.multiplier) - b.tr_mul(y) * rho;
        let constant = self.multiplier.dot(y) + 0.5 * rho * y.norm_squared();
        let pinned = (0..b.ncols()).map(|k| b.column(k).iter().all(|&v| v == 0.0)).collect();
        NnQuadratic { h, q, constant, pinned }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration, when requested.
    pub trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub record_objective: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            record_objective: false,
        }
    }
}

/// `½zᵀHz + qᵀz + constant` over `z ≥ 0`; `pinned` variables are held at 0.
#[derive(Debug, Clone)]
pub struct NnQuadratic {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub constant: f64,
    pub pinned: Vec<bool>,
}

impl NnQuadratic {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.q.dot(z) + self.constant
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z + &self.q
    }

    /// `‖min(z, g(z))‖_∞`, with pinned variables contributing nothing.
    pub fn kkt_residual(&self, z: &DVector<f64>) -> f64 {
        let g = self.gradient(z);
        kkt_from_gradient(z, &g, &self.pinned)
    }

    pub fn solve(&self, start: Option<&DVector<f64>>, settings: QpSettings) -> QpSolution {
        let n = self.dim();
        let free: Vec<usize> = (0..n).filter(|&k| !self.pinned[k]).collect();
        let mut z = match start {
            Some(s) => DVector::from_fn(n, |k, _| if self.pinned[k] { 0.0 } else { s[k].max(0.0) }),
            None => DVector::zeros(n),
        };
        let mut trace = settings.record_objective.then(Vec::new);
        if free.is_empty() {
            return self.finish(z, 0, settings.tol, trace);
        }

        let h_free = DMatrix::from_fn(free.len(), free.len(), |a, b| self.h[(free[a], free[b])]);
        let lipschitz = largest_eigenvalue(&h_free) * LIPSCHITZ_MARGIN;
        if !(lipschitz > 0.0) {
            // H vanishes on the free block: the objective is linear there and
            // the origin is optimal whenever q ≥ 0.
            return self.finish(z, 0, settings.tol, trace);
        }
        let step = 1.0 / lipschitz;
        let project = |v: DVector<f64>| -> DVector<f64> {
            DVector::from_fn(n, |k, _| if self.pinned[k] { 0.0 } else { v[k].max(0.0) })
        };

        let mut f = self.objective(&z);
        let mut y = z.clone();
        let mut t = 1.0f64;
        let mut iters = 0;
        while iters < settings.max_iters {
            if iters % POLISH_EVERY == 0 {
                let polished = self.polish(&z);
                let fp = self.objective(&polished);
                if fp <= f {
                    z = polished;
                    f = fp;
                    y = z.clone();
                    t = 1.0;
                }
            }
            let g = self.gradient(&z);
            if kkt_from_gradient(&z, &g, &self.pinned) <= settings.tol {
                break;
            }
            iters += 1;

            let gy = self.gradient(&y);
            let mut z_next = project(&y - gy * step);
            let mut f_next = self.objective(&z_next);
            if f_next > f {
                t = 1.0;
                z_next = project(&z - g * step);
                f_next = self.objective(&z_next);
            }
            // Roundoff follows the size of the expanded terms, not of f.
            debug_assert!(
                f_next
                    <= f + 1e-9
                        * (f.abs() + 0.5 * z.dot(&(&self.h * &z)) + self.q.dot(&z).abs() + self.constant.abs())
                            .max(1.0),
                "projected gradient increased the objective: {f} -> {f_next}"
            );
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &z_next + (&z_next - &z) * ((t - 1.0) / t_next);
            t = t_next;
            if f_next <= f {
                z = z_next;
                f = f_next;
            }
            if let Some(tr) = trace.as_mut() {
                tr.push(f);
            }
        }
        self.finish(z, iters, settings.tol, trace)
    }

    fn finish(&self, z: DVector<f64>, iterations: usize, tol: f64, trace: Option<Vec<f64>>) -> QpSolution {
        let kkt_residual = self.kkt_residual(&z);
        QpSolution {
            objective: self.objective(&z),
            converged: kkt_residual <= tol,
            kkt_residual,
            iterations,
            z,
            trace,
        }
    }

    /// Minimizes over the face `{z_k = 0 for k ∉ S}`, `S` the current
    /// support, moving along the segment toward the face minimizer and
    /// dropping variables that hit zero first. Never increases the objective.
    fn polish(&self, z0: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut z = z0.clone();
        for _ in 0..=n {
            let support: Vec<usize> = (0..n).filter(|&k| !self.pinned[k] && z[k] > 0.0).collect();
            if support.is_empty() {
                break;
            }
            let hs = DMatrix::from_fn(support.len(), support.len(), |a, b| self.h[(support[a], support[b])]);
            let qs = DVector::from_fn(support.len(), |a, _| -self.q[support[a]]);
            let Some(target) = psd_solve(&hs, &qs) else {
                break;
            };
            let mut d = DVector::zeros(n);
            for (a, &k) in support.iter().enumerate() {
                d[k] = target[a] - z[k];
            }
            let slope = self.gradient(&z).dot(&d);
            if !(slope < 0.0) {
                break;
            }
            let curvature = d.dot(&(&self.h * &d));
            let exact = if curvature > 0.0 {
                -slope / curvature
            } else {
                f64::INFINITY
            };
            let mut limit = f64::INFINITY;
            let mut blocking = None;
            for &k in &support {
                if d[k] < 0.0 {
                    let tau = -z[k] / d[k];
                    if tau < limit {
                        limit = tau;
                        blocking = Some(k);
                    }
                }
            }
            if exact < limit {
                z.axpy(exact, &d, 1.0);
                z.apply(|v| *v = v.max(0.0));
                break;
            }
            if !limit.is_finite() {
                break;
            }
            z.axpy(limit, &d, 1.0);
            z.apply(|v| *v = v.max(0.0));
            if let Some(k) = blocking {
                z[k] = 0.0;
            }
        }
        z
    }
}

fn kkt_from_gradient(z: &DVector<f64>, g: &DVector<f64>, pinned: &[bool]) -> f64 {
    (0..z.len())
        .filter(|&k| !pinned[k])
        .map(|k| z[k].min(g[k]).abs())
        .fold(0.0, f64::max)
}

/// Solves from the origin.
pub fn solve_nn_qp(p: &QpProblem, tol: f64, max_iters: usize) -> QpSolution {
    solve_nn_qp_from(
        p,
        None,
        QpSettings {
            tol,
            max_iters,
            record_objective: false,
        },
    )
}

/// Solves from an optional warm start (projected onto the feasible set).
pub fn solve_nn_qp_from(p: &QpProblem, start: Option<&DVector<f64>>, settings: QpSettings) -> QpSolution {
    let quad = p.quadratic();
    let mut sol = quad.solve(start, settings);
    sol.objective = p.objective(&sol.z);
    sol
}

/// `‖min(z, g(z))‖_∞` for the problem's gradient `g`. Zero exactly at the
/// optimum. Columns of `B` that vanish identically are held at zero and do not
/// contribute.
pub fn kkt_residual(p: &QpProblem, z: &DVector<f64>) -> f64 {
    let g = p.gradient(z);
    let pinned: Vec<bool> = (0..z.len())
        .map(|k| p.design.entries.column(k).iter().all(|&v| v == 0.0))
        .collect();
    kkt_from_gradient(z, &g, &pinned)
}
