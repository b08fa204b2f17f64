//! Alternating sparse identification of network dynamics.
//!
//! The sparse problem
//!
//! ```text
//! min Σ|w_im| + Σ A_ij   s.t.  ẋ_i = Σ_m w_im F_m(x_i) + Σ_m w_{i,M1+m} Σ_j A_ij G_m(x_i, x_j),  A ≥ 0
//! ```
//!
//! is relaxed into the augmented Lagrangian
//!
//! ```text
//! L(w, A, λ) = Σ|w| + ΣA + Σ_i λ_iᵀ r_i + (ρ/2) Σ_i ‖r_i‖²
//! ```
//!
//! with `r_i` the per-sample residual of node `i` and `λ_i` one multiplier per
//! sample. Each outer iteration minimizes `L` over `A` (a nonnegative QP per
//! row), then over `w` (a nonnegative QP per node after writing `w = u − v`,
//! `u, v ≥ 0`), then takes a multiplier ascent step `λ_i += α r_i`. All
//! per-node subproblems are independent and run in parallel.
//!
//! The product `w_pair · A_i` is invariant under `w_pair → s·w_pair`,
//! `A_i → A_i / s`. After fitting, each row of `Â` is rescaled so its largest
//! entry is 1, which puts the pair coefficients on the scale of a binary
//! network.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisLibrary, DesignMatrix, NodeFeatures};
use crate::dynamics::{rollout_rk4, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::netgen::AdjacencyMatrix;
use crate::qp::{self, QpProblem, QpSettings};

fn default_penalty() -> f64 {
    10.0
}
fn default_outer_max_iters() -> usize {
    200
}
fn default_outer_tol() -> f64 {
    1e-6
}
fn default_qp_tol() -> f64 {
    qp::DEFAULT_TOL
}
fn default_qp_max_iters() -> usize {
    qp::DEFAULT_MAX_ITERS
}
fn default_threshold() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn default_refit_rounds() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsindConfig {
    /// Augmented-Lagrangian penalty ρ.
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    /// Multiplier ascent step α; `None` uses ρ.
    #[serde(default)]
    pub multiplier_step: Option<f64>,
    #[serde(default = "default_outer_max_iters")]
    pub outer_max_iters: usize,
    /// Stop once the max-norm change of `(w, Â)` drops to this.
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "default_qp_tol")]
    pub qp_tol: f64,
    #[serde(default = "default_qp_max_iters")]
    pub qp_max_iters: usize,
    #[serde(default = "default_threshold")]
    pub threshold_w: f64,
    #[serde(default = "default_threshold")]
    pub threshold_a: f64,
    #[serde(default = "default_true")]
    pub refit_on_support: bool,
    /// Off-diagonal value of the starting adjacency; `None` means `1/N`,
    /// so that every starting row sums to about one.
    #[serde(default)]
    pub initial_adjacency: Option<f64>,
    /// Also run from the empty network and keep, node by node, whichever
    /// start ends with the lower penalized objective.
    #[serde(default = "default_true")]
    pub empty_start: bool,
    /// Alternating least-squares rounds used by the support refit.
    #[serde(default = "default_refit_rounds")]
    pub refit_rounds: usize,
}

impl Default for AsindConfig {
    fn default() -> Self {
        Self {
            penalty: default_penalty(),
            multiplier_step: None,
            outer_max_iters: default_outer_max_iters(),
            outer_tol: default_outer_tol(),
            qp_tol: default_qp_tol(),
            qp_max_iters: default_qp_max_iters(),
            threshold_w: default_threshold(),
            threshold_a: default_threshold(),
            refit_on_support: true,
            initial_adjacency: None,
            empty_start: true,
            refit_rounds: default_refit_rounds(),
        }
    }
}

impl AsindConfig {
    pub fn alpha(&self) -> f64 {
        self.multiplier_step.unwrap_or(self.penalty)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("penalty", self.penalty),
            ("multiplier_step", self.alpha()),
            ("qp_tol", self.qp_tol),
            ("initial_adjacency", self.initial_adjacency.unwrap_or(1.0)),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.outer_tol < 0.0 || self.threshold_w < 0.0 || self.threshold_a < 0.0 {
            return Err(Error::Parameter("tolerances and thresholds must be nonnegative".into()));
        }
        if self.qp_max_iters == 0 {
            return Err(Error::Parameter("qp_max_iters must be positive".into()));
        }
        Ok(())
    }

    fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            max_iters: self.qp_max_iters,
            record_objective: false,
        }
    }
}

/// Per-node coefficients and estimated network; evaluable as an ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedModel {
    /// N × (M1 + M2).
    pub w: DMatrix<f64>,
    pub a_hat: AdjacencyMatrix,
    pub library: BasisLibrary,
}

impl IdentifiedModel {
    pub fn zeros(n: usize, library: BasisLibrary) -> Self {
        Self {
            w: DMatrix::zeros(n, library.width()),
            a_hat: AdjacencyMatrix::zeros(n),
            library,
        }
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn coefficients(&self, i: usize) -> Vec<f64> {
        self.w.row(i).iter().copied().collect()
    }

    pub fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        self.library.model_rhs_into(&self.w, self.a_hat.matrix(), x, out);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.a_hat.matrix().iter()).all(|v| v.is_finite())
    }

    /// RK4 rollout of the identified right-hand side (`steps + 1` samples).
    pub fn predict(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory> {
        if x0.len() != self.n() {
            return Err(Error::Shape(format!(
                "x0 has {} entries, model has {} nodes",
                x0.len(),
                self.n()
            )));
        }
        if !self.is_finite() {
            return Err(Error::Precondition("model has non-finite coefficients".into()));
        }
        rollout_rk4(|x, out| self.rhs_into(x, out), x0, dt, steps)
    }

    /// One identified equation per line.
    pub fn equations(&self) -> String {
        (0..self.n())
            .map(|i| self.library.equation(i, &self.coefficients(i)) + "\n")
            .collect()
    }

    /// Rescales every row of `Â` to unit maximum, moving the scale into that
    /// node's pair coefficients. Rows whose pair coefficients are all zero
    /// carry no information and are cleared.
    pub fn normalize_gauge(&mut self) {
        let m1 = self.library.m1();
        let width = self.library.width();
        for i in 0..self.n() {
            let row = self.a_hat.row(i);
            let scale = row.iter().copied().fold(0.0, f64::max);
            let pair_zero = (m1..width).all(|m| self.w[(i, m)] == 0.0);
            if scale == 0.0 || pair_zero {
                self.a_hat.set_row(i, &vec![0.0; row.len()]);
                for m in m1..width {
                    self.w[(i, m)] = 0.0;
                }
                continue;
            }
            let scaled: Vec<f64> = row.iter().map(|v| v / scale).collect();
            self.a_hat.set_row(i, &scaled);
            for m in m1..width {
                self.w[(i, m)] *= scale;
            }
        }
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            w: DMatrix::from_fn(self.w.nrows(), self.w.ncols(), |i, m| self.w[(perm[i], m)]),
            a_hat: self.a_hat.permuted(perm),
            library: self.library.clone(),
        }
    }
}

/// `L` before and after each block update of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentRecord {
    pub before: f64,
    pub after_a: f64,
    pub after_w: f64,
}

impl DescentRecord {
    /// Largest relative increase over the two block updates (0 if none).
    pub fn violation(&self) -> f64 {
        let rel = |from: f64, to: f64| (to - from) / from.abs().max(1e-300);
        rel(self.before, self.after_a)
            .max(rel(self.after_a, self.after_w))
            .max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// N × T multipliers, one per node and sample.
    pub lambda: DMatrix<f64>,
    pub iteration: usize,
    /// `L` after every completed outer iteration (post multiplier step).
    pub lagrangian_history: Vec<f64>,
    /// `max_i ‖r_i‖₂` after every multiplier step.
    pub residual_history: Vec<f64>,
    pub descent: Vec<DescentRecord>,
    /// Largest `min(u_im, v_im)` seen after any coefficient step.
    pub max_complementarity: f64,
    /// Subproblems that hit `qp_max_iters` before reaching `qp_tol`.
    pub qp_warnings: usize,
    pub converged: bool,
    /// Nodes whose fit came from the empty-network start.
    pub empty_start_nodes: Vec<usize>,
}

impl SolverState {
    pub fn new(n: usize, samples: usize) -> Self {
        Self {
            lambda: DMatrix::zeros(n, samples),
            iteration: 0,
            lagrangian_history: Vec::new(),
            residual_history: Vec::new(),
            descent: Vec::new(),
            max_complementarity: 0.0,
            qp_warnings: 0,
            converged: false,
            empty_start_nodes: Vec::new(),
        }
    }

    pub fn max_descent_violation(&self) -> f64 {
        self.descent.iter().map(|d| d.violation()).fold(0.0, f64::max)
    }
}

/// Per-node basis evaluations for one training trajectory.
pub struct Problem<'a> {
    pub library: &'a BasisLibrary,
    pub nodes: Vec<NodeFeatures>,
}

impl<'a> Problem<'a> {
    pub fn new(library: &'a BasisLibrary, traj: &Trajectory) -> Result<Self> {
        library.validate()?;
        if traj.derivatives.is_none() {
            return Err(Error::Precondition("trajectory has no derivative series".into()));
        }
        let nodes = (0..traj.n())
            .into_par_iter()
            .map(|i| NodeFeatures::new(library, traj, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { library, nodes })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn samples(&self) -> usize {
        self.nodes.first().map_or(0, |f| f.samples())
    }

    /// Residual `ẋ_i − model_i` at every sample.
    pub fn residual(&self, i: usize, w_i: &[f64], a_row: &[f64]) -> DVector<f64> {
        &self.nodes[i].target - self.nodes[i].predict(w_i, a_row)
    }

    /// `(‖w_i‖₁ + ΣÂ_i, ‖r_i‖₂)` for one node.
    pub fn cost_and_residual(&self, i: usize, w: &DMatrix<f64>, a: &AdjacencyMatrix) -> (f64, f64) {
        let w_i: Vec<f64> = w.row(i).iter().copied().collect();
        let a_row = a.row(i);
        let r = self.residual(i, &w_i, &a_row);
        (
            w_i.iter().map(|v| v.abs()).sum::<f64>() + a_row.iter().sum::<f64>(),
            r.norm(),
        )
    }

    /// Whether `x` is the better fit of node `i` than `y`: no larger
    /// residual (up to `1e-6‖ẋ_i‖`) and strictly smaller L1 cost.
    pub fn prefers(
        &self,
        i: usize,
        x: (&DMatrix<f64>, &AdjacencyMatrix),
        y: (&DMatrix<f64>, &AdjacencyMatrix),
    ) -> bool {
        let (cost_x, res_x) = self.cost_and_residual(i, x.0, x.1);
        let (cost_y, res_y) = self.cost_and_residual(i, y.0, y.1);
        res_x <= res_y + 1e-6 * self.nodes[i].target.norm() && cost_x < cost_y
    }

    /// The augmented Lagrangian `L(w, A, λ)`.
    pub fn lagrangian(&self, w: &DMatrix<f64>, a: &AdjacencyMatrix, lambda: &DMatrix<f64>, rho: f64) -> f64 {
        let per_node: Vec<f64> = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let w_i: Vec<f64> = w.row(i).iter().copied().collect();
                let a_row = a.row(i);
                let r = self.residual(i, &w_i, &a_row);
                let l1 = w_i.iter().map(|v| v.abs()).sum::<f64>() + a_row.iter().sum::<f64>();
                let lam = lambda.row(i).transpose();
                l1 + lam.dot(&r) + 0.5 * rho * r.norm_squared()
            })
            .collect();
        per_node.iter().sum()
    }

    /// Adjacency update: one nonnegative QP per row with all-ones cost.
    pub fn a_step(
        &self,
        w: &DMatrix<f64>,
        a_warm: &AdjacencyMatrix,
        state: &mut SolverState,
        cfg: &AsindConfig,
    ) -> Result<AdjacencyMatrix> {
        let settings = cfg.qp_settings();
        let rows = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let w_i: Vec<f64> = w.row(i).iter().copied().collect();
                let design = self.nodes[i].a_design(&w_i);
                let lam = state.lambda.row(i).transpose();
                let p = QpProblem::new(design, lam, cfg.penalty)?;
                let warm = DVector::from_vec(a_warm.row(i));
                let sol = qp::solve_nn_qp_from(&p, Some(&warm), settings);
                Ok((sol.z, sol.converged))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut a = AdjacencyMatrix::zeros(self.n());
        for (i, (z, converged)) in rows.into_iter().enumerate() {
            if !converged {
                state.qp_warnings += 1;
            }
            a.set_row(i, z.as_slice());
        }
        Ok(a)
    }

    /// Coefficient update through the `w = u − v` split.
    pub fn w_step(
        &self,
        a: &AdjacencyMatrix,
        w_warm: &DMatrix<f64>,
        state: &mut SolverState,
        cfg: &AsindConfig,
    ) -> Result<DMatrix<f64>> {
        let settings = cfg.qp_settings();
        let width = self.library.width();
        let rows = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let design = split_design(self.nodes[i].w_design(&a.row(i)));
                let lam = state.lambda.row(i).transpose();
                let p = QpProblem::new(design, lam, cfg.penalty)?;
                let warm = DVector::from_fn(2 * width, |k, _| {
                    let v = w_warm[(i, k % width)];
                    if k < width {
                        v.max(0.0)
                    } else {
                        (-v).max(0.0)
                    }
                });
                let sol = qp::solve_nn_qp_from(&p, Some(&warm), settings);
                Ok((sol.z, sol.converged))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut w = DMatrix::zeros(self.n(), width);
        for (i, (z, converged)) in rows.into_iter().enumerate() {
            if !converged {
                state.qp_warnings += 1;
            }
            for m in 0..width {
                let (u, v) = (z[m], z[width + m]);
                state.max_complementarity = state.max_complementarity.max(u.min(v));
                w[(i, m)] = u - v;
            }
        }
        Ok(w)
    }

    /// `λ_i += α r_i`; appends `max_i ‖r_i‖₂` to the residual history.
    pub fn lambda_step(&self, w: &DMatrix<f64>, a: &AdjacencyMatrix, state: &mut SolverState, cfg: &AsindConfig) {
        let alpha = cfg.alpha();
        let residuals: Vec<DVector<f64>> = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let w_i: Vec<f64> = w.row(i).iter().copied().collect();
                self.residual(i, &w_i, &a.row(i))
            })
            .collect();
        let mut worst = 0.0f64;
        for (i, r) in residuals.iter().enumerate() {
            for (t, v) in r.iter().enumerate() {
                state.lambda[(i, t)] += alpha * v;
            }
            worst = worst.max(r.norm());
        }
        state.residual_history.push(worst);
    }

    /// Runs the outer loop from `(w, a)` with the multipliers held in `state`.
    pub fn run(
        &self,
        mut w: DMatrix<f64>,
        mut a: AdjacencyMatrix,
        state: &mut SolverState,
        cfg: &AsindConfig,
    ) -> Result<(DMatrix<f64>, AdjacencyMatrix)> {
        let rho = cfg.penalty;
        for _ in 0..cfg.outer_max_iters {
            let iteration = state.iteration;
            let before = self.lagrangian(&w, &a, &state.lambda, rho);
            let a_next = self.a_step(&w, &a, state, cfg)?;
            let after_a = self.lagrangian(&w, &a_next, &state.lambda, rho);
            let w_next = self.w_step(&a_next, &w, state, cfg)?;
            let after_w = self.lagrangian(&w_next, &a_next, &state.lambda, rho);
            let record = DescentRecord {
                before,
                after_a,
                after_w,
            };
            debug_assert!(
                record.violation() <= 1e-9,
                "augmented Lagrangian increased at iteration {iteration}: {record:?}"
            );
            state.descent.push(record);

            let change = max_abs_diff(&w, &w_next).max(max_abs_diff(a.matrix(), a_next.matrix()));
            w = w_next;
            a = a_next;
            self.lambda_step(&w, &a, state, cfg);
            state.iteration += 1;
            let l = self.lagrangian(&w, &a, &state.lambda, rho);
            state.lagrangian_history.push(l);
            if !l.is_finite() || !state.lambda.iter().all(|v| v.is_finite()) {
                return Err(Error::FitDivergence { iteration });
            }
            if change <= cfg.outer_tol {
                state.converged = true;
                break;
            }
        }
        Ok((w, a))
    }
}

/// Joint least-squares polish of one node on a fixed support. The model is
/// bilinear in `(w_i, Â_i)`, where alternating solves crawl once the
/// neighbour columns are nearly collinear; Gauss-Newton steps (minimum-norm,
/// which absorbs the scaling gauge) finish the job. Steps are cut short to
/// keep `Â_i ≥ 0` and only taken when they lower the residual.
fn gauss_newton(
    node: &NodeFeatures,
    w_sup: &[usize],
    a_sup: &[usize],
    w_i: &mut [f64],
    a_row: &mut [f64],
    rounds: usize,
) {
    let rss = |w: &[f64], a: &[f64]| (&node.target - node.predict(w, a)).norm_squared();
    let mut current = rss(w_i, a_row);
    for _ in 0..rounds {
        if current == 0.0 {
            break;
        }
        let dw = node.w_design(a_row);
        let da = node.a_design(w_i);
        let (kw, ka) = (w_sup.len(), a_sup.len());
        let jac = DMatrix::from_fn(node.samples(), kw + ka, |t, k| {
            if k < kw {
                dw.entries[(t, w_sup[k])]
            } else {
                da.entries[(t, a_sup[k - kw])]
            }
        });
        let r = &node.target - node.predict(w_i, a_row);
        let step = lstsq(&jac, &r);
        let mut scale = 1.0f64;
        for (k, &j) in a_sup.iter().enumerate() {
            let d = step[kw + k];
            if a_row[j] + d < 0.0 {
                scale = scale.min(a_row[j] / -d);
            }
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut w_try = w_i.to_vec();
            let mut a_try = a_row.to_vec();
            for (k, &m) in w_sup.iter().enumerate() {
                w_try[m] += scale * step[k];
            }
            for (k, &j) in a_sup.iter().enumerate() {
                a_try[j] = (a_try[j] + scale * step[kw + k]).max(0.0);
            }
            let next = rss(&w_try, &a_try);
            if next < current {
                w_i.copy_from_slice(&w_try);
                a_row.copy_from_slice(&a_try);
                accepted = current - next > 1e-14 * current;
                current = next;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

/// `[B, −B]` with the same target.
fn split_design(d: DesignMatrix) -> DesignMatrix {
    let (t_len, cols) = d.entries.shape();
    let mut entries = DMatrix::zeros(t_len, 2 * cols);
    entries.columns_mut(0, cols).copy_from(&d.entries);
    entries.columns_mut(cols, cols).copy_from(&(-&d.entries));
    DesignMatrix {
        entries,
        target: d.target,
    }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_inputs(traj: &Trajectory, lib: &BasisLibrary, cfg: &AsindConfig) -> Result<()> {
    cfg.validate()?;
    if traj.derivatives.is_none() {
        return Err(Error::Precondition("trajectory has no derivative series".into()));
    }
    if traj.len() < lib.width() {
        return Err(Error::InsufficientData(format!(
            "{} samples for {} coefficients per node",
            traj.len(),
            lib.width()
        )));
    }
    Ok(())
}

/// Adjacency update for fixed coefficients (see [`Problem::a_step`]); the
/// previous adjacency in `warm` seeds the solver.
pub fn a_step(
    traj: &Trajectory,
    lib: &BasisLibrary,
    w: &DMatrix<f64>,
    warm: &AdjacencyMatrix,
    state: &mut SolverState,
    cfg: &AsindConfig,
) -> Result<AdjacencyMatrix> {
    Problem::new(lib, traj)?.a_step(w, warm, state, cfg)
}

/// Coefficient update for a fixed adjacency (see [`Problem::w_step`]).
pub fn w_step(
    traj: &Trajectory,
    lib: &BasisLibrary,
    a_hat: &AdjacencyMatrix,
    warm: &DMatrix<f64>,
    state: &mut SolverState,
    cfg: &AsindConfig,
) -> Result<DMatrix<f64>> {
    if a_hat.matrix().iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition("adjacency must be nonnegative".into()));
    }
    Problem::new(lib, traj)?.w_step(a_hat, warm, state, cfg)
}

/// Multiplier ascent `λ_i += α r_i`.
pub fn lambda_step(
    traj: &Trajectory,
    model: &IdentifiedModel,
    state: &mut SolverState,
    cfg: &AsindConfig,
) -> Result<()> {
    if !model.is_finite() {
        return Err(Error::Precondition("model has non-finite coefficients".into()));
    }
    Problem::new(&model.library, traj)?.lambda_step(&model.w, &model.a_hat, state, cfg);
    Ok(())
}

/// Full identification. The outer loop runs from the complete graph at
/// `initial_adjacency` (with `w` fitted to it) and, if `empty_start` is set,
/// again from `w = 0`, `Â = 0`; nodes are independent, so each node keeps
/// the run from `w = 0` only if it fits at least as well and is cheaper in
/// L1 (see [`Problem::prefers`]). The result is then
/// thresholded and refitted on the surviving support.
///
/// The returned state is that of the complete-graph run, with the
/// multipliers of switched nodes swapped in and the other run's descent
/// records, warnings and convergence folded in.
pub fn fit(traj: &Trajectory, lib: &BasisLibrary, cfg: &AsindConfig) -> Result<(IdentifiedModel, SolverState)> {
    check_inputs(traj, lib, cfg)?;
    let problem = Problem::new(lib, traj)?;
    let n = problem.n();
    let mut state = SolverState::new(n, problem.samples());
    let mut a0 = AdjacencyMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a0.set(i, j, cfg.initial_adjacency.unwrap_or(1.0 / n as f64));
        }
    }
    let w0 = problem.w_step(&a0, &DMatrix::zeros(n, lib.width()), &mut state, cfg)?;
    let (mut w, mut a) = problem.run(w0, a0, &mut state, cfg)?;

    if cfg.empty_start {
        let mut other = SolverState::new(n, problem.samples());
        let (w_e, a_e) = problem.run(
            DMatrix::zeros(n, lib.width()),
            AdjacencyMatrix::zeros(n),
            &mut other,
            cfg,
        )?;
        for i in 0..n {
            if problem.prefers(i, (&w_e, &a_e), (&w, &a)) {
                w.set_row(i, &w_e.row(i));
                a.set_row(i, &a_e.row(i));
                state.lambda.set_row(i, &other.lambda.row(i));
                state.empty_start_nodes.push(i);
            }
        }
        if !state.empty_start_nodes.is_empty() {
            state.converged = other.converged && (state.converged || state.empty_start_nodes.len() == n);
        }
        state.descent.extend(other.descent);
        state.qp_warnings += other.qp_warnings;
        state.max_complementarity = state.max_complementarity.max(other.max_complementarity);
    }

    let raw = IdentifiedModel {
        w,
        a_hat: a,
        library: lib.clone(),
    };
    let model = refit_with(&problem, raw, cfg)?;
    Ok((model, state))
}

/// Outer loop from a given starting point and multiplier state, without the
/// final thresholding.
pub fn fit_from(
    traj: &Trajectory,
    start: IdentifiedModel,
    state: &mut SolverState,
    cfg: &AsindConfig,
) -> Result<IdentifiedModel> {
    check_inputs(traj, &start.library, cfg)?;
    let problem = Problem::new(&start.library, traj)?;
    let (w, a) = problem.run(start.w, start.a_hat, state, cfg)?;
    Ok(IdentifiedModel {
        w,
        a_hat: a,
        library: start.library.clone(),
    })
}

/// Zeroes `|w| < threshold_w` and `Â < threshold_a` (after gauge
/// normalization) and, when enabled, refits the surviving support by
/// alternating unregularized least squares in `w` and nonnegative least
/// squares in `Â`.
pub fn threshold_and_refit(model: IdentifiedModel, traj: &Trajectory, cfg: &AsindConfig) -> Result<IdentifiedModel> {
    let lib = model.library.clone();
    let problem = Problem::new(&lib, traj)?;
    refit_with(&problem, model, cfg)
}

fn refit_with(problem: &Problem<'_>, mut model: IdentifiedModel, cfg: &AsindConfig) -> Result<IdentifiedModel> {
    model.normalize_gauge();
    let n = model.n();
    let width = model.library.width();
    for v in model.w.iter_mut() {
        if v.abs() < cfg.threshold_w {
            *v = 0.0;
        }
    }
    for i in 0..n {
        let row: Vec<f64> = model
            .a_hat
            .row(i)
            .into_iter()
            .map(|v| if v < cfg.threshold_a { 0.0 } else { v })
            .collect();
        model.a_hat.set_row(i, &row);
    }
    model.normalize_gauge();
    if !cfg.refit_on_support {
        return Ok(model);
    }

    let nnls = QpSettings {
        tol: 1e-12,
        max_iters: cfg.qp_max_iters,
        record_objective: false,
    };
    let w_support: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..width).filter(|&m| model.w[(i, m)] != 0.0).collect())
        .collect();
    let a_support: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| model.a_hat.get(i, j) != 0.0).collect())
        .collect();

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let node = &problem.nodes[i];
            let mut w_i: Vec<f64> = model.w.row(i).iter().copied().collect();
            let mut a_row = model.a_hat.row(i);
            let mut last = f64::INFINITY;
            for _ in 0..cfg.refit_rounds.max(1) {
                let d = node.w_design(&a_row);
                let cols = &w_support[i];
                let sub = DMatrix::from_fn(d.rows(), cols.len(), |t, k| d.entries[(t, cols[k])]);
                let sol = lstsq(&sub, &d.target);
                w_i.iter_mut().for_each(|v| *v = 0.0);
                for (k, &m) in cols.iter().enumerate() {
                    w_i[m] = sol[k];
                }

                let cols = &a_support[i];
                if !cols.is_empty() {
                    let d = node.a_design(&w_i);
                    let sub = DMatrix::from_fn(d.rows(), cols.len(), |t, k| d.entries[(t, cols[k])]);
                    let design = DesignMatrix {
                        entries: sub,
                        target: d.target,
                    };
                    let p =
                        QpProblem::with_cost(design, DVector::zeros(node.samples()), 1.0, DVector::zeros(cols.len()))?;
                    let warm = DVector::from_fn(cols.len(), |k, _| a_row[cols[k]]);
                    let sol = qp::solve_nn_qp_from(&p, Some(&warm), nnls);
                    for (k, &j) in cols.iter().enumerate() {
                        a_row[j] = sol.z[k];
                    }
                }

                let r = node.target.clone() - node.predict(&w_i, &a_row);
                let rss = r.norm_squared();
                if !rss.is_finite() {
                    return Err(Error::FitDivergence { iteration: 0 });
                }
                if last - rss <= 1e-14 * last.max(1e-300) {
                    break;
                }
                last = rss;
            }
            gauss_newton(
                node,
                &w_support[i],
                &a_support[i],
                &mut w_i,
                &mut a_row,
                cfg.refit_rounds,
            );
            Ok((w_i, a_row))
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, (w_i, a_row)) in rows.into_iter().enumerate() {
        for m in 0..width {
            model.w[(i, m)] = w_i[m];
        }
        model.a_hat.set_row(i, &a_row);
    }
    model.normalize_gauge();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_rk4, DynamicsSpec, Origin};

    fn small_sis() -> (DynamicsSpec, AdjacencyMatrix, Trajectory) {
        let spec = DynamicsSpec::sis(vec![0.5, 0.4, 0.6], vec![0.2, 0.3, 0.25]);
        let a = AdjacencyMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let tr = integrate_rk4(&spec, &a, &[0.8, 0.3, 0.6], 0.01, 300).unwrap();
        (spec, a, tr)
    }

    #[test]
    fn zero_pair_coefficients_give_empty_network() {
        let (_, a, tr) = small_sis();
        let lib = BasisLibrary::default_library();
        let mut w = DMatrix::zeros(3, 9);
        w[(0, 1)] = -0.5;
        let mut state = SolverState::new(3, tr.len());
        let a_hat = a_step(&tr, &lib, &w, &a, &mut state, &AsindConfig::default()).unwrap();
        assert_eq!(a_hat.nnz(), 0);
    }

    #[test]
    fn single_node_network() {
        let spec = DynamicsSpec::sis(vec![1.0], vec![0.0]);
        let tr = integrate_rk4(&spec, &AdjacencyMatrix::zeros(1), &[0.7], 0.01, 50).unwrap();
        let lib = BasisLibrary::default_library();
        let mut w = DMatrix::zeros(1, 9);
        w[(0, 3)] = 1.0;
        let mut state = SolverState::new(1, tr.len());
        let a_hat = a_step(
            &tr,
            &lib,
            &w,
            &AdjacencyMatrix::zeros(1),
            &mut state,
            &AsindConfig::default(),
        )
        .unwrap();
        assert_eq!(a_hat.get(0, 0), 0.0);
    }

    #[test]
    fn zero_target_gives_zero_coefficients() {
        let tr = Trajectory::new(
            0.1,
            DMatrix::from_fn(20, 2, |t, i| 0.3 + 0.01 * (t + i) as f64),
            Some(DMatrix::zeros(20, 2)),
            Origin::Estimated,
        )
        .unwrap();
        let lib = BasisLibrary::default_library();
        let a = AdjacencyMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut state = SolverState::new(2, 20);
        let w = w_step(
            &tr,
            &lib,
            &a,
            &DMatrix::zeros(2, 9),
            &mut state,
            &AsindConfig::default(),
        )
        .unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_step_formula() {
        // Constant residual 0.5 from a zero model on ẋ ≡ 0.5.
        let tr = Trajectory::new(
            0.1,
            DMatrix::from_element(10, 2, 0.2),
            Some(DMatrix::from_element(10, 2, 0.5)),
            Origin::Estimated,
        )
        .unwrap();
        let model = IdentifiedModel::zeros(2, BasisLibrary::default_library());
        let cfg = AsindConfig {
            penalty: 1.0,
            multiplier_step: Some(1.0),
            ..Default::default()
        };
        let mut state = SolverState::new(2, 10);
        lambda_step(&tr, &model, &mut state, &cfg).unwrap();
        assert!(state.lambda.iter().all(|&v| v == 0.5));
        lambda_step(&tr, &model, &mut state, &cfg).unwrap();
        assert!(state.lambda.iter().all(|&v| v == 1.0));
        assert_eq!(state.residual_history.len(), 2);

        let zero_res = Trajectory::new(
            0.1,
            DMatrix::from_element(10, 2, 0.2),
            Some(DMatrix::zeros(10, 2)),
            Origin::Estimated,
        )
        .unwrap();
        let mut state = SolverState::new(2, 10);
        lambda_step(&zero_res, &model, &mut state, &cfg).unwrap();
        assert!(state.lambda.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_point_trajectory_gives_zero_model() {
        let tr = Trajectory::new(
            0.01,
            DMatrix::from_element(40, 3, 0.4),
            Some(DMatrix::zeros(40, 3)),
            Origin::SimulatedExact,
        )
        .unwrap();
        let (model, state) = fit(&tr, &BasisLibrary::default_library(), &AsindConfig::default()).unwrap();
        assert!(model.w.iter().all(|&v| v == 0.0));
        assert_eq!(model.a_hat.nnz(), 0);
        assert!(state.residual_history.last().unwrap() < &1e-12);
    }

    #[test]
    fn too_few_samples() {
        let tr = Trajectory::new(0.1, DMatrix::zeros(5, 2), Some(DMatrix::zeros(5, 2)), Origin::Estimated).unwrap();
        assert!(matches!(
            fit(&tr, &BasisLibrary::default_library(), &AsindConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gauge_normalization_preserves_output() {
        let (_, _, tr) = small_sis();
        let lib = BasisLibrary::default_library();
        let mut model = IdentifiedModel::zeros(3, lib);
        model.w[(0, 8)] = 0.1;
        model.w[(1, 8)] = 0.3;
        model.a_hat.set(0, 1, 4.0);
        model.a_hat.set(1, 0, 0.5);
        model.a_hat.set(1, 2, 0.25);
        model.a_hat.set(2, 1, 0.7); // row 2 has no pair coefficients
        let x = tr.state(10);
        let mut before = vec![0.0; 3];
        model.rhs_into(&x, &mut before);
        model.normalize_gauge();
        let mut after = vec![0.0; 3];
        model.rhs_into(&x, &mut after);
        for i in 0..3 {
            assert!((before[i] - after[i]).abs() < 1e-15);
        }
        assert_eq!(model.a_hat.get(0, 1), 1.0);
        assert!((model.w[(0, 8)] - 0.4).abs() < 1e-15);
        assert_eq!(model.a_hat.row(2), vec![0.0; 3]);
    }

    #[test]
    fn refit_without_thresholds_keeps_support() {
        let (spec, a, tr) = small_sis();
        let lib = BasisLibrary::default_library();
        let mut model = IdentifiedModel::zeros(3, lib);
        for i in 0..3 {
            model.w[(i, 1)] = -spec.delta[i] * 0.9;
            model.w[(i, 8)] = spec.gamma[i] * 1.1;
            model.a_hat.set_row(i, &a.row(i));
        }
        let cfg = AsindConfig {
            threshold_a: 0.0,
            threshold_w: 0.0,
            ..Default::default()
        };
        let out = threshold_and_refit(model.clone(), &tr, &cfg).unwrap();
        for i in 0..3 {
            assert!((out.w[(i, 1)] + spec.delta[i]).abs() < 1e-8, "{}", out.w[(i, 1)]);
            assert!((out.w[(i, 8)] - spec.gamma[i]).abs() < 1e-8);
            for m in [0, 2, 3, 4, 5, 6, 7] {
                assert_eq!(out.w[(i, m)], 0.0);
            }
        }
        assert_eq!(out.a_hat, a);
    }

    #[test]
    fn truth_rollout_matches_integrator() {
        let (spec, a, tr) = small_sis();
        let lib = BasisLibrary::default_library();
        let mut model = IdentifiedModel::zeros(3, lib);
        for i in 0..3 {
            model.w[(i, 1)] = -spec.delta[i];
            model.w[(i, 8)] = spec.gamma[i];
            model.a_hat.set_row(i, &a.row(i));
        }
        let x0 = tr.state(0);
        let pred = model.predict(&x0, 0.01, 100).unwrap();
        let truth = integrate_rk4(&spec, &a, &x0, 0.01, 100).unwrap();
        let err = (&pred.states - &truth.states).amax();
        assert!(err < 1e-14, "{err}");
        let zero = IdentifiedModel::zeros(3, BasisLibrary::default_library());
        let flat = zero.predict(&x0, 0.01, 10).unwrap();
        assert_eq!(flat.last_state(), x0);
    }
}
