//! Identification of network dynamics from observed trajectories.
//!
//! A network dynamics model has the form
//!
//! ```text
//! dx_i/dt = F(x_i) + Σ_j A_ij G(x_i, x_j)
//! ```
//!
//! where neither the self term `F`, the pairwise term `G` nor the network `A`
//! is known. [`alternating::fit`] recovers all three at once by expanding `F`
//! and `G` over candidate dictionaries ([`basis`]) and alternating between
//! nonnegative quadratic subproblems for `A` and for the dictionary weights,
//! glued together by an augmented Lagrangian with per-sample multipliers.
//!
//! Around that sit the pieces needed to evaluate it end to end:
//!
//! * [`netgen`] – Erdős–Rényi, Watts–Strogatz and directed scale-free graphs.
//! * [`dynamics`] – Kuramoto, SIS, Lotka–Volterra and Michaelis–Menten
//!   networks, RK4 integration and finite-difference derivatives.
//! * [`qp`] – projected-gradient solver for nonnegative QPs.
//! * [`sindy`] – the polynomial STLSQ baseline.
//! * [`metrics`] – RMSE, MAPE and Jaccard.
//! * [`io`] and [`harness`] – file formats and the experiment grid.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alternating;
pub mod basis;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod netgen;
pub mod qp;
pub mod sindy;

pub use alternating::{AsindConfig, IdentifiedModel, SolverState};
pub use basis::{BasisLibrary, DesignMatrix, PairBasis, SelfBasis};
pub use dynamics::{DynamicsSpec, Model, Origin, Trajectory};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use netgen::{AdjacencyMatrix, NetworkConfig, NetworkKind};
pub use qp::{QpProblem, QpSolution};
pub use sindy::{PolyLibrary, SindyModel};
