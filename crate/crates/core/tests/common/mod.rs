#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netid::basis::DesignMatrix;
use netid::dynamics::{integrate_rk4, DynamicsSpec, Trajectory};
use netid::{AdjacencyMatrix, QpProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random problem with `k` variables: some columns scaled down, some
/// duplicated, occasionally fewer rows than columns.
pub fn random_qp(r: &mut ChaCha8Rng, k: usize) -> QpProblem {
    let t = if r.random_bool(0.2) {
        r.random_range(1..=k)
    } else {
        r.random_range(k..=k + 6)
    };
    let mut b = DMatrix::from_fn(t, k, |_, _| r.random_range(-1.0..1.0));
    if k > 1 && r.random_bool(0.2) {
        let (src, dst) = (r.random_range(0..k), r.random_range(0..k));
        let col = b.column(src).into_owned();
        b.set_column(dst, &col);
    }
    if r.random_bool(0.3) {
        let c = r.random_range(0..k);
        b.column_mut(c).scale_mut(1e-3);
    }
    let y = DVector::from_fn(t, |_, _| r.random_range(-2.0..2.0));
    let lam = DVector::from_fn(t, |_, _| r.random_range(-1.0..1.0));
    let cost = DVector::from_fn(k, |_, _| {
        if r.random_bool(0.2) {
            0.0
        } else {
            r.random_range(0.0..1.0)
        }
    });
    let rho = [0.5, 1.0, 10.0][r.random_range(0..3)];
    QpProblem::with_cost(DesignMatrix::new(b, y).unwrap(), lam, rho, cost).unwrap()
}

/// Global optimum of a small nonnegative QP by enumerating all `2^k` faces:
/// on each face solve the stationarity system, keep feasible KKT points,
/// return the best.
pub fn brute_force(p: &QpProblem) -> (DVector<f64>, f64) {
    let quad = p.quadratic();
    let k = quad.dim();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << k) {
        let face: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let mut z = DVector::zeros(k);
        if !face.is_empty() {
            let h = DMatrix::from_fn(face.len(), face.len(), |a, b| quad.h[(face[a], face[b])]);
            let rhs = DVector::from_fn(face.len(), |a, _| -quad.q[face[a]]);
            let svd = h.clone().svd(true, true);
            let eps = svd.singular_values.amax() * 1e-12;
            let Ok(sol) = svd.solve(&rhs, eps) else { continue };
            if (&h * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
                continue;
            }
            if sol.iter().any(|&v| v < -1e-12) {
                continue;
            }
            for (a, &i) in face.iter().enumerate() {
                z[i] = sol[a].max(0.0);
            }
        }
        let g = quad.gradient(&z);
        if (0..k).filter(|i| !face.contains(i)).any(|i| g[i] < -1e-9) {
            continue;
        }
        let f = quad.objective(&z);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((z, f));
        }
    }
    best.expect("a convex QP bounded below has a KKT point")
}

pub fn simulate(spec: &DynamicsSpec, a: &AdjacencyMatrix, x0: &[f64], dt: f64, steps: usize) -> Trajectory {
    integrate_rk4(spec, a, x0, dt, steps).unwrap()
}

pub fn complete_graph(n: usize) -> AdjacencyMatrix {
    let mut a = AdjacencyMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a.set(i, j, 1.0);
            }
        }
    }
    a
}
