//! End-to-end acceptance checks. Every criterion runs and reports one
//! PASS/FAIL line; the test fails afterwards if any of them failed.

mod common;

use common::{brute_force, complete_graph, random_qp, rng};
use nalgebra::DMatrix;
use netid::alternating::{fit, AsindConfig};
use netid::basis::BasisLibrary;
use netid::dynamics::{estimate_derivatives, integrate_rk4, rollout_rk4, DynamicsSpec, Model, Origin, Trajectory};
use netid::harness::{reproduce_tables, run_grid, ExperimentConfig, Method, ResultsTable, RunRecord};
use netid::metrics::rmse;
use netid::netgen::NetworkKind;
use netid::qp::{solve_nn_qp, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Bypasses the test harness's output capture so the lines always show.
fn report(o: &Outcome) {
    let line = format!(
        "{} criterion {}: {} | {}\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

const NONPOLY: [Model; 3] = [Model::Sis, Model::LotkaVolterra, Model::MichaelisMenten];

fn cells(table: &ResultsTable) -> BTreeMap<(String, String), Vec<&RunRecord>> {
    let mut map: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for r in &table.records {
        map.entry((r.model.key().to_string(), r.network.key().to_string()))
            .or_default()
            .push(r);
    }
    map
}

fn accurate(r: &RunRecord) -> bool {
    !r.report.diverged && r.report.rmse < 0.05 && r.report.mape < 5.0
}

fn criterion_1(asind: &ResultsTable, secs: f64) -> Outcome {
    let mut bad = Vec::new();
    let mut worst = (0.0f64, 0.0f64);
    for ((m, k), runs) in cells(asind) {
        let good = runs.iter().filter(|r| accurate(r)).count();
        for r in &runs {
            worst = (worst.0.max(r.report.rmse), worst.1.max(r.report.mape));
        }
        if good < 2 {
            bad.push(format!("{m}/{k} {good}/3"));
        }
    }
    Outcome {
        id: 1,
        name: "ASIND long-horizon accuracy",
        pass: bad.is_empty() && asind.records.len() == 27,
        detail: format!(
            "{} runs, worst rmse {:.3e}, worst mape {:.3}%, grid time {:.0}s{}",
            asind.records.len(),
            worst.0,
            worst.1,
            secs,
            if bad.is_empty() {
                String::new()
            } else {
                format!(", short cells: {}", bad.join(" "))
            }
        ),
    }
}

fn criterion_2(sindy: &ResultsTable) -> Outcome {
    let mut mild = Vec::new();
    let mut kuramoto = Vec::new();
    let mut ok_kuramoto = true;
    for ((m, k), runs) in cells(sindy) {
        if m == Model::Kuramoto.key() {
            let finite: Vec<f64> = runs.iter().map(|r| r.report.mape).collect();
            let mean = finite.iter().sum::<f64>() / finite.len() as f64;
            ok_kuramoto &= mean < 15.0;
            kuramoto.push(format!("{k} {mean:.1}%"));
        } else {
            for r in runs {
                if !r.report.diverged && r.report.rmse <= 10.0 {
                    mild.push(format!("{m}/{k}/s{} {:.1e}", r.seed, r.report.rmse));
                }
            }
        }
    }
    Outcome {
        id: 2,
        name: "baseline failure mode",
        pass: mild.is_empty() && ok_kuramoto,
        detail: format!(
            "{} non-Kuramoto runs with rmse <= 10 and no divergence [{}]; Kuramoto mean mape {}",
            mild.len(),
            mild.join(", "),
            kuramoto.join(", ")
        ),
    }
}

fn criterion_3(asind: &ResultsTable) -> Outcome {
    let passing: Vec<&RunRecord> = asind.records.iter().filter(|r| accurate(r)).collect();
    let high: Vec<String> = passing
        .iter()
        .filter(|r| !(r.report.jaccard < 50.0))
        .map(|r| format!("{}: {:.1}%", r.cell_name(), r.report.jaccard))
        .collect();
    let max_j = passing.iter().map(|r| r.report.jaccard).fold(0.0, f64::max);
    Outcome {
        id: 3,
        name: "weak identifiability",
        pass: !passing.is_empty() && high.is_empty(),
        detail: format!(
            "{} accurate fits, max Jaccard {max_j:.2}% {}",
            passing.len(),
            high.join(", ")
        ),
    }
}

fn criterion_4() -> Outcome {
    let mut r = rng(2024);
    let problems: Vec<_> = (0..500).map(|c| random_qp(&mut r, 1 + c % 5)).collect();
    let oracle: Vec<f64> = problems.iter().map(|p| brute_force(p).1).collect();
    let start = Instant::now();
    let sols: Vec<_> = problems
        .iter()
        .map(|p| solve_nn_qp(p, DEFAULT_TOL, DEFAULT_MAX_ITERS))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let gap = sols
        .iter()
        .zip(&oracle)
        .map(|(s, f)| (s.objective - f).abs())
        .fold(0.0, f64::max);
    let kkt = sols.iter().map(|s| s.kkt_residual).fold(0.0, f64::max);
    Outcome {
        id: 4,
        name: "QP solver oracle equivalence",
        pass: gap <= 1e-8 && kkt <= 1e-8 && secs < 10.0,
        detail: format!("500 problems, max gap {gap:.2e}, max KKT {kkt:.2e}, {secs:.3}s"),
    }
}

fn criterion_5(asind: &ResultsTable) -> Outcome {
    let mut worst = 0.0f64;
    let mut missing = 0;
    for r in &asind.records {
        match &r.diagnostics {
            Some(d) => worst = worst.max(d.max_descent_violation),
            None => missing += 1,
        }
    }
    Outcome {
        id: 5,
        name: "alternating-descent invariant",
        pass: worst <= 1e-9 && missing == 0,
        detail: format!(
            "{} fits, max relative increase {worst:.2e}, fits without a trace {missing}",
            asind.records.len()
        ),
    }
}

fn criterion_6() -> Outcome {
    let n = 3;
    let a = complete_graph(n);
    let omega = [-0.6, 0.1, 0.8];
    let spec = DynamicsSpec::kuramoto(omega.to_vec(), 1.0);
    let full = integrate_rk4(&spec, &a, &[0.4, 2.5, 4.9], 0.01, 599).unwrap();
    let train = full.slice(0, 500);
    let truth = full.slice(499, 600);
    let lib = BasisLibrary::default_library();
    // The equality-constrained optimum does not depend on ρ; a stiff penalty
    // just gets the alternating loop there within the iteration budget.
    let cfg = AsindConfig {
        penalty: 1e4,
        outer_max_iters: 400,
        ..AsindConfig::default()
    };
    let (model, _) = fit(&train, &lib, &cfg).unwrap();
    let (c, s) = (lib.index_of("const").unwrap(), lib.index_of("pair:sin_diff").unwrap());
    let d_omega = (0..n).map(|i| (model.w[(i, c)] - omega[i]).abs()).fold(0.0, f64::max);
    let d_pair = (0..n)
        .map(|i| (model.w[(i, s)] - 1.0 / n as f64).abs())
        .fold(0.0, f64::max);
    let e = model
        .predict(&truth.state(0), 0.01, 100)
        .and_then(|p| rmse(&p, &truth))
        .unwrap_or(f64::INFINITY);
    Outcome {
        id: 6,
        name: "exact-recovery sanity",
        pass: d_omega < 1e-3 && d_pair < 1e-3 && e < 1e-3,
        detail: format!("max |dω| {d_omega:.2e}, max |d(c/N)| {d_pair:.2e}, rollout rmse {e:.2e}"),
    }
}

fn sis_endpoint(dt: f64) -> Vec<f64> {
    let spec = DynamicsSpec::sis(vec![0.4, 0.6], vec![0.8, 0.5]);
    let mut a = netid::AdjacencyMatrix::zeros(2);
    a.set(0, 1, 1.0);
    a.set(1, 0, 1.0);
    let steps = (1.0 / dt).round() as usize;
    integrate_rk4(&spec, &a, &[0.2, 0.7], dt, steps).unwrap().last_state()
}

fn criterion_7() -> Outcome {
    let decay = rollout_rk4(|x, out| out[0] = -x[0], &[1.0], 0.01, 100).unwrap();
    let e_decay = (decay.last_state()[0] - (-1.0f64).exp()).abs();

    let t_len = 629;
    let states = DMatrix::from_fn(t_len, 1, |t, _| (0.01 * t as f64).sin());
    let traj = Trajectory::new(0.01, states, None, Origin::Estimated).unwrap();
    let d = estimate_derivatives(&traj).unwrap().derivatives.unwrap();
    let e_deriv = (1..t_len - 1)
        .map(|t| (d[(t, 0)] - (0.01 * t as f64).cos()).abs())
        .fold(0.0, f64::max);

    let reference = sis_endpoint(1e-5);
    let err = |dt: f64| {
        sis_endpoint(dt)
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let ratio = err(0.1) / err(0.05);
    Outcome {
        id: 7,
        name: "numerical kernels",
        pass: e_decay <= 1e-8 && e_deriv <= 2e-5 && (12.0..=20.0).contains(&ratio),
        detail: format!("decay error {e_decay:.2e}, sin derivative error {e_deriv:.2e}, halving ratio {ratio:.2}"),
    }
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    // The full 72-cell grid twice would dominate the suite on a single core;
    // a smaller configuration exercises the same code paths.
    let root = tempfile::tempdir().unwrap();
    let mut dumps = Vec::new();
    for k in 0..2 {
        let mut cfg = ExperimentConfig::default();
        cfg.network.n = 8;
        cfg.seeds = vec![0];
        cfg.train_steps = 200;
        cfg.horizon = 50;
        cfg.asind.outer_max_iters = 20;
        cfg.output_dir = Some(root.path().join(format!("run{k}")));
        reproduce_tables(&cfg).unwrap();
        dumps.push(csv_files(cfg.output_dir.as_ref().unwrap()));
    }
    // Wall-clock times live in timings.csv and are the one expected difference.
    let keys: Vec<&String> = dumps[0].keys().filter(|k| !k.ends_with("timings.csv")).collect();
    let differing: Vec<&String> = keys
        .iter()
        .copied()
        .filter(|k| dumps[0].get(*k) != dumps[1].get(*k))
        .collect();
    let same_set = dumps[0].keys().eq(dumps[1].keys());
    Outcome {
        id: 8,
        name: "determinism",
        pass: same_set && differing.is_empty() && keys.len() > 2,
        detail: format!(
            "{} CSV files compared, {} differ {:?}",
            keys.len(),
            differing.len(),
            differing
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let asind = run_grid(&cfg, &NONPOLY, &NetworkKind::ALL, &[Method::Asind]).unwrap();
    let asind_secs = start.elapsed().as_secs_f64();
    let mut all_models = NONPOLY.to_vec();
    all_models.push(Model::Kuramoto);
    let sindy = run_grid(&cfg, &all_models, &NetworkKind::ALL, &[Method::Sindy]).unwrap();

    let outcomes = [
        criterion_1(&asind, asind_secs),
        criterion_2(&sindy),
        criterion_3(&asind),
        criterion_4(),
        criterion_5(&asind),
        criterion_6(),
        criterion_7(),
        criterion_8(),
    ];
    for o in &outcomes {
        report(o);
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
