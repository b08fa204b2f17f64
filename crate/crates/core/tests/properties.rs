mod common;

use nalgebra::{DMatrix, DVector};
use netid::alternating::IdentifiedModel;
use netid::basis::{BasisLibrary, NodeFeatures};
use netid::dynamics::{DynamicsSpec, Model, Origin, Trajectory};
use netid::io::{load_trajectory, save_trajectory};
use netid::metrics::{jaccard, mape_states, rmse_states};
use netid::sindy::{stlsq, PolyLibrary};
use netid::AdjacencyMatrix;
use proptest::prelude::*;

fn adjacency(n: usize) -> impl Strategy<Value = AdjacencyMatrix> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..2.0], n * n).prop_map(move |v| {
        let mut a = AdjacencyMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, v[i * n + j]);
            }
        }
        a
    })
}

fn spec_for(model: Model, n: usize, p: &[f64]) -> DynamicsSpec {
    match model {
        Model::Kuramoto => DynamicsSpec::kuramoto(p[..n].to_vec(), 1.3),
        Model::Sis => DynamicsSpec::sis(
            p[..n].iter().map(|v| v.abs()).collect(),
            p[n..2 * n].iter().map(|v| v.abs()).collect(),
        ),
        Model::LotkaVolterra => {
            DynamicsSpec::lotka_volterra(p[..n].to_vec(), p[n..2 * n].to_vec(), p[2 * n..3 * n].to_vec())
        }
        Model::MichaelisMenten => DynamicsSpec::michaelis_menten(n, 2.0),
    }
}

fn model_strategy() -> impl Strategy<Value = Model> {
    prop_oneof![
        Just(Model::Kuramoto),
        Just(Model::Sis),
        Just(Model::LotkaVolterra),
        Just(Model::MichaelisMenten)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rhs_is_self_plus_weighted_pairs(
        model in model_strategy(),
        a in adjacency(5),
        x in prop::collection::vec(0.05f64..2.0, 5),
        p in prop::collection::vec(0.05f64..1.0, 15),
    ) {
        let spec = spec_for(model, 5, &p);
        let rhs = spec.rhs(&a, &x).unwrap();
        for i in 0..5 {
            let direct = spec.eval_self(i, x[i])
                + (0..5).map(|j| a.get(i, j) * spec.eval_pair(i, j, x[i], x[j])).sum::<f64>();
            prop_assert!((rhs[i] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn rhs_is_permutation_equivariant(
        model in model_strategy(),
        a in adjacency(4),
        x in prop::collection::vec(0.05f64..2.0, 4),
        p in prop::collection::vec(0.05f64..1.0, 12),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let spec = spec_for(model, 4, &p);
        let rhs = spec.rhs(&a, &x).unwrap();
        let xp: Vec<f64> = perm.iter().map(|&k| x[k]).collect();
        let rp = spec.permuted(&perm).rhs(&a.permuted(&perm), &xp).unwrap();
        for k in 0..4 {
            prop_assert!((rp[k] - rhs[perm[k]]).abs() < 1e-12);
        }
    }

    #[test]
    fn design_reproduces_model_rhs(
        a in adjacency(4),
        w in prop::collection::vec(-1.0f64..1.0, 4 * 9),
        states in prop::collection::vec(0.1f64..1.5, 6 * 4),
    ) {
        let lib = BasisLibrary::default_library();
        let w = DMatrix::from_row_slice(4, 9, &w);
        let states = DMatrix::from_row_slice(6, 4, &states);
        let traj = Trajectory::new(0.1, states.clone(), Some(DMatrix::zeros(6, 4)), Origin::SimulatedExact).unwrap();
        let mut out = vec![0.0; 4];
        for i in 0..4 {
            let f = NodeFeatures::new(&lib, &traj, i).unwrap();
            let w_i: Vec<f64> = w.row(i).iter().copied().collect();
            let pred_w = f.w_design(&a.row(i)).entries * DVector::from_vec(w_i.clone());
            let pred_a = {
                let d = f.a_design(&w_i);
                let self_part = &f.target - &d.target;
                d.entries * DVector::from_vec(a.row(i)) + self_part
            };
            for t in 0..6 {
                let x: Vec<f64> = states.row(t).iter().copied().collect();
                lib.model_rhs_into(&w, a.matrix(), &x, &mut out);
                prop_assert!((pred_w[t] - out[i]).abs() < 1e-12);
                prop_assert!((pred_a[t] - out[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn library_order_does_not_matter(
        a in adjacency(3),
        w in prop::collection::vec(-1.0f64..1.0, 3 * 9),
        x in prop::collection::vec(0.1f64..1.5, 3),
        order in Just((0usize..6).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let lib = BasisLibrary::default_library();
        let shuffled = BasisLibrary::new(
            lib.self_bases.clone(),
            order.iter().map(|&k| lib.pair_bases[k]).collect(),
        ).unwrap();
        let w = DMatrix::from_row_slice(3, 9, &w);
        let ws = DMatrix::from_fn(3, 9, |i, m| if m < 3 { w[(i, m)] } else { w[(i, 3 + order[m - 3])] });
        let (mut o1, mut o2) = (vec![0.0; 3], vec![0.0; 3]);
        lib.model_rhs_into(&w, a.matrix(), &x, &mut o1);
        shuffled.model_rhs_into(&ws, a.matrix(), &x, &mut o2);
        for i in 0..3 {
            prop_assert!((o1[i] - o2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn stlsq_survivors_clear_the_threshold(
        states in prop::collection::vec(-1.0f64..1.0, 30 * 2),
        y in prop::collection::vec(-1.0f64..1.0, 30),
        threshold in 0.0f64..0.5,
    ) {
        let lib = PolyLibrary::new(2, 2, false).unwrap();
        let theta = lib.features(&DMatrix::from_row_slice(30, 2, &states));
        let xi = stlsq(&theta, &DMatrix::from_column_slice(30, 1, &y), threshold, 1e-8, 50).unwrap();
        for v in xi.iter() {
            prop_assert!(*v == 0.0 || v.abs() >= threshold * 0.999 || threshold == 0.0);
        }
    }

    #[test]
    fn rmse_symmetric_and_permutation_invariant(
        a in prop::collection::vec(-5.0f64..5.0, 12),
        b in prop::collection::vec(-5.0f64..5.0, 12),
        perm in Just((0usize..12).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let (ma, mb) = (DMatrix::from_row_slice(3, 4, &a), DMatrix::from_row_slice(3, 4, &b));
        let r = rmse_states(&ma, &mb).unwrap();
        prop_assert_eq!(r, rmse_states(&mb, &ma).unwrap());
        let pa: Vec<f64> = perm.iter().map(|&k| a[k]).collect();
        let pb: Vec<f64> = perm.iter().map(|&k| b[k]).collect();
        let rp = rmse_states(&DMatrix::from_row_slice(4, 3, &pa), &DMatrix::from_row_slice(4, 3, &pb)).unwrap();
        prop_assert!((r - rp).abs() <= 1e-12 * (1.0 + r));
        prop_assert!(mape_states(&ma, &mb, 1e-8).unwrap() >= 0.0);
    }

    #[test]
    fn jaccard_bounds_and_nesting(
        a in adjacency(5),
        b in adjacency(5),
        grow in prop::collection::vec(any::<bool>(), 25),
    ) {
        let j = jaccard(&a, &b, 1e-3).unwrap();
        prop_assert!((0.0..=100.0).contains(&j));
        prop_assert_eq!(jaccard(&a, &a, 1e-3).unwrap(), 100.0);
        prop_assert_eq!(j, jaccard(&b, &a, 1e-3).unwrap());
        // Nested supports S ⊆ S' ⊆ supp(a): adding true edges never lowers J.
        let mut small = AdjacencyMatrix::zeros(5);
        let mut large = AdjacencyMatrix::zeros(5);
        for i in 0..5 {
            for j in 0..5 {
                if a.get(i, j) > 1e-3 {
                    large.set(i, j, 1.0);
                    if grow[i * 5 + j] {
                        small.set(i, j, 1.0);
                    }
                }
            }
        }
        prop_assert!(jaccard(&a, &small, 1e-3).unwrap() <= jaccard(&a, &large, 1e-3).unwrap());
    }

    #[test]
    fn trajectory_csv_round_trip(
        vals in prop::collection::vec(prop_oneof![-1e6f64..1e6, -1e-6f64..1e-6], 7 * 3),
        with_deriv in any::<bool>(),
        dt in 1e-4f64..1.0,
    ) {
        let states = DMatrix::from_row_slice(7, 3, &vals);
        let deriv = with_deriv.then(|| states.map(|v| -2.0 * v));
        let traj = Trajectory::new(dt, states, deriv, Origin::SimulatedExact).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        save_trajectory(&traj, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        prop_assert_eq!(back, traj);
    }

    #[test]
    fn identified_model_permutes(
        a in adjacency(4),
        w in prop::collection::vec(-1.0f64..1.0, 4 * 9),
        x in prop::collection::vec(0.1f64..1.5, 4),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let model = IdentifiedModel { w: DMatrix::from_row_slice(4, 9, &w), a_hat: a, library: BasisLibrary::default_library() };
        let pm = model.permuted(&perm);
        let xp: Vec<f64> = perm.iter().map(|&k| x[k]).collect();
        let (mut o, mut op) = (vec![0.0; 4], vec![0.0; 4]);
        model.rhs_into(&x, &mut o);
        pm.rhs_into(&xp, &mut op);
        for k in 0..4 {
            prop_assert!((op[k] - o[perm[k]]).abs() < 1e-12);
        }
    }
}
