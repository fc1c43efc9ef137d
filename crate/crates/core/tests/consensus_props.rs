mod common;

use std::sync::Arc;

use gpcons::control::{consensus_error, control_input, ultimate_bound_radius, ControlMode, Gains};
use gpcons::fusion::{fuse, pointwise_bound, LocalPrediction};
use gpcons::sim::lyapunov;
use gpcons::strategy::{DistributedGp, NoLearning};
use gpcons::Topology;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn predictions() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|k| {
        (
            prop::collection::vec((-5.0f64..5.0, 1e-4f64..10.0), k),
            prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..3.0], k),
        )
    })
}

fn locals(p: &[(f64, f64)]) -> Vec<LocalPrediction> {
    p.iter()
        .enumerate()
        .map(|(agent, &(mean, variance))| LocalPrediction {
            agent,
            dim: 0,
            mean,
            variance,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fusion_weights_hull_precision((p, a) in predictions()) {
        let l = locals(&p);
        let f = fuse(&l[0], &l[1..], &a).unwrap();
        let total: f64 = f.weights.values().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(f.weights.values().all(|&w| w >= 0.0));
        let lo = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let hi = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(f.mean >= lo - 1e-12 && f.mean <= hi + 1e-12);
        prop_assert!(f.precision >= 1.0 / p[0].1);
        let b = pointwise_bound(&f, &l, 4.0, &vec![0.1; p.len()]).unwrap();
        prop_assert!(b >= 0.0);
    }

    #[test]
    fn stacked_identity(seed in any::<u64>(), n in 1usize..=10, m in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (edges, leaders) = common::random_connected_graph(&mut rng, n);
        let t = Topology::from_edges(n, &edges, &leaders).unwrap();
        let leader: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let cs = consensus_error(&xs, &leader, &t).unwrap();
        let big = common::kron_identity(&common::grounded_from_edges(n, &edges, &leaders), m);
        let expected = common::mat_vec(&big, &cs.stacked_e());
        prop_assert!(common::max_abs_diff(&cs.stacked_xi(), &expected) <= 1e-12);
    }

    #[test]
    fn lyapunov_sandwich(seed in any::<u64>(), n in 1usize..=10, m in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (edges, leaders) = common::random_connected_graph(&mut rng, n);
        let t = Topology::from_edges(n, &edges, &leaders).unwrap();
        let g = t.grounded_laplacian().unwrap();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let cs = consensus_error(&xs, &vec![0.0; m], &t).unwrap();
        let v2 = 2.0 * lyapunov(&cs.stacked_e(), &g, m).unwrap();
        let xi2: f64 = cs.stacked_xi().iter().map(|v| v * v).sum();
        let tol = 1e-9 * (1.0 + xi2);
        prop_assert!(g.inverse_lambda_min() * xi2 <= v2 + tol);
        prop_assert!(v2 <= g.inverse_lambda_max() * xi2 + tol);
    }

    #[test]
    fn radius_monotone(nu in 0.0f64..100.0, dnu in 0.0f64..10.0, k in 0.1f64..10.0, dk in 0.0f64..5.0,
                       lam in 0.05f64..5.0, dlam in 0.0f64..5.0) {
        let r = ultimate_bound_radius(nu, k, lam).unwrap();
        prop_assert!(ultimate_bound_radius(nu + dnu, k, lam).unwrap() >= r);
        prop_assert!(ultimate_bound_radius(nu, k + dk, lam).unwrap() <= r);
        prop_assert!(ultimate_bound_radius(nu, k, lam + dlam).unwrap() <= r);
    }

    #[test]
    fn control_linear_in_consensus_error(a in -5.0f64..5.0, b in -5.0f64..5.0,
                                         x1 in prop::collection::vec(-5.0f64..5.0, 2),
                                         x2 in prop::collection::vec(-5.0f64..5.0, 2),
                                         k in 0.1f64..10.0) {
        let mode = ControlMode { strategy: Arc::new(NoLearning), gains: Gains::uniform(1, k).unwrap() };
        let combo: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let lhs = control_input(&mode, 0, &combo, None, None).unwrap();
        let u1 = control_input(&mode, 0, &x1, None, None).unwrap();
        let u2 = control_input(&mode, 0, &x2, None, None).unwrap();
        let rhs: Vec<f64> = u1.iter().zip(&u2).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(common::max_abs_diff(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn learning_control_affine_in_prediction(xi in prop::collection::vec(-5.0f64..5.0, 2),
                                             p in prop::collection::vec(-5.0f64..5.0, 2)) {
        let mode = ControlMode { strategy: Arc::new(DistributedGp), gains: Gains::uniform(1, 2.0).unwrap() };
        let u = control_input(&mode, 0, &xi, Some(&p), None).unwrap();
        for k in 0..2 {
            prop_assert_eq!(u[k], -2.0 * xi[k] - p[k]);
        }
    }
}
