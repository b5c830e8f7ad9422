use frs_core::controller::{CircularTrajectory, ControllerGains};
use frs_core::disturbance::{sample_disturbance, DisturbanceModel, DisturbancePrediction};
use frs_core::ellipsoid::{fuse_intersection, min_trace_box_ellipsoid, min_trace_sum, Ellipsoid};
use frs_core::frs::hopf_step_shape;
use frs_core::multirotor::{rotation_matrix, Vec3};
use frs_core::simulation::{on_reference_state, ClosedLoop};
use frs_core::stability::{build_certificate, default_m_bound};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

fn direction(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn nominal_model() -> DisturbanceModel {
    DisturbanceModel::new(Vec3::new(3.0, 3.0, 1.0), Vec3::repeat(2.0)).unwrap()
}

fn centered_support(q: &DMatrix<f64>, nu: &DVector<f64>) -> f64 {
    nu.dot(&(q * nu)).max(0.0).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn min_trace_sum_contains_minkowski_sum(seed in any::<u64>(), n in 1usize..7, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<_> = (0..m).map(|_| spd(&mut rng, n)).collect();
        let sum = min_trace_sum(&members).unwrap();
        for _ in 0..100 {
            let nu = direction(&mut rng, n);
            let parts: f64 = members.iter().map(|q| centered_support(q, &nu)).sum();
            prop_assert!(centered_support(&sum, &nu) >= parts - 1e-9 * (1.0 + parts));
        }
    }

    #[test]
    fn fusion_keeps_every_shared_point(seed in any::<u64>(), bi in 0usize..4) {
        let b = [0.0, 0.5, 0.99, 1.0][bi];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e1 = Ellipsoid::new(direction(&mut rng, 3) * 0.3, spd(&mut rng, 3)).unwrap();
        let e2 = Ellipsoid::new(direction(&mut rng, 3) * 0.3, spd(&mut rng, 3)).unwrap();
        let fused = match fuse_intersection(&e1, &e2, b) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        let mut kept = 0;
        let mut tries = 0;
        while kept < 1000 && tries < 200_000 {
            tries += 1;
            let x = direction(&mut rng, 3) * 4.0;
            if e1.contains(&x, 0.0).unwrap() && e2.contains(&x, 0.0).unwrap() {
                kept += 1;
                prop_assert!(fused.contains(&x, 1e-9).unwrap());
            }
        }
    }

    #[test]
    fn projection_support_equals_padded_support(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Ellipsoid::new(direction(&mut rng, n), spd(&mut rng, n)).unwrap();
        let kept: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        prop_assume!(!kept.is_empty());
        let p = e.project(&kept).unwrap();
        for _ in 0..100 {
            let nu = direction(&mut rng, kept.len());
            let mut padded = DVector::zeros(n);
            for (k, &i) in kept.iter().enumerate() {
                padded[i] = nu[k];
            }
            let (a, b) = (p.support(&nu).unwrap(), e.support(&padded).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn linear_map_membership_is_equivalent(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Ellipsoid::new(direction(&mut rng, n), spd(&mut rng, n)).unwrap();
        let t = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(n, n) * 3.0;
        let mapped = e.linear_map(&t).unwrap();
        for _ in 0..1000 {
            let x = e.center() + direction(&mut rng, n) * 2.0;
            let form = e.quadratic_form(&x).unwrap();
            if (form - 1.0).abs() < 1e-6 {
                continue;
            }
            prop_assert_eq!(form <= 1.0, mapped.quadratic_form(&(&t * &x)).unwrap() <= 1.0);
        }
    }

    #[test]
    fn box_ellipsoid_constraint_is_active(a in 1e-3f64..50.0, b in 1e-3f64..50.0, c in 1e-3f64..50.0) {
        let d = Vector3::new(a, b, c);
        let l = min_trace_box_ellipsoid(&d).unwrap();
        let activity: f64 = (0..3).map(|i| l[(i, i)] * d[i] * d[i]).sum();
        prop_assert!((activity - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn larger_input_bounds_never_shrink_the_step_set(seed in any::<u64>(), channels in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::from_fn(6, channels, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let beta = DVector::from_fn(channels, |_, _| rng.gen_range(0.0..2.0));
        let bigger = &beta + DVector::from_fn(channels, |_, _| rng.gen_range(0.0..1.0));
        let small = hopf_step_shape(&samples, &beta, 0.02, 1e-9).unwrap();
        let large = hopf_step_shape(&samples, &bigger, 0.02, 1e-9).unwrap();
        for _ in 0..100 {
            let nu = direction(&mut rng, 6);
            let s = centered_support(&small, &nu);
            prop_assert!(centered_support(&large, &nu) >= s - 1e-9 * (1.0 + s));
        }
    }

    #[test]
    fn rotation_matrices_are_orthonormal(r in -1.5f64..1.5, p in -1.4f64..1.4, y in -3.2f64..3.2) {
        let m = rotation_matrix(&Vec3::new(r, p, y));
        prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn certificate_is_monotone(alpha in 0.01f64..5.0, bump in 0.0f64..5.0, s in 0.0f64..0.5, drop in 0.0f64..1.0) {
        let g = ControllerGains::default();
        let m = default_m_bound(3.6, &nominal_model());
        let base = build_certificate(&g, alpha, &nominal_model(), s, 0.8, 0.8, m);
        let faster = build_certificate(&g, alpha + bump, &nominal_model(), s, 0.8, 0.8, m);
        prop_assert!(!base.observer_gain_ok || faster.observer_gain_ok);
        let tighter = build_certificate(&g, alpha, &nominal_model(), s * drop, 0.8, 0.8, m);
        prop_assert!(!base.tilt.holds || tighter.tilt.holds);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_paths_respect_both_bounds(seed in any::<u64>()) {
        let model = nominal_model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d0 = Vec3::from_fn(|i, _| rng.gen_range(-model.bound[i]..=model.bound[i]));
        let path = sample_disturbance(&model, &d0, 0.0, 5.0, 0.02, &mut rng).unwrap();
        for k in 0..path.values.len() {
            prop_assert!(model.is_admissible_value(&path.value(k)));
            if k + 1 < path.values.len() {
                let s = path.slope(k);
                for i in 0..3 {
                    prop_assert!(s[i].abs() <= model.rate_bound[i] + 1e-9);
                }
            }
        }
    }

    /// Observe from `d̂(0) = 0`, predict at `t0`, and check that the rest of
    /// the path stays inside the predicted box with a half-width that never
    /// shrinks.
    #[test]
    fn prediction_box_contains_future_disturbance(seed in any::<u64>(), warm in 0usize..150) {
        let model = nominal_model();
        let traj = CircularTrajectory::default();
        let cl = ClosedLoop {
            reference: &traj,
            gains: ControllerGains::default(),
            alpha_d: 2.0,
            use_estimate: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d0 = Vec3::from_fn(|i, _| rng.gen_range(-model.bound[i]..=model.bound[i]));
        let horizon = 135;
        let path = sample_disturbance(&model, &d0, 0.0, (warm + horizon) as f64 * 0.02, 0.02, &mut rng).unwrap();
        let x0 = on_reference_state(&traj, 0.0).unwrap();
        let run = cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, warm + horizon, 0.02).unwrap();
        let t0 = run[warm].t;
        let pred = DisturbancePrediction::from_observation(model, 2.0, 0.8, t0, run[warm].d_hat).unwrap();
        let mut previous = Vec3::zeros();
        for s in &run[warm..] {
            let (c, h) = pred.predict_bounds(s.t).unwrap();
            for i in 0..3 {
                prop_assert!((s.d[i] - c[i]).abs() <= h[i] + 1e-9);
                prop_assert!(h[i] >= previous[i] - 1e-12);
            }
            previous = h;
        }
    }
}
