//! Gain conditions and ultimate bounds for the observer and tracking errors,
//! with empirical audits over simulated closed-loop runs.

use nalgebra::{Matrix3, SMatrix};
use serde::Serialize;

use crate::controller::ControllerGains;
use crate::disturbance::{ultimate_error_radius, DisturbanceModel, DisturbancePath};
use crate::error::{FrsError, Result};
use crate::multirotor::{body_z, Vec3, GRAVITY};
use crate::simulation::{ClosedLoop, SimSample};

/// Third gain hypothesis: `s_m < -λmin(Q1) / λmin(Q2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltCondition {
    /// `-λmin(Q1)/λmin(Q2)`; `None` when `λmin(Q2) >= 0`.
    pub s_m_limit: Option<f64>,
    /// True when `λmin(Q2) >= 0`, so the hypothesis places no limit on `s_m`.
    pub vacuous: bool,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub k_p: f64,
    pub k_v: f64,
    pub alpha_d: f64,
    pub s_m: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub q1: Matrix3<f64>,
    pub q2: Matrix3<f64>,
    pub q: Matrix3<f64>,
    pub p: SMatrix<f64, 6, 6>,
    pub lambda_min_q1: f64,
    pub lambda_min_q2: f64,
    pub lambda_min_q: f64,
    pub m_bound: f64,
    pub n_bound: f64,
    /// `k_v > 1`.
    pub velocity_gain_ok: bool,
    /// `α_d > (1/k_p + 1/(k_v - 1)) / 4`.
    pub observer_gain_limit: f64,
    pub observer_gain_ok: bool,
    pub tilt: TiltCondition,
    pub q_positive_definite: bool,
    /// `N / (λmin(Q) θ2)`; infinite when `Q` is not positive definite.
    pub uub_radius_translational: f64,
    /// `‖β‖ / (α_d θ1)`.
    pub uub_radius_disturbance: f64,
    /// Guaranteed decay rate `α_d (1 - θ1)` of `‖e_d‖`.
    pub disturbance_rate: f64,
    pub conditions_ok: bool,
}

fn lambda_min(m: &Matrix3<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

/// `g + max ‖p̈_r‖ + ‖L‖` given the peak reference acceleration.
pub fn default_m_bound(max_reference_accel: f64, model: &DisturbanceModel) -> f64 {
    GRAVITY + max_reference_accel + model.bound.norm()
}

/// Evaluates the gain hypotheses and the ultimate bounds. Never fails for
/// infeasible gains; the flags report which hypothesis broke.
pub fn build_certificate(
    gains: &ControllerGains,
    alpha_d: f64,
    model: &DisturbanceModel,
    s_m: f64,
    theta1: f64,
    theta2: f64,
    m_bound: f64,
) -> StabilityCertificate {
    let (kp, kv) = (gains.k_p, gains.k_v);
    let q1 = Matrix3::new(kp, 0.0, -0.5, 0.0, kv - 1.0, -0.5, -0.5, -0.5, alpha_d);
    let c = -(kp + kv) / 2.0;
    let q2 = Matrix3::new(-kp, c, -0.5, c, -kv, -0.5, -0.5, -0.5, 0.0);
    let q = q1 + q2 * s_m;
    let mut p = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        p[(i, i)] = kp + kv;
        p[(i, 3 + i)] = 1.0;
        p[(3 + i, i)] = 1.0;
        p[(3 + i, 3 + i)] = 1.0;
    }
    let (l1, l2, lq) = (lambda_min(&q1), lambda_min(&q2), lambda_min(&q));

    let velocity_gain_ok = kv > 1.0;
    let observer_gain_limit = if velocity_gain_ok {
        0.25 * (1.0 / kp + 1.0 / (kv - 1.0))
    } else {
        f64::INFINITY
    };
    let observer_gain_ok = velocity_gain_ok && alpha_d > observer_gain_limit;
    let tilt = if l2 < 0.0 {
        let limit = -l1 / l2;
        TiltCondition {
            s_m_limit: Some(limit),
            vacuous: false,
            holds: s_m < limit,
        }
    } else {
        TiltCondition {
            s_m_limit: None,
            vacuous: true,
            holds: true,
        }
    };
    let n_bound = (2.0 * s_m * s_m * m_bound * m_bound + model.rate_bound.norm_squared()).sqrt();
    let q_positive_definite = lq > 0.0;
    let uub_radius_translational = if q_positive_definite && theta2 > 0.0 {
        n_bound / (lq * theta2)
    } else {
        f64::INFINITY
    };
    StabilityCertificate {
        k_p: kp,
        k_v: kv,
        alpha_d,
        s_m,
        theta1,
        theta2,
        q1,
        q2,
        q,
        p,
        lambda_min_q1: l1,
        lambda_min_q2: l2,
        lambda_min_q: lq,
        m_bound,
        n_bound,
        velocity_gain_ok,
        observer_gain_limit,
        observer_gain_ok,
        tilt,
        q_positive_definite,
        uub_radius_translational,
        uub_radius_disturbance: ultimate_error_radius(model, alpha_d, theta1),
        disturbance_rate: alpha_d * (1.0 - theta1),
        conditions_ok: velocity_gain_ok && observer_gain_ok && tilt.holds && q_positive_definite,
    }
}

/// `|sin φ_b|` between the desired thrust direction and the body z axis.
pub fn tilt_sine(sample: &SimSample) -> f64 {
    let f = sample.control.f_d;
    let n = f.norm();
    if n == 0.0 {
        return 0.0;
    }
    (f / n).cross(&body_z(&sample.state.euler)).norm()
}

/// Largest `|sin φ_b|` over a set of runs.
pub fn measured_s_m(runs: &[Vec<SimSample>]) -> f64 {
    runs.iter().flatten().map(tilt_sine).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisturbanceAudit {
    pub runs: usize,
    pub radius: f64,
    /// `2 α_d (1 - θ1)`, the guaranteed decay rate of `‖e_d‖²/2` outside the ball.
    pub rate_bound: f64,
    /// Fraction of `rate_bound` the measured rates must reach.
    pub rate_tolerance: f64,
    pub intervals_outside: usize,
    pub min_rate_outside: Option<f64>,
    pub rate_violations: usize,
    /// Time after which `r(t)` equals the ultimate radius.
    pub settle_time: f64,
    pub max_ultimate_error: f64,
    pub ultimate_tolerance: f64,
    pub ultimate_violations: usize,
    /// Samples where `‖e_d(t)‖ > r(t)`.
    pub envelope_violations: usize,
}

impl DisturbanceAudit {
    pub fn passed(&self) -> bool {
        self.rate_violations == 0 && self.ultimate_violations == 0 && self.envelope_violations == 0
    }
}

/// Checks observer-error decay and ultimate bound over runs that each start
/// with `d̂ = 0` at their first sample.
pub fn audit_disturbance_convergence(
    runs: &[Vec<SimSample>],
    model: &DisturbanceModel,
    alpha_d: f64,
    theta1: f64,
) -> Result<DisturbanceAudit> {
    if !(theta1 > 0.0 && theta1 < 1.0) || !(alpha_d > 0.0) {
        return Err(FrsError::InvalidParameter("need alpha_d > 0 and theta1 in (0, 1)".into()));
    }
    let radius = ultimate_error_radius(model, alpha_d, theta1);
    let decay = (1.0 - theta1) * alpha_d;
    let rate_bound = 2.0 * decay;
    let rate_tolerance = 0.8;
    let ultimate_tolerance = 1.05;
    let l_norm = model.bound.norm();
    let settle_time = if radius > 0.0 {
        (l_norm / radius).ln().max(0.0) / decay
    } else {
        f64::INFINITY
    };
    let mut audit = DisturbanceAudit {
        runs: runs.len(),
        radius,
        rate_bound,
        rate_tolerance,
        intervals_outside: 0,
        min_rate_outside: None,
        rate_violations: 0,
        settle_time,
        max_ultimate_error: 0.0,
        ultimate_tolerance,
        ultimate_violations: 0,
        envelope_violations: 0,
    };
    for run in runs {
        let Some(first) = run.first() else { continue };
        let t_start = first.t;
        let err = |s: &SimSample| (s.d - s.d_hat).norm();
        for s in run {
            let e = err(s);
            let tau = s.t - t_start;
            let envelope = (l_norm * (-decay * tau).exp()).max(radius);
            if e > envelope * (1.0 + 1e-6) + 1e-9 {
                audit.envelope_violations += 1;
            }
            if tau >= settle_time {
                audit.max_ultimate_error = audit.max_ultimate_error.max(e);
                if e > radius * ultimate_tolerance {
                    audit.ultimate_violations += 1;
                }
            }
        }
        for w in run.windows(2) {
            let (e0, e1) = (err(&w[0]), err(&w[1]));
            if e0 >= radius && e1 >= radius && e0 > 0.0 && e1 > 0.0 {
                let dt = w[1].t - w[0].t;
                let rate = -2.0 * (e1 / e0).ln() / dt;
                audit.intervals_outside += 1;
                audit.min_rate_outside = Some(audit.min_rate_outside.map_or(rate, |m: f64| m.min(rate)));
                if rate < rate_tolerance * rate_bound {
                    audit.rate_violations += 1;
                }
            }
        }
    }
    Ok(audit)
}

/// Right-hand side of the tracking-error dynamics
/// `ė_v = -k_p e_p - k_v e_v + e_d + ‖f_d‖ sin φ_b w`, where the tilt term is
/// `(f_d · z_b) z_b - f_d`.
pub fn error_dynamics_rhs(sample: &SimSample, sigma_pos: &Vec3, sigma_vel: &Vec3, gains: &ControllerGains) -> Vec3 {
    let e_p = sample.state.position - sigma_pos;
    let e_v = sample.state.velocity - sigma_vel;
    let e_d = sample.d - sample.d_hat;
    let z_b = body_z(&sample.state.euler);
    let f_d = sample.control.f_d;
    let tilt = z_b * f_d.dot(&z_b) - f_d;
    -e_p * gains.k_p - e_v * gains.k_v + e_d + tilt
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDynamicsAudit {
    pub samples: usize,
    /// Max over grid intervals of `|secant - Simpson|` for `e_p`, `e_v`, `e_d`.
    pub max_residual_p: f64,
    pub max_residual_v: f64,
    pub max_residual_d: f64,
    pub residual_tolerance: f64,
    pub max_tilt_sine: f64,
    pub radius: f64,
    pub radius_tolerance: f64,
    /// First time `‖[‖e_p‖, ‖e_v‖, ‖e_d‖]‖` is within the radius.
    pub entry_time: Option<f64>,
    pub max_error_after_entry: f64,
    pub bound_violations: usize,
}

impl ErrorDynamicsAudit {
    pub fn passed(&self) -> bool {
        self.max_residual_p < self.residual_tolerance
            && self.max_residual_v < self.residual_tolerance
            && self.max_residual_d < self.residual_tolerance
            && self.entry_time.is_some()
            && self.bound_violations == 0
    }
}

/// Compares the reconstructed error dynamics with the simulated error
/// increments on every grid interval, and checks the ultimate bound of the
/// stacked error norm against `radius`.
///
/// The disturbance is piecewise linear on the simulation grid, so each
/// interval is smooth; the midpoint is re-simulated with a half step and the
/// increment is compared against Simpson's rule.
pub fn audit_error_dynamics(cl: &ClosedLoop<'_>, run: &[SimSample], radius: f64) -> Result<ErrorDynamicsAudit> {
    let mut audit = ErrorDynamicsAudit {
        samples: run.len(),
        max_residual_p: 0.0,
        max_residual_v: 0.0,
        max_residual_d: 0.0,
        residual_tolerance: 1e-3,
        max_tilt_sine: 0.0,
        radius,
        radius_tolerance: 1.10,
        entry_time: None,
        max_error_after_entry: 0.0,
        bound_violations: 0,
    };
    let errors = |s: &SimSample| -> Result<(Vec3, Vec3, Vec3, Vec3)> {
        let sigma = cl.reference.sample(s.t)?;
        Ok((
            s.state.position - sigma.position,
            s.state.velocity - sigma.velocity,
            s.d - s.d_hat,
            error_dynamics_rhs(s, &sigma.position, &sigma.velocity, &cl.gains),
        ))
    };
    let grid = run.iter().map(errors).collect::<Result<Vec<_>>>()?;
    for (s, (e_p, e_v, e_d, _)) in run.iter().zip(&grid) {
        audit.max_tilt_sine = audit.max_tilt_sine.max(tilt_sine(s));
        let norm = Vec3::new(e_p.norm(), e_v.norm(), e_d.norm()).norm();
        if audit.entry_time.is_none() && norm <= radius {
            audit.entry_time = Some(s.t);
        }
        if audit.entry_time.is_some() {
            audit.max_error_after_entry = audit.max_error_after_entry.max(norm);
            if norm > radius * audit.radius_tolerance {
                audit.bound_violations += 1;
            }
        }
    }
    for (k, w) in run.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        let half = DisturbancePath {
            t0: w[0].t,
            dt: dt / 2.0,
            values: vec![w[0].d, (w[0].d + w[1].d) * 0.5, w[1].d],
        };
        let mid = cl.simulate(&w[0].state, &w[0].d_hat, &half, w[0].t, 1, dt / 2.0)?;
        let (_, vm, dm, rm) = errors(&mid[1])?;
        let (p0, v0, d0, r0) = grid[k];
        let (p1, v1, d1, r1) = grid[k + 1];
        let simpson = |a: Vec3, m: Vec3, b: Vec3| (a + m * 4.0 + b) / 6.0;
        let slope = (w[1].d - w[0].d) / dt;
        let res_p = ((p1 - p0) / dt - simpson(v0, vm, v1)).amax();
        let res_v = ((v1 - v0) / dt - simpson(r0, rm, r1)).amax();
        let res_d = ((d1 - d0) / dt - (slope - simpson(d0, dm, d1) * cl.alpha_d)).amax();
        audit.max_residual_p = audit.max_residual_p.max(res_p);
        audit.max_residual_v = audit.max_residual_v.max(res_v);
        audit.max_residual_d = audit.max_residual_d.max(res_d);
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{CircularTrajectory, Reference};
    use crate::disturbance::{error_radius, sample_disturbance, DisturbancePath};
    use crate::simulation::{on_reference_state, ClosedLoop};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nominal_model() -> DisturbanceModel {
        DisturbanceModel::new(Vec3::new(3.0, 3.0, 1.0), Vec3::repeat(2.0)).unwrap()
    }

    fn cert(gains: &ControllerGains, alpha_d: f64, s_m: f64) -> StabilityCertificate {
        build_certificate(gains, alpha_d, &nominal_model(), s_m, 0.8, 0.8, default_m_bound(3.6, &nominal_model()))
    }

    #[test]
    fn default_gains_hypotheses() {
        let c = cert(&ControllerGains::default(), 2.0, 0.05);
        assert!(c.velocity_gain_ok);
        // (1/18 + 1/5) / 4
        assert_relative_eq!(c.observer_gain_limit, 0.0638888888888889, epsilon = 1e-15);
        assert!(c.observer_gain_ok);
        assert_relative_eq!(c.uub_radius_disturbance, 2.0 * 3f64.sqrt() / 1.6, epsilon = 1e-15);
        assert_relative_eq!(c.uub_radius_disturbance, 2.165, epsilon = 5e-4);
        assert_relative_eq!(c.m_bound, 9.81 + 3.6 + 19f64.sqrt(), epsilon = 1e-12);
        assert!(c.lambda_min_q2 < 0.0);
        assert!(!c.tilt.vacuous);
        assert!(c.q_positive_definite);
        assert!(c.uub_radius_translational.is_finite() && c.uub_radius_translational > 0.0);
        assert_eq!(c.conditions_ok, c.tilt.holds);
        for m in [c.q1, c.q2, c.q] {
            assert_eq!(m, m.transpose());
        }
        assert_eq!(c.p, c.p.transpose());
    }

    #[test]
    fn small_velocity_gain_fails() {
        let mut g = ControllerGains::default();
        g.k_v = 0.5;
        let c = cert(&g, 2.0, 0.05);
        assert!(!c.velocity_gain_ok);
        assert!(!c.conditions_ok);
    }

    #[test]
    fn radius_matches_error_radius_asymptote() {
        let c = cert(&ControllerGains::default(), 2.0, 0.05);
        let far = error_radius(&nominal_model(), 2.0, 0.8, 1e3).unwrap();
        assert_eq!(c.uub_radius_disturbance, far);
    }

    #[test]
    fn monotone_in_alpha_and_s_m() {
        let g = ControllerGains::default();
        let mut prev_ok = false;
        for k in 1..200 {
            let alpha = 0.005 * k as f64;
            let ok = cert(&g, alpha, 0.05).observer_gain_ok;
            assert!(ok || !prev_ok, "raising alpha_d falsified the observer hypothesis at {alpha}");
            prev_ok = ok;
        }
        let mut seen_ok = false;
        for k in (0..200).rev() {
            let s_m = 0.001 * k as f64;
            let ok = cert(&g, 2.0, s_m).tilt.holds;
            assert!(ok || !seen_ok, "lowering s_m falsified the tilt hypothesis at {s_m}");
            seen_ok |= ok;
        }
        assert!(cert(&g, 2.0, 0.0).tilt.holds);
    }

    #[test]
    fn q_positive_definite_gives_finite_radius() {
        for kp in [2.0, 8.0, 18.0] {
            for kv in [1.5, 3.0, 6.0] {
                let g = ControllerGains::from_vector([kp, kv, 7.0, 21.0]).unwrap();
                let c = cert(&g, 2.0, 0.01);
                if c.q_positive_definite {
                    assert!(c.lambda_min_q > 0.0);
                    assert!(c.uub_radius_translational.is_finite() && c.uub_radius_translational > 0.0);
                }
            }
        }
    }

    #[test]
    fn vacuous_tilt_branch() {
        // A negative position gain flips Q2's diagonal; only the branch logic is exercised.
        let g = ControllerGains {
            k_p: -40.0,
            k_v: -30.0,
            k_att: Vec3::repeat(7.0),
            s_m: 0.05,
        };
        let c = cert(&g, 2.0, 0.05);
        if c.lambda_min_q2 >= 0.0 {
            assert!(c.tilt.vacuous && c.tilt.holds && c.tilt.s_m_limit.is_none());
        }
        let c = cert(&ControllerGains::default(), 2.0, 0.05);
        assert_eq!(c.tilt.vacuous, c.lambda_min_q2 >= 0.0);
    }

    fn hover_loop(r: &dyn Reference) -> ClosedLoop<'_> {
        ClosedLoop {
            reference: r,
            gains: ControllerGains::default(),
            alpha_d: 2.0,
            use_estimate: true,
        }
    }

    #[test]
    fn constant_disturbance_decays_fast() {
        let traj = CircularTrajectory::default();
        let cl = hover_loop(&traj);
        let x0 = on_reference_state(&traj, 0.0).unwrap();
        let path = DisturbancePath::constant(Vec3::new(3.0, -3.0, 1.0), 0.0, 0.02, 250);
        let run = cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, 250, 0.02).unwrap();
        let audit = audit_disturbance_convergence(&[run.clone()], &nominal_model(), 2.0, 0.8).unwrap();
        assert!(audit.intervals_outside > 0);
        assert!(audit.min_rate_outside.unwrap() >= 0.8 * 2.0 * 2.0 * 0.2);
        assert!(audit.passed());

        // β = 0: the error itself tends to zero.
        let still = DisturbanceModel::new(nominal_model().bound, Vec3::zeros()).unwrap();
        let audit = audit_disturbance_convergence(&[run.clone()], &still, 2.0, 0.8).unwrap();
        assert_eq!(audit.radius, 0.0);
        let last = run.last().unwrap();
        assert!((last.d - last.d_hat).norm() < 1e-3);
        assert!(audit.rate_violations == 0);
    }

    #[test]
    fn on_reference_run_has_no_error_dynamics() {
        let traj = CircularTrajectory::default();
        let cl = hover_loop(&traj);
        let x0 = on_reference_state(&traj, 0.0).unwrap();
        let path = DisturbancePath::constant(Vec3::zeros(), 0.0, 0.02, 200);
        let run = cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, 200, 0.02).unwrap();
        let audit = audit_error_dynamics(&cl, &run, 1.0).unwrap();
        assert!(audit.max_residual_v < 1e-4, "{audit:?}");
        assert!(audit.max_error_after_entry < 1e-3);
        assert!(audit.max_tilt_sine < 1e-4);
        assert!(audit.passed());
    }

    #[test]
    fn tilt_term_vanishes_when_aligned() {
        let traj = CircularTrajectory::default();
        let cl = hover_loop(&traj);
        let sigma = traj.sample(1.0).unwrap();
        let x = on_reference_state(&traj, 1.0).unwrap();
        let control = cl.control(1.0, &x, &Vec3::zeros()).unwrap();
        let s = SimSample {
            t: 1.0,
            state: x,
            d_hat: Vec3::zeros(),
            d: Vec3::zeros(),
            control,
        };
        assert!(tilt_sine(&s) < 1e-12);
        let rhs = error_dynamics_rhs(&s, &sigma.position, &sigma.velocity, &cl.gains);
        assert!(rhs.norm() < 1e-12);
    }

    #[test]
    fn sampled_runs_stay_in_disturbance_ball() {
        let traj = CircularTrajectory::default();
        let cl = hover_loop(&traj);
        let model = nominal_model();
        let x0 = on_reference_state(&traj, 0.0).unwrap();
        let runs: Vec<_> = (0..5)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
                let path = sample_disturbance(&model, &Vec3::new(2.5, -2.5, 0.8), 0.0, 6.0, 0.02, &mut rng).unwrap();
                cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, 300, 0.02).unwrap()
            })
            .collect();
        let audit = audit_disturbance_convergence(&runs, &model, 2.0, 0.8).unwrap();
        assert!(audit.passed(), "{audit:?}");
        let s_m = measured_s_m(&runs);
        assert!(s_m > 0.0 && s_m < 0.5);
    }
}
