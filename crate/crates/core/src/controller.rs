//! Flat-output references and the disturbance-compensating tracking controller.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{FrsError, Result};
use crate::multirotor::{body_z, euler_rate_map_inverse, ControlInput, MultirotorState, Vec3, GIMBAL_MARGIN, GRAVITY};

/// Step used to differentiate the feedforward attitude in time.
const ATTITUDE_RATE_STEP: f64 = 1e-4;

/// Reference position/yaw with the derivatives the controller consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatOutput {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    /// Rate of the feedforward attitude `desired_attitude(g e3 + p̈_r, ψ_r)`.
    pub attitude_rate: Vec3,
}

impl FlatOutput {
    /// Feedforward Euler angles along the reference.
    pub fn feedforward_attitude(&self) -> Result<Vec3> {
        desired_attitude(&(Vec3::new(0.0, 0.0, GRAVITY) + self.acceleration), self.yaw)
    }

    pub fn hover_at(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            yaw: 0.0,
            yaw_rate: 0.0,
            attitude_rate: Vec3::zeros(),
        }
    }
}

/// Anything that can be sampled as a flat output over time.
pub trait Reference: Sync {
    fn sample(&self, t: f64) -> Result<FlatOutput>;
}

impl Reference for FlatOutput {
    fn sample(&self, _t: f64) -> Result<FlatOutput> {
        Ok(*self)
    }
}

/// Circle of radius `radius` traversed at `rate`, tilted by a roll then a yaw
/// rotation, with constant zero yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircularTrajectory {
    pub radius: f64,
    pub rate: f64,
    pub tilt_roll: f64,
    pub tilt_yaw: f64,
    pub center: Vec3,
}

impl Default for CircularTrajectory {
    fn default() -> Self {
        Self {
            radius: 10.0,
            rate: 0.6,
            tilt_roll: 30f64.to_radians(),
            tilt_yaw: 30f64.to_radians(),
            center: Vec3::zeros(),
        }
    }
}

impl CircularTrajectory {
    fn tilt(&self) -> Matrix3<f64> {
        let (sr, cr) = self.tilt_roll.sin_cos();
        let (sy, cy) = self.tilt_yaw.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        rz * rx
    }

    /// Position and its first two derivatives.
    pub fn kinematics(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let (s, c) = (self.rate * t).sin_cos();
        let (rho, w) = (self.radius, self.rate);
        let tilt = self.tilt();
        let p = tilt * Vec3::new(rho * c, rho * s, 0.0) + self.center;
        let v = tilt * Vec3::new(-rho * w * s, rho * w * c, 0.0);
        let a = tilt * Vec3::new(-rho * w * w * c, -rho * w * w * s, 0.0);
        (p, v, a)
    }

    fn feedforward_attitude_at(&self, t: f64) -> Result<Vec3> {
        let (_, _, a) = self.kinematics(t);
        desired_attitude(&(Vec3::new(0.0, 0.0, GRAVITY) + a), 0.0)
    }
}

impl Reference for CircularTrajectory {
    fn sample(&self, t: f64) -> Result<FlatOutput> {
        let (position, velocity, acceleration) = self.kinematics(t);
        let h = ATTITUDE_RATE_STEP;
        let attitude_rate =
            wrap_angles(&(self.feedforward_attitude_at(t + h)? - self.feedforward_attitude_at(t - h)?)) / (2.0 * h);
        Ok(FlatOutput {
            position,
            velocity,
            acceleration,
            yaw: 0.0,
            yaw_rate: 0.0,
            attitude_rate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub k_p: f64,
    pub k_v: f64,
    /// Roll, pitch, yaw attitude gains.
    pub k_att: Vec3,
    /// Bound on `|sin φ_b|` used only by the stability certificate.
    pub s_m: f64,
}

impl ControllerGains {
    /// Maps a gain vector `[k_p, k_v, k_roll_pitch, k_yaw]`.
    pub fn from_vector(k: [f64; 4]) -> Result<Self> {
        let gains = Self {
            k_p: k[0],
            k_v: k[1],
            k_att: Vec3::new(k[2], k[2], k[3]),
            s_m: 0.05,
        };
        gains.validate()?;
        Ok(gains)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0 && self.k_v > 0.0) || self.k_att.iter().any(|k| !(*k > 0.0)) {
            return Err(FrsError::InvalidParameter("controller gains must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self::from_vector([18.0, 6.0, 7.0, 21.0]).expect("positive gains")
    }
}

/// Wraps each component into `(-π, π]`.
pub fn wrap_angles(v: &Vec3) -> Vec3 {
    v.map(|a| {
        let w = a.rem_euclid(std::f64::consts::TAU);
        if w > std::f64::consts::PI {
            w - std::f64::consts::TAU
        } else {
            w
        }
    })
}

/// ZYX Euler angles whose thrust axis is `f_d / ‖f_d‖` and whose yaw is `yaw`.
pub fn desired_attitude(f_d: &Vec3, yaw: f64) -> Result<Vec3> {
    let norm = f_d.norm();
    if !(norm >= 1e-6) {
        return Err(FrsError::DegenerateThrust { norm });
    }
    let z = f_d / norm;
    let (sy, cy) = yaw.sin_cos();
    // Thrust axis expressed in the yaw-aligned frame: [sθ cφ, -sφ, cθ cφ].
    let zx = cy * z[0] + sy * z[1];
    let zy = -sy * z[0] + cy * z[1];
    let zz = z[2];
    let roll = (-zy).atan2((zx * zx + zz * zz).sqrt());
    let pitch = zx.atan2(zz);
    if pitch.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(FrsError::GimbalProximity { pitch });
    }
    Ok(Vec3::new(roll, pitch, yaw))
}

/// `ω = C(Φ)^-1 (Φ̇_r - k_Φ ∘ (Φ - Φ_r))`.
pub fn attitude_law(euler: &Vec3, euler_ref: &Vec3, euler_ref_rate: &Vec3, gains: &ControllerGains) -> Result<Vec3> {
    let err = wrap_angles(&(euler - euler_ref));
    let rate = euler_ref_rate - gains.k_att.component_mul(&err);
    Ok(euler_rate_map_inverse(euler)? * rate)
}

/// Controller output with the intermediate quantities the audits inspect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub input: ControlInput,
    pub f_d: Vec3,
    pub attitude_ref: Vec3,
    /// True when the thrust floor at zero was active.
    pub saturated: bool,
}

/// `f_d = -k_p e_p - k_v e_v + g e3 + p̈_r - d̂`, `F = f_d · z_b`, attitude
/// tracking toward the thrust direction.
pub fn adaptive_control(
    x: &MultirotorState,
    d_hat: &Vec3,
    sigma: &FlatOutput,
    gains: &ControllerGains,
) -> Result<ControlOutput> {
    let e_p = x.position - sigma.position;
    let e_v = x.velocity - sigma.velocity;
    let f_d = -e_p * gains.k_p - e_v * gains.k_v + Vec3::new(0.0, 0.0, GRAVITY) + sigma.acceleration - d_hat;
    let attitude_ref = desired_attitude(&f_d, sigma.yaw)?;
    let raw_thrust = f_d.dot(&body_z(&x.euler));
    let saturated = raw_thrust < 0.0;
    if saturated {
        log::warn!("thrust floor active (requested {raw_thrust})");
    }
    let omega = attitude_law(&x.euler, &attitude_ref, &sigma.attitude_rate, gains)?;
    Ok(ControlOutput {
        input: ControlInput::new(raw_thrust.max(0.0), omega),
        f_d,
        attitude_ref,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multirotor::rotation_matrix;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn circle_geometry() {
        let traj = CircularTrajectory::default();
        for k in 0..200 {
            let t = k as f64 * 0.05;
            let s = traj.sample(t).unwrap();
            assert_relative_eq!(s.position.norm(), 10.0, epsilon = 1e-12);
            assert_relative_eq!(s.acceleration.norm(), 3.6, epsilon = 1e-12);
            assert_eq!(s.yaw, 0.0);
        }
    }

    #[test]
    fn circle_derivatives_match_finite_differences() {
        let traj = CircularTrajectory::default();
        let h = 1e-4;
        for k in 0..50 {
            let t = 0.3 * k as f64;
            let (p, v, a) = traj.kinematics(t);
            let (pp, vp, _) = traj.kinematics(t + h);
            let (pm, vm, _) = traj.kinematics(t - h);
            assert!(((pp - pm) / (2.0 * h) - v).norm() < 1e-6);
            assert!(((vp - vm) / (2.0 * h) - a).norm() < 1e-6);
            assert!(p.norm() > 0.0);
        }
    }

    #[test]
    fn desired_attitude_examples() {
        let up = Vec3::new(0.0, 0.0, GRAVITY);
        assert_relative_eq!(desired_attitude(&up, 0.0).unwrap(), Vec3::zeros());
        assert_relative_eq!(desired_attitude(&up, 0.5).unwrap(), Vec3::new(0.0, 0.0, 0.5));
        assert!(matches!(desired_attitude(&Vec3::zeros(), 0.0), Err(FrsError::DegenerateThrust { .. })));
        assert!(desired_attitude(&Vec3::new(1.0, 0.0, -1.0), 0.0).is_err());
    }

    #[test]
    fn desired_attitude_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let f = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(1.0..15.0));
            let yaw = rng.gen_range(-3.0..3.0);
            let phi = desired_attitude(&f, yaw).unwrap();
            assert_relative_eq!(rotation_matrix(&phi) * Vec3::z(), f.normalize(), epsilon = 1e-10);
            assert_relative_eq!(phi[2], yaw);
        }
    }

    #[test]
    fn hover_equilibrium_control() {
        let sigma = FlatOutput::hover_at(Vec3::new(1.0, 2.0, 3.0));
        let x = MultirotorState::new(sigma.position, Vec3::zeros(), Vec3::zeros());
        let out = adaptive_control(&x, &Vec3::zeros(), &sigma, &ControllerGains::default()).unwrap();
        assert_relative_eq!(out.f_d, Vec3::new(0.0, 0.0, GRAVITY));
        assert_relative_eq!(out.input.thrust, GRAVITY);
        assert_relative_eq!(out.input.omega, Vec3::zeros());
    }

    #[test]
    fn position_error_enters_thrust_linearly() {
        let gains = ControllerGains::default();
        let sigma = FlatOutput::hover_at(Vec3::zeros());
        let x = MultirotorState::new(Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), Vec3::zeros());
        let out = adaptive_control(&x, &Vec3::zeros(), &sigma, &gains).unwrap();
        assert_relative_eq!(out.f_d, Vec3::new(-18.0, 0.0, GRAVITY));
    }

    #[test]
    fn thrust_equals_projection_of_desired_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let traj = CircularTrajectory::default();
        for _ in 0..200 {
            let sigma = traj.sample(rng.gen_range(0.0..10.0)).unwrap();
            let x = MultirotorState::new(
                sigma.position + Vec3::from_fn(|_, _| rng.gen_range(-0.3..0.3)),
                sigma.velocity,
                Vec3::from_fn(|_, _| rng.gen_range(-0.3..0.3)),
            );
            let out = adaptive_control(&x, &Vec3::zeros(), &sigma, &ControllerGains::default()).unwrap();
            let zb = body_z(&x.euler);
            let zbd = out.f_d.normalize();
            let cos_b = zb.dot(&zbd);
            assert_relative_eq!(out.input.thrust, out.f_d.norm() * cos_b, epsilon = 1e-10);
        }
    }

    #[test]
    fn attitude_error_decays_exponentially() {
        let gains = ControllerGains::default();
        let target = Vec3::new(0.0, 0.1, 0.0);
        let mut euler = target + Vec3::new(0.2, 0.0, 0.0);
        let dt = 1e-3;
        let mut prev_err = f64::INFINITY;
        for k in 1..=1000 {
            // Integrate Φ̇ = C(Φ) ω with RK4.
            let f = |e: &Vec3| -> Vec3 {
                let w = attitude_law(e, &target, &Vec3::zeros(), &gains).unwrap();
                crate::multirotor::euler_rate_map(e).unwrap() * w
            };
            let k1 = f(&euler);
            let k2 = f(&(euler + k1 * (dt / 2.0)));
            let k3 = f(&(euler + k2 * (dt / 2.0)));
            let k4 = f(&(euler + k3 * dt));
            euler += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            let t = k as f64 * dt;
            let expected = 0.2 * (-gains.k_att[0] * t).exp();
            assert!((euler[0] - target[0] - expected).abs() <= 0.01 * expected);
            let err = (euler - target).norm();
            assert!(err < prev_err);
            prev_err = err;
        }
        let still = attitude_law(&target, &target, &Vec3::zeros(), &gains).unwrap();
        assert_eq!(still, Vec3::zeros());
    }

    #[test]
    fn gain_vector_mapping() {
        let g = ControllerGains::from_vector([18.0, 6.0, 7.0, 21.0]).unwrap();
        assert_eq!((g.k_p, g.k_v), (18.0, 6.0));
        assert_eq!(g.k_att, Vec3::new(7.0, 7.0, 21.0));
        assert!(ControllerGains::from_vector([18.0, -6.0, 7.0, 21.0]).is_err());
    }
}
