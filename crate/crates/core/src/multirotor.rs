//! Simplified 9-state multirotor model with normalized thrust and body-rate
//! inputs. Euler angles follow the ZYX (yaw-pitch-roll) convention.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FrsError, Result};

pub const GRAVITY: f64 = 9.81;

/// Pitch magnitudes at or beyond `π/2 - GIMBAL_MARGIN` are rejected.
pub const GIMBAL_MARGIN: f64 = 1e-6;

pub type Vec3 = Vector3<f64>;
pub type Vec9 = SVector<f64, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultirotorState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Roll, pitch, yaw.
    pub euler: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Thrust per unit mass, m/s².
    pub thrust: f64,
    /// Body angular velocity, rad/s.
    pub omega: Vec3,
}

impl MultirotorState {
    pub fn new(position: Vec3, velocity: Vec3, euler: Vec3) -> Self {
        Self { position, velocity, euler }
    }

    pub fn to_vector(&self) -> Vec9 {
        let mut x = Vec9::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        x.fixed_rows_mut::<3>(6).copy_from(&self.euler);
        x
    }

    pub fn from_vector(x: &Vec9) -> Self {
        Self {
            position: x.fixed_rows::<3>(0).into_owned(),
            velocity: x.fixed_rows::<3>(3).into_owned(),
            euler: x.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_vector().iter().all(|v| v.is_finite()) {
            return Err(FrsError::StateFault("non-finite state".into()));
        }
        check_pitch(self.euler[1])
    }
}

impl ControlInput {
    pub fn new(thrust: f64, omega: Vec3) -> Self {
        Self { thrust, omega }
    }

    pub fn hover() -> Self {
        Self::new(GRAVITY, Vec3::zeros())
    }
}

fn check_pitch(pitch: f64) -> Result<()> {
    if pitch.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(FrsError::GimbalProximity { pitch });
    }
    Ok(())
}

/// Body-to-inertial rotation `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rotation_matrix(euler: &Vec3) -> Matrix3<f64> {
    let (sr, cr) = euler[0].sin_cos();
    let (sp, cp) = euler[1].sin_cos();
    let (sy, cy) = euler[2].sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Thrust axis `R(Φ) e3`.
pub fn body_z(euler: &Vec3) -> Vec3 {
    let (sr, cr) = euler[0].sin_cos();
    let (sp, cp) = euler[1].sin_cos();
    let (sy, cy) = euler[2].sin_cos();
    Vec3::new(cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr)
}

/// `C(Φ)` with `Φ̇ = C(Φ) ω`.
pub fn euler_rate_map(euler: &Vec3) -> Result<Matrix3<f64>> {
    check_pitch(euler[1])?;
    let (sr, cr) = euler[0].sin_cos();
    let (sp, cp) = euler[1].sin_cos();
    let tp = sp / cp;
    Ok(Matrix3::new(
        1.0,
        sr * tp,
        cr * tp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    ))
}

/// `C(Φ)^-1`, mapping Euler-angle rates to body rates.
pub fn euler_rate_map_inverse(euler: &Vec3) -> Result<Matrix3<f64>> {
    check_pitch(euler[1])?;
    let (sr, cr) = euler[0].sin_cos();
    let (sp, cp) = euler[1].sin_cos();
    Ok(Matrix3::new(1.0, 0.0, -sp, 0.0, cr, sr * cp, 0.0, -sr, cr * cp))
}

/// `ẋ = f(x) + g1(x) u + g2 d`.
pub fn dynamics_rhs(x: &MultirotorState, u: &ControlInput, d: &Vec3) -> Result<Vec9> {
    let c = euler_rate_map(&x.euler)?;
    let accel = body_z(&x.euler) * u.thrust - Vec3::new(0.0, 0.0, GRAVITY) + d;
    let mut out = Vec9::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&x.velocity);
    out.fixed_rows_mut::<3>(3).copy_from(&accel);
    out.fixed_rows_mut::<3>(6).copy_from(&(c * u.omega));
    Ok(out)
}

/// One classical RK4 step holding `u` fixed and sampling the disturbance at
/// stage times.
pub fn integrate_step<D>(x: &MultirotorState, u: &ControlInput, d_fn: D, t: f64, dt: f64) -> Result<MultirotorState>
where
    D: Fn(f64) -> Vec3,
{
    if !(dt > 0.0) {
        return Err(FrsError::InvalidParameter(format!("step size {dt} must be positive")));
    }
    let x0 = x.to_vector();
    let rhs = |xv: &Vec9, tau: f64| dynamics_rhs(&MultirotorState::from_vector(xv), u, &d_fn(tau));
    let k1 = rhs(&x0, t)?;
    let k2 = rhs(&(x0 + k1 * (dt / 2.0)), t + dt / 2.0)?;
    let k3 = rhs(&(x0 + k2 * (dt / 2.0)), t + dt / 2.0)?;
    let k4 = rhs(&(x0 + k3 * dt), t + dt)?;
    let next = MultirotorState::from_vector(&(x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));
    next.validate()?;
    Ok(next)
}
