//! Augmented closed-loop dynamics `y = [x; d̂; d]`, the zero-disturbance
//! reference rollout and its finite-difference linearization.

use nalgebra::{SMatrix, SVector};

use crate::error::{FrsError, Result};
use crate::multirotor::{dynamics_rhs, MultirotorState, Vec3};
use crate::simulation::ClosedLoop;

pub const AUG_DIM: usize = 15;
pub const STATE_DIM: usize = 9;
pub type Vec15 = SVector<f64, AUG_DIM>;
pub type Mat15 = SMatrix<f64, AUG_DIM, AUG_DIM>;

/// Default central-difference step for [`jacobian`].
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Indices of the estimate and true-disturbance blocks.
pub const ESTIMATE_BLOCK: [usize; 3] = [9, 10, 11];
pub const DISTURBANCE_BLOCK: [usize; 3] = [12, 13, 14];

pub fn augment(x: &MultirotorState, d_hat: &Vec3, d: &Vec3) -> Vec15 {
    let mut y = Vec15::zeros();
    y.fixed_rows_mut::<9>(0).copy_from(&x.to_vector());
    y.fixed_rows_mut::<3>(9).copy_from(d_hat);
    y.fixed_rows_mut::<3>(12).copy_from(d);
    y
}

pub fn split(y: &Vec15) -> (MultirotorState, Vec3, Vec3) {
    (
        MultirotorState::from_vector(&y.fixed_rows::<9>(0).into_owned()),
        y.fixed_rows::<3>(9).into_owned(),
        y.fixed_rows::<3>(12).into_owned(),
    )
}

/// `ẏ = ξ(y; σ) + F w`. In baseline wiring the estimate block is frozen and
/// the controller sees `d̂ = 0`.
pub fn augmented_rhs(cl: &ClosedLoop<'_>, t: f64, y: &Vec15, w: &Vec3) -> Result<Vec15> {
    let (x, d_hat, d) = split(y);
    let used = if cl.use_estimate { d_hat } else { Vec3::zeros() };
    let ctrl = cl.control(t, &x, &used)?;
    let mut out = Vec15::zeros();
    out.fixed_rows_mut::<9>(0).copy_from(&dynamics_rhs(&x, &ctrl.input, &d)?);
    if cl.use_estimate {
        out.fixed_rows_mut::<3>(9).copy_from(&((d - d_hat) * cl.alpha_d));
    }
    out.fixed_rows_mut::<3>(12).copy_from(w);
    Ok(out)
}

/// `ξ(y; σ)`, the drift without the disturbance-rate input.
pub fn xi(cl: &ClosedLoop<'_>, t: f64, y: &Vec15) -> Result<Vec15> {
    augmented_rhs(cl, t, y, &Vec3::zeros())
}

fn rk4(cl: &ClosedLoop<'_>, t: f64, y: &Vec15, h: f64) -> Result<Vec15> {
    let k1 = xi(cl, t, y)?;
    let k2 = xi(cl, t + h / 2.0, &(y + k1 * (h / 2.0)))?;
    let k3 = xi(cl, t + h / 2.0, &(y + k2 * (h / 2.0)))?;
    let k4 = xi(cl, t + h, &(y + k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Zero-disturbance reference sampled every half step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub t0: f64,
    pub dt: f64,
    /// `2 * steps + 1` samples at spacing `dt / 2`.
    pub samples: Vec<Vec15>,
}

impl ReferencePath {
    pub fn steps(&self) -> usize {
        (self.samples.len() - 1) / 2
    }
    pub fn at_step(&self, k: usize) -> &Vec15 {
        &self.samples[2 * k]
    }
    pub fn mid_step(&self, k: usize) -> &Vec15 {
        &self.samples[2 * k + 1]
    }
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// Integrates `ẏ_r = ξ(y_r; σ)` from `y0` with the true-disturbance block
/// forced to zero.
pub fn reference_rollout(cl: &ClosedLoop<'_>, y0: &Vec15, t0: f64, steps: usize, dt: f64) -> Result<ReferencePath> {
    if !(dt > 0.0) {
        return Err(FrsError::InvalidParameter(format!("step size {dt} must be positive")));
    }
    let mut y = *y0;
    y.fixed_rows_mut::<3>(12).fill(0.0);
    if !cl.use_estimate {
        y.fixed_rows_mut::<3>(9).fill(0.0);
    }
    let h = dt / 2.0;
    let mut samples = Vec::with_capacity(2 * steps + 1);
    samples.push(y);
    for k in 0..2 * steps {
        y = rk4(cl, t0 + k as f64 * h, &y, h)?;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(FrsError::StateFault("reference rollout diverged".into()));
        }
        samples.push(y);
    }
    Ok(ReferencePath { t0, dt, samples })
}

/// Analytic rows 9..15 of `∂ξ/∂y`.
pub fn structural_rows(alpha_d: f64, use_estimate: bool) -> SMatrix<f64, 6, AUG_DIM> {
    let mut rows = SMatrix::<f64, 6, AUG_DIM>::zeros();
    if use_estimate {
        for i in 0..3 {
            rows[(i, 9 + i)] = -alpha_d;
            rows[(i, 12 + i)] = alpha_d;
        }
    }
    rows
}

/// Central-difference Jacobian of `ξ` at `y` with per-component step `h`,
/// without overwriting the analytic rows.
pub fn jacobian_fd(cl: &ClosedLoop<'_>, t: f64, y: &Vec15, h: f64) -> Result<Mat15> {
    let mut a = Mat15::zeros();
    for j in 0..AUG_DIM {
        let mut yp = *y;
        let mut ym = *y;
        yp[j] += h;
        ym[j] -= h;
        // Use the representable step actually taken.
        let span = yp[j] - ym[j];
        let col = (xi(cl, t, &yp)? - xi(cl, t, &ym)?) / span;
        a.set_column(j, &col);
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(FrsError::StateFault("non-finite Jacobian".into()));
    }
    Ok(a)
}

/// `A(t) = ∂ξ/∂y` at `(y, σ(t))`. The estimate and disturbance rows are
/// checked against their analytic form and then set exactly.
pub fn jacobian(cl: &ClosedLoop<'_>, t: f64, y: &Vec15, h: f64) -> Result<Mat15> {
    let mut a = jacobian_fd(cl, t, y, h)?;
    let exact = structural_rows(cl.alpha_d, cl.use_estimate);
    let dev = (a.fixed_rows::<6>(9) - exact).amax();
    if dev > 1e-6 {
        return Err(FrsError::StateFault(format!(
            "Jacobian structural rows deviate by {dev}; dynamics not smooth at linearization point"
        )));
    }
    a.fixed_rows_mut::<6>(9).copy_from(&exact);
    Ok(a)
}
