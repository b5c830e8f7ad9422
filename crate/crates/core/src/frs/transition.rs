//! Per-step state-transition matrix `Ψ` of the linearized error dynamics and
//! its inverse, integrated jointly with RK4.

use nalgebra::DMatrix;

use super::augmented::Mat15;
use crate::error::{FrsError, Result};

/// Largest `h ‖A‖∞` taken by one RK4 substep.
pub const SUBSTEP_SCALE: f64 = 0.02;

/// `‖Ψ Ψ⁻¹ - I‖` above this is reported as a conditioning fault.
pub const DEVIATION_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub psi: Mat15,
    pub psi_inv: Mat15,
    /// `Ψ⁻¹` at the step midpoint.
    pub psi_inv_mid: Mat15,
    /// Max-abs entry of `Ψ Ψ⁻¹ - I` at step end.
    pub deviation: f64,
    pub substeps: usize,
}

impl Transition {
    /// `Ψ⁻¹(τ) F̄` at step start, midpoint and end.
    pub fn f_eta_samples(&self, fbar: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let to_dyn = |m: &Mat15| DMatrix::from_column_slice(15, 15, m.as_slice());
        vec![fbar.clone(), to_dyn(&self.psi_inv_mid) * fbar, to_dyn(&self.psi_inv) * fbar]
    }
}

/// Quadratic interpolation through `A(0)`, `A(1/2)`, `A(1)` at fraction `s`.
fn interpolate(a: &[Mat15; 3], s: f64) -> Mat15 {
    let l0 = 2.0 * (s - 0.5) * (s - 1.0);
    let lm = -4.0 * s * (s - 1.0);
    let l1 = 2.0 * s * (s - 0.5);
    a[0] * l0 + a[1] * lm + a[2] * l1
}

/// Integrates `Ψ̇ = A Ψ` and `(Ψ⁻¹)̇ = -Ψ⁻¹ A` over one step of length `dt`
/// from `Ψ = I`, with `A` given at the start, midpoint and end of the step.
///
/// The step is split into an even number of RK4 substeps so that each one
/// satisfies `h ‖A‖∞ <= SUBSTEP_SCALE`.
pub fn state_transition(a: &[Mat15; 3], dt: f64) -> Result<Transition> {
    if !(dt > 0.0) {
        return Err(FrsError::InvalidParameter(format!("step size {dt} must be positive")));
    }
    let norm = a.iter().map(|m| m.abs().row_sum().max()).fold(0.0, f64::max);
    if !norm.is_finite() {
        return Err(FrsError::StateFault("non-finite Jacobian".into()));
    }
    let half = ((dt * norm / (2.0 * SUBSTEP_SCALE)).ceil() as usize).max(1);
    let substeps = 2 * half;
    let h = dt / substeps as f64;
    let ds = 1.0 / substeps as f64;

    let mut psi = Mat15::identity();
    let mut inv = Mat15::identity();
    let mut psi_inv_mid = Mat15::identity();
    for k in 0..substeps {
        let s = k as f64 * ds;
        let a0 = interpolate(a, s);
        let am = interpolate(a, s + 0.5 * ds);
        let a1 = interpolate(a, s + ds);

        let p1 = a0 * psi;
        let q1 = -(inv * a0);
        let p2 = am * (psi + p1 * (h / 2.0));
        let q2 = -((inv + q1 * (h / 2.0)) * am);
        let p3 = am * (psi + p2 * (h / 2.0));
        let q3 = -((inv + q2 * (h / 2.0)) * am);
        let p4 = a1 * (psi + p3 * h);
        let q4 = -((inv + q3 * h) * a1);
        psi += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
        inv += (q1 + q2 * 2.0 + q3 * 2.0 + q4) * (h / 6.0);
        if k + 1 == half {
            psi_inv_mid = inv;
        }
    }
    let deviation = (psi * inv - Mat15::identity()).amax();
    if !(deviation <= DEVIATION_LIMIT) {
        return Err(FrsError::Conditioning { deviation });
    }
    Ok(Transition {
        psi,
        psi_inv: inv,
        psi_inv_mid,
        deviation,
        substeps,
    })
}
