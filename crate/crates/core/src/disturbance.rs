//! Bounded, rate-limited disturbances, the nonlinear disturbance observer and
//! the predictor that turns an observer estimate into future per-channel
//! disturbance intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FrsError, Result};
use crate::multirotor::{body_z, dynamics_rhs, ControlInput, MultirotorState, Vec3, Vec9, GRAVITY};

/// Per-channel magnitude bound `L` and rate bound `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceModel {
    /// `|d_i| <= L_i`, m/s².
    pub bound: Vec3,
    /// `|ḋ_i| <= β_i`, m/s³.
    pub rate_bound: Vec3,
}

impl DisturbanceModel {
    pub fn new(bound: Vec3, rate_bound: Vec3) -> Result<Self> {
        let model = Self { bound, rate_bound };
        model.validate()?;
        Ok(model)
    }

    /// Magnitude bounds must be positive; a zero rate bound (constant
    /// disturbance) is accepted.
    pub fn validate(&self) -> Result<()> {
        if self.bound.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(FrsError::InvalidParameter(format!("disturbance bound {:?} must be positive", self.bound)));
        }
        if self.rate_bound.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(FrsError::InvalidParameter(format!(
                "disturbance rate bound {:?} must be nonnegative",
                self.rate_bound
            )));
        }
        Ok(())
    }

    pub fn is_admissible_value(&self, d: &Vec3) -> bool {
        (0..3).all(|i| d[i].abs() <= self.bound[i])
    }
}

/// Piecewise-linear disturbance on a uniform grid starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbancePath {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<Vec3>,
}

impl DisturbancePath {
    pub fn constant(value: Vec3, t0: f64, dt: f64, steps: usize) -> Self {
        Self {
            t0,
            dt,
            values: vec![value; steps + 1],
        }
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.dt * (self.values.len() - 1) as f64
    }

    /// Linear interpolation; clamps outside the sampled range.
    pub fn at(&self, t: f64) -> Vec3 {
        let last = self.values.len() - 1;
        let s = ((t - self.t0) / self.dt).max(0.0);
        let k = (s.floor() as usize).min(last);
        if k == last {
            return self.values[last];
        }
        let frac = (s - k as f64).min(1.0);
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    /// Slope on grid interval `k`.
    pub fn slope(&self, k: usize) -> Vec3 {
        match self.values.get(k + 1) {
            Some(next) => (next - self.values[k]) / self.dt,
            None => Vec3::zeros(),
        }
    }

    pub fn value(&self, k: usize) -> Vec3 {
        self.values[k.min(self.values.len() - 1)]
    }
}

/// Draws an admissible disturbance: each grid step takes a slope uniform in
/// `[-β_i, β_i]`; values crossing `±L_i` are reflected back inside.
pub fn sample_disturbance<R: Rng + ?Sized>(
    model: &DisturbanceModel,
    d0: &Vec3,
    t0: f64,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<DisturbancePath> {
    model.validate()?;
    if !model.is_admissible_value(d0) {
        return Err(FrsError::InvalidParameter(format!("initial disturbance {d0:?} outside bounds")));
    }
    if !(dt > 0.0) || horizon < 0.0 {
        return Err(FrsError::InvalidParameter("invalid horizon or step".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let mut values = Vec::with_capacity(steps + 1);
    let mut d = *d0;
    values.push(d);
    for _ in 0..steps {
        for i in 0..3 {
            let beta = model.rate_bound[i];
            let w = if beta > 0.0 { rng.gen_range(-beta..=beta) } else { 0.0 };
            d[i] = reflect(d[i] + w * dt, model.bound[i]);
        }
        values.push(d);
    }
    Ok(DisturbancePath { t0, dt, values })
}

fn reflect(mut v: f64, bound: f64) -> f64 {
    // A single step never travels more than 2L, so this terminates quickly.
    loop {
        if v > bound {
            v = 2.0 * bound - v;
        } else if v < -bound {
            v = -2.0 * bound - v;
        } else {
            return v;
        }
    }
}

/// Internal state of the observer `d̂ = z + α_d v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverState {
    pub z: Vec3,
    pub alpha_d: f64,
}

impl ObserverState {
    /// Observer started with `d̂ = 0` at velocity `v0`.
    pub fn zero_estimate(alpha_d: f64, v0: &Vec3) -> Result<Self> {
        Self::with_estimate(alpha_d, v0, &Vec3::zeros())
    }

    pub fn with_estimate(alpha_d: f64, v: &Vec3, d_hat: &Vec3) -> Result<Self> {
        if !(alpha_d > 0.0) {
            return Err(FrsError::InvalidParameter(format!("observer gain {alpha_d} must be positive")));
        }
        Ok(Self {
            z: d_hat - v * alpha_d,
            alpha_d,
        })
    }
}

pub fn estimated_disturbance(obs: &ObserverState, x: &MultirotorState) -> Vec3 {
    obs.z + x.velocity * obs.alpha_d
}

/// `ż = -L_d g2 z - L_d [f(x) + g1(x) u + g2 p(x)]` with `L_d = α_d g2^T`.
pub fn observer_rhs(obs: &ObserverState, x: &MultirotorState, u: &ControlInput) -> Vec3 {
    let a = obs.alpha_d;
    let nominal_accel = body_z(&x.euler) * u.thrust - Vec3::new(0.0, 0.0, GRAVITY);
    -obs.z * a - (nominal_accel + x.velocity * a) * a
}

/// Co-integrates plant and observer over one RK4 step with `u` held fixed.
pub fn ndob_step<D>(
    obs: &ObserverState,
    x: &MultirotorState,
    u: &ControlInput,
    d_fn: D,
    t: f64,
    dt: f64,
) -> Result<(MultirotorState, ObserverState)>
where
    D: Fn(f64) -> Vec3,
{
    if !(dt > 0.0) {
        return Err(FrsError::InvalidParameter(format!("step size {dt} must be positive")));
    }
    let rhs = |xv: &Vec9, z: &Vec3, tau: f64| -> Result<(Vec9, Vec3)> {
        let xs = MultirotorState::from_vector(xv);
        let o = ObserverState { z: *z, alpha_d: obs.alpha_d };
        Ok((dynamics_rhs(&xs, u, &d_fn(tau))?, observer_rhs(&o, &xs, u)))
    };
    let (x0, z0) = (x.to_vector(), obs.z);
    let (kx1, kz1) = rhs(&x0, &z0, t)?;
    let (kx2, kz2) = rhs(&(x0 + kx1 * (dt / 2.0)), &(z0 + kz1 * (dt / 2.0)), t + dt / 2.0)?;
    let (kx3, kz3) = rhs(&(x0 + kx2 * (dt / 2.0)), &(z0 + kz2 * (dt / 2.0)), t + dt / 2.0)?;
    let (kx4, kz4) = rhs(&(x0 + kx3 * dt), &(z0 + kz3 * dt), t + dt)?;
    let x1 = MultirotorState::from_vector(&(x0 + (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * (dt / 6.0)));
    x1.validate()?;
    let z1 = z0 + (kz1 + kz2 * 2.0 + kz3 * 2.0 + kz4) * (dt / 6.0);
    Ok((x1, ObserverState { z: z1, alpha_d: obs.alpha_d }))
}

/// Bound `r(t)` on `‖e_d(t)‖` for an observer started at `d̂(0) = 0`:
/// `max(‖L‖ exp(-(1-θ1) α_d t), ‖β‖ / (θ1 α_d))`.
pub fn error_radius(model: &DisturbanceModel, alpha_d: f64, theta1: f64, t: f64) -> Result<f64> {
    if !(theta1 > 0.0 && theta1 < 1.0) {
        return Err(FrsError::InvalidParameter(format!("theta1 = {theta1} outside (0, 1)")));
    }
    if !(alpha_d > 0.0) || t < 0.0 {
        return Err(FrsError::InvalidParameter("alpha_d must be positive and t nonnegative".into()));
    }
    let transient = model.bound.norm() * (-(1.0 - theta1) * alpha_d * t).exp();
    Ok(transient.max(ultimate_error_radius(model, alpha_d, theta1)))
}

/// `‖β‖ / (θ1 α_d)`.
pub fn ultimate_error_radius(model: &DisturbanceModel, alpha_d: f64, theta1: f64) -> f64 {
    model.rate_bound.norm() / (theta1 * alpha_d)
}

/// Observer snapshot at `t0` from which future disturbance intervals are inferred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbancePrediction {
    pub t0: f64,
    pub d_hat_t0: Vec3,
    pub r0: f64,
    pub model: DisturbanceModel,
    pub theta1: f64,
}

impl DisturbancePrediction {
    /// Prediction after observing since time zero with `d̂(0) = 0`.
    pub fn from_observation(
        model: DisturbanceModel,
        alpha_d: f64,
        theta1: f64,
        t0: f64,
        d_hat_t0: Vec3,
    ) -> Result<Self> {
        let r0 = error_radius(&model, alpha_d, theta1, t0)?;
        Ok(Self {
            t0,
            d_hat_t0,
            r0,
            model,
            theta1,
        })
    }

    /// Center `d_m(τ)` and half-width `d_M(τ)` of
    /// `[d̂_i(t0) ± (r0 + β_i (τ - t0))] ∩ [-L_i, L_i]`.
    pub fn predict_bounds(&self, tau: f64) -> Result<(Vec3, Vec3)> {
        if tau < self.t0 - 1e-12 {
            return Err(FrsError::InvalidParameter(format!("prediction time {tau} precedes t0 = {}", self.t0)));
        }
        let elapsed = (tau - self.t0).max(0.0);
        let mut center = Vec3::zeros();
        let mut half = Vec3::zeros();
        for i in 0..3 {
            let l = self.model.bound[i];
            let reach = self.r0 + self.model.rate_bound[i] * elapsed;
            let lo = (self.d_hat_t0[i] - reach).max(-l);
            let hi = (self.d_hat_t0[i] + reach).min(l);
            if lo > hi {
                return Err(FrsError::EmptyPrediction { channel: i });
            }
            if lo == -l && hi == l {
                center[i] = 0.0;
                half[i] = l;
            } else {
                center[i] = 0.5 * (lo + hi);
                half[i] = 0.5 * (hi - lo);
            }
        }
        Ok((center, half))
    }
}
