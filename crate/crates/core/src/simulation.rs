//! Ground-truth closed-loop simulation: plant, observer and controller
//! co-integrated with RK4, the controller re-evaluated at every stage.

use crate::controller::{adaptive_control, ControlOutput, ControllerGains, Reference};
use crate::disturbance::{estimated_disturbance, observer_rhs, DisturbancePath, ObserverState};
use crate::error::{FrsError, Result};
use crate::multirotor::{dynamics_rhs, MultirotorState, Vec3, Vec9};

/// Controller wiring shared by the truth simulation and the augmented model.
#[derive(Clone, Copy)]
pub struct ClosedLoop<'a> {
    pub reference: &'a dyn Reference,
    pub gains: ControllerGains,
    pub alpha_d: f64,
    /// When false the controller runs with `d̂ ≡ 0` (baseline).
    pub use_estimate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSample {
    pub t: f64,
    pub state: MultirotorState,
    pub d_hat: Vec3,
    pub d: Vec3,
    pub control: ControlOutput,
}

impl<'a> ClosedLoop<'a> {
    fn estimate(&self, obs: &ObserverState, x: &MultirotorState) -> Vec3 {
        if self.use_estimate {
            estimated_disturbance(obs, x)
        } else {
            Vec3::zeros()
        }
    }

    pub fn control(&self, t: f64, x: &MultirotorState, d_hat: &Vec3) -> Result<ControlOutput> {
        let sigma = self.reference.sample(t)?;
        adaptive_control(x, d_hat, &sigma, &self.gains)
    }

    fn derivative(&self, t: f64, x: &Vec9, z: &Vec3, d: &Vec3) -> Result<(Vec9, Vec3)> {
        let xs = MultirotorState::from_vector(x);
        let obs = ObserverState {
            z: *z,
            alpha_d: self.alpha_d,
        };
        let ctrl = self.control(t, &xs, &self.estimate(&obs, &xs))?;
        Ok((dynamics_rhs(&xs, &ctrl.input, d)?, observer_rhs(&obs, &xs, &ctrl.input)))
    }

    /// Simulates `steps` steps of size `dt` from `t0`. The observer starts at
    /// the estimate `d_hat0`; the disturbance is read from `path`.
    pub fn simulate(
        &self,
        x0: &MultirotorState,
        d_hat0: &Vec3,
        path: &DisturbancePath,
        t0: f64,
        steps: usize,
        dt: f64,
    ) -> Result<Vec<SimSample>> {
        if !(dt > 0.0) {
            return Err(FrsError::InvalidParameter(format!("step size {dt} must be positive")));
        }
        x0.validate()?;
        let mut x = x0.to_vector();
        let mut obs = ObserverState::with_estimate(self.alpha_d, &x0.velocity, d_hat0)?;
        let mut out = Vec::with_capacity(steps + 1);
        let record = |t: f64, x: &Vec9, obs: &ObserverState| -> Result<SimSample> {
            let state = MultirotorState::from_vector(x);
            let d_hat = self.estimate(obs, &state);
            Ok(SimSample {
                t,
                state,
                d_hat,
                d: path.at(t),
                control: self.control(t, &state, &d_hat)?,
            })
        };
        out.push(record(t0, &x, &obs)?);
        for k in 0..steps {
            let t = t0 + k as f64 * dt;
            let z = obs.z;
            let (d0, dm, d1) = (path.at(t), path.at(t + dt / 2.0), path.at(t + dt));
            let (kx1, kz1) = self.derivative(t, &x, &z, &d0)?;
            let (kx2, kz2) = self.derivative(t + dt / 2.0, &(x + kx1 * (dt / 2.0)), &(z + kz1 * (dt / 2.0)), &dm)?;
            let (kx3, kz3) = self.derivative(t + dt / 2.0, &(x + kx2 * (dt / 2.0)), &(z + kz2 * (dt / 2.0)), &dm)?;
            let (kx4, kz4) = self.derivative(t + dt, &(x + kx3 * dt), &(z + kz3 * dt), &d1)?;
            x += (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * (dt / 6.0);
            obs.z = z + (kz1 + kz2 * 2.0 + kz3 * 2.0 + kz4) * (dt / 6.0);
            MultirotorState::from_vector(&x).validate()?;
            out.push(record(t + dt, &x, &obs)?);
        }
        Ok(out)
    }
}

/// State on the reference at time `t`: position, velocity and feedforward attitude.
pub fn on_reference_state(reference: &dyn Reference, t: f64) -> Result<MultirotorState> {
    let sigma = reference.sample(t)?;
    Ok(MultirotorState::new(sigma.position, sigma.velocity, sigma.feedforward_attitude()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::CircularTrajectory;

    #[test]
    fn exact_start_tracks_circle_without_disturbance() {
        let traj = CircularTrajectory::default();
        let cl = ClosedLoop {
            reference: &traj,
            gains: ControllerGains::default(),
            alpha_d: 2.0,
            use_estimate: true,
        };
        let x0 = on_reference_state(&traj, 0.0).unwrap();
        let path = DisturbancePath::constant(Vec3::zeros(), 0.0, 0.02, 500);
        let run = cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, 500, 0.02).unwrap();
        for s in &run {
            let sigma = traj.sample(s.t).unwrap();
            assert!((s.state.position - sigma.position).norm() < 1e-3, "t={}", s.t);
            assert!(s.d_hat.norm() < 1e-6);
        }
    }

    #[test]
    fn constant_disturbance_is_rejected() {
        let traj = CircularTrajectory::default();
        let cl = ClosedLoop {
            reference: &traj,
            gains: ControllerGains::default(),
            alpha_d: 2.0,
            use_estimate: true,
        };
        let x0 = on_reference_state(&traj, 0.0).unwrap();
        let path = DisturbancePath::constant(Vec3::new(2.0, 2.0, 0.5), 0.0, 0.02, 500);
        let run = cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, 500, 0.02).unwrap();
        let tail = run.iter().filter(|s| s.t >= 5.0);
        for s in tail {
            let sigma = traj.sample(s.t).unwrap();
            assert!((s.state.position - sigma.position).norm() < 0.05, "t={}", s.t);
        }
    }

    #[test]
    fn estimate_obeys_first_order_lag() {
        // d̂̇ = α_d (d - d̂) reconstructed by central differences on the grid.
        let traj = CircularTrajectory::default();
        let cl = ClosedLoop {
            reference: &traj,
            gains: ControllerGains::default(),
            alpha_d: 2.0,
            use_estimate: true,
        };
        let x0 = on_reference_state(&traj, 0.0).unwrap();
        let dt = 2.5e-4;
        let path = DisturbancePath::constant(Vec3::new(1.0, -2.0, 0.5), 0.0, dt, 6000);
        let run = cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, 6000, dt).unwrap();
        for k in 1..run.len() - 1 {
            let rate = (run[k + 1].d_hat - run[k - 1].d_hat) / (2.0 * dt);
            let model = (run[k].d - run[k].d_hat) * 2.0;
            assert!((rate - model).norm() < 1e-6, "k={k}");
        }
    }
}
