//! Per-step ellipsoidal recursion and the resulting reachable tube.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::augmented::{jacobian, reference_rollout, Mat15, Vec15, AUG_DIM, DISTURBANCE_BLOCK, JACOBIAN_STEP, STATE_DIM};
use super::hopf::hopf_step_shape;
use super::transition::state_transition;
use crate::controller::{ControllerGains, Reference};
use crate::disturbance::{DisturbanceModel, DisturbancePrediction};
use crate::ellipsoid::{fuse_intersection, min_trace_box_ellipsoid, min_trace_sum, propagate_to_space, Ellipsoid};
use crate::error::{FrsError, Result};
use crate::multirotor::Vec3;
use crate::simulation::ClosedLoop;

/// Half-widths below this are raised before building the box ellipsoid.
pub const HALF_WIDTH_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrsMode {
    /// Observer-tightened bounds, disturbance-rate input only.
    ProposedNolin,
    /// Observer-tightened bounds plus linearization-error channels.
    ProposedLin,
    /// Estimate frozen at zero, static `±L` bounds.
    Baseline,
}

impl FrsMode {
    pub const ALL: [FrsMode; 3] = [FrsMode::Baseline, FrsMode::ProposedNolin, FrsMode::ProposedLin];

    pub fn name(&self) -> &'static str {
        match self {
            FrsMode::ProposedNolin => "proposed_nolin",
            FrsMode::ProposedLin => "proposed_lin",
            FrsMode::Baseline => "baseline",
        }
    }

    pub fn uses_estimate(&self) -> bool {
        !matches!(self, FrsMode::Baseline)
    }
}

/// Assumed bounds on the linearization residual entering position,
/// velocity and attitude rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizationBound {
    pub m_p: Vec3,
    pub m_v: Vec3,
    pub m_phi: Vec3,
}

impl LinearizationBound {
    /// `[M_p; M_v; M_Φ; 0; 0]`.
    pub fn assembled(&self) -> DVector<f64> {
        let mut m = DVector::zeros(AUG_DIM);
        for i in 0..3 {
            m[i] = self.m_p[i];
            m[3 + i] = self.m_v[i];
            m[6 + i] = self.m_phi[i];
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.m_p.iter().chain(self.m_v.iter()).chain(self.m_phi.iter());
        if all.into_iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(FrsError::InvalidParameter("linearization bounds must be nonnegative".into()));
        }
        Ok(())
    }
}

impl Default for LinearizationBound {
    fn default() -> Self {
        Self {
            m_p: Vec3::repeat(0.001),
            m_v: Vec3::repeat(0.01),
            m_phi: Vec3::repeat(0.01),
        }
    }
}

/// Source of the per-channel disturbance intervals `(d_m, d_M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundPredictor {
    Observer(DisturbancePrediction),
    /// `d_m = 0`, `d_M = L` at all times.
    Static(DisturbanceModel),
}

impl BoundPredictor {
    pub fn bounds(&self, t: f64) -> Result<(Vec3, Vec3)> {
        match self {
            BoundPredictor::Observer(p) => p.predict_bounds(t),
            BoundPredictor::Static(m) => Ok((Vec3::zeros(), m.bound)),
        }
    }
}

/// Everything the tube computation needs besides the initial condition.
#[derive(Clone, Copy)]
pub struct FrsProblem<'a> {
    pub reference: &'a dyn Reference,
    pub gains: ControllerGains,
    pub alpha_d: f64,
    pub model: DisturbanceModel,
    pub linearization: LinearizationBound,
    pub dt: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl<'a> FrsProblem<'a> {
    pub fn closed_loop(&self, mode: FrsMode) -> ClosedLoop<'a> {
        ClosedLoop {
            reference: self.reference,
            gains: self.gains,
            alpha_d: self.alpha_d,
            use_estimate: mode.uses_estimate(),
        }
    }

    /// Input matrix `F̄` and bounds `β̄` for the mode.
    pub fn input_channels(&self, mode: FrsMode) -> (DMatrix<f64>, DVector<f64>) {
        let beta = self.model.rate_bound;
        match mode {
            FrsMode::ProposedNolin => {
                let f = DMatrix::from_fn(AUG_DIM, 3, |i, j| if i == DISTURBANCE_BLOCK[j] { 1.0 } else { 0.0 });
                (f, DVector::from_column_slice(beta.as_slice()))
            }
            FrsMode::ProposedLin | FrsMode::Baseline => {
                let n = STATE_DIM + 3;
                let f = DMatrix::from_fn(AUG_DIM, n, |i, j| {
                    let hit = if j < STATE_DIM { i == j } else { i == DISTURBANCE_BLOCK[j - STATE_DIM] };
                    if hit {
                        1.0
                    } else {
                        0.0
                    }
                });
                let m = self.linearization.assembled();
                let betabar = DVector::from_fn(n, |j, _| if j < STATE_DIM { m[j] } else { beta[j - STATE_DIM] });
                (f, betabar)
            }
        }
    }
}

/// Initial error set: center `[0; d_m]`, semi-axes `radius` on the first
/// twelve coordinates and `scale · d_M` on the disturbance block.
pub fn initial_set(d_m: &Vec3, d_max: &Vec3, radius: f64, scale: f64) -> Result<Ellipsoid> {
    if !(radius > 0.0) || !(scale > 0.0) {
        return Err(FrsError::InvalidParameter(format!(
            "initial radius {radius} and disturbance scale {scale} must be positive"
        )));
    }
    let mut center = DVector::zeros(AUG_DIM);
    let mut axes = vec![radius; AUG_DIM];
    for (k, &i) in DISTURBANCE_BLOCK.iter().enumerate() {
        center[i] = d_m[k];
        axes[i] = scale * d_max[k].max(HALF_WIDTH_FLOOR);
    }
    Ellipsoid::from_semi_axes(center, &axes)
}

/// One recursion step: grow `S_t` by the input set, map through `Ψ`, then
/// fuse with the predicted disturbance cylinder.
pub fn propagate_step(
    s: &Ellipsoid,
    psi: &DMatrix<f64>,
    b_eta: &DMatrix<f64>,
    d_m: &Vec3,
    d_max: &Vec3,
    b: f64,
) -> Result<Ellipsoid> {
    let q0 = s.inverse_shape()?;
    let q_eta = min_trace_sum(&[q0, b_eta.clone()])?;
    let q_y = psi * q_eta * psi.transpose();
    let e_y = Ellipsoid::from_inverse_shape(psi * s.center(), &q_y)?;
    if b == 1.0 {
        return Ok(e_y);
    }
    let floored = d_max.map(|v| v.max(HALF_WIDTH_FLOOR));
    let lambda = min_trace_box_ellipsoid(&floored)?;
    let box_ellipsoid = Ellipsoid::new(
        DVector::from_column_slice(d_m.as_slice()),
        DMatrix::from_column_slice(3, 3, lambda.as_slice()),
    )?;
    let cylinder = propagate_to_space(&box_ellipsoid, AUG_DIM, &DISTURBANCE_BLOCK)?;
    fuse_intersection(&e_y, &cylinder, b)
}

/// Diagnostics of one propagation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub psi_deviation: f64,
    pub substeps: usize,
    /// `Ψ⁻¹(τ) F̄` at step start, midpoint and end.
    pub f_eta: Vec<DMatrix<f64>>,
    pub betabar: DVector<f64>,
    pub b_eta: DMatrix<f64>,
    pub d_m: Vec3,
    pub d_max: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeMetric {
    /// Trace of the projected 9-dim inverse shape.
    pub trace_inv: f64,
    /// Log-determinant of the projected 9-dim inverse shape.
    pub logdet_inv: f64,
    /// Wall time spent producing this set.
    pub step_ns: u64,
}

#[derive(Debug, Clone)]
pub struct FrsTube {
    pub mode: FrsMode,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Error-coordinate sets `S(t)` in the augmented space.
    pub sets: Vec<Ellipsoid>,
    /// `x_r(t) + Proj(S(t))` in state coordinates.
    pub projected: Vec<Ellipsoid>,
    /// `y_r(t)` on the grid.
    pub reference: Vec<Vec15>,
    pub metrics: Vec<TubeMetric>,
    pub steps: Vec<StepRecord>,
}

impl FrsTube {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn total_ns(&self) -> u64 {
        self.metrics.iter().map(|m| m.step_ns).sum()
    }

    /// Grid index of time `t`, if it lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let s = (t - self.times[0]) / self.dt;
        let k = s.round();
        ((s - k).abs() < 1e-6 && k >= 0.0 && (k as usize) < self.len()).then_some(k as usize)
    }

    /// Checks an augmented state against `S` at grid index `k`.
    pub fn contains_augmented(&self, k: usize, y: &Vec15, slack: f64) -> Result<bool> {
        let e = y - self.reference[k];
        self.sets[k].contains(&DVector::from_column_slice(e.as_slice()), slack)
    }

    /// Checks a 9-dim state against the projected tube at grid index `k`.
    pub fn contains_state(&self, k: usize, x: &nalgebra::SVector<f64, 9>, slack: f64) -> Result<bool> {
        self.projected[k].contains(&DVector::from_column_slice(x.as_slice()), slack)
    }
}

fn projected_set(s: &Ellipsoid, y_r: &Vec15) -> Result<Ellipsoid> {
    let kept: Vec<usize> = (0..STATE_DIM).collect();
    let proj = s.project(&kept)?;
    let offset = DVector::from_column_slice(&y_r.as_slice()[..STATE_DIM]);
    proj.translated(&offset)
}

fn metric(projected: &Ellipsoid, step_ns: u64) -> Result<TubeMetric> {
    Ok(TubeMetric {
        trace_inv: projected.trace_inverse()?,
        logdet_inv: projected.log_det_inverse()?,
        step_ns,
    })
}

fn to_dyn(m: &Mat15) -> DMatrix<f64> {
    DMatrix::from_column_slice(AUG_DIM, AUG_DIM, m.as_slice())
}

/// Propagates `initial` (error coordinates) for `steps` steps from `t0`.
///
/// `y0` supplies the reference initial condition; its disturbance block is
/// ignored and, in baseline mode, so is the estimate block.
pub fn run_tube(
    problem: &FrsProblem<'_>,
    mode: FrsMode,
    y0: &Vec15,
    t0: f64,
    initial: &Ellipsoid,
    predictor: &BoundPredictor,
    steps: usize,
) -> Result<FrsTube> {
    if initial.dim() != AUG_DIM {
        return Err(FrsError::DimensionMismatch {
            expected: AUG_DIM,
            got: initial.dim(),
        });
    }
    if !(0.0..=1.0).contains(&problem.b) {
        return Err(FrsError::InvalidParameter(format!("fusion weight {} outside [0, 1]", problem.b)));
    }
    let dt = problem.dt;
    let start = Instant::now();
    let cl = problem.closed_loop(mode);
    let (fbar, betabar) = problem.input_channels(mode);
    let rollout = reference_rollout(&cl, y0, t0, steps, dt)?;

    let mut tube = FrsTube {
        mode,
        dt,
        times: Vec::with_capacity(steps + 1),
        sets: Vec::with_capacity(steps + 1),
        projected: Vec::with_capacity(steps + 1),
        reference: Vec::with_capacity(steps + 1),
        metrics: Vec::with_capacity(steps + 1),
        steps: Vec::with_capacity(steps),
    };
    let proj0 = projected_set(initial, rollout.at_step(0))?;
    let mut a_start = jacobian(&cl, t0, rollout.at_step(0), JACOBIAN_STEP)?;
    tube.metrics.push(metric(&proj0, start.elapsed().as_nanos() as u64)?);
    tube.times.push(t0);
    tube.sets.push(initial.clone());
    tube.projected.push(proj0);
    tube.reference.push(*rollout.at_step(0));

    for k in 0..steps {
        let clock = Instant::now();
        let t = rollout.time(k);
        let t_next = rollout.time(k + 1);
        let a_mid = jacobian(&cl, t + 0.5 * dt, rollout.mid_step(k), JACOBIAN_STEP)?;
        let a_end = jacobian(&cl, t_next, rollout.at_step(k + 1), JACOBIAN_STEP)?;
        let tr = state_transition(&[a_start, a_mid, a_end], dt)?;
        let f_eta = tr.f_eta_samples(&fbar);
        let b_eta = hopf_step_shape(&f_eta, &betabar, dt, problem.epsilon)?;
        let (d_m, d_max) = predictor.bounds(t_next)?;
        let current = tube.sets.last().expect("initial set pushed");
        let next = propagate_step(current, &to_dyn(&tr.psi), &b_eta, &d_m, &d_max, problem.b)?;
        let proj = projected_set(&next, rollout.at_step(k + 1))?;
        let elapsed = clock.elapsed().as_nanos() as u64;

        tube.metrics.push(metric(&proj, elapsed)?);
        tube.times.push(t_next);
        tube.sets.push(next);
        tube.projected.push(proj);
        tube.reference.push(*rollout.at_step(k + 1));
        tube.steps.push(StepRecord {
            psi_deviation: tr.deviation,
            substeps: tr.substeps,
            f_eta,
            betabar: betabar.clone(),
            b_eta,
            d_m,
            d_max,
        });
        a_start = a_end;
    }
    Ok(tube)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::CircularTrajectory;
    use crate::frs::augmented::augment;
    use crate::simulation::on_reference_state;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nominal_model() -> DisturbanceModel {
        DisturbanceModel::new(Vec3::new(3.0, 3.0, 1.0), Vec3::repeat(2.0)).unwrap()
    }

    fn problem(traj: &CircularTrajectory) -> FrsProblem<'_> {
        FrsProblem {
            reference: traj,
            gains: ControllerGains::default(),
            alpha_d: 2.0,
            model: nominal_model(),
            linearization: LinearizationBound::default(),
            dt: 0.02,
            b: 0.99,
            epsilon: 1e-9,
        }
    }

    #[test]
    fn input_channel_layout() {
        let traj = CircularTrajectory::default();
        let p = problem(&traj);
        let (f, beta) = p.input_channels(FrsMode::ProposedNolin);
        assert_eq!((f.nrows(), f.ncols()), (15, 3));
        assert_eq!(f.rows(12, 3).into_owned(), DMatrix::identity(3, 3));
        assert_eq!(beta.as_slice(), &[2.0, 2.0, 2.0]);
        let (f, beta) = p.input_channels(FrsMode::ProposedLin);
        assert_eq!((f.nrows(), f.ncols()), (15, 12));
        assert_eq!(f.view((0, 0), (9, 9)).into_owned(), DMatrix::identity(9, 9));
        assert_eq!(f.view((12, 9), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        assert_eq!(f.rows(9, 3).amax(), 0.0);
        assert_eq!(beta[0], 0.001);
        assert_eq!(beta[5], 0.01);
        assert_eq!(beta[11], 2.0);
    }

    #[test]
    fn initial_set_recipe() {
        let s = initial_set(&Vec3::new(0.5, -0.5, 0.0), &Vec3::new(1.0, 2.0, 0.5), 0.05, 3.0).unwrap();
        let q = s.inverse_shape().unwrap();
        assert_relative_eq!(q[(0, 0)], 0.0025, max_relative = 1e-12);
        assert_relative_eq!(q[(11, 11)], 0.0025, max_relative = 1e-12);
        assert_relative_eq!(q[(13, 13)], 36.0, max_relative = 1e-12);
        assert_eq!(s.center()[12], 0.5);
    }

    #[test]
    fn degenerate_step_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(15, 15, |_, _| rng.gen_range(-1.0..1.0));
        let q = &a * a.transpose() + DMatrix::identity(15, 15);
        let center = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
        let s = Ellipsoid::from_inverse_shape(center, &q).unwrap();
        let b_eta = DMatrix::identity(15, 15) * 1e-20;
        let next = propagate_step(&s, &DMatrix::identity(15, 15), &b_eta, &Vec3::zeros(), &Vec3::repeat(1.0), 1.0).unwrap();
        assert!((next.center() - s.center()).amax() < 1e-12);
        assert!((next.shape() - s.shape()).amax() / s.shape().amax() < 1e-6);
    }

    #[test]
    fn step_contains_mapped_points() {
        // Points of S_t mapped by Ψ (no input) and inside the cylinder stay inside.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = initial_set(&Vec3::new(0.2, 0.0, -0.1), &Vec3::new(1.0, 1.0, 0.5), 0.05, 3.0).unwrap();
        let psi = DMatrix::identity(15, 15) + DMatrix::from_fn(15, 15, |_, _| rng.gen_range(-0.02..0.02));
        let b_eta = DMatrix::identity(15, 15) * 1e-6;
        let d_m = Vec3::new(0.2, 0.0, -0.1);
        let d_max = Vec3::new(1.0, 1.0, 0.5);
        let next = propagate_step(&s, &psi, &b_eta, &d_m, &d_max, 0.99).unwrap();
        let q = s.inverse_shape().unwrap();
        let l = q.cholesky().unwrap().l();
        let mut checked = 0;
        while checked < 1000 {
            let u = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
            if u.norm() > 1.0 {
                continue;
            }
            let x = s.center() + &l * u;
            let y = &psi * x;
            let inside_box = (0..3).all(|i| (y[12 + i] - d_m[i]).abs() <= d_max[i]);
            if !inside_box {
                continue;
            }
            assert!(next.contains(&y, 1e-9).unwrap());
            checked += 1;
        }
    }

    #[test]
    fn tube_shapes_and_structure() {
        let traj = CircularTrajectory::default();
        let p = problem(&traj);
        let model = nominal_model();
        let x0 = on_reference_state(&traj, 0.5).unwrap();
        let pred = DisturbancePrediction::from_observation(model, 2.0, 0.8, 0.5, Vec3::new(0.3, -0.2, 0.1)).unwrap();
        let predictor = BoundPredictor::Observer(pred);
        let (d_m, d_max) = predictor.bounds(0.5).unwrap();
        let s0 = initial_set(&d_m, &d_max, 0.05, 3.0).unwrap();
        let y0 = augment(&x0, &pred.d_hat_t0, &Vec3::zeros());
        let tube = run_tube(&p, FrsMode::ProposedLin, &y0, 0.5, &s0, &predictor, 20).unwrap();
        assert_eq!(tube.len(), 21);
        assert_eq!(tube.steps.len(), 20);
        for w in tube.times.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.02, epsilon = 1e-12);
        }
        for rec in &tube.steps {
            assert!(rec.psi_deviation <= 1e-8, "{}", rec.psi_deviation);
        }
        assert_eq!(tube.index_of(0.5 + 0.02 * 7.0), Some(7));
        assert_eq!(tube.index_of(0.51), None);
        // The reference point itself lies in the state tube when the error set
        // covers the origin.
        assert!(tube.contains_state(0, &x0.to_vector(), 0.0).unwrap());
    }
}
