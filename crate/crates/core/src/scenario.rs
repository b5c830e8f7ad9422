//! The two validation scenarios, the timing benchmark and the stability
//! report, driven by a [`ScenarioConfig`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{steps_in, ScenarioConfig};
use crate::controller::{ControllerGains, Reference};
use crate::disturbance::{sample_disturbance, DisturbancePath, DisturbancePrediction};
use crate::error::{FrsError, Result};
use crate::frs::hopf::support_oracle_g;
use crate::frs::{augment, initial_set, run_tube, BoundPredictor, FrsMode, FrsProblem, FrsTube};
use crate::multirotor::{MultirotorState, Vec3, Vec9};
use crate::simulation::{on_reference_state, ClosedLoop, SimSample};
use crate::stability::{
    audit_disturbance_convergence, audit_error_dynamics, build_certificate, default_m_bound, measured_s_m,
    DisturbanceAudit, ErrorDynamicsAudit, StabilityCertificate,
};

/// Slack used for every membership verdict.
pub const CONTAINMENT_SLACK: f64 = 1e-6;

const AUDIT_STREAM_OFFSET: u64 = 1 << 32;

/// RNG for stream `stream` of the master seed; streams are independent of
/// scheduling order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_in_box<R: Rng>(rng: &mut R, center: &Vec3, half: &Vec3) -> Vec3 {
    Vec3::from_fn(|i, _| center[i] + half[i] * (2.0 * rng.gen::<f64>() - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub t: f64,
    pub x: Vec9,
    pub d: Vec3,
    pub d_hat: Vec3,
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentSummary {
    pub label: String,
    pub mode: FrsMode,
    pub checks: usize,
    /// States outside `x_r + Proj(S)`.
    pub state_violations: usize,
    /// Augmented errors outside `S`.
    pub augmented_violations: usize,
    /// Largest quadratic form of a checked state (1 is the boundary).
    pub max_state_form: f64,
}

impl ContainmentSummary {
    fn new(label: String, mode: FrsMode) -> Self {
        Self {
            label,
            mode,
            checks: 0,
            state_violations: 0,
            augmented_violations: 0,
            max_state_form: 0.0,
        }
    }

    fn merge(&mut self, other: &ContainmentSummary) {
        self.checks += other.checks;
        self.state_violations += other.state_violations;
        self.augmented_violations += other.augmented_violations;
        self.max_state_form = self.max_state_form.max(other.max_state_form);
    }

    pub fn passed(&self) -> bool {
        self.state_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopfAudit {
    pub checks: usize,
    pub failures: usize,
    /// Smallest `sqrt(νᵀ B_η ν) - oracle(ν)` observed.
    pub min_margin: f64,
}

/// Compares the ellipsoidal input set of every step of `tube` against the
/// exact support oracle in `directions` random directions.
pub fn audit_hopf(tube: &FrsTube, directions: usize, rng: &mut ChaCha8Rng) -> Result<HopfAudit> {
    let mut audit = HopfAudit {
        checks: 0,
        failures: 0,
        min_margin: f64::INFINITY,
    };
    for rec in &tube.steps {
        let n = rec.b_eta.nrows();
        for _ in 0..directions {
            let nu = nalgebra::DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let ell = nu.dot(&(&rec.b_eta * &nu)).max(0.0).sqrt();
            let exact = support_oracle_g(&rec.f_eta, &rec.betabar, tube.dt, &nu)?;
            let margin = ell - exact;
            audit.checks += 1;
            audit.min_margin = audit.min_margin.min(margin);
            if margin < -1e-9 {
                audit.failures += 1;
            }
        }
    }
    Ok(audit)
}

/// Size comparison of a proposed tube against the baseline tube on the
/// shared grid, excluding the common initial set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub label: String,
    pub trace_below: usize,
    pub det_below: usize,
    pub compared: usize,
    /// `det(baseline) / det(proposed)` of the inverse shapes at the horizon end.
    pub det_ratio_end: f64,
    pub trace_ratio_end: f64,
}

impl OrderingReport {
    pub fn strictly_below(&self) -> bool {
        self.compared > 0 && self.trace_below == self.compared && self.det_below == self.compared
    }
}

pub fn compare_to_baseline(label: &str, proposed: &FrsTube, baseline: &FrsTube) -> Result<OrderingReport> {
    if proposed.len() != baseline.len() || proposed.len() < 2 {
        return Err(FrsError::DimensionMismatch {
            expected: baseline.len(),
            got: proposed.len(),
        });
    }
    let pairs = || proposed.metrics.iter().zip(&baseline.metrics).skip(1);
    let (p, b) = (proposed.metrics.last().unwrap(), baseline.metrics.last().unwrap());
    Ok(OrderingReport {
        label: label.to_string(),
        trace_below: pairs().filter(|(p, b)| p.trace_inv < b.trace_inv).count(),
        det_below: pairs().filter(|(p, b)| p.logdet_inv < b.logdet_inv).count(),
        compared: proposed.len() - 1,
        det_ratio_end: (b.logdet_inv - p.logdet_inv).exp(),
        trace_ratio_end: b.trace_inv / p.trace_inv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceAudit {
    pub checks: usize,
    pub failures: usize,
    /// Smallest `h_outer(ν) - h_inner(ν)` over the sampled directions.
    pub min_margin: f64,
}

/// Samples support functions of the augmented sets of two tubes on the same
/// grid and counts directions where `outer` fails to dominate `inner`.
pub fn audit_dominance(
    outer: &FrsTube,
    inner: &FrsTube,
    directions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DominanceAudit> {
    if outer.len() != inner.len() {
        return Err(FrsError::DimensionMismatch {
            expected: outer.len(),
            got: inner.len(),
        });
    }
    let mut audit = DominanceAudit {
        checks: 0,
        failures: 0,
        min_margin: f64::INFINITY,
    };
    for (a, b) in outer.sets.iter().zip(&inner.sets) {
        for _ in 0..directions {
            let nu = nalgebra::DVector::from_fn(a.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let margin = a.support(&nu)? - b.support(&nu)?;
            audit.checks += 1;
            audit.min_margin = audit.min_margin.min(margin);
            if margin < -1e-9 * (1.0 + b.support(&nu)?.abs()) {
                audit.failures += 1;
            }
        }
    }
    Ok(audit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub certificate: StabilityCertificate,
    /// `|sin φ_b|` used for the certificate.
    pub s_m: f64,
    pub s_m_measured: bool,
    pub disturbance_audit: DisturbanceAudit,
    /// Error-dynamics audit along the scenario-2 flight.
    pub error_audit: ErrorDynamicsAudit,
    /// Same audit merged over all audit paths; residuals there include
    /// quadrature error from steep disturbance slopes.
    pub error_audit_paths: ErrorDynamicsAudit,
}

#[derive(Debug, Clone)]
pub struct NamedTube {
    pub label: String,
    pub tube: FrsTube,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub seed: u64,
    pub tubes: Vec<NamedTube>,
    /// Proposed-controller states with their verdict against the proposed tube.
    pub samples: Vec<SampleRecord>,
    /// Baseline-controller states with their verdict against the baseline tube.
    pub samples_baseline: Vec<SampleRecord>,
    /// Tube labels the two sample verdicts refer to, when each refers to a
    /// single tube.
    pub samples_tube: Option<String>,
    pub samples_baseline_tube: Option<String>,
    pub containment: Vec<ContainmentSummary>,
    pub hopf: Vec<(String, HopfAudit)>,
    /// Proposed tubes against the baseline (scenario 1 with all modes).
    pub ordering: Vec<OrderingReport>,
    /// `proposed_lin` ⊇ `proposed_nolin` (scenario 1 with both modes).
    pub dominance: Option<DominanceAudit>,
    pub stability: Option<StabilityReport>,
}

impl RunArtifacts {
    pub fn tube(&self, label: &str) -> Option<&FrsTube> {
        self.tubes.iter().find(|t| t.label == label).map(|t| &t.tube)
    }

    pub fn containment_for(&self, label: &str) -> Option<&ContainmentSummary> {
        self.containment.iter().find(|c| c.label == label)
    }

    /// True when every tube that must be sound (everything except
    /// `proposed_nolin`) has zero state violations.
    pub fn sound(&self) -> bool {
        self.containment
            .iter()
            .filter(|c| c.mode != FrsMode::ProposedNolin)
            .all(ContainmentSummary::passed)
    }
}

/// Shared setup derived from a configuration.
struct Setup {
    cfg: ScenarioConfig,
    gains: ControllerGains,
}

impl Setup {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            gains: cfg.controller_gains()?,
        })
    }

    fn problem(&self) -> FrsProblem<'_> {
        FrsProblem {
            reference: &self.cfg.trajectory,
            gains: self.gains,
            alpha_d: self.cfg.alpha_d,
            model: self.cfg.disturbance,
            linearization: self.cfg.linearization,
            dt: self.cfg.dt,
            b: self.cfg.b,
            epsilon: self.cfg.epsilon,
        }
    }

    fn closed_loop(&self, proposed: bool) -> ClosedLoop<'_> {
        ClosedLoop {
            reference: &self.cfg.trajectory,
            gains: self.gains,
            alpha_d: self.cfg.alpha_d,
            use_estimate: proposed,
        }
    }

    fn prediction(&self, t0: f64, d_hat: Vec3) -> Result<DisturbancePrediction> {
        DisturbancePrediction::from_observation(self.cfg.disturbance, self.cfg.alpha_d, self.cfg.theta1, t0, d_hat)
    }

    fn predictor(&self, mode: FrsMode, t0: f64, d_hat: Vec3) -> Result<BoundPredictor> {
        Ok(match mode {
            FrsMode::Baseline => BoundPredictor::Static(self.cfg.disturbance),
            _ => BoundPredictor::Observer(self.prediction(t0, d_hat)?),
        })
    }

    /// Tube for `mode` starting from state `x` (and estimate `d_hat`) at `t0`.
    fn tube(&self, mode: FrsMode, x: &MultirotorState, d_hat: Vec3, t0: f64, steps: usize) -> Result<FrsTube> {
        let d_hat = if mode.uses_estimate() { d_hat } else { Vec3::zeros() };
        let predictor = self.predictor(mode, t0, d_hat)?;
        let (d_m, d_max) = predictor.bounds(t0)?;
        let recipe = self.cfg.initial_set;
        let s0 = initial_set(&d_m, &d_max, recipe.state_radius, recipe.disturbance_scale)?;
        let y0 = augment(x, &d_hat, &Vec3::zeros());
        run_tube(&self.problem(), mode, &y0, t0, &s0, &predictor, steps)
    }

    /// Disturbance path from `t0` with `d(t0)` uniform in the box `center ± half`.
    fn path(&self, rng: &mut ChaCha8Rng, center: &Vec3, half: &Vec3, t0: f64, span: f64) -> Result<DisturbancePath> {
        let d0 = uniform_in_box(rng, center, half);
        sample_disturbance(&self.cfg.disturbance, &d0, t0, span, self.cfg.dt, rng)
    }
}

/// Scenario-1 starting point after the observer run-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStart {
    pub t0: f64,
    pub proposed_state: MultirotorState,
    pub d_hat: Vec3,
    pub baseline_state: MultirotorState,
}

fn warm_start(setup: &Setup) -> Result<WarmStart> {
    let cfg = &setup.cfg;
    let x0 = on_reference_state(&cfg.trajectory, 0.0)?;
    let steps = steps_in(cfg.warm_up, cfg.dt, "warm_up")?;
    if steps == 0 {
        return Ok(WarmStart {
            t0: 0.0,
            proposed_state: x0,
            d_hat: Vec3::zeros(),
            baseline_state: x0,
        });
    }
    let mut rng = stream_rng(cfg.seed, 0);
    let path = setup.path(&mut rng, &Vec3::zeros(), &cfg.disturbance.bound, 0.0, cfg.warm_up)?;
    let proposed = setup.closed_loop(true).simulate(&x0, &Vec3::zeros(), &path, 0.0, steps, cfg.dt)?;
    let baseline = setup.closed_loop(false).simulate(&x0, &Vec3::zeros(), &path, 0.0, steps, cfg.dt)?;
    let end = proposed.last().expect("nonempty run");
    Ok(WarmStart {
        t0: end.t,
        proposed_state: end.state,
        d_hat: end.d_hat,
        baseline_state: baseline.last().expect("nonempty run").state,
    })
}

/// Warm start used by scenario 1 and the benchmark.
pub fn scenario1_start(cfg: &ScenarioConfig) -> Result<WarmStart> {
    warm_start(&Setup::new(cfg)?)
}

fn check_run(
    tube: &FrsTube,
    label: &str,
    run: &[SimSample],
    offset: usize,
    limit: usize,
) -> Result<(ContainmentSummary, Vec<bool>)> {
    let mut summary = ContainmentSummary::new(label.to_string(), tube.mode);
    let mut verdicts = Vec::with_capacity(limit);
    for k in 0..limit.min(tube.len()) {
        let s = &run[offset + k];
        let d_hat = if tube.mode.uses_estimate() { s.d_hat } else { Vec3::zeros() };
        let y = augment(&s.state, &d_hat, &s.d);
        let x = nalgebra::DVector::from_column_slice(s.state.to_vector().as_slice());
        let form = tube.projected[k].quadratic_form(&x)?;
        let inside = form <= 1.0 + CONTAINMENT_SLACK;
        summary.checks += 1;
        summary.max_state_form = summary.max_state_form.max(form);
        if !inside {
            summary.state_violations += 1;
        }
        if !tube.contains_augmented(k, &y, CONTAINMENT_SLACK)? {
            summary.augmented_violations += 1;
        }
        verdicts.push(inside);
    }
    Ok((summary, verdicts))
}

fn records(id: usize, run: &[SimSample], verdicts: &[bool]) -> Vec<SampleRecord> {
    run.iter()
        .zip(verdicts)
        .map(|(s, &contained)| SampleRecord {
            sample_id: id,
            t: s.t,
            x: s.state.to_vector(),
            d: s.d,
            d_hat: s.d_hat,
            contained,
        })
        .collect()
}

struct SampleOutcome {
    summaries: Vec<ContainmentSummary>,
    proposed: Vec<SampleRecord>,
    baseline: Vec<SampleRecord>,
}

/// Tubes from a common warm start for the selected modes, then Monte Carlo
/// containment of the true closed loop under sampled disturbances.
pub fn run_scenario1(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    let steps = cfg.horizon_steps();
    let start = warm_start(&setup)?;
    let t0 = start.t0;

    let mut tubes = Vec::new();
    for mode in cfg.mode.modes() {
        let x = if mode.uses_estimate() { start.proposed_state } else { start.baseline_state };
        let tube = setup.tube(mode, &x, start.d_hat, t0, steps)?;
        tubes.push(NamedTube {
            label: mode.name().to_string(),
            tube,
        });
    }

    let (box_center, box_half) = setup.prediction(t0, start.d_hat)?.predict_bounds(t0)?;
    let proposed_loop = setup.closed_loop(true);
    let baseline_loop = setup.closed_loop(false);
    let outcomes: Vec<SampleOutcome> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| -> Result<SampleOutcome> {
            let mut rng = stream_rng(cfg.seed, 1 + i as u64);
            let path = setup.path(&mut rng, &box_center, &box_half, t0, cfg.horizon)?;
            let mut summaries = Vec::new();
            let mut proposed = Vec::new();
            let mut baseline = Vec::new();
            let mut proposed_run = None;
            let mut baseline_run = None;
            for named in &tubes {
                let run = if named.tube.mode.uses_estimate() {
                    if proposed_run.is_none() {
                        proposed_run = Some(proposed_loop.simulate(
                            &start.proposed_state,
                            &start.d_hat,
                            &path,
                            t0,
                            steps,
                            cfg.dt,
                        )?);
                    }
                    proposed_run.as_ref().unwrap()
                } else {
                    if baseline_run.is_none() {
                        baseline_run =
                            Some(baseline_loop.simulate(&start.baseline_state, &Vec3::zeros(), &path, t0, steps, cfg.dt)?);
                    }
                    baseline_run.as_ref().unwrap()
                };
                let (summary, verdicts) = check_run(&named.tube, &named.label, run, 0, steps + 1)?;
                match named.tube.mode {
                    FrsMode::Baseline => baseline = records(i, run, &verdicts),
                    FrsMode::ProposedLin => proposed = records(i, run, &verdicts),
                    FrsMode::ProposedNolin if proposed.is_empty() => proposed = records(i, run, &verdicts),
                    FrsMode::ProposedNolin => {}
                }
                summaries.push(summary);
            }
            Ok(SampleOutcome {
                summaries,
                proposed,
                baseline,
            })
        })
        .collect::<Result<_>>()?;

    let mut containment: Vec<ContainmentSummary> = tubes
        .iter()
        .map(|t| ContainmentSummary::new(t.label.clone(), t.tube.mode))
        .collect();
    let mut samples = Vec::new();
    let mut samples_baseline = Vec::new();
    for o in outcomes {
        for (acc, s) in containment.iter_mut().zip(&o.summaries) {
            acc.merge(s);
        }
        samples.extend(o.proposed);
        samples_baseline.extend(o.baseline);
    }

    let mut rng = stream_rng(cfg.seed, AUDIT_STREAM_OFFSET - 1);
    let hopf = tubes
        .iter()
        .map(|t| Ok((t.label.clone(), audit_hopf(&t.tube, 100, &mut rng)?)))
        .collect::<Result<_>>()?;

    let mut ordering = Vec::new();
    if let Some(base) = tubes.iter().find(|t| t.tube.mode == FrsMode::Baseline) {
        for t in tubes.iter().filter(|t| t.tube.mode != FrsMode::Baseline) {
            ordering.push(compare_to_baseline(&t.label, &t.tube, &base.tube)?);
        }
    }
    let find = |m: FrsMode| tubes.iter().find(|t| t.tube.mode == m).map(|t| &t.tube);
    let dominance = match (find(FrsMode::ProposedLin), find(FrsMode::ProposedNolin)) {
        (Some(lin), Some(nolin)) => Some(audit_dominance(lin, nolin, 100, &mut rng)?),
        _ => None,
    };

    let label = |m: FrsMode| find(m).map(|_| m.name().to_string());
    let samples_tube = label(FrsMode::ProposedLin).or(label(FrsMode::ProposedNolin));
    let samples_baseline_tube = label(FrsMode::Baseline);

    Ok(RunArtifacts {
        scenario: "scenario1".into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        tubes,
        samples_tube,
        samples_baseline_tube,
        samples,
        samples_baseline,
        containment,
        hopf,
        ordering,
        dominance,
        stability: Some(stability_report(cfg)?),
    })
}

/// Replan instants `0, T, 2T, ...` not later than the total time.
pub fn replan_times(cfg: &ScenarioConfig) -> Vec<f64> {
    let n = (cfg.total_time / cfg.replan_period + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * cfg.replan_period).collect()
}

/// Scenario-2 flight from the on-reference start with `d̂(0) = 0` under the
/// shared disturbance path (stream 0).
fn flight(setup: &Setup, proposed: bool) -> Result<Vec<SimSample>> {
    let cfg = &setup.cfg;
    let total = steps_in(cfg.total_time, cfg.dt, "total_time")?;
    let x0 = on_reference_state(&cfg.trajectory, 0.0)?;
    let mut rng = stream_rng(cfg.seed, 0);
    let path = setup.path(&mut rng, &Vec3::zeros(), &cfg.disturbance.bound, 0.0, cfg.total_time)?;
    setup.closed_loop(proposed).simulate(&x0, &Vec3::zeros(), &path, 0.0, total, cfg.dt)
}

/// Full flight with both controllers under one shared disturbance path,
/// recomputing proposed and baseline tubes at every replan instant.
pub fn run_scenario2(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    let total = steps_in(cfg.total_time, cfg.dt, "total_time")?;
    let replan = steps_in(cfg.replan_period, cfg.dt, "replan_period")?;
    let steps = cfg.horizon_steps();
    let proposed = flight(&setup, true)?;
    let baseline = flight(&setup, false)?;

    let mut tubes = Vec::new();
    let mut containment = Vec::new();
    let mut inside_proposed = vec![true; total + 1];
    let mut inside_baseline = vec![true; total + 1];
    for (k, _) in replan_times(cfg).iter().enumerate() {
        let offset = k * replan;
        let flown = (total - offset + 1).min(steps + 1);
        for mode in [FrsMode::ProposedLin, FrsMode::Baseline] {
            let run = if mode.uses_estimate() { &proposed } else { &baseline };
            let s = &run[offset];
            let tube = setup.tube(mode, &s.state, s.d_hat, s.t, steps)?;
            let label = format!("{}_{k:02}", mode.name());
            let (summary, verdicts) = check_run(&tube, &label, run, offset, flown)?;
            let inside = if mode.uses_estimate() { &mut inside_proposed } else { &mut inside_baseline };
            for (j, v) in verdicts.iter().enumerate() {
                inside[offset + j] &= *v;
            }
            containment.push(summary);
            tubes.push(NamedTube { label, tube });
        }
    }

    let mut rng = stream_rng(cfg.seed, AUDIT_STREAM_OFFSET - 1);
    let hopf = tubes
        .iter()
        .map(|t| Ok((t.label.clone(), audit_hopf(&t.tube, 100, &mut rng)?)))
        .collect::<Result<_>>()?;

    Ok(RunArtifacts {
        scenario: "scenario2".into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        tubes,
        samples: records(0, &proposed, &inside_proposed),
        samples_baseline: records(0, &baseline, &inside_baseline),
        samples_tube: None,
        samples_baseline_tube: None,
        containment,
        hopf,
        ordering: Vec::new(),
        dominance: None,
        stability: Some(stability_report(cfg)?),
    })
}

/// Closed-loop runs of the proposed controller from the on-reference start
/// with `d̂(0) = 0`, one per audit path.
pub fn audit_runs(cfg: &ScenarioConfig) -> Result<Vec<Vec<SimSample>>> {
    let setup = Setup::new(cfg)?;
    let total = steps_in(cfg.total_time, cfg.dt, "total_time")?;
    let x0 = on_reference_state(&cfg.trajectory, 0.0)?;
    let cl = setup.closed_loop(true);
    (0..cfg.audit_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, AUDIT_STREAM_OFFSET + i as u64);
            let path = setup.path(&mut rng, &Vec3::zeros(), &cfg.disturbance.bound, 0.0, cfg.total_time)?;
            cl.simulate(&x0, &Vec3::zeros(), &path, 0.0, total, cfg.dt)
        })
        .collect()
}

fn peak_reference_accel(reference: &dyn Reference, span: f64, dt: f64) -> Result<f64> {
    let n = (span / dt).ceil() as usize;
    let mut peak: f64 = 0.0;
    for k in 0..=n {
        peak = peak.max(reference.sample(k as f64 * dt)?.acceleration.norm());
    }
    Ok(peak)
}

/// Certificate with measured (or configured) `s_m`, plus both audits over
/// `audit_paths` simulated flights.
pub fn stability_report(cfg: &ScenarioConfig) -> Result<StabilityReport> {
    let setup = Setup::new(cfg)?;
    let runs = audit_runs(cfg)?;
    let (s_m, s_m_measured) = match cfg.s_m {
        Some(s) => (s, false),
        None => (measured_s_m(&runs), true),
    };
    let m_bound = match cfg.m_bound {
        Some(m) => m,
        None => default_m_bound(
            peak_reference_accel(&cfg.trajectory, cfg.total_time, cfg.dt)?,
            &cfg.disturbance,
        ),
    };
    let certificate = build_certificate(
        &setup.gains,
        cfg.alpha_d,
        &cfg.disturbance,
        s_m,
        cfg.theta1,
        cfg.theta2,
        m_bound,
    );
    let disturbance_audit = audit_disturbance_convergence(&runs, &cfg.disturbance, cfg.alpha_d, cfg.theta1)?;
    let cl = setup.closed_loop(true);
    let radius = certificate.uub_radius_translational;
    let error_audit = audit_error_dynamics(&cl, &flight(&setup, true)?, radius)?;
    let mut paths_audit: Option<ErrorDynamicsAudit> = None;
    for run in &runs {
        let a = audit_error_dynamics(&cl, run, radius)?;
        paths_audit = Some(match paths_audit {
            None => a,
            Some(mut acc) => {
                acc.samples += a.samples;
                acc.max_residual_p = acc.max_residual_p.max(a.max_residual_p);
                acc.max_residual_v = acc.max_residual_v.max(a.max_residual_v);
                acc.max_residual_d = acc.max_residual_d.max(a.max_residual_d);
                acc.max_tilt_sine = acc.max_tilt_sine.max(a.max_tilt_sine);
                acc.entry_time = match (acc.entry_time, a.entry_time) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    _ => None,
                };
                acc.max_error_after_entry = acc.max_error_after_entry.max(a.max_error_after_entry);
                acc.bound_violations += a.bound_violations;
                acc
            }
        });
    }
    let error_audit_paths =
        paths_audit.ok_or_else(|| FrsError::InvalidParameter("audit_paths must be positive".into()))?;
    Ok(StabilityReport {
        certificate,
        s_m,
        s_m_measured,
        disturbance_audit,
        error_audit,
        error_audit_paths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEntry {
    pub mode: FrsMode,
    pub iterations: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Times full scenario-1 tube computations (rollout, linearization and
/// propagation) for every mode.
pub fn bench(cfg: &ScenarioConfig, iterations: usize) -> Result<Vec<BenchEntry>> {
    if iterations == 0 {
        return Err(FrsError::InvalidParameter("iterations must be positive".into()));
    }
    let setup = Setup::new(cfg)?;
    let start = warm_start(&setup)?;
    let steps = cfg.horizon_steps();
    FrsMode::ALL
        .iter()
        .map(|&mode| {
            let x = if mode.uses_estimate() { start.proposed_state } else { start.baseline_state };
            let mut times = Vec::with_capacity(iterations);
            for _ in 0..iterations {
                let clock = Instant::now();
                let tube = setup.tube(mode, &x, start.d_hat, start.t0, steps)?;
                times.push(clock.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(&tube);
            }
            times.sort_by(f64::total_cmp);
            let mid = times.len() / 2;
            let median = if times.len() % 2 == 1 {
                times[mid]
            } else {
                0.5 * (times[mid - 1] + times[mid])
            };
            Ok(BenchEntry {
                mode,
                iterations,
                median_ms: median,
                min_ms: times[0],
                max_ms: *times.last().unwrap(),
            })
        })
        .collect()
}
