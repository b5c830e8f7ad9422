//! Scenario configuration: JSON in SI units, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{CircularTrajectory, ControllerGains};
use crate::disturbance::DisturbanceModel;
use crate::error::{FrsError, Result};
use crate::frs::{FrsMode, LinearizationBound};
use crate::multirotor::Vec3;

/// Which tubes a scenario-1 run builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    All,
    Baseline,
    ProposedLin,
    ProposedNolin,
}

impl ModeSelection {
    pub fn modes(&self) -> Vec<FrsMode> {
        match self {
            ModeSelection::All => FrsMode::ALL.to_vec(),
            ModeSelection::Baseline => vec![FrsMode::Baseline],
            ModeSelection::ProposedLin => vec![FrsMode::ProposedLin],
            ModeSelection::ProposedNolin => vec![FrsMode::ProposedNolin],
        }
    }
}

/// Semi-axes of the initial error set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSetRecipe {
    /// Semi-axis on the state and estimate coordinates.
    pub state_radius: f64,
    /// Disturbance semi-axes are this multiple of `d_M(t0)`.
    pub disturbance_scale: f64,
}

impl Default for InitialSetRecipe {
    fn default() -> Self {
        Self {
            state_radius: 0.05,
            disturbance_scale: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub trajectory: CircularTrajectory,
    /// Tube horizon, s.
    pub horizon: f64,
    /// Time between tube recomputations in scenario 2, s.
    pub replan_period: f64,
    /// Flight duration of scenario 2, s.
    pub total_time: f64,
    pub dt: f64,
    /// `[k_p, k_v, k_roll_pitch, k_yaw]`.
    pub gains: [f64; 4],
    pub alpha_d: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Fusion weight.
    pub b: f64,
    /// Regularization added to every input-set shape.
    pub epsilon: f64,
    pub disturbance: DisturbanceModel,
    pub linearization: LinearizationBound,
    pub initial_set: InitialSetRecipe,
    /// Observer run-in before the scenario-1 tube starts, s.
    pub warm_up: f64,
    pub n_samples: usize,
    /// Disturbance paths used by the observer audit.
    pub audit_paths: usize,
    pub seed: u64,
    pub mode: ModeSelection,
    /// Tilt bound for the certificate; measured from simulation when absent.
    pub s_m: Option<f64>,
    /// Bound on `‖g e3 + p̈_r + d‖`; derived from the trajectory when absent.
    pub m_bound: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            trajectory: CircularTrajectory::default(),
            horizon: 2.7,
            replan_period: 2.5,
            total_time: 15.2,
            dt: 0.02,
            gains: [18.0, 6.0, 7.0, 21.0],
            alpha_d: 2.0,
            theta1: 0.8,
            theta2: 0.8,
            b: 0.99,
            epsilon: 1e-9,
            disturbance: DisturbanceModel {
                bound: Vec3::new(3.0, 3.0, 1.0),
                rate_bound: Vec3::repeat(2.0),
            },
            linearization: LinearizationBound::default(),
            initial_set: InitialSetRecipe::default(),
            warm_up: 0.5,
            n_samples: 500,
            audit_paths: 100,
            seed: 20_220_701,
            mode: ModeSelection::All,
            s_m: None,
            m_bound: None,
        }
    }
}

/// Number of whole steps of `dt` in `span`, or an error if `span` is not a multiple.
pub fn steps_in(span: f64, dt: f64, what: &str) -> Result<usize> {
    let n = (span / dt).round();
    if !(span >= 0.0) || (n * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(FrsError::InvalidParameter(format!("{what} = {span} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| FrsError::InvalidParameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FrsError::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn controller_gains(&self) -> Result<ControllerGains> {
        let mut g = ControllerGains::from_vector(self.gains)?;
        if let Some(s_m) = self.s_m {
            g.s_m = s_m;
        }
        Ok(g)
    }

    pub fn horizon_steps(&self) -> usize {
        steps_in(self.horizon, self.dt, "horizon").expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("replan_period", self.replan_period),
            ("total_time", self.total_time),
            ("alpha_d", self.alpha_d),
            ("epsilon", self.epsilon),
            ("trajectory.radius", self.trajectory.radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FrsError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(FrsError::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(FrsError::InvalidParameter(format!("b must lie in [0, 1], got {}", self.b)));
        }
        if self.warm_up < 0.0 {
            return Err(FrsError::InvalidParameter("warm_up must be nonnegative".into()));
        }
        if self.n_samples < 1 {
            return Err(FrsError::InvalidParameter("n_samples must be at least 1".into()));
        }
        if !(self.initial_set.state_radius > 0.0 && self.initial_set.disturbance_scale > 0.0) {
            return Err(FrsError::InvalidParameter("initial set recipe must be positive".into()));
        }
        if let Some(s) = self.s_m {
            if !(s >= 0.0) {
                return Err(FrsError::InvalidParameter("s_m must be nonnegative".into()));
            }
        }
        if let Some(m) = self.m_bound {
            if !(m > 0.0) {
                return Err(FrsError::InvalidParameter("m_bound must be positive".into()));
            }
        }
        steps_in(self.horizon, self.dt, "horizon")?;
        steps_in(self.replan_period, self.dt, "replan_period")?;
        steps_in(self.total_time, self.dt, "total_time")?;
        steps_in(self.warm_up, self.dt, "warm_up")?;
        self.disturbance.validate()?;
        self.linearization.validate()?;
        self.controller_gains()?;
        Ok(())
    }

    /// SHA-256 of the compact JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert_eq!(cfg.horizon_steps(), 135);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioConfig::default().to_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioConfig::default().to_json()).unwrap();
        v["disturbance"]["extra"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.horizon = 2.71;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.n_samples = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.theta1 = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.gains[1] = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
