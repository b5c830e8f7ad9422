//! Forward reachable tubes of the augmented closed loop.

pub mod augmented;
pub mod hopf;
pub mod transition;
pub mod tube;

pub use augmented::{augment, augmented_rhs, jacobian, reference_rollout, split, Mat15, ReferencePath, Vec15};
pub use hopf::{hopf_step_shape, support_oracle_g};
pub use transition::{state_transition, Transition};
pub use tube::{
    initial_set, propagate_step, run_tube, BoundPredictor, FrsMode, FrsProblem, FrsTube, LinearizationBound,
    StepRecord, TubeMetric,
};
