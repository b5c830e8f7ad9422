//! Ellipsoidal forward reachable sets for a multirotor flying with a
//! nonlinear disturbance observer and a disturbance-compensating controller.

pub mod config;
pub mod controller;
pub mod disturbance;
pub mod ellipsoid;
pub mod error;
pub mod export;
pub mod frs;
pub mod multirotor;
pub mod scenario;
pub mod simulation;
pub mod stability;

pub use ellipsoid::Ellipsoid;
pub use error::{FrsError, Result};
