//! Closed-loop field simulator: field geometry, synthetic perception, the
//! trial loop and experiment suites.

mod config;
pub mod export;
mod field;
mod perception;
mod suite;
mod trial;

pub use config::{ActuatorConfig, InitialPose, MetricsConfig, SensorConfig, TrialConfig};
pub use field::{FieldModel, FieldProjection, Gap, GapSide, Occlusion};
pub use perception::{
    sample_perception, sigma_from_l1, PerceptionNoiseModel, HEADING_L1_DEG, RATIO_L1,
};
pub use suite::{
    aggregate, run_suite, run_suite_sequential, run_suite_with_jobs, ConfigAggregate, SuiteRow,
};
pub use trial::{
    run_trial, Intervention, InterventionCause, TickRecord, TrialRecord, TrialSummary,
};

use thiserror::Error;

use crate::control::ControlError;
use crate::estimation::EstimationError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("cannot parse configuration: {0}")]
    ConfigParse(String),
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error("pose projects to arc length {arc_length:.3} m, outside the field [0, {length:.3}] m")]
    OutOfField { arc_length: f64, length: f64 },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Control(#[from] ControlError),
}
