//! Reference-path generation, curvature MPC and the yaw-rate PID loop.

mod mpc;
mod pid;
mod waypoints;

pub use mpc::{
    mpc_cost, mpc_gradient, rollout, solve_mpc, solve_mpc_traced, MpcConfig, MpcSolution,
    SolveStatus,
};
pub use pid::{step_pid, PidConfig, PidState};
pub use waypoints::{generate_waypoints, Waypoint};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} waypoints, got {got}")]
    WaypointCount { expected: usize, got: usize },
    #[error("waypoints {0} and {1} coincide")]
    CoincidentWaypoints(usize, usize),
    #[error("previous curvature {prev} exceeds the bound {bound}")]
    PreviousCurvatureOutOfBounds { prev: f64, bound: f64 },
    #[error("invalid row state: {0}")]
    InvalidState(String),
}
