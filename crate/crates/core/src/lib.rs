pub mod control;
pub mod estimation;
pub mod geometry;
pub mod kinematics;
pub mod simulation;
