//! Unicycle kinematics for a skid-steer base, integrated with explicit Euler.
//!
//! World frame: `x` runs down the row, `y` is positive to the left, and yaw
//! is measured counter-clockwise from `+x`.

use std::f64::consts::PI;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Yaw in `(-π, π]`.
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }
}

/// Linear and angular speed command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    pub linear: f64,
    pub angular: f64,
}

/// Curvature over an arc-length step; `ω·Δt = ρ·Δs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcStepCommand {
    pub curvature: f64,
    pub arc_length: f64,
}

/// One Euler step in time. Position uses the pre-step heading.
pub fn step_time(pose: &Pose2D, cmd: &VelocityCommand, dt: f64) -> Pose2D {
    debug_assert!(dt > 0.0, "time step must be positive");
    let (s, c) = pose.yaw.sin_cos();
    Pose2D {
        x: pose.x + cmd.linear * c * dt,
        y: pose.y + cmd.linear * s * dt,
        yaw: normalize_angle(pose.yaw + cmd.angular * dt),
    }
}

/// One Euler step in arc length.
pub fn step_arc(pose: &Pose2D, cmd: &ArcStepCommand) -> Pose2D {
    debug_assert!(cmd.arc_length > 0.0, "arc step must be positive");
    let (s, c) = pose.yaw.sin_cos();
    Pose2D {
        x: pose.x + c * cmd.arc_length,
        y: pose.y + s * cmd.arc_length,
        yaw: normalize_angle(pose.yaw + cmd.curvature * cmd.arc_length),
    }
}
