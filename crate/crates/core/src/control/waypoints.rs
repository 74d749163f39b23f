use serde::{Deserialize, Serialize};

use super::{ControlError, MpcConfig};
use crate::estimation::RowRelativeState;

/// Reference point in the robot frame (`x` forward, `y` left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Straight lane-centerline reference expressed in the robot frame.
///
/// The robot sits `W·(½ − d)` to the left of the centerline, with
/// `d = d_L / (d_L + d_R)`, and is yawed by `φ` relative to it. In the robot
/// frame the centerline therefore runs along direction `−φ` through the foot
/// point of the perpendicular from the robot. Waypoints are placed every
/// `Δs` along it, starting one step past that foot point.
pub fn generate_waypoints(
    state: &RowRelativeState,
    lane_width: f64,
    cfg: &MpcConfig,
) -> Result<Vec<Waypoint>, ControlError> {
    if !(state.d_left > 0.0 && state.d_right > 0.0) {
        return Err(ControlError::InvalidState(format!(
            "row distances must be positive, got d_L = {}, d_R = {}",
            state.d_left, state.d_right
        )));
    }
    let offset = lane_width * (0.5 - state.distance_ratio());
    let (s, c) = state.heading.sin_cos();
    // World-row frame → robot frame is a rotation by −φ after shifting the
    // robot to the origin; the centerline point abeam the robot is (0, −offset).
    let foot = (-offset * s, -offset * c);
    let dir = (c, -s);
    Ok((1..=cfg.horizon)
        .map(|i| {
            let t = i as f64 * cfg.step;
            Waypoint::new(foot.0 + t * dir.0, foot.1 + t * dir.1)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn centered_and_aligned() {
        let cfg = MpcConfig::default();
        let wps =
            generate_waypoints(&RowRelativeState::new(0.375, 0.375, 0.0, 0.0), 0.75, &cfg).unwrap();
        assert_eq!(wps.len(), 20);
        for (i, wp) in wps.iter().enumerate() {
            assert_abs_diff_eq!(wp.x, (i + 1) as f64 * 0.2, epsilon = 1e-12);
            assert_abs_diff_eq!(wp.y, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn robot_near_left_row_sees_centerline_to_its_right() {
        let cfg = MpcConfig::default();
        let wps =
            generate_waypoints(&RowRelativeState::new(0.275, 0.475, 0.0, 0.0), 0.75, &cfg).unwrap();
        for wp in &wps {
            assert_abs_diff_eq!(wp.y, -0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn heading_rotates_reference() {
        let cfg = MpcConfig::default();
        let wps =
            generate_waypoints(&RowRelativeState::new(0.375, 0.375, 0.1, 0.0), 0.75, &cfg).unwrap();
        for wp in &wps {
            assert_abs_diff_eq!(wp.y.atan2(wp.x), -0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn offset_is_perpendicular_distance_to_line() {
        let cfg = MpcConfig::default();
        let st = RowRelativeState::new(0.3, 0.45, -0.2, 0.0);
        let wps = generate_waypoints(&st, 0.75, &cfg).unwrap();
        let (a, b) = (wps[0], wps[5]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let signed = (dx * (0.0 - a.y) - dy * (0.0 - a.x)) / dx.hypot(dy);
        // Robot is 0.075 m left of center, i.e. to the left of the path.
        assert_abs_diff_eq!(signed, 0.075, epsilon = 1e-12);
    }

    #[test]
    fn rejects_nonpositive_distances() {
        let cfg = MpcConfig::default();
        assert!(generate_waypoints(&RowRelativeState::new(-0.1, 0.85, 0.0, 0.0), 0.75, &cfg).is_err());
    }
}
