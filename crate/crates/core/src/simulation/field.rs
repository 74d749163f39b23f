use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::estimation::RowRelativeState;
use crate::kinematics::{normalize_angle, Pose2D};

/// Which crop rows are missing inside a gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GapSide {
    Left,
    Right,
    #[default]
    Both,
}

/// Arc-length interval along the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gap {
    pub start: f64,
    pub length: f64,
    #[serde(default)]
    pub side: GapSide,
}

/// Arc-length interval during which perception delivers nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    pub start: f64,
    pub length: f64,
}

/// A lane between two crop rows, described by its piecewise-linear
/// centerline in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldModel {
    pub lane_width: f64,
    pub centerline: Vec<[f64; 2]>,
    pub gaps: Vec<Gap>,
    pub occlusions: Vec<Occlusion>,
}

impl Default for FieldModel {
    fn default() -> Self {
        Self::straight(428.0, 0.75)
    }
}

/// Nearest-point projection of a pose onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldProjection {
    pub state: RowRelativeState,
    /// Arc length of the foot point.
    pub arc_length: f64,
    /// Signed offset from the centerline, left positive.
    pub lateral_offset: f64,
    /// Centerline heading at the foot point.
    pub path_heading: f64,
}

impl FieldModel {
    pub fn straight(length: f64, lane_width: f64) -> Self {
        Self {
            lane_width,
            centerline: vec![[0.0, 0.0], [length, 0.0]],
            gaps: Vec::new(),
            occlusions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::ConfigInvalid(m));
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return bad(format!("field.lane_width must be positive, got {}", self.lane_width));
        }
        if self.centerline.len() < 2 {
            return bad("field.centerline needs at least two vertices".into());
        }
        for (i, w) in self.centerline.windows(2).enumerate() {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if !(len > 0.0 && len.is_finite()) {
                return bad(format!("field.centerline segment {i} has zero length"));
            }
        }
        let length = self.length();
        for (name, start, len) in self
            .gaps
            .iter()
            .map(|g| ("gap", g.start, g.length))
            .chain(self.occlusions.iter().map(|o| ("occlusion", o.start, o.length)))
        {
            if !(start >= 0.0 && len >= 0.0 && start + len <= length) {
                return bad(format!(
                    "{name} [{start}, {}] lies outside the field [0, {length}]",
                    start + len
                ));
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.centerline
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    pub fn in_gap(&self, arc_length: f64) -> bool {
        self.gaps
            .iter()
            .any(|g| arc_length >= g.start && arc_length < g.start + g.length)
    }

    pub fn gap_at(&self, arc_length: f64) -> Option<&Gap> {
        self.gaps
            .iter()
            .find(|g| arc_length >= g.start && arc_length < g.start + g.length)
    }

    pub fn occluded(&self, arc_length: f64) -> bool {
        self.occlusions
            .iter()
            .any(|o| arc_length >= o.start && arc_length < o.start + o.length)
    }

    /// Centerline point and heading at `arc_length`, clamped to the field.
    pub fn point_at(&self, arc_length: f64) -> Pose2D {
        let mut remaining = arc_length.max(0.0);
        let last = self.centerline.len() - 2;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let len = dx.hypot(dy);
            if remaining <= len || i == last {
                let t = remaining.min(len) / len;
                return Pose2D::new(w[0][0] + t * dx, w[0][1] + t * dy, dy.atan2(dx));
            }
            remaining -= len;
        }
        unreachable!("validated centerline has at least one segment")
    }

    /// Pose at `arc_length` displaced `lateral_offset` to the left of the
    /// centerline and yawed `heading` relative to it.
    pub fn pose_at(&self, arc_length: f64, lateral_offset: f64, heading: f64) -> Pose2D {
        let p = self.point_at(arc_length);
        let (s, c) = p.yaw.sin_cos();
        Pose2D::new(
            p.x - lateral_offset * s,
            p.y + lateral_offset * c,
            p.yaw + heading,
        )
    }

    /// Row-relative truth for a pose. Ties between equidistant segments go
    /// to the smaller arc length.
    pub fn true_row_state(
        &self,
        pose: &Pose2D,
        yaw_rate: f64,
    ) -> Result<FieldProjection, SimulationError> {
        const EDGE: f64 = 1e-9;
        const TIE: f64 = 1e-12;
        let n_seg = self.centerline.len() - 1;
        // (distance, overshoot past the field ends, projection)
        let mut best: Option<(f64, Option<f64>, FieldProjection)> = None;
        let mut start_s = 0.0;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let (ax, ay) = (w[0][0], w[0][1]);
            let (dx, dy) = (w[1][0] - ax, w[1][1] - ay);
            let len = dx.hypot(dy);
            let (ux, uy) = (dx / len, dy / len);
            let along = (pose.x - ax) * ux + (pose.y - ay) * uy;
            let t = along.clamp(0.0, len);
            let (fx, fy) = (ax + t * ux, ay + t * uy);
            let dist = (pose.x - fx).hypot(pose.y - fy);
            if best.as_ref().is_none_or(|(d, _, _)| dist < *d - TIE) {
                let outside = if i == 0 && along < -EDGE {
                    Some(along)
                } else if i == n_seg - 1 && along > len + EDGE {
                    Some(start_s + along)
                } else {
                    None
                };
                let lateral = ux * (pose.y - ay) - uy * (pose.x - ax);
                let half = self.lane_width / 2.0;
                let heading = uy.atan2(ux);
                best = Some((
                    dist,
                    outside,
                    FieldProjection {
                        state: RowRelativeState::new(
                            half - lateral,
                            half + lateral,
                            normalize_angle(pose.yaw - heading),
                            yaw_rate,
                        ),
                        arc_length: start_s + t,
                        lateral_offset: lateral,
                        path_heading: heading,
                    },
                ));
            }
            start_s += len;
        }
        match best.expect("at least one segment") {
            (_, Some(arc_length), _) => Err(SimulationError::OutOfField {
                arc_length,
                length: start_s,
            }),
            (_, None, proj) => Ok(proj),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn l_shaped() -> FieldModel {
        FieldModel {
            lane_width: 0.75,
            centerline: vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]],
            gaps: vec![],
            occlusions: vec![],
        }
    }

    #[test]
    fn centered_and_aligned() {
        let f = FieldModel::default();
        let p = f.true_row_state(&Pose2D::new(5.0, 0.0, 0.0), 0.0).unwrap();
        assert_eq!(p.state.d_left, 0.375);
        assert_eq!(p.state.d_right, 0.375);
        assert_eq!(p.state.heading, 0.0);
    }

    #[test]
    fn left_offset_shrinks_left_distance() {
        let f = FieldModel::default();
        let p = f.true_row_state(&Pose2D::new(5.0, 0.1, 0.0), 0.2).unwrap();
        assert_abs_diff_eq!(p.state.d_left, 0.275, epsilon = 1e-12);
        assert_abs_diff_eq!(p.state.d_right, 0.475, epsilon = 1e-12);
        assert_eq!(p.state.yaw_rate, 0.2);
        assert_abs_diff_eq!(p.lateral_offset, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn heading_relative_to_straight_row() {
        let f = FieldModel::default();
        let p = f
            .true_row_state(&Pose2D::new(5.0, 0.0, 5f64.to_radians()), 0.0)
            .unwrap();
        assert_abs_diff_eq!(p.state.heading, 5f64.to_radians(), epsilon = 1e-15);
    }

    #[test]
    fn curved_field_uses_nearest_segment() {
        let f = l_shaped();
        // Inside the corner, closer to the second leg.
        let p = f
            .true_row_state(&Pose2D::new(9.9, 4.0, std::f64::consts::FRAC_PI_2), 0.0)
            .unwrap();
        assert_abs_diff_eq!(p.arc_length, 14.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.lateral_offset, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.state.heading, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ties_go_to_smaller_arc_length() {
        let f = l_shaped();
        // Equidistant from both legs on the corner bisector.
        let p = f.true_row_state(&Pose2D::new(9.8, 0.2, 0.0), 0.0).unwrap();
        assert_abs_diff_eq!(p.arc_length, 9.8, epsilon = 1e-12);
    }

    #[test]
    fn out_of_field_beyond_ends() {
        let f = FieldModel::straight(10.0, 0.75);
        assert!(matches!(
            f.true_row_state(&Pose2D::new(-0.5, 0.0, 0.0), 0.0),
            Err(SimulationError::OutOfField { .. })
        ));
        assert!(matches!(
            f.true_row_state(&Pose2D::new(10.5, 0.0, 0.0), 0.0),
            Err(SimulationError::OutOfField { .. })
        ));
    }

    #[test]
    fn pose_at_roundtrips_through_projection() {
        let f = l_shaped();
        for &(s, e, h) in &[(3.0, 0.1, 0.2), (12.0, -0.2, -0.3), (0.0, 0.05, 0.0)] {
            let p = f.pose_at(s, e, h);
            let proj = f.true_row_state(&p, 0.0).unwrap();
            assert_abs_diff_eq!(proj.arc_length, s, epsilon = 1e-12);
            assert_abs_diff_eq!(proj.lateral_offset, e, epsilon = 1e-12);
            assert_abs_diff_eq!(proj.state.heading, h, epsilon = 1e-12);
        }
    }

    #[test]
    fn validation() {
        assert!(FieldModel::default().validate().is_ok());
        let mut f = FieldModel::default();
        f.gaps.push(Gap {
            start: 427.0,
            length: 2.0,
            side: GapSide::Both,
        });
        assert!(f.validate().is_err());
        let mut f = FieldModel::default();
        f.centerline = vec![[0.0, 0.0], [0.0, 0.0]];
        assert!(f.validate().is_err());
        let mut f = FieldModel::default();
        f.lane_width = 0.0;
        assert!(f.validate().is_err());
    }

    #[test]
    fn gap_and_occlusion_lookup() {
        let mut f = FieldModel::default();
        f.gaps.push(Gap {
            start: 10.0,
            length: 2.0,
            side: GapSide::Left,
        });
        f.occlusions.push(Occlusion {
            start: 20.0,
            length: 1.0,
        });
        assert!(!f.in_gap(9.99));
        assert!(f.in_gap(10.0));
        assert!(!f.in_gap(12.0));
        assert!(f.occluded(20.5));
        assert!(!f.occluded(21.0));
    }
}
