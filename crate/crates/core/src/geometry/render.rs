//! Forward model: exact line annotations for a known camera pose in a row.

use nalgebra::{Point2, Rotation3, Vector3};

use super::{AnnotationSet, CameraAttitude, CameraIntrinsics, GeometryError, Line2D};

/// Camera placement inside a crop row.
///
/// Row frame: rows run along `+Z`, `+Y` points down to the ground plane at
/// `Y = height`, the left row sits at `X = -left_distance` and the right row
/// at `X = +right_distance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoseInRow {
    pub attitude: CameraAttitude,
    pub height: f64,
    pub left_distance: f64,
    pub right_distance: f64,
}

impl CameraPoseInRow {
    pub fn new(
        attitude: CameraAttitude,
        height: f64,
        left_distance: f64,
        right_distance: f64,
    ) -> Result<Self, GeometryError> {
        for (name, v) in [
            ("height", height),
            ("left distance", left_distance),
            ("right distance", right_distance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidPose(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            attitude,
            height,
            left_distance,
            right_distance,
        })
    }

    /// Pose from a lane width and distance ratio `d = X_l / W`.
    pub fn from_ratio(
        attitude: CameraAttitude,
        height: f64,
        lane_width: f64,
        distance_ratio: f64,
    ) -> Result<Self, GeometryError> {
        Self::new(
            attitude,
            height,
            distance_ratio * lane_width,
            (1.0 - distance_ratio) * lane_width,
        )
    }

    pub fn lane_width(&self) -> f64 {
        self.left_distance + self.right_distance
    }

    pub fn distance_ratio(&self) -> f64 {
        self.left_distance / self.lane_width()
    }
}

/// Image line of the 3D line through `point` with `direction`, both in
/// camera coordinates: the back-projected plane normal `n = A × D` gives
/// `n_x·x + n_y·y + f·n_z = 0`.
fn project_line(point: Vector3<f64>, direction: Vector3<f64>, f: f64) -> Vector3<f64> {
    let n = point.cross(&direction);
    Vector3::new(n.x, n.y, f * n.z)
}

/// Clips an infinite line to the image rectangle and returns the visible
/// segment.
fn clip_to_image(
    coeffs: Vector3<f64>,
    cam: &CameraIntrinsics,
    what: &str,
) -> Result<Line2D, GeometryError> {
    let (hw, hh) = cam.half_extent();
    let (a, b, c) = (coeffs.x, coeffs.y, coeffs.z);
    let mut hits: Vec<Point2<f64>> = Vec::with_capacity(4);
    let slack = 1e-9 * hw.max(hh);
    if b != 0.0 {
        for x in [-hw, hw] {
            let y = -(a * x + c) / b;
            if y.abs() <= hh + slack {
                hits.push(Point2::new(x, y));
            }
        }
    }
    if a != 0.0 {
        for y in [-hh, hh] {
            let x = -(b * y + c) / a;
            if x.abs() <= hw + slack {
                hits.push(Point2::new(x, y));
            }
        }
    }
    // Keep the two hits furthest apart (corner hits can appear twice).
    let mut best: Option<(f64, Point2<f64>, Point2<f64>)> = None;
    for (i, p) in hits.iter().enumerate() {
        for q in &hits[i + 1..] {
            let d = (p - q).norm();
            if best.is_none_or(|(bd, _, _)| d > bd) {
                best = Some((d, *p, *q));
            }
        }
    }
    match best {
        Some((d, p, q)) if d > 1e-6 => Line2D::new(p, q),
        _ => Err(GeometryError::OutOfView(what.to_string())),
    }
}

/// Renders horizon (or stalks), left row and right row for `pose`.
///
/// With `stalk_count == 0` the horizon is emitted directly. Otherwise
/// `stalk_count` vertical stalk lines are emitted in its place, alternating
/// between the left and right rows at increasing depth and skipping stalks
/// that fall outside the image.
pub fn render_annotations(
    pose: &CameraPoseInRow,
    cam: &CameraIntrinsics,
    stalk_count: usize,
) -> Result<AnnotationSet, GeometryError> {
    let rot: Rotation3<f64> = pose.attitude.rotation();
    let f = cam.focal_px();
    let down = rot * Vector3::new(0.0, 1.0, 0.0);
    let along = rot * Vector3::new(0.0, 0.0, 1.0);

    let left_base = rot * Vector3::new(-pose.left_distance, pose.height, 0.0);
    let right_base = rot * Vector3::new(pose.right_distance, pose.height, 0.0);
    let left_row = clip_to_image(project_line(left_base, along, f), cam, "left row")?;
    let right_row = clip_to_image(project_line(right_base, along, f), cam, "right row")?;

    let (horizon, stalks) = if stalk_count == 0 {
        let h = Vector3::new(down.x, down.y, f * down.z);
        (Some(clip_to_image(h, cam, "horizon")?), None)
    } else {
        // Candidates alternate rows at increasing depth; ones outside the
        // image are skipped.
        let mut stalks = Vec::with_capacity(stalk_count);
        let mut last_err = None;
        for i in 0..4 * stalk_count {
            if stalks.len() == stalk_count {
                break;
            }
            let depth = 1.5 + 0.75 * (i / 2) as f64;
            let x = if i % 2 == 0 {
                -pose.left_distance
            } else {
                pose.right_distance
            };
            let base = rot * Vector3::new(x, pose.height, depth);
            match clip_to_image(project_line(base, down, f), cam, &format!("stalk {i}")) {
                Ok(line) => stalks.push(line),
                Err(e) => last_err = Some(e),
            }
        }
        if stalks.len() < stalk_count {
            return Err(last_err.expect("a candidate was rejected"));
        }
        (None, Some(stalks))
    };

    Ok(AnnotationSet {
        left_row,
        right_row,
        horizon,
        stalks,
    })
}
