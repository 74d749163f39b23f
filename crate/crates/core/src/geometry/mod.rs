//! Row-geometry ground truthing from line annotations.
//!
//! Image coordinates are centered on the principal point with `x` to the
//! right and `y` down. Camera coordinates follow the same axes with `Z`
//! looking into the scene, so a ray through pixel `(x, y)` is `(x, y, f)`.
//!
//! The camera attitude relative to the crop row is the composition
//! `R = R_roll · R_pitch · R_heading`, mapping row-frame vectors (rows along
//! `+Z`, ground normal along `+Y`) into camera coordinates. Ground truthing
//! peels these rotations off one at a time by rectifying the annotated lines
//! with the homography `K R⁻¹ K⁻¹`.

mod records;
mod render;

pub use records::{AnnotationRecord, LabelRecord, PixelLine};
pub use render::{render_annotations, CameraPoseInRow};

use nalgebra::{Matrix3, Point2, Rotation3, Vector3};
use thiserror::Error;

/// Two line directions closer than this (radians) are treated as parallel.
pub const PARALLEL_TOLERANCE: f64 = 1e-4;

/// Largest residual horizon slope `|dy/dx|` accepted as roll-rectified.
pub const RECTIFIED_SLOPE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("line endpoints coincide at ({x}, {y})")]
    CoincidentEndpoints { x: f64, y: f64 },
    #[error("need at least {needed} lines, got {got}")]
    TooFewLines { needed: usize, got: usize },
    #[error("lines are parallel within {PARALLEL_TOLERANCE} rad; no finite intersection")]
    DegenerateLines,
    #[error("horizon is not roll-rectified (residual slope {slope:e})")]
    NotRectified { slope: f64 },
    #[error("{side} row lands on the wrong side of the image center (x = {x})")]
    RowOnWrongSide { side: RowSide, x: f64 },
    #[error("{0} does not intersect the image")]
    OutOfView(String),
    #[error("line maps to the line at infinity")]
    LineAtInfinity,
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("invalid camera pose: {0}")]
    InvalidPose(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSide {
    Left,
    Right,
}

impl std::fmt::Display for RowSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowSide::Left => f.write_str("left"),
            RowSide::Right => f.write_str("right"),
        }
    }
}

/// Pinhole intrinsics with the principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    focal_px: f64,
    width: u32,
    height: u32,
}

impl CameraIntrinsics {
    pub fn new(focal_px: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(focal_px.is_finite() && focal_px > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal length must be positive, got {focal_px}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            focal_px,
            width,
            height,
        })
    }

    pub fn focal_px(&self) -> f64 {
        self.focal_px
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn half_extent(&self) -> (f64, f64) {
        (f64::from(self.width) / 2.0, f64::from(self.height) / 2.0)
    }
}

/// A line in centered image coordinates, given by two distinct points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    a: Point2<f64>,
    b: Point2<f64>,
}

impl Line2D {
    pub fn new(a: Point2<f64>, b: Point2<f64>) -> Result<Self, GeometryError> {
        if a == b || !(a.x.is_finite() && a.y.is_finite() && b.x.is_finite() && b.y.is_finite()) {
            return Err(GeometryError::CoincidentEndpoints { x: a.x, y: a.y });
        }
        Ok(Self { a, b })
    }

    pub fn from_points(ax: f64, ay: f64, bx: f64, by: f64) -> Result<Self, GeometryError> {
        Self::new(Point2::new(ax, ay), Point2::new(bx, by))
    }

    /// Builds a line from `c0·x + c1·y + c2 = 0`. The endpoints are placed
    /// 100 px either side of the foot of the perpendicular from the origin.
    pub fn from_coefficients(coeffs: Vector3<f64>) -> Result<Self, GeometryError> {
        let norm = coeffs.x.hypot(coeffs.y);
        if !(norm.is_finite() && norm > 0.0) || norm <= coeffs.z.abs() * 1e-15 {
            return Err(GeometryError::LineAtInfinity);
        }
        let (nx, ny, c) = (coeffs.x / norm, coeffs.y / norm, coeffs.z / norm);
        let foot = Point2::new(-c * nx, -c * ny);
        let dir = nalgebra::Vector2::new(-ny, nx) * 100.0;
        Self::new(foot - dir, foot + dir)
    }

    pub fn start(&self) -> Point2<f64> {
        self.a
    }

    pub fn end(&self) -> Point2<f64> {
        self.b
    }

    /// Homogeneous coefficients `(a, b, c)` of `a·x + b·y + c = 0`.
    pub fn coefficients(&self) -> Vector3<f64> {
        Vector3::new(self.a.x, self.a.y, 1.0).cross(&Vector3::new(self.b.x, self.b.y, 1.0))
    }

    /// Coefficients scaled so that `(a, b)` is a unit normal.
    pub fn normalized_coefficients(&self) -> Vector3<f64> {
        let l = self.coefficients();
        l / l.x.hypot(l.y)
    }

    /// Direction angle in `[0, π)`.
    pub fn direction_angle(&self) -> f64 {
        let d = self.b - self.a;
        d.y.atan2(d.x).rem_euclid(std::f64::consts::PI)
    }

    /// `dy/dx` of the line; infinite for vertical lines.
    pub fn slope(&self) -> f64 {
        let d = self.b - self.a;
        d.y / d.x
    }

    /// `x` coordinate where the line crosses the given `y`.
    pub fn x_at(&self, y: f64) -> Option<f64> {
        let d = self.b - self.a;
        if d.y == 0.0 {
            return None;
        }
        Some(self.a.x + (y - self.a.y) * d.x / d.y)
    }

    /// `y` coordinate where the line crosses the given `x`.
    pub fn y_at(&self, x: f64) -> Option<f64> {
        let d = self.b - self.a;
        if d.x == 0.0 {
            return None;
        }
        Some(self.a.y + (x - self.a.x) * d.y / d.x)
    }

    /// Perpendicular distance from a point.
    pub fn distance_to(&self, p: &Point2<f64>) -> f64 {
        let l = self.normalized_coefficients();
        (l.x * p.x + l.y * p.y + l.z).abs()
    }

    /// True when both lines describe the same set of points within `tol`
    /// (compared on unit-normal coefficients, sign-insensitive).
    pub fn same_line(&self, other: &Line2D, tol: f64) -> bool {
        let l = self.normalized_coefficients();
        let m = other.normalized_coefficients();
        (l - m).amax() <= tol || (l + m).amax() <= tol
    }
}

/// Roll, pitch and heading of the camera relative to the crop row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraAttitude {
    pub roll: f64,
    pub pitch: f64,
    pub heading: f64,
}

impl CameraAttitude {
    pub fn new(roll: f64, pitch: f64, heading: f64) -> Result<Self, GeometryError> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        for (name, v) in [("roll", roll), ("pitch", pitch), ("heading", heading)] {
            if !(v.is_finite() && v.abs() < half_pi) {
                return Err(GeometryError::InvalidPose(format!(
                    "{name} must lie in (-pi/2, pi/2), got {v}"
                )));
            }
        }
        Ok(Self {
            roll,
            pitch,
            heading,
        })
    }

    /// Camera-from-row rotation `R_roll · R_pitch · R_heading`.
    pub fn rotation(&self) -> Rotation3<f64> {
        AxisRotation::Roll(self.roll).rotation()
            * AxisRotation::Pitch(self.pitch).rotation()
            * AxisRotation::Heading(self.heading).rotation()
    }
}

/// Single-axis rotations making up a [`CameraAttitude`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisRotation {
    /// About the optical axis; tilts the horizon.
    Roll(f64),
    /// About the image `x` axis; shifts the horizon vertically.
    Pitch(f64),
    /// About the image `y` axis; shifts vanishing points horizontally.
    Heading(f64),
}

impl AxisRotation {
    pub fn rotation(&self) -> Rotation3<f64> {
        let m = match *self {
            AxisRotation::Roll(a) => {
                let (s, c) = a.sin_cos();
                Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
            }
            AxisRotation::Pitch(t) => {
                let (s, c) = t.sin_cos();
                Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
            }
            AxisRotation::Heading(p) => {
                let (s, c) = p.sin_cos();
                Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
            }
        };
        Rotation3::from_matrix_unchecked(m)
    }

    pub fn inverse(&self) -> AxisRotation {
        match *self {
            AxisRotation::Roll(a) => AxisRotation::Roll(-a),
            AxisRotation::Pitch(t) => AxisRotation::Pitch(-t),
            AxisRotation::Heading(p) => AxisRotation::Heading(-p),
        }
    }
}

/// Annotated lines for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub left_row: Line2D,
    pub right_row: Line2D,
    pub horizon: Option<Line2D>,
    pub stalks: Option<Vec<Line2D>>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let stalk_count = self.stalks.as_ref().map_or(0, Vec::len);
        match (self.horizon.is_some(), stalk_count >= 2) {
            (true, false) | (false, true) => Ok(()),
            (true, true) => Err(GeometryError::InvalidAnnotation(
                "both a horizon and stalks were given; supply exactly one".into(),
            )),
            (false, false) => Err(GeometryError::InvalidAnnotation(format!(
                "no horizon and only {stalk_count} stalk line(s); need a horizon or at least 2 stalks"
            ))),
        }
    }
}

/// Recovered heading, placement and camera attitude for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthLabel {
    pub heading: f64,
    pub distance_ratio: f64,
    pub attitude: CameraAttitude,
}

/// Least-squares intersection of a pencil of lines.
///
/// Minimises `Σ (aᵢx + bᵢy + cᵢ)²` over unit-normal line coefficients, i.e.
/// the summed squared perpendicular distances.
pub fn estimate_vanishing_point(lines: &[Line2D]) -> Result<Point2<f64>, GeometryError> {
    if lines.len() < 2 {
        return Err(GeometryError::TooFewLines {
            needed: 2,
            got: lines.len(),
        });
    }
    let angles: Vec<f64> = lines.iter().map(Line2D::direction_angle).collect();
    let all_parallel = angles.iter().all(|&t| {
        let diff = (t - angles[0]).abs();
        diff.min(std::f64::consts::PI - diff) < PARALLEL_TOLERANCE
    });
    if all_parallel {
        return Err(GeometryError::DegenerateLines);
    }

    let (mut saa, mut sab, mut sbb, mut sac, mut sbc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for line in lines {
        let l = line.normalized_coefficients();
        saa += l.x * l.x;
        sab += l.x * l.y;
        sbb += l.y * l.y;
        sac += l.x * l.z;
        sbc += l.y * l.z;
    }
    let det = saa * sbb - sab * sab;
    if det.abs() <= f64::EPSILON * (saa * sbb).abs() {
        return Err(GeometryError::DegenerateLines);
    }
    let x = (-sac * sbb + sbc * sab) / det;
    let y = (-sbc * saa + sac * sab) / det;
    Ok(Point2::new(x, y))
}

/// Horizon `v_x·x + v_y·y + f² = 0` from the vanishing point of vertical stalks.
///
/// With a level camera the stalks image as parallel lines and the vanishing
/// point recedes to infinity. In that case the point is taken in homogeneous
/// form `(X, Y, W)` and the horizon is `(X, Y, f·W)`, the continuous
/// extension of the same formula.
pub fn horizon_from_stalks(
    stalks: &[Line2D],
    cam: &CameraIntrinsics,
) -> Result<Line2D, GeometryError> {
    let f = cam.focal_px();
    match estimate_vanishing_point(stalks) {
        Ok(v) => Line2D::from_coefficients(Vector3::new(v.x, v.y, f * f)),
        Err(GeometryError::DegenerateLines) => {
            let p = homogeneous_vanishing_point(stalks, f);
            Line2D::from_coefficients(Vector3::new(p.x, p.y, f * p.z))
        }
        Err(e) => Err(e),
    }
}

/// Least-squares common point of `lines` in homogeneous focal-normalised
/// coordinates: the eigenvector of `Σ l·lᵀ` with the smallest eigenvalue.
fn homogeneous_vanishing_point(lines: &[Line2D], f: f64) -> Vector3<f64> {
    let mut scatter = Matrix3::zeros();
    for line in lines {
        let l = line.normalized_coefficients();
        let l = Vector3::new(l.x, l.y, l.z / f);
        scatter += l * l.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let (i, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    eig.eigenvectors.column(i).into_owned()
}

/// Camera roll from the horizon slope: `α = −arctan(dy/dx)`.
pub fn estimate_roll(horizon: &Line2D) -> f64 {
    -horizon.slope().atan()
}

/// Camera pitch from a roll-rectified horizon: `θ = arctan(y₀ / f)`.
pub fn estimate_pitch(
    rectified_horizon: &Line2D,
    cam: &CameraIntrinsics,
) -> Result<f64, GeometryError> {
    let slope = rectified_horizon.slope();
    if !(slope.abs() <= RECTIFIED_SLOPE_TOLERANCE) {
        return Err(GeometryError::NotRectified { slope });
    }
    let y0 = rectified_horizon
        .y_at(0.0)
        .ok_or(GeometryError::NotRectified { slope })?;
    Ok((y0 / cam.focal_px()).atan())
}

/// Heading from the crop-row vanishing point: `φ = arctan(v_x / f)`.
pub fn estimate_heading(
    left_row: &Line2D,
    right_row: &Line2D,
    cam: &CameraIntrinsics,
) -> Result<f64, GeometryError> {
    let v = estimate_vanishing_point(&[*left_row, *right_row])?;
    Ok((v.x / cam.focal_px()).atan())
}

/// Distance ratio `l_x / (l_x + r_x)` from the rows' intercepts with the
/// bottom image edge, on fully rectified rows.
pub fn estimate_distance_ratio(
    left_row: &Line2D,
    right_row: &Line2D,
    cam: &CameraIntrinsics,
) -> Result<f64, GeometryError> {
    let bottom = f64::from(cam.height()) / 2.0;
    let lx = left_row
        .x_at(bottom)
        .ok_or(GeometryError::DegenerateLines)?;
    let rx = right_row
        .x_at(bottom)
        .ok_or(GeometryError::DegenerateLines)?;
    if !(lx < 0.0) {
        return Err(GeometryError::RowOnWrongSide {
            side: RowSide::Left,
            x: lx,
        });
    }
    if !(rx > 0.0) {
        return Err(GeometryError::RowOnWrongSide {
            side: RowSide::Right,
            x: rx,
        });
    }
    Ok(lx.abs() / (lx.abs() + rx))
}

/// Maps lines through the homography `H = K R K⁻¹` of a rotation about the
/// camera center. Line coefficients move by `H⁻ᵀ = K⁻ᵀ R Kᵀ`.
pub fn rotate_lines(
    lines: &[Line2D],
    rotation: &Rotation3<f64>,
    cam: &CameraIntrinsics,
) -> Result<Vec<Line2D>, GeometryError> {
    let f = cam.focal_px();
    let k_t = Matrix3::from_diagonal(&Vector3::new(f, f, 1.0));
    let k_inv_t = Matrix3::from_diagonal(&Vector3::new(1.0 / f, 1.0 / f, 1.0));
    let h_inv_t = k_inv_t * rotation.matrix() * k_t;
    lines
        .iter()
        .map(|line| Line2D::from_coefficients(h_inv_t * line.normalized_coefficients()))
        .collect()
}

/// Point homography `K R K⁻¹` applied to a single image point.
pub fn rotate_point(
    p: &Point2<f64>,
    rotation: &Rotation3<f64>,
    cam: &CameraIntrinsics,
) -> Option<Point2<f64>> {
    let f = cam.focal_px();
    let ray = rotation * Vector3::new(p.x / f, p.y / f, 1.0);
    if ray.z == 0.0 {
        return None;
    }
    Some(Point2::new(f * ray.x / ray.z, f * ray.y / ray.z))
}

/// Pipeline stage reported alongside a ground-truthing failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Horizon,
    Roll,
    Pitch,
    Heading,
    DistanceRatio,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Validate => "validate",
            Stage::Horizon => "horizon",
            Stage::Roll => "roll",
            Stage::Pitch => "pitch",
            Stage::Heading => "heading",
            Stage::DistanceRatio => "distance ratio",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage: {source}")]
pub struct GroundTruthError {
    pub stage: Stage,
    #[source]
    pub source: GeometryError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, GroundTruthError>;
}

impl<T> AtStage<T> for Result<T, GeometryError> {
    fn at(self, stage: Stage) -> Result<T, GroundTruthError> {
        self.map_err(|source| GroundTruthError { stage, source })
    }
}

/// Full ground-truthing pipeline: horizon → roll → rectify → pitch →
/// rectify → heading → rectify → distance ratio.
pub fn ground_truth(
    annotations: &AnnotationSet,
    cam: &CameraIntrinsics,
) -> Result<GroundTruthLabel, GroundTruthError> {
    annotations.validate().at(Stage::Validate)?;

    let horizon = match (&annotations.horizon, &annotations.stalks) {
        (Some(h), _) => *h,
        (None, Some(stalks)) => horizon_from_stalks(stalks, cam).at(Stage::Horizon)?,
        (None, None) => unreachable!("validated above"),
    };

    let roll = estimate_roll(&horizon);
    let unroll = AxisRotation::Roll(roll).inverse().rotation();
    let lines = rotate_lines(
        &[horizon, annotations.left_row, annotations.right_row],
        &unroll,
        cam,
    )
    .at(Stage::Roll)?;

    let pitch = estimate_pitch(&lines[0], cam).at(Stage::Pitch)?;
    let unpitch = AxisRotation::Pitch(pitch).inverse().rotation();
    let rows = rotate_lines(&lines[1..], &unpitch, cam).at(Stage::Pitch)?;

    let heading = estimate_heading(&rows[0], &rows[1], cam).at(Stage::Heading)?;
    let unheading = AxisRotation::Heading(heading).inverse().rotation();
    let rows = rotate_lines(&rows, &unheading, cam).at(Stage::Heading)?;

    let distance_ratio =
        estimate_distance_ratio(&rows[0], &rows[1], cam).at(Stage::DistanceRatio)?;

    Ok(GroundTruthLabel {
        heading,
        distance_ratio,
        attitude: CameraAttitude {
            roll,
            pitch,
            heading,
        },
    })
}
