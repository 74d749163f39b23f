//! JSON-lines records for annotation ingest and label output.
//!
//! Records carry pixel coordinates with the origin at the top-left corner;
//! they are shifted to principal-point-centered coordinates on ingest.

use serde::{Deserialize, Serialize};

use super::{AnnotationSet, CameraIntrinsics, GeometryError, GroundTruthLabel, Line2D};

/// Two endpoints `[[x, y], [x, y]]` in top-left pixel coordinates.
pub type PixelLine = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub f_px: f64,
    pub width: u32,
    pub height: u32,
    pub left_row: PixelLine,
    pub right_row: PixelLine,
    pub horizon: Option<PixelLine>,
    pub stalks: Option<Vec<PixelLine>>,
}

impl AnnotationRecord {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, GeometryError> {
        CameraIntrinsics::new(self.f_px, self.width, self.height)
    }

    /// Converts to centered coordinates using this record's own image size.
    pub fn to_annotation_set(&self) -> Result<AnnotationSet, GeometryError> {
        let (cx, cy) = (f64::from(self.width) / 2.0, f64::from(self.height) / 2.0);
        let line = |l: &PixelLine| {
            Line2D::from_points(l[0][0] - cx, l[0][1] - cy, l[1][0] - cx, l[1][1] - cy)
        };
        let set = AnnotationSet {
            left_row: line(&self.left_row)?,
            right_row: line(&self.right_row)?,
            horizon: self.horizon.as_ref().map(line).transpose()?,
            stalks: self
                .stalks
                .as_ref()
                .map(|s| s.iter().map(line).collect::<Result<Vec<_>, _>>())
                .transpose()?,
        };
        set.validate()?;
        Ok(set)
    }

    /// Inverse of [`AnnotationRecord::to_annotation_set`].
    pub fn from_annotation_set(
        image_id: impl Into<String>,
        set: &AnnotationSet,
        cam: &CameraIntrinsics,
    ) -> Self {
        let (cx, cy) = (f64::from(cam.width()) / 2.0, f64::from(cam.height()) / 2.0);
        let px = |l: &Line2D| {
            [
                [l.start().x + cx, l.start().y + cy],
                [l.end().x + cx, l.end().y + cy],
            ]
        };
        Self {
            image_id: image_id.into(),
            f_px: cam.focal_px(),
            width: cam.width(),
            height: cam.height(),
            left_row: px(&set.left_row),
            right_row: px(&set.right_row),
            horizon: set.horizon.as_ref().map(px),
            stalks: set.stalks.as_ref().map(|s| s.iter().map(px).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image_id: String,
    pub heading_deg: f64,
    pub distance_ratio: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
}

impl LabelRecord {
    pub fn new(image_id: impl Into<String>, label: &GroundTruthLabel) -> Self {
        Self {
            image_id: image_id.into(),
            heading_deg: label.heading.to_degrees(),
            distance_ratio: label.distance_ratio,
            roll_deg: label.attitude.roll.to_degrees(),
            pitch_deg: label.attitude.pitch.to_degrees(),
        }
    }
}
