use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::estimation::{RowRelativeState, VisionMeasurement};

/// Mean absolute heading error of the learned perception model (deg).
pub const HEADING_L1_DEG: f64 = 1.99;
/// Mean absolute distance-ratio error of the learned perception model.
pub const RATIO_L1: f64 = 0.04;

/// Ratios are kept this far inside `(0, 1)`.
const RATIO_MARGIN: f64 = 1e-3;

/// Converts a mean absolute error into the standard deviation of a
/// zero-mean Gaussian with that mean absolute value.
pub fn sigma_from_l1(l1: f64) -> f64 {
    l1 * (std::f64::consts::PI / 2.0).sqrt()
}

/// Synthetic perception: truth plus Gaussian noise with occasional
/// outliers, degraded inside row gaps, delivered at a fixed rate after a
/// fixed latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionNoiseModel {
    /// Heading noise standard deviation (rad).
    pub sigma_heading: f64,
    /// Distance-ratio noise standard deviation.
    pub sigma_ratio: f64,
    pub outlier_prob: f64,
    /// Noise multiplier applied to outlier frames.
    pub outlier_scale: f64,
    /// Noise multiplier applied inside row gaps.
    pub gap_degradation: f64,
    /// Frames per second.
    #[serde(alias = "updateRate")]
    pub update_rate: f64,
    /// Capture-to-delivery delay (s); one frame period when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<f64>,
    /// Extra relative noise per radian of true heading:
    /// `σ ← σ·(1 + heading_inflation·|φ|)`.
    pub heading_inflation: f64,
}

impl Default for PerceptionNoiseModel {
    fn default() -> Self {
        Self {
            sigma_heading: sigma_from_l1(HEADING_L1_DEG.to_radians()),
            sigma_ratio: sigma_from_l1(RATIO_L1),
            outlier_prob: 0.02,
            outlier_scale: 5.0,
            gap_degradation: 5.0,
            update_rate: 22.0,
            latency: None,
            heading_inflation: 0.0,
        }
    }
}

impl PerceptionNoiseModel {
    /// No noise, no outliers; rate and latency keep their defaults.
    pub fn noiseless() -> Self {
        Self {
            sigma_heading: 0.0,
            sigma_ratio: 0.0,
            outlier_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn effective_latency(&self) -> f64 {
        self.latency.unwrap_or(1.0 / self.update_rate)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::ConfigInvalid(m));
        for (name, v) in [
            ("sigma_heading", self.sigma_heading),
            ("sigma_ratio", self.sigma_ratio),
            ("outlier_scale", self.outlier_scale),
            ("gap_degradation", self.gap_degradation),
            ("heading_inflation", self.heading_inflation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("perception.{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.outlier_prob) {
            return bad(format!(
                "perception.outlier_prob must lie in [0, 1), got {}",
                self.outlier_prob
            ));
        }
        if !(self.update_rate > 0.0 && self.update_rate.is_finite()) {
            return bad(format!(
                "perception.update_rate must be positive, got {}",
                self.update_rate
            ));
        }
        if let Some(l) = self.latency {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("perception.latency must be non-negative, got {l}"));
            }
        }
        Ok(())
    }
}

/// Draws one noisy perception frame for the true state.
pub fn sample_perception<R: Rng + ?Sized>(
    truth: &RowRelativeState,
    noise: &PerceptionNoiseModel,
    rng: &mut R,
    in_gap: bool,
) -> VisionMeasurement {
    let lane_width = truth.d_left + truth.d_right;
    // Draw order is fixed so the stream stays aligned across noise settings.
    let n_heading: f64 = rng.sample(StandardNormal);
    let n_ratio: f64 = rng.sample(StandardNormal);
    let outlier = rng.random::<f64>() < noise.outlier_prob;

    let mut scale = 1.0 + noise.heading_inflation * truth.heading.abs();
    if outlier {
        scale *= noise.outlier_scale;
    }
    if in_gap {
        scale *= noise.gap_degradation;
    }
    let ratio = truth.distance_ratio() + n_ratio * noise.sigma_ratio * scale;
    VisionMeasurement {
        distance_ratio: ratio.clamp(RATIO_MARGIN, 1.0 - RATIO_MARGIN),
        heading: truth.heading + n_heading * noise.sigma_heading * scale,
        lane_width,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth() -> RowRelativeState {
        RowRelativeState::new(0.3, 0.45, 0.05, 0.0)
    }

    #[test]
    fn noiseless_returns_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_perception(&truth(), &PerceptionNoiseModel::noiseless(), &mut rng, true);
        assert_eq!(z.heading, 0.05);
        assert_eq!(z.distance_ratio, truth().distance_ratio());
        assert_eq!(z.lane_width, 0.75);
    }

    fn mean_abs_error(noise: &PerceptionNoiseModel, n: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = RowRelativeState::new(0.375, 0.375, 0.0, 0.0);
        let (mut eh, mut ed) = (0.0, 0.0);
        for _ in 0..n {
            let z = sample_perception(&t, noise, &mut rng, false);
            eh += z.heading.abs();
            ed += (z.distance_ratio - 0.5).abs();
        }
        (eh / n as f64, ed / n as f64)
    }

    #[test]
    fn calibration_matches_mean_absolute_errors() {
        let noise = PerceptionNoiseModel {
            outlier_prob: 0.0,
            ..PerceptionNoiseModel::default()
        };
        assert_relative_eq!(noise.sigma_heading.to_degrees(), 2.494, max_relative = 1e-3);
        assert_relative_eq!(noise.sigma_ratio, 0.0501, max_relative = 1e-3);
        let (eh, ed) = mean_abs_error(&noise, 1_000_000);
        assert_relative_eq!(eh.to_degrees(), 1.99, max_relative = 0.01);
        assert_relative_eq!(ed, 0.04, max_relative = 0.01);
    }

    #[test]
    fn gap_inflates_noise() {
        let noise = PerceptionNoiseModel {
            outlier_prob: 0.0,
            gap_degradation: 4.0,
            ..PerceptionNoiseModel::default()
        };
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let z0 = sample_perception(&truth(), &noise, &mut a, false);
        let z1 = sample_perception(&truth(), &noise, &mut b, true);
        assert_relative_eq!(z1.heading - 0.05, 4.0 * (z0.heading - 0.05), max_relative = 1e-12);
    }

    #[test]
    fn ratio_is_clamped_inside_unit_interval() {
        let noise = PerceptionNoiseModel {
            sigma_ratio: 10.0,
            ..PerceptionNoiseModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let z = sample_perception(&truth(), &noise, &mut rng, false);
            assert!(z.validate().is_ok());
        }
    }

    #[test]
    fn outliers_fatten_the_tail() {
        let base = PerceptionNoiseModel {
            outlier_prob: 0.0,
            ..PerceptionNoiseModel::default()
        };
        let heavy = PerceptionNoiseModel {
            outlier_prob: 0.1,
            ..base.clone()
        };
        let (a, _) = mean_abs_error(&base, 100_000);
        let (b, _) = mean_abs_error(&heavy, 100_000);
        // Mixture mean: (1 − p + p·scale)·base.
        assert_relative_eq!(b / a, 0.9 + 0.1 * 5.0, max_relative = 0.03);
    }

    #[test]
    fn validation() {
        assert!(PerceptionNoiseModel::default().validate().is_ok());
        let bad = PerceptionNoiseModel {
            outlier_prob: 1.0,
            ..PerceptionNoiseModel::default()
        };
        assert!(bad.validate().is_err());
        let bad = PerceptionNoiseModel {
            update_rate: 0.0,
            ..PerceptionNoiseModel::default()
        };
        assert!(bad.validate().is_err());
        assert_relative_eq!(PerceptionNoiseModel::default().effective_latency(), 1.0 / 22.0);
    }
}
