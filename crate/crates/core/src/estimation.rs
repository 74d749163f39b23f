//! Extended Kalman filter over the row-relative state `(d_L, d_R, φ, ω)`.
//!
//! Prediction uses encoder speed and, when available, gyro yaw rate.
//! Updates use the vision heading and distance ratio (converted to metres
//! with the lane width) plus the gyro rate, through an identity measurement
//! model. Without a gyro the `ω` row is dropped from the update and heading
//! is held constant during prediction.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::normalize_angle;

/// Default process noise diagonal for `(d_L, d_R, φ, ω)`.
pub const DEFAULT_PROCESS_NOISE: [f64; 4] = [0.001, 0.001, 0.01, 0.01];
/// Default measurement noise diagonal for `(d_L, d_R, φ, ω)`.
pub const DEFAULT_MEASUREMENT_NOISE: [f64; 4] = [0.05, 0.05, 0.05, 0.5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("innovation covariance is not positive definite")]
    NonPositiveDefinite,
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RowRelativeState {
    /// Distance to the left row (m).
    pub d_left: f64,
    /// Distance to the right row (m).
    pub d_right: f64,
    /// Heading relative to the row, counter-clockwise positive (rad).
    pub heading: f64,
    /// Yaw rate (rad/s).
    pub yaw_rate: f64,
}

impl RowRelativeState {
    pub fn new(d_left: f64, d_right: f64, heading: f64, yaw_rate: f64) -> Self {
        Self {
            d_left,
            d_right,
            heading,
            yaw_rate,
        }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.d_left, self.d_right, self.heading, self.yaw_rate)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// `d_L / (d_L + d_R)`.
    pub fn distance_ratio(&self) -> f64 {
        self.d_left / (self.d_left + self.d_right)
    }

    /// Lateral offset from the lane center, left positive.
    pub fn lateral_offset(&self) -> f64 {
        (self.d_right - self.d_left) / 2.0
    }
}

/// Encoder speed, optional gyro rate and the elapsed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub linear: f64,
    pub gyro: Option<f64>,
    pub dt: f64,
}

/// One perception output: heading and distance ratio, with the lane width
/// used to convert the ratio to metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionMeasurement {
    pub distance_ratio: f64,
    pub heading: f64,
    pub lane_width: f64,
}

impl VisionMeasurement {
    pub fn validate(&self) -> Result<(), EstimationError> {
        if !(self.distance_ratio > 0.0 && self.distance_ratio < 1.0) {
            return Err(EstimationError::InvalidMeasurement(format!(
                "distance ratio must lie in (0, 1), got {}",
                self.distance_ratio
            )));
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(EstimationError::InvalidMeasurement(format!(
                "lane width must be positive, got {}",
                self.lane_width
            )));
        }
        if !self.heading.is_finite() {
            return Err(EstimationError::InvalidMeasurement(
                "heading is not finite".into(),
            ));
        }
        Ok(())
    }

    /// Metric distances `(d·W, (1−d)·W)`.
    pub fn distances(&self) -> (f64, f64) {
        (
            self.distance_ratio * self.lane_width,
            (1.0 - self.distance_ratio) * self.lane_width,
        )
    }
}

/// Diagonal process (`Q`) and measurement (`R`) covariances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub process: [f64; 4],
    pub measurement: [f64; 4],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process: DEFAULT_PROCESS_NOISE,
            measurement: DEFAULT_MEASUREMENT_NOISE,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), EstimationError> {
        for (name, diag) in [("process", &self.process), ("measurement", &self.measurement)] {
            if diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(EstimationError::InvalidNoise(format!(
                    "{name} variances must be positive, got {diag:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn q(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.process))
    }

    pub fn r(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.measurement))
    }
}

/// Mean and covariance of the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBelief {
    pub mean: RowRelativeState,
    pub covariance: Matrix4<f64>,
}

/// Process model `f(s, u)`.
pub fn process_model(state: &Vector4<f64>, u: &ControlInput) -> Vector4<f64> {
    let lateral = u.linear * state[2].sin() * u.dt;
    match u.gyro {
        Some(w) => Vector4::new(
            state[0] - lateral,
            state[1] + lateral,
            state[2] + w * u.dt,
            w,
        ),
        None => Vector4::new(state[0] - lateral, state[1] + lateral, state[2], state[3]),
    }
}

/// Analytic Jacobian `∂f/∂s`.
pub fn process_jacobian(state: &Vector4<f64>, u: &ControlInput) -> Matrix4<f64> {
    let k = u.linear * state[2].cos() * u.dt;
    let yaw_rate_carry = if u.gyro.is_some() { 0.0 } else { 1.0 };
    Matrix4::new(
        1.0, 0.0, -k, 0.0, //
        0.0, 1.0, k, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, yaw_rate_carry,
    )
}

impl StateBelief {
    /// Belief seeded from a first vision measurement.
    pub fn from_measurement(
        z: &VisionMeasurement,
        gyro: Option<f64>,
        initial_covariance: &[f64; 4],
    ) -> Self {
        let (dl, dr) = z.distances();
        Self {
            mean: RowRelativeState::new(dl, dr, z.heading, gyro.unwrap_or(0.0)),
            covariance: Matrix4::from_diagonal(&Vector4::from(*initial_covariance)),
        }
    }

    pub fn predict(&self, u: &ControlInput, noise: &NoiseConfig) -> StateBelief {
        let s = self.mean.to_vector();
        let f = process_jacobian(&s, u);
        let p = f * self.covariance * f.transpose() + noise.q();
        StateBelief {
            mean: RowRelativeState::from_vector(&process_model(&s, u)),
            covariance: symmetrize(p),
        }
    }

    /// Vision update, with the gyro rate as the fourth measurement when
    /// present.
    pub fn update_vision(
        &self,
        z: &VisionMeasurement,
        gyro: Option<f64>,
        noise: &NoiseConfig,
    ) -> Result<StateBelief, EstimationError> {
        z.validate()?;
        let (dl, dr) = z.distances();
        let r = noise.measurement;
        match gyro {
            Some(w) => self.update_rows::<4>(
                &[0, 1, 2, 3],
                SVector::from([dl, dr, z.heading, w]),
                SVector::from(r),
            ),
            None => self.update_rows::<3>(
                &[0, 1, 2],
                SVector::from([dl, dr, z.heading]),
                SVector::from([r[0], r[1], r[2]]),
            ),
        }
    }

    /// Kalman update observing the state components `rows` directly.
    fn update_rows<const M: usize>(
        &self,
        rows: &[usize; M],
        z: SVector<f64, M>,
        r_diag: SVector<f64, M>,
    ) -> Result<StateBelief, EstimationError> {
        let mut h = SMatrix::<f64, M, 4>::zeros();
        for (i, &j) in rows.iter().enumerate() {
            h[(i, j)] = 1.0;
        }
        let r = SMatrix::<f64, M, M>::from_diagonal(&r_diag);
        let x = self.mean.to_vector();
        let p = self.covariance;

        let mut innovation = z - h * x;
        for (i, &j) in rows.iter().enumerate() {
            if j == 2 {
                innovation[i] = normalize_angle(innovation[i]);
            }
        }
        let s = h * p * h.transpose() + r;
        let s_inv = s
            .cholesky()
            .ok_or(EstimationError::NonPositiveDefinite)?
            .inverse();
        let gain = p * h.transpose() * s_inv;

        let i_kh = Matrix4::identity() - gain * h;
        let p_post = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
        Ok(StateBelief {
            mean: RowRelativeState::from_vector(&(x + gain * innovation)),
            covariance: symmetrize(p_post),
        })
    }

    pub fn fused_estimate(&self) -> RowRelativeState {
        self.mean
    }
}

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// Stateful wrapper used in closed loop: lazily initialised from the first
/// vision measurement.
#[derive(Debug, Clone)]
pub struct RowFilter {
    noise: NoiseConfig,
    use_gyro: bool,
    belief: Option<StateBelief>,
}

impl RowFilter {
    pub fn new(noise: NoiseConfig, use_gyro: bool) -> Self {
        Self {
            noise,
            use_gyro,
            belief: None,
        }
    }

    pub fn belief(&self) -> Option<&StateBelief> {
        self.belief.as_ref()
    }

    pub fn estimate(&self) -> Option<RowRelativeState> {
        self.belief.as_ref().map(StateBelief::fused_estimate)
    }

    pub fn reset(&mut self) {
        self.belief = None;
    }

    pub fn predict(&mut self, linear: f64, gyro: f64, dt: f64) {
        let u = ControlInput {
            linear,
            gyro: self.use_gyro.then_some(gyro),
            dt,
        };
        if let Some(b) = &self.belief {
            self.belief = Some(b.predict(&u, &self.noise));
        }
    }

    pub fn update(&mut self, z: &VisionMeasurement, gyro: f64) -> Result<(), EstimationError> {
        let gyro = self.use_gyro.then_some(gyro);
        self.belief = Some(match &self.belief {
            Some(b) => b.update_vision(z, gyro, &self.noise)?,
            None => {
                z.validate()?;
                StateBelief::from_measurement(z, gyro, &self.noise.measurement)
            }
        });
        Ok(())
    }
}
