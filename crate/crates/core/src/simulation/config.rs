use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldModel, PerceptionNoiseModel, SimulationError};
use crate::control::{MpcConfig, PidConfig};
use crate::estimation::NoiseConfig;

/// Yaw-rate actuator: saturation at the minimum turn radius followed by a
/// first-order lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorConfig {
    /// Lag time constant (s); zero passes commands through.
    pub time_constant: f64,
    /// Saturation `|ω| ≤ v / min_turn_radius`.
    pub min_turn_radius: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        Self {
            time_constant: 0.15,
            min_turn_radius: 0.7,
        }
    }
}

/// Proprioceptive sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Gyro white noise standard deviation (rad/s).
    pub gyro_noise: f64,
    /// Constant gyro bias (rad/s).
    pub gyro_bias: f64,
    /// Encoder speed noise standard deviation (m/s).
    pub encoder_noise: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            gyro_noise: 0.005,
            gyro_bias: 0.0,
            encoder_noise: 0.01,
        }
    }
}

/// Starting pose relative to the centerline at arc length zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InitialPose {
    /// Left positive (m).
    pub lateral_offset: f64,
    /// Relative to the row, counter-clockwise positive (rad).
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Distance travelled before oscillation statistics are collected (m).
    pub settle_distance: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            settle_distance: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub seed: u64,
    /// Constant forward speed (m/s).
    #[serde(alias = "v")]
    pub speed: f64,
    /// EKF predict + MPC rate (Hz).
    #[serde(alias = "controlRate")]
    pub control_rate: f64,
    /// Integration and PID rate (Hz).
    pub physics_rate: f64,
    /// Fuse the gyro and close the PID loop on it.
    #[serde(alias = "useIMU")]
    pub use_imu: bool,
    /// Interventions fire at `|offset| ≥ W/2 − robot_half_width`.
    #[serde(alias = "robotHalfWidth")]
    pub robot_half_width: f64,
    /// Hard stop on simulated time (s); defaults to three times the
    /// nominal traversal time plus 30 s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_duration: Option<f64>,
    pub initial: InitialPose,
    pub field: FieldModel,
    pub perception: PerceptionNoiseModel,
    pub actuator: ActuatorConfig,
    pub sensors: SensorConfig,
    pub estimator: NoiseConfig,
    pub mpc: MpcConfig,
    pub pid: PidConfig,
    pub metrics: MetricsConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            speed: 0.6,
            control_rate: 20.0,
            physics_rate: 200.0,
            use_imu: true,
            robot_half_width: 0.15,
            max_duration: None,
            initial: InitialPose::default(),
            field: FieldModel::default(),
            perception: PerceptionNoiseModel::default(),
            actuator: ActuatorConfig::default(),
            sensors: SensorConfig::default(),
            estimator: NoiseConfig::default(),
            mpc: MpcConfig::default(),
            pid: PidConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// Alternative spellings accepted in override keys.
const KEY_ALIASES: &[(&str, &str)] = &[
    ("v", "speed"),
    ("useIMU", "use_imu"),
    ("controlRate", "control_rate"),
    ("robotHalfWidth", "robot_half_width"),
    ("updateRate", "update_rate"),
];

fn canonical_key(segment: &str) -> &str {
    KEY_ALIASES
        .iter()
        .find(|(alias, _)| *alias == segment)
        .map_or(segment, |(_, name)| name)
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::ConfigInvalid(m));
        for (name, v) in [
            ("speed", self.speed),
            ("control_rate", self.control_rate),
            ("physics_rate", self.physics_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.physics_rate < self.control_rate {
            return bad(format!(
                "physics_rate ({}) must be at least control_rate ({})",
                self.physics_rate, self.control_rate
            ));
        }
        self.field.validate()?;
        let half = self.field.lane_width / 2.0;
        if !(self.robot_half_width >= 0.0 && self.robot_half_width < half) {
            return bad(format!(
                "robot_half_width must lie in [0, {half}), got {}",
                self.robot_half_width
            ));
        }
        if self.initial.lateral_offset.abs() >= half - self.robot_half_width
            || self.initial.heading.abs() >= std::f64::consts::FRAC_PI_2
        {
            return bad("initial pose already triggers an intervention".into());
        }
        if let Some(d) = self.max_duration {
            if !(d > 0.0) {
                return bad(format!("max_duration must be positive, got {d}"));
            }
        }
        self.perception.validate()?;
        if !(self.actuator.time_constant >= 0.0 && self.actuator.min_turn_radius > 0.0) {
            return bad("actuator time_constant must be ≥ 0 and min_turn_radius > 0".into());
        }
        let s = &self.sensors;
        if [s.gyro_noise, s.encoder_noise].iter().any(|v| !(*v >= 0.0)) || !s.gyro_bias.is_finite()
        {
            return bad("sensor noise levels must be non-negative".into());
        }
        self.estimator
            .validate()
            .map_err(|e| SimulationError::ConfigInvalid(e.to_string()))?;
        self.mpc
            .validate()
            .map_err(|e| SimulationError::ConfigInvalid(e.to_string()))?;
        self.pid.validate().map_err(SimulationError::ConfigInvalid)?;
        if !(self.metrics.settle_distance >= 0.0) {
            return bad("metrics.settle_distance must be non-negative".into());
        }
        Ok(())
    }

    pub fn max_duration(&self) -> f64 {
        self.max_duration
            .unwrap_or(3.0 * self.field.length() / self.speed + 30.0)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimulationError> {
        toml::from_str(text).map_err(|e| SimulationError::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimulationError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SimulationError::ConfigParse(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Applies `key=value` overrides in order; later ones win. Keys are
    /// dotted paths into the schema, values are TOML literals (bare words
    /// are taken as strings). Unknown keys are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, SimulationError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Table::try_from(self)
            .map_err(|e| SimulationError::ConfigParse(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw.split_once('=').ok_or_else(|| {
                SimulationError::InvalidOverride(format!("expected key=value, got `{raw}`"))
            })?;
            set_path(&mut root, key.trim(), parse_value(value.trim()))?;
        }
        toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| SimulationError::InvalidOverride(e.to_string()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), SimulationError> {
    let segments: Vec<&str> = key.split('.').map(canonical_key).collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(SimulationError::InvalidOverride(format!("malformed key `{key}`")));
    }
    let (last, parents) = segments.split_last().expect("split yields one segment");
    let mut table = root;
    for seg in parents {
        let entry = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            SimulationError::InvalidOverride(format!("`{seg}` in `{key}` is not a table"))
        })?;
    }
    // Integers are accepted where floats are expected.
    let value = match (table.get(*last), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(last.to_string(), value);
    Ok(())
}
