use serde::{Deserialize, Serialize};

/// Gains for the yaw-rate loop. Output is `ω_target` (when `feedforward`)
/// plus the PID correction on `ω_target − ω_gyro`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the integral contribution (rad/s).
    pub integrator_limit: f64,
    pub feedforward: bool,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 2.0,
            ki: 5.0,
            kd: 0.0,
            integrator_limit: 1.0,
            feedforward: true,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.kp, self.ki, self.kd]
            .iter()
            .any(|g| !(*g >= 0.0 && g.is_finite()))
        {
            return Err(format!(
                "PID gains must be non-negative, got kp={} ki={} kd={}",
                self.kp, self.ki, self.kd
            ));
        }
        if !(self.integrator_limit > 0.0) {
            return Err(format!(
                "integrator_limit must be positive, got {}",
                self.integrator_limit
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    /// Accumulated `ki·∫e dt`, clamped to the integrator limit.
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One PID step. The derivative term is zero on the first call.
pub fn step_pid(
    cfg: &PidConfig,
    target: f64,
    measured: f64,
    dt: f64,
    state: PidState,
) -> (f64, PidState) {
    debug_assert!(dt > 0.0);
    let error = target - measured;
    let integral = (state.integral + cfg.ki * error * dt)
        .clamp(-cfg.integrator_limit, cfg.integrator_limit);
    let derivative = state.prev_error.map_or(0.0, |p| (error - p) / dt);
    let ff = if cfg.feedforward { target } else { 0.0 };
    let out = ff + cfg.kp * error + integral + cfg.kd * derivative;
    (
        out,
        PidState {
            integral,
            prev_error: Some(error),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_error_gives_steady_feedforward() {
        let cfg = PidConfig::default();
        let mut st = PidState::default();
        for _ in 0..10 {
            let (out, next) = step_pid(&cfg, 0.4, 0.4, 0.01, st);
            assert_eq!(out, 0.4);
            st = next;
        }
        assert_eq!(st.integral, 0.0);
    }

    #[test]
    fn proportional_only_without_feedforward() {
        let cfg = PidConfig {
            kp: 1.0,
            ki: 0.0,
            kd: 0.0,
            integrator_limit: 1.0,
            feedforward: false,
        };
        let (out, _) = step_pid(&cfg, 0.5, 0.2, 0.01, PidState::default());
        assert_abs_diff_eq!(out, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn integrator_is_clamped() {
        let cfg = PidConfig::default();
        let mut st = PidState::default();
        for _ in 0..1000 {
            st = step_pid(&cfg, 1.0, -1.0, 0.01, st).1;
        }
        assert_eq!(st.integral, cfg.integrator_limit);
    }

    #[test]
    fn derivative_acts_after_first_sample() {
        let cfg = PidConfig {
            kp: 0.0,
            ki: 0.0,
            kd: 0.5,
            integrator_limit: 1.0,
            feedforward: false,
        };
        let (first, st) = step_pid(&cfg, 1.0, 0.0, 0.1, PidState::default());
        assert_eq!(first, 0.0);
        let (second, _) = step_pid(&cfg, 1.0, 0.5, 0.1, st);
        assert_abs_diff_eq!(second, 0.5 * (0.5 - 1.0) / 0.1, epsilon = 1e-12);
    }

    #[test]
    fn step_response_through_first_order_lag() {
        // Actuator: τ·ω̇ = u − ω with τ = 0.15 s; gyro reads ω exactly.
        let cfg = PidConfig::default();
        let (tau, dt, target) = (0.15, 0.001, 0.5);
        let mut st = PidState::default();
        let mut omega = 0.0;
        let mut t = 0.0;
        let mut rise = None;
        // The integral mode settles with a time constant of about 0.55 s.
        while t < 6.0 {
            let (u, next) = step_pid(&cfg, target, omega, dt, st);
            st = next;
            omega += (u - omega) * dt / tau;
            t += dt;
            if rise.is_none() && omega >= 0.9 * target {
                rise = Some(t);
            }
        }
        let rise = rise.expect("never reached 90%");
        assert!(rise < 0.5, "rise time {rise}");
        assert!((omega - target).abs() < 1e-3);
    }
}
