use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sample_perception, SimulationError, TrialConfig};
use crate::control::{generate_waypoints, solve_mpc, step_pid, PidState};
use crate::estimation::{RowFilter, RowRelativeState, VisionMeasurement};
use crate::kinematics::{step_time, Pose2D, VelocityCommand};

// Independent random streams so that, e.g., changing the perception rate
// does not perturb the gyro noise sequence.
const PERCEPTION_STREAM: u64 = 1;
const SENSOR_STREAM: u64 = 2;

/// Slack when comparing scheduled event times against the physics clock.
const CLOCK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionCause {
    /// The robot body reached a crop row.
    RowContact,
    /// The robot turned more than 90° away from the row direction.
    HeadingLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub t: f64,
    pub arc_length: f64,
    pub cause: InterventionCause,
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub pose: Pose2D,
    pub truth: RowRelativeState,
    /// Fused estimate; absent until the first perception frame arrives.
    pub estimate: Option<RowRelativeState>,
    pub omega_mpc: f64,
    /// Latest PID output sent to the actuator.
    pub omega_cmd: f64,
    pub rho1: f64,
    /// An intervention fired since the previous tick.
    pub intervention: bool,
    pub arc_length: f64,
    pub cross_track: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    /// Distance progressed along the centerline (m).
    pub distance_m: f64,
    pub duration_s: f64,
    pub interventions: usize,
    pub mean_abs_cte_m: f64,
    pub max_abs_cte_m: f64,
    /// `√2 ·` standard deviation of the cross-track error after the
    /// settling distance: the amplitude of an equivalent sinusoid.
    pub oscillation_amplitude_m: f64,
    /// `None` when no intervention occurred.
    pub meters_per_intervention: Option<f64>,
    /// The field end was reached before the time limit.
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub ticks: Vec<TickRecord>,
    pub interventions: Vec<Intervention>,
    pub summary: TrialSummary,
}

/// Running statistics over the physics-rate cross-track error.
#[derive(Default)]
struct CteStats {
    count: usize,
    sum_abs: f64,
    max_abs: f64,
    settled: usize,
    settled_mean: f64,
    settled_m2: f64,
}

impl CteStats {
    fn push(&mut self, e: f64, settled: bool) {
        self.count += 1;
        self.sum_abs += e.abs();
        self.max_abs = self.max_abs.max(e.abs());
        if settled {
            // Welford update.
            self.settled += 1;
            let delta = e - self.settled_mean;
            self.settled_mean += delta / self.settled as f64;
            self.settled_m2 += delta * (e - self.settled_mean);
        }
    }

    fn oscillation_amplitude(&self) -> f64 {
        if self.settled < 2 {
            return 0.0;
        }
        std::f64::consts::SQRT_2 * (self.settled_m2 / self.settled as f64).sqrt()
    }
}

/// Everything that the human reset puts back to its initial condition.
struct Controller {
    filter: RowFilter,
    pid: PidState,
    actuator_omega: f64,
    omega_mpc: f64,
    omega_cmd: f64,
    rho1: f64,
    gyro_sum: f64,
    speed_sum: f64,
    samples: usize,
}

impl Controller {
    fn new(cfg: &TrialConfig) -> Self {
        Self {
            filter: RowFilter::new(cfg.estimator, cfg.use_imu),
            pid: PidState::default(),
            actuator_omega: 0.0,
            omega_mpc: 0.0,
            omega_cmd: 0.0,
            rho1: 0.0,
            gyro_sum: 0.0,
            speed_sum: 0.0,
            samples: 0,
        }
    }
}

struct Pending {
    deliver_at: f64,
    z: VisionMeasurement,
}

/// Runs one closed-loop trial down the field.
///
/// Each physics tick: sample sensors, capture a perception frame when due,
/// and on control ticks run the EKF predict, fuse delivered frames and
/// re-solve the MPC. Then the PID (when the IMU is used) turns the MPC
/// yaw-rate target into a command, the actuator lags it, and the pose is
/// integrated. An intervention resets the robot onto the centerline.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialRecord, SimulationError> {
    cfg.validate()?;
    let field = &cfg.field;
    let length = field.length();
    let half = field.lane_width / 2.0;
    let contact = half - cfg.robot_half_width;
    let dt = 1.0 / cfg.physics_rate;
    let max_omega = cfg.speed / cfg.actuator.min_turn_radius;
    let latency = cfg.perception.effective_latency();
    let t_max = cfg.max_duration();

    let mut perception_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    perception_rng.set_stream(PERCEPTION_STREAM);
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sensor_rng.set_stream(SENSOR_STREAM);

    let mut pose = field.pose_at(0.0, cfg.initial.lateral_offset, cfg.initial.heading);
    let start = field.true_row_state(&pose, 0.0)?;
    let start_arc = start.arc_length;

    let mut ctl = Controller::new(cfg);
    let mut queue: VecDeque<Pending> = VecDeque::new();
    let mut ticks = Vec::new();
    let mut interventions = Vec::new();
    let mut stats = CteStats::default();
    let mut flagged = false;

    let mut control_k: u64 = 0;
    let mut frame_k: u64 = 0;
    let mut step: u64 = 0;
    let mut proj = start;
    let mut completed = false;

    loop {
        let t = step as f64 * dt;
        if t > t_max {
            break;
        }
        let true_omega = ctl.actuator_omega;
        if proj.arc_length >= length - CLOCK_EPS {
            completed = true;
            break;
        }

        let gyro = true_omega
            + cfg.sensors.gyro_bias
            + cfg.sensors.gyro_noise * sensor_rng.sample::<f64, _>(StandardNormal);
        let encoder =
            cfg.speed + cfg.sensors.encoder_noise * sensor_rng.sample::<f64, _>(StandardNormal);
        ctl.gyro_sum += gyro;
        ctl.speed_sum += encoder;
        ctl.samples += 1;

        // Perception capture.
        while frame_k as f64 / cfg.perception.update_rate <= t + CLOCK_EPS {
            let captured = frame_k as f64 / cfg.perception.update_rate;
            frame_k += 1;
            let z = sample_perception(
                &proj.state,
                &cfg.perception,
                &mut perception_rng,
                field.in_gap(proj.arc_length),
            );
            if !field.occluded(proj.arc_length) {
                queue.push_back(Pending {
                    deliver_at: captured + latency,
                    z,
                });
            }
        }

        // Control tick.
        if control_k as f64 / cfg.control_rate <= t + CLOCK_EPS {
            let period = 1.0 / cfg.control_rate;
            control_k += 1;
            let mean_gyro = ctl.gyro_sum / ctl.samples as f64;
            let mean_speed = ctl.speed_sum / ctl.samples as f64;
            ctl.gyro_sum = 0.0;
            ctl.speed_sum = 0.0;
            ctl.samples = 0;

            if control_k > 1 {
                ctl.filter.predict(mean_speed, mean_gyro, period);
            }
            while queue.front().is_some_and(|p| p.deliver_at <= t + CLOCK_EPS) {
                let p = queue.pop_front().expect("front checked");
                ctl.filter.update(&p.z, mean_gyro)?;
            }
            if let Some(est) = ctl.filter.estimate() {
                // An estimate outside the lane cannot be turned into a
                // reference; the previous command is held.
                if let Ok(wps) = generate_waypoints(&est, field.lane_width, &cfg.mpc) {
                    let sol = solve_mpc(&wps, &cfg.mpc, ctl.rho1)?;
                    ctl.rho1 = sol.curvatures[0];
                    ctl.omega_mpc = sol.angular_velocity(cfg.speed);
                }
            }
            ticks.push(TickRecord {
                t,
                pose,
                truth: proj.state,
                estimate: ctl.filter.estimate(),
                omega_mpc: ctl.omega_mpc,
                omega_cmd: ctl.omega_cmd,
                rho1: ctl.rho1,
                intervention: std::mem::take(&mut flagged),
                arc_length: proj.arc_length,
                cross_track: proj.lateral_offset,
            });
        }

        // Low-level loop and actuator.
        ctl.omega_cmd = if cfg.use_imu {
            let (out, next) = step_pid(&cfg.pid, ctl.omega_mpc, gyro, dt, ctl.pid);
            ctl.pid = next;
            out
        } else {
            ctl.omega_mpc
        };
        let target = ctl.omega_cmd.clamp(-max_omega, max_omega);
        ctl.actuator_omega = if cfg.actuator.time_constant > 0.0 {
            let a = (dt / cfg.actuator.time_constant).min(1.0);
            ctl.actuator_omega + a * (target - ctl.actuator_omega)
        } else {
            target
        };

        pose = step_time(
            &pose,
            &VelocityCommand {
                linear: cfg.speed,
                angular: ctl.actuator_omega,
            },
            dt,
        );
        step += 1;

        let after = match field.true_row_state(&pose, ctl.actuator_omega) {
            Ok(p) => p,
            Err(SimulationError::OutOfField { arc_length, .. }) if arc_length >= length => {
                completed = true;
                proj.arc_length = length;
                break;
            }
            Err(e) => return Err(e),
        };
        let settled = after.arc_length - start_arc >= cfg.metrics.settle_distance;
        stats.push(after.lateral_offset, settled);
        let cause = if after.lateral_offset.abs() >= contact {
            Some(InterventionCause::RowContact)
        } else if after.state.heading.abs() > std::f64::consts::FRAC_PI_2 {
            Some(InterventionCause::HeadingLimit)
        } else {
            None
        };
        if let Some(cause) = cause {
            interventions.push(Intervention {
                t: step as f64 * dt,
                arc_length: after.arc_length,
                cause,
            });
            flagged = true;
            pose = field.pose_at(after.arc_length, 0.0, 0.0);
            ctl = Controller::new(cfg);
            queue.clear();
            proj = field.true_row_state(&pose, 0.0)?;
        } else {
            proj = after;
        }
    }

    let distance = proj.arc_length.max(start_arc) - start_arc;
    let n = interventions.len();
    let summary = TrialSummary {
        seed: cfg.seed,
        distance_m: distance,
        duration_s: step as f64 * dt,
        interventions: n,
        mean_abs_cte_m: if stats.count > 0 {
            stats.sum_abs / stats.count as f64
        } else {
            0.0
        },
        max_abs_cte_m: stats.max_abs,
        oscillation_amplitude_m: stats.oscillation_amplitude(),
        meters_per_intervention: (n > 0).then(|| distance / n as f64),
        completed,
    };
    Ok(TrialRecord {
        ticks,
        interventions,
        summary,
    })
}
