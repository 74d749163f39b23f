//! Curvature-sequence MPC over an arc-length rollout.
//!
//! Decision variables are the curvatures `ρ₁..ρ_N`, each applied for one
//! arc step `Δs` from the robot origin. The cost is
//!
//! ```text
//! Σ w_de[i]·d_e,i² + Σ w_φ[i]·φ_err,i² + Σ w_Δρ[i]·(ρ_i − ρ_{i−1})²
//! ```
//!
//! with `ρ₀` the curvature applied on the previous solve. `d_e,i` is the
//! signed distance of predicted pose `i` from the segment `wp_{i−1} → wp_i`
//! (`wp₀` is the robot origin) and `φ_err,i` the difference between that
//! segment's heading and the predicted heading. Every term is a squared
//! residual, so the problem is solved by projected Gauss-Newton on the box
//! `|ρ| ≤ 1/R_min`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ControlError, Waypoint};
use crate::kinematics::{normalize_angle, step_arc, ArcStepCommand, Pose2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Number of stages `N`.
    pub horizon: usize,
    /// Arc length per stage `Δs` (m).
    pub step: f64,
    /// Minimum turn radius (m); bounds `|ρ| ≤ 1 / min_turn_radius`.
    pub min_turn_radius: f64,
    /// Cross-track weights, one per stage.
    pub w_cross_track: Vec<f64>,
    /// Heading-error weights, one per stage.
    pub w_heading: Vec<f64>,
    /// Curvature-rate weights, one per stage (stage 1 couples to the
    /// previous solve).
    pub w_curvature_rate: Vec<f64>,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this.
    pub cost_tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let n = 20;
        let staged = |inner: f64, terminal: f64| {
            let mut w = vec![inner; n];
            w[n - 1] = terminal;
            w
        };
        Self {
            horizon: n,
            step: 0.2,
            min_turn_radius: 0.7,
            w_cross_track: staged(120.0, 1200.0),
            w_heading: staged(100.0, 1000.0),
            w_curvature_rate: vec![1000.0; n],
            max_iterations: 200,
            cost_tolerance: 1e-10,
        }
    }
}

impl MpcConfig {
    pub fn max_curvature(&self) -> f64 {
        1.0 / self.min_turn_radius
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::InvalidConfig(m));
        if self.horizon < 2 {
            return bad(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.min_turn_radius > 0.0 && self.min_turn_radius.is_finite()) {
            return bad(format!(
                "min_turn_radius must be positive, got {}",
                self.min_turn_radius
            ));
        }
        for (name, w) in [
            ("w_cross_track", &self.w_cross_track),
            ("w_heading", &self.w_heading),
            ("w_curvature_rate", &self.w_curvature_rate),
        ] {
            if w.len() != self.horizon {
                return bad(format!(
                    "{name} has {} entries, horizon is {}",
                    w.len(),
                    self.horizon
                ));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("{name} entries must be non-negative"));
            }
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    /// Iteration budget exhausted; the best iterate is returned.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub curvatures: Vec<f64>,
    /// Predicted poses after each stage, in the robot frame.
    pub poses: Vec<Pose2D>,
    pub cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl MpcSolution {
    /// Yaw-rate command `ω = ρ₁·v`.
    pub fn angular_velocity(&self, linear: f64) -> f64 {
        self.curvatures[0] * linear
    }
}

/// Poses after each stage of the arc-length rollout from the origin.
pub fn rollout(curvatures: &[f64], step: f64) -> Vec<Pose2D> {
    let mut pose = Pose2D::default();
    curvatures
        .iter()
        .map(|&rho| {
            pose = step_arc(
                &pose,
                &ArcStepCommand {
                    curvature: rho,
                    arc_length: step,
                },
            );
            pose
        })
        .collect()
}

/// Per-stage segment geometry: start point, unit direction and continuous
/// heading.
struct Segments {
    start: Vec<(f64, f64)>,
    dir: Vec<(f64, f64)>,
    heading: Vec<f64>,
}

fn segments(waypoints: &[Waypoint]) -> Result<Segments, ControlError> {
    let n = waypoints.len();
    let mut seg = Segments {
        start: Vec::with_capacity(n),
        dir: Vec::with_capacity(n),
        heading: Vec::with_capacity(n),
    };
    let mut prev = Waypoint::new(0.0, 0.0);
    let mut prev_heading = 0.0;
    for (i, wp) in waypoints.iter().enumerate() {
        let (dx, dy) = (wp.x - prev.x, wp.y - prev.y);
        let len = dx.hypot(dy);
        if !(len > 0.0) {
            return Err(ControlError::CoincidentWaypoints(i.saturating_sub(1), i));
        }
        seg.start.push((prev.x, prev.y));
        seg.dir.push((dx / len, dy / len));
        // Unwrapped along the path, starting from the robot's heading.
        prev_heading += normalize_angle(dy.atan2(dx) - prev_heading);
        seg.heading.push(prev_heading);
        prev = *wp;
    }
    Ok(seg)
}

/// Residual vector whose squared norm is the MPC cost, plus its Jacobian
/// with respect to the curvatures.
struct Linearization {
    residuals: DVector<f64>,
    jacobian: DMatrix<f64>,
}

fn residuals(
    rho: &[f64],
    seg: &Segments,
    cfg: &MpcConfig,
    prev_curvature: f64,
    with_jacobian: bool,
) -> Linearization {
    let n = rho.len();
    let ds = cfg.step;

    // Headings φ_0..φ_N (φ_0 = 0) and positions after each stage.
    let mut heading = vec![0.0; n + 1];
    for k in 1..=n {
        heading[k] = heading[k - 1] + rho[k - 1] * ds;
    }
    let mut px = vec![0.0; n + 1];
    let mut py = vec![0.0; n + 1];
    // Prefix sums of sin/cos of φ_0..φ_{m-1}, for the position Jacobian.
    let mut sum_sin = vec![0.0; n + 1];
    let mut sum_cos = vec![0.0; n + 1];
    for k in 0..n {
        let (s, c) = heading[k].sin_cos();
        px[k + 1] = px[k] + c * ds;
        py[k + 1] = py[k] + s * ds;
        sum_sin[k + 1] = sum_sin[k] + s;
        sum_cos[k + 1] = sum_cos[k] + c;
    }

    let mut r = DVector::zeros(3 * n);
    let mut jac = if with_jacobian {
        DMatrix::zeros(3 * n, n)
    } else {
        DMatrix::zeros(0, 0)
    };

    for i in 1..=n {
        let stage = i - 1;
        let (ax, ay) = seg.start[stage];
        let (ux, uy) = seg.dir[stage];
        // R_U·sin(φ_wp − φ_U) written as a cross product; identical value,
        // smooth where R_U → 0.
        let cross_track = uy * (px[i] - ax) - ux * (py[i] - ay);
        // Both headings are continuous, so a rollout that loops around is
        // charged for the full turn rather than wrapping back to zero error.
        let heading_err = seg.heading[stage] - heading[i];
        let w_de = cfg.w_cross_track[stage].sqrt();
        let w_phi = cfg.w_heading[stage].sqrt();
        let w_drho = cfg.w_curvature_rate[stage].sqrt();
        let prev = if i == 1 { prev_curvature } else { rho[i - 2] };

        r[stage] = w_de * cross_track;
        r[n + stage] = w_phi * heading_err;
        r[2 * n + stage] = w_drho * (rho[stage] - prev);

        if with_jacobian {
            // Position i depends on ρ_j (1-based) through φ_j..φ_{i−1}.
            for j in 1..i {
                let dx = -ds * ds * (sum_sin[i] - sum_sin[j]);
                let dy = ds * ds * (sum_cos[i] - sum_cos[j]);
                jac[(stage, j - 1)] = w_de * (uy * dx - ux * dy);
            }
            for j in 1..=i {
                jac[(n + stage, j - 1)] = -w_phi * ds;
            }
            jac[(2 * n + stage, stage)] = w_drho;
            if i > 1 {
                jac[(2 * n + stage, stage - 1)] = -w_drho;
            }
        }
    }

    Linearization {
        residuals: r,
        jacobian: jac,
    }
}

fn check_inputs(
    waypoints: &[Waypoint],
    cfg: &MpcConfig,
    prev_curvature: f64,
) -> Result<Segments, ControlError> {
    cfg.validate()?;
    if waypoints.len() != cfg.horizon {
        return Err(ControlError::WaypointCount {
            expected: cfg.horizon,
            got: waypoints.len(),
        });
    }
    let bound = cfg.max_curvature();
    if !(prev_curvature.abs() <= bound + 1e-9) {
        return Err(ControlError::PreviousCurvatureOutOfBounds {
            prev: prev_curvature,
            bound,
        });
    }
    segments(waypoints)
}

/// MPC cost of a curvature sequence.
pub fn mpc_cost(
    curvatures: &[f64],
    waypoints: &[Waypoint],
    cfg: &MpcConfig,
    prev_curvature: f64,
) -> Result<f64, ControlError> {
    let seg = check_inputs(waypoints, cfg, prev_curvature)?;
    if curvatures.len() != cfg.horizon {
        return Err(ControlError::WaypointCount {
            expected: cfg.horizon,
            got: curvatures.len(),
        });
    }
    Ok(residuals(curvatures, &seg, cfg, prev_curvature, false)
        .residuals
        .norm_squared())
}

/// Analytic gradient of [`mpc_cost`], `2·Jᵀr`.
pub fn mpc_gradient(
    curvatures: &[f64],
    waypoints: &[Waypoint],
    cfg: &MpcConfig,
    prev_curvature: f64,
) -> Result<Vec<f64>, ControlError> {
    let seg = check_inputs(waypoints, cfg, prev_curvature)?;
    let lin = residuals(curvatures, &seg, cfg, prev_curvature, true);
    Ok((lin.jacobian.transpose() * lin.residuals * 2.0)
        .iter()
        .copied()
        .collect())
}

/// Solves the MPC by projected Gauss-Newton from a few cold starts built
/// from `prev_curvature`.
pub fn solve_mpc(
    waypoints: &[Waypoint],
    cfg: &MpcConfig,
    prev_curvature: f64,
) -> Result<MpcSolution, ControlError> {
    solve_impl(waypoints, cfg, prev_curvature, None)
}

/// As [`solve_mpc`], recording the cost of every accepted iterate of the
/// winning start.
pub fn solve_mpc_traced(
    waypoints: &[Waypoint],
    cfg: &MpcConfig,
    prev_curvature: f64,
    trace: &mut Vec<f64>,
) -> Result<MpcSolution, ControlError> {
    solve_impl(waypoints, cfg, prev_curvature, Some(trace))
}

fn solve_impl(
    waypoints: &[Waypoint],
    cfg: &MpcConfig,
    prev_curvature: f64,
    trace: Option<&mut Vec<f64>>,
) -> Result<MpcSolution, ControlError> {
    let seg = check_inputs(waypoints, cfg, prev_curvature)?;
    let n = cfg.horizon;
    let bound = cfg.max_curvature();
    let held = prev_curvature.clamp(-bound, bound);

    // Holding a sharp previous curvature over the whole horizon can start
    // the descent inside a looping basin, so it is paired with a ramp back
    // to straight and a straight start; the cheapest local optimum wins.
    let starts = [
        vec![held; n],
        (0..n).map(|i| held * (1.0 - (i + 1) as f64 / n as f64)).collect(),
        vec![0.0; n],
    ];
    let mut best: Option<(Descent, Vec<f64>)> = None;
    let mut iterations = 0;
    for start in starts {
        let mut costs = Vec::new();
        let d = descend(start, &seg, cfg, prev_curvature, &mut costs);
        iterations += d.iterations;
        if best.as_ref().is_none_or(|(b, _)| d.cost < b.cost) {
            best = Some((d, costs));
        }
    }
    let (best, costs) = best.expect("at least one start");
    if let Some(t) = trace {
        t.extend(costs);
    }

    Ok(MpcSolution {
        poses: rollout(&best.rho, cfg.step),
        curvatures: best.rho,
        cost: best.cost,
        iterations,
        status: best.status,
    })
}

struct Descent {
    rho: Vec<f64>,
    cost: f64,
    iterations: usize,
    status: SolveStatus,
}

/// Projected, damped Gauss-Newton from `rho`, recording accepted costs.
fn descend(
    mut rho: Vec<f64>,
    seg: &Segments,
    cfg: &MpcConfig,
    prev_curvature: f64,
    trace: &mut Vec<f64>,
) -> Descent {
    let n = cfg.horizon;
    let bound = cfg.max_curvature();
    let project = |v: f64| v.clamp(-bound, bound);

    let mut lin = residuals(&rho, seg, cfg, prev_curvature, true);
    let mut cost = lin.residuals.norm_squared();
    trace.push(cost);
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;
    let mut damping = 1e-9;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let grad = lin.jacobian.transpose() * &lin.residuals * 2.0;

        // Variables pinned at a bound with the gradient pushing outward stay
        // fixed for this iteration.
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lower = rho[i] <= -bound && grad[i] > 0.0;
                let at_upper = rho[i] >= bound && grad[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        let projected_grad_norm = free.iter().map(|&i| grad[i] * grad[i]).sum::<f64>().sqrt();
        if free.is_empty() || projected_grad_norm < 1e-12 {
            status = SolveStatus::Converged;
            break;
        }

        let jf = lin.jacobian.select_columns(free.iter());
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let mut normal = jf.transpose() * &jf;
        let scale = normal.diagonal().max().max(1e-12);
        for d in 0..free.len() {
            normal[(d, d)] += damping * scale;
        }
        let direction = match normal.cholesky() {
            Some(ch) => -ch.solve(&gf) * 0.5,
            None => -&gf / scale,
        };

        // Backtracking along the projected path.
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..40 {
            let mut cand = rho.clone();
            for (k, &i) in free.iter().enumerate() {
                cand[i] = project(rho[i] + alpha * direction[k]);
            }
            let cand_lin = residuals(&cand, seg, cfg, prev_curvature, false);
            let cand_cost = cand_lin.residuals.norm_squared();
            let decrease: f64 = free
                .iter()
                .map(|&i| grad[i] * (rho[i] - cand[i]))
                .sum();
            if cand_cost <= cost - 1e-4 * decrease.max(0.0) && cand_cost < cost {
                accepted = Some((cand, cand_cost));
                break;
            }
            alpha *= 0.5;
        }

        let Some((cand, cand_cost)) = accepted else {
            // No descent left along the Gauss-Newton or gradient direction.
            if damping < 1e6 {
                damping *= 100.0;
                continue;
            }
            status = SolveStatus::Converged;
            break;
        };
        let improvement = cost - cand_cost;
        rho = cand;
        cost = cand_cost;
        lin = residuals(&rho, seg, cfg, prev_curvature, true);
        trace.push(cost);
        damping = (damping * 0.1).max(1e-12);
        if improvement < cfg.cost_tolerance {
            status = SolveStatus::Converged;
            break;
        }
    }

    Descent {
        rho,
        cost,
        iterations,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::generate_waypoints;
    use crate::estimation::RowRelativeState;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_line(offset: f64, angle: f64, cfg: &MpcConfig) -> Vec<Waypoint> {
        let (s, c) = angle.sin_cos();
        (1..=cfg.horizon)
            .map(|i| {
                let t = i as f64 * cfg.step;
                Waypoint::new(-offset * s + t * c, offset * c + t * s)
            })
            .collect()
    }

    #[test]
    fn on_path_solution_is_zero() {
        let cfg = MpcConfig::default();
        let sol = solve_mpc(&straight_line(0.0, 0.0, &cfg), &cfg, 0.0).unwrap();
        assert!(sol.cost < 1e-8);
        assert!(sol.curvatures.iter().all(|r| r.abs() < 1e-6));
        assert_eq!(sol.status, SolveStatus::Converged);
    }

    /// Exhaustive search over a three-segment piecewise-constant curvature
    /// profile (7 stages each, last segment 6).
    fn coarse_grid_best(wps: &[Waypoint], cfg: &MpcConfig) -> f64 {
        let bound = cfg.max_curvature();
        let levels: Vec<f64> = (0..=40).map(|k| -bound + 2.0 * bound * k as f64 / 40.0).collect();
        let mut best = f64::INFINITY;
        for &a in &levels {
            for &b in &levels {
                for &c in &levels {
                    let rho: Vec<f64> = (0..cfg.horizon)
                        .map(|i| match i {
                            0..7 => a,
                            7..14 => b,
                            _ => c,
                        })
                        .collect();
                    best = best.min(mpc_cost(&rho, wps, cfg, 0.0).unwrap());
                }
            }
        }
        best
    }

    #[test]
    fn left_offset_turns_left_and_beats_grid() {
        let cfg = MpcConfig::default();
        let wps = straight_line(0.2, 0.0, &cfg);
        let sol = solve_mpc(&wps, &cfg, 0.0).unwrap();
        assert!(sol.curvatures[0] > 0.0);
        let terminal = sol.poses.last().unwrap();
        assert!((terminal.y - 0.2).abs() < 0.02, "terminal y {}", terminal.y);
        assert!(sol.cost <= coarse_grid_best(&wps, &cfg));
    }

    #[test]
    fn curvature_bound_respected_under_large_offset() {
        // Without the smoothness penalty a 1.5 m lateral jump forces a
        // maximal turn.
        let cfg = MpcConfig {
            w_curvature_rate: vec![0.0; 20],
            ..MpcConfig::default()
        };
        let wps = straight_line(-1.5, 0.6, &cfg);
        let sol = solve_mpc(&wps, &cfg, 0.0).unwrap();
        let bound = cfg.max_curvature();
        assert!(sol.curvatures.iter().all(|r| r.abs() <= bound));
        assert!(sol.curvatures.iter().any(|r| (r.abs() - bound).abs() < 1e-12));
    }

    #[test]
    fn cost_trace_is_non_increasing() {
        let cfg = MpcConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let wps = straight_line(rng.random_range(-0.3..0.3), rng.random_range(-0.4..0.4), &cfg);
            let mut trace = Vec::new();
            solve_mpc_traced(&wps, &cfg, rng.random_range(-1.0..1.0), &mut trace).unwrap();
            assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = MpcConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bound = cfg.max_curvature();
        for _ in 0..20 {
            let wps = straight_line(rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5), &cfg);
            let rho: Vec<f64> = (0..cfg.horizon).map(|_| rng.random_range(-bound..bound)).collect();
            let prev = rng.random_range(-bound..bound);
            let g = mpc_gradient(&rho, &wps, &cfg, prev).unwrap();
            let h = 1e-6;
            for j in 0..cfg.horizon {
                let mut p = rho.clone();
                let mut m = rho.clone();
                p[j] += h;
                m[j] -= h;
                let fd = (mpc_cost(&p, &wps, &cfg, prev).unwrap()
                    - mpc_cost(&m, &wps, &cfg, prev).unwrap())
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "j={j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn rejects_wrong_inputs() {
        let cfg = MpcConfig::default();
        let wps = straight_line(0.0, 0.0, &cfg);
        assert!(matches!(
            solve_mpc(&wps[..5], &cfg, 0.0),
            Err(ControlError::WaypointCount { .. })
        ));
        assert!(matches!(
            solve_mpc(&wps, &cfg, 3.0),
            Err(ControlError::PreviousCurvatureOutOfBounds { .. })
        ));
        let mut dup = wps.clone();
        dup[3] = dup[2];
        assert!(matches!(
            solve_mpc(&dup, &cfg, 0.0),
            Err(ControlError::CoincidentWaypoints(2, 3))
        ));
        let bad = MpcConfig {
            horizon: 1,
            ..MpcConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn angular_velocity_is_first_curvature_times_speed() {
        let cfg = MpcConfig::default();
        let wps = generate_waypoints(&RowRelativeState::new(0.3, 0.45, 0.0, 0.0), 0.75, &cfg)
            .unwrap();
        let sol = solve_mpc(&wps, &cfg, 0.0).unwrap();
        assert_abs_diff_eq!(sol.angular_velocity(0.6), sol.curvatures[0] * 0.6);
        // Robot left of center steers right.
        assert!(sol.curvatures[0] < 0.0);
    }

    #[test]
    fn sharp_previous_curvature_does_not_loop() {
        // Holding ρ₀ = 1.27 for 4 m turns almost a full circle.
        let cfg = MpcConfig::default();
        let state = RowRelativeState::new(0.382 * 0.75, 0.618 * 0.75, 0.232, 0.0);
        let wps = generate_waypoints(&state, 0.75, &cfg).unwrap();
        let sol = solve_mpc(&wps, &cfg, 1.27).unwrap();
        let turn: f64 = sol.curvatures.iter().sum::<f64>() * cfg.step;
        assert!(turn.abs() < std::f64::consts::PI, "turned {turn} rad");
        let held = mpc_cost(&vec![1.27; cfg.horizon], &wps, &cfg, 1.27).unwrap();
        assert!(sol.cost < held);
    }
}
