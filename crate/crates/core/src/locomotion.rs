//! Differential-drive ground truth, encoder odometry and the axis-aligned waypoint controller.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{wrap, Point, Pose};

/// Below this turn rate the motion is integrated as a straight line.
pub const STRAIGHT_LINE_OMEGA: f64 = 1e-9;

/// Linear and angular velocity command for one robot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelCommand {
    pub v: f64,
    pub omega: f64,
}

impl WheelCommand {
    pub const ZERO: WheelCommand = WheelCommand { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        WheelCommand { v, omega }
    }
}

/// Clamps each component to its bound independently, keeping the sign.
pub fn saturate(cmd: WheelCommand, v_max: f64, omega_max: f64) -> WheelCommand {
    WheelCommand {
        v: cmd.v.clamp(-v_max, v_max),
        omega: cmd.omega.clamp(-omega_max, omega_max),
    }
}

/// sin(h)/h, with the Taylor expansion near zero.
fn sinc(h: f64) -> f64 {
    if h.abs() < 1e-4 {
        1.0 - h * h / 6.0
    } else {
        h.sin() / h
    }
}

/// Displacement `(dx, dy, dθ)` of an exact unicycle arc.
///
/// Uses `sin(θ+ωdt) − sin θ = 2 cos(θ + ωdt/2) sin(ωdt/2)`, which is the closed-form
/// arc rewritten so it stays well conditioned as ω → 0.
pub(crate) fn arc_displacement(theta: f64, cmd: WheelCommand, dt: f64) -> (f64, f64, f64) {
    if cmd.omega.abs() < STRAIGHT_LINE_OMEGA {
        let ds = cmd.v * dt;
        return (ds * theta.cos(), ds * theta.sin(), 0.0);
    }
    let half = 0.5 * cmd.omega * dt;
    let chord = cmd.v * dt * sinc(half);
    let mid = theta + half;
    (chord * mid.cos(), chord * mid.sin(), cmd.omega * dt)
}

/// Integrates the unicycle model exactly over `dt`.
pub fn integrate_pose(pose: &Pose, cmd: WheelCommand, dt: f64) -> Result<Pose> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!("dt must be positive and finite, got {dt}")));
    }
    if !cmd.v.is_finite() || !cmd.omega.is_finite() {
        return Err(Error::domain("non-finite wheel command"));
    }
    let (dx, dy, dth) = arc_displacement(pose.theta(), cmd, dt);
    let mut next = *pose;
    next.x += dx;
    next.y += dy;
    if dth != 0.0 {
        next.set_theta(pose.theta() + dth);
    }
    Ok(next)
}

/// Dead-reckoned pose plus the drift bookkeeping of the odometry error model.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryState {
    pub pose: Pose,
    distance: f64,
    cumulative_turn: f64,
    sigma2: f64,
    k1: f64,
    k2: f64,
}

impl OdometryState {
    pub fn new(pose: Pose, k1: f64, k2: f64) -> Self {
        OdometryState {
            pose,
            distance: 0.0,
            cumulative_turn: 0.0,
            sigma2: 0.0,
            k1,
            k2,
        }
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn cumulative_turn(&self) -> f64 {
        self.cumulative_turn
    }

    /// Modeled position variance `k1·d + k2·Σ|Δθ|`, m².
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Midpoint-heading dead reckoning from one pair of wheel increments.
pub fn odometry_step(
    state: &OdometryState,
    dphi_r: f64,
    dphi_l: f64,
    wheel_radius: f64,
    wheelbase: f64,
) -> OdometryState {
    let ds = 0.5 * wheel_radius * (dphi_r + dphi_l);
    let dtheta = wheel_radius / wheelbase * (dphi_r - dphi_l);
    let theta = state.pose.theta();
    let heading = theta + 0.5 * dtheta;
    let mut next = state.clone();
    next.pose.x += ds * heading.cos();
    next.pose.y += ds * heading.sin();
    next.pose.set_theta(theta + dtheta);
    next.distance += ds.abs();
    next.cumulative_turn += dtheta.abs();
    next.sigma2 = next.k1 * next.distance + next.k2 * next.cumulative_turn;
    next
}

/// Wheel geometry and slip coefficients used to synthesize encoder readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderModel {
    pub wheel_radius: f64,
    pub wheelbase: f64,
    pub k1: f64,
    pub k2: f64,
}

/// Wheel increments for one tick of `true_cmd`, with common-mode slip noise.
///
/// The slip enters the traveled distance with variance `k1·|Δs| + k2·|Δθ|`, so dead
/// reckoning accumulates exactly the modeled position variance while the heading
/// increment stays exact. One normal draw is consumed per call regardless of the
/// coefficients, which keeps random streams aligned across noise settings.
pub fn simulate_encoders<R: Rng + ?Sized>(
    true_cmd: WheelCommand,
    dt: f64,
    model: &EncoderModel,
    rng: &mut R,
) -> (f64, f64) {
    let ds = true_cmd.v * dt;
    let dtheta = true_cmd.omega * dt;
    let z: f64 = rng.sample(StandardNormal);
    let variance = model.k1 * ds.abs() + model.k2 * dtheta.abs();
    let slip = z * variance.sqrt();
    let half_track = 0.5 * dtheta * model.wheelbase;
    (
        (ds + slip + half_track) / model.wheel_radius,
        (ds + slip - half_track) / model.wheel_radius,
    )
}

/// Limits and gains for the axis-aligned controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub v_max: f64,
    pub omega_max: f64,
    /// Per-axis arrival tolerance, meters.
    pub axis_tol: f64,
    /// Heading error above which the robot turns in place, radians.
    pub heading_tol: f64,
    pub k_v: f64,
    pub k_theta: f64,
    /// A finished axis is revisited only when its error exceeds `relapse·axis_tol`.
    pub relapse: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            v_max: 0.22,
            omega_max: 2.84,
            axis_tol: 0.05,
            heading_tol: 0.05,
            k_v: 1.0,
            k_theta: 3.0,
            relapse: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leg {
    Y,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub cmd: WheelCommand,
    pub arrived: bool,
    /// Active leg, `None` once arrived.
    pub leg: Option<Leg>,
    /// Error along the active axis (absolute), meters.
    pub axis_error: f64,
}

fn drive_leg(est: &Pose, leg: Leg, goal: Point, cfg: &ControllerConfig) -> ControlOutput {
    let (err, target_heading) = match leg {
        Leg::Y => {
            let e = goal[1] - est.y;
            (e, if e >= 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 })
        }
        Leg::X => {
            let e = goal[0] - est.x;
            (e, if e >= 0.0 { 0.0 } else { -PI })
        }
    };
    let heading_err = wrap(target_heading - est.theta());
    let omega = (cfg.k_theta * heading_err).clamp(-cfg.omega_max, cfg.omega_max);
    let v = if heading_err.abs() > cfg.heading_tol {
        0.0
    } else {
        (cfg.k_v * err.abs()).min(cfg.v_max)
    };
    ControlOutput {
        cmd: WheelCommand { v, omega },
        arrived: false,
        leg: Some(leg),
        axis_error: err.abs(),
    }
}

fn arrived() -> ControlOutput {
    ControlOutput {
        cmd: WheelCommand::ZERO,
        arrived: true,
        leg: None,
        axis_error: 0.0,
    }
}

/// Stateless Y-then-X steering toward `goal` from the estimated pose.
pub fn axis_aligned_controller(est: &Pose, goal: Point, cfg: &ControllerConfig) -> ControlOutput {
    let y_err = goal[1] - est.y;
    let x_err = goal[0] - est.x;
    if y_err.abs() > cfg.axis_tol {
        drive_leg(est, Leg::Y, goal, cfg)
    } else if x_err.abs() > cfg.axis_tol {
        drive_leg(est, Leg::X, goal, cfg)
    } else {
        arrived()
    }
}

/// Axis-aligned controller that latches its leg.
///
/// Once a leg is active, the other axis is only revisited when its error leaves
/// the relapse band, so estimate noise on the finished axis does not turn the
/// robot around. Arrival likewise accepts off-axis error inside the band.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisController {
    pub cfg: ControllerConfig,
    leg: Option<Leg>,
}

impl AxisController {
    pub fn new(cfg: ControllerConfig) -> Self {
        AxisController { cfg, leg: None }
    }

    pub fn reset(&mut self) {
        self.leg = None;
    }

    /// Starts on `leg` regardless of the current errors.
    pub fn latch(&mut self, leg: Leg) {
        self.leg = Some(leg);
    }

    pub fn leg(&self) -> Option<Leg> {
        self.leg
    }

    pub fn step(&mut self, est: &Pose, goal: Point) -> ControlOutput {
        let tol = self.cfg.axis_tol;
        let band = self.cfg.relapse * tol;
        let y_err = (goal[1] - est.y).abs();
        let x_err = (goal[0] - est.x).abs();
        let leg = match self.leg {
            Some(Leg::Y) if y_err > tol => Some(Leg::Y),
            Some(Leg::Y) if x_err > band => Some(Leg::X),
            Some(Leg::Y) => None,
            Some(Leg::X) if y_err > band => Some(Leg::Y),
            Some(Leg::X) if x_err > tol => Some(Leg::X),
            Some(Leg::X) => None,
            None if y_err > tol => Some(Leg::Y),
            None if x_err > tol => Some(Leg::X),
            None => None,
        };
        self.leg = leg;
        match leg {
            Some(l) => drive_leg(est, l, goal, &self.cfg),
            None => arrived(),
        }
    }
}
