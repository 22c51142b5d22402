//! Waypoint navigation with settle-and-verify at every waypoint.
//!
//! The complementary filter with α = 0.7 leaves a few centimeters of noise in
//! the position estimate, comparable to the arrival tolerance itself. A robot
//! therefore stops when the estimate says it has arrived, holds still while it
//! averages raw GPS fixes, and accepts the waypoint only if the average agrees.
//! Otherwise it makes a short correction move of exactly the measured error.
//!
//! Correction moves are metered rather than closed on the estimate: the robot
//! pivots to face the axis, then drives until the commands it actually executed
//! add up to the requested displacement. Wheel slip corrupts what the encoders
//! report, not where the commanded wheels take the robot, and at creeping speed
//! the slip noise would swamp the few centimeters being corrected.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::localization::{GpsFix, Localizer};
use crate::locomotion::{arc_displacement, AxisController, ControllerConfig, Leg, WheelCommand};
use crate::world::{wrap, Point, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavParams {
    pub controller: ControllerConfig,
    pub settle_ticks: u64,
    /// Accepted averaged error along the direction of travel.
    pub verify_tol: f64,
    /// Accepted averaged error across the direction of travel.
    pub lateral_tol: f64,
    /// Speed of correction moves, m/s.
    pub fine_speed: f64,
    /// Heading tolerance before a correction move starts, radians.
    pub fine_heading_tol: f64,
    pub sigma_gps: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Idle,
    Drive,
    /// Pivot to face `axis`, then move `left` meters along it.
    Correct { axis: usize, left: f64 },
    Settle { since: u64, sum: [f64; 2], n: u32 },
    Arrived,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavCommand {
    pub cmd: WheelCommand,
    /// Distance left to the active waypoint, by the estimate.
    pub remaining: f64,
}

impl NavCommand {
    fn hold() -> Self {
        NavCommand { cmd: WheelCommand::ZERO, remaining: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Navigator {
    params: NavParams,
    ctrl: AxisController,
    waypoints: Vec<Point>,
    idx: usize,
    mode: Mode,
    /// Last verified position.
    anchor: Point,
    gps_suspended: bool,
    pub corrections: u64,
}

fn axis_of(theta: f64) -> usize {
    if theta.cos().abs() >= theta.sin().abs() {
        0
    } else {
        1
    }
}

impl Navigator {
    pub fn new(params: NavParams, anchor: Point) -> Self {
        Navigator {
            params,
            ctrl: AxisController::new(params.controller),
            waypoints: Vec::new(),
            idx: 0,
            mode: Mode::Idle,
            anchor,
            gps_suspended: false,
            corrections: 0,
        }
    }

    pub fn start(&mut self, waypoints: Vec<Point>) {
        self.waypoints = waypoints;
        self.idx = 0;
        self.gps_suspended = false;
        if self.waypoints.is_empty() {
            self.mode = Mode::Arrived;
        } else {
            self.mode = Mode::Drive;
            self.begin_leg();
        }
    }

    pub fn stop(&mut self) {
        self.waypoints.clear();
        self.mode = Mode::Idle;
        self.gps_suspended = false;
    }

    pub fn arrived(&self) -> bool {
        self.mode == Mode::Arrived
    }

    pub fn is_idle(&self) -> bool {
        self.mode == Mode::Idle
    }

    /// GPS fixes should not be fused while a correction move is running.
    pub fn gps_suspended(&self) -> bool {
        self.gps_suspended
    }

    pub fn waypoint(&self) -> Option<Point> {
        self.waypoints.get(self.idx).copied()
    }

    pub fn anchor(&self) -> Point {
        self.anchor
    }

    /// Leaving a verified point along one axis, start on that axis directly.
    fn begin_leg(&mut self) {
        self.ctrl.reset();
        let wp = self.waypoints[self.idx];
        let tol = self.params.controller.axis_tol;
        if (self.anchor[1] - wp[1]).abs() <= tol {
            self.ctrl.latch(Leg::X);
        } else if (self.anchor[0] - wp[0]).abs() <= tol {
            self.ctrl.latch(Leg::Y);
        }
    }

    pub fn step(&mut self, tick: u64, est: &Pose, fix: Option<&GpsFix>, loc: &mut Localizer) -> NavCommand {
        match self.mode {
            Mode::Idle | Mode::Arrived => NavCommand::hold(),
            Mode::Drive => {
                let wp = self.waypoints[self.idx];
                let out = self.ctrl.step(est, wp);
                if out.arrived {
                    self.mode = Mode::Settle { since: tick, sum: [0.0; 2], n: 0 };
                    return NavCommand::hold();
                }
                NavCommand { cmd: out.cmd, remaining: est.distance_to(wp) }
            }
            Mode::Correct { axis, left } => self.correct(tick, est, axis, left, loc),
            Mode::Settle { since, mut sum, mut n } => {
                if let Some(f) = fix {
                    sum[0] += f.x;
                    sum[1] += f.y;
                    n += 1;
                }
                self.mode = Mode::Settle { since, sum, n };
                if tick - since >= self.params.settle_ticks && n > 0 {
                    let avg = [sum[0] / n as f64, sum[1] / n as f64];
                    self.evaluate(avg, n, est.theta(), loc);
                }
                NavCommand::hold()
            }
        }
    }

    fn evaluate(&mut self, avg: Point, n: u32, theta: f64, loc: &mut Localizer) {
        let var = self.params.sigma_gps.powi(2) / n as f64;
        loc.rebase(avg, var);
        self.anchor = avg;
        self.gps_suspended = false;
        let wp = self.waypoints[self.idx];
        let e = [wp[0] - avg[0], wp[1] - avg[1]];
        let along = axis_of(theta);
        let lateral = 1 - along;
        let along_ok = e[along].abs() <= self.params.verify_tol;
        let lateral_ok = e[lateral].abs() <= self.params.lateral_tol;
        if along_ok && lateral_ok {
            self.idx += 1;
            if self.idx == self.waypoints.len() {
                self.mode = Mode::Arrived;
            } else {
                self.mode = Mode::Drive;
                self.begin_leg();
            }
            return;
        }
        self.corrections += 1;
        self.gps_suspended = true;
        let axis = if along_ok { lateral } else { along };
        self.mode = Mode::Correct { axis, left: e[axis] };
    }

    fn correct(&mut self, tick: u64, est: &Pose, axis: usize, left: f64, loc: &mut Localizer) -> NavCommand {
        let cfg = self.params.controller;
        if left.abs() < 1e-9 {
            self.mode = Mode::Settle { since: tick, sum: [0.0; 2], n: 0 };
            return NavCommand::hold();
        }
        let theta = est.theta();
        // Face whichever direction along the axis needs the smaller turn.
        let base = if axis == 0 { 0.0 } else { FRAC_PI_2 };
        let forward = wrap(base - theta).abs() <= FRAC_PI_2;
        let facing = if forward { base } else { wrap(base + PI) };
        let heading_err = wrap(facing - theta);
        let omega = (cfg.k_theta * heading_err).clamp(-cfg.omega_max, cfg.omega_max);
        if heading_err.abs() > self.params.fine_heading_tol {
            // A pivot does not translate the robot; keep the verified position.
            loc.rebase(self.anchor, self.params.sigma_gps.powi(2));
            return NavCommand { cmd: WheelCommand::new(0.0, omega), remaining: 0.0 };
        }
        let sign = if forward { 1.0 } else { -1.0 };
        let v = (left * sign / self.params.dt).clamp(-self.params.fine_speed, self.params.fine_speed);
        NavCommand { cmd: WheelCommand::new(v, omega), remaining: left.abs() }
    }

    /// Reports the command actually executed this tick, after collision avoidance.
    pub fn on_applied(&mut self, cmd: WheelCommand, theta: f64) {
        if let Mode::Correct { axis, left } = self.mode {
            let (dx, dy, _) = arc_displacement(theta, cmd, self.params.dt);
            let moved = if axis == 0 { dx } else { dy };
            self.mode = Mode::Correct { axis, left: left - moved };
        }
    }
}
