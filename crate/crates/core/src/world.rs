//! Geometric primitives and the scenario document shared by every other module.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the world frame, meters.
pub type Point = [f64; 2];

/// Tolerance used when checking that target coordinates sit on the cell grid.
pub const GRID_SNAP_TOLERANCE: f64 = 1e-9;

/// Wraps `theta` into `[-π, π)`.
///
/// Values already inside the interval are returned bit-for-bit unchanged, which
/// makes the wrap idempotent.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::domain(format!("cannot wrap non-finite angle {theta}")));
    }
    Ok(wrap(theta))
}

/// Infallible wrap for values already known to be finite.
pub(crate) fn wrap(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let mut wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for inputs just below a multiple of 2π.
    if wrapped >= PI {
        wrapped -= 2.0 * PI;
    }
    if wrapped < -PI {
        wrapped = -PI;
    }
    wrapped
}

/// Robot configuration `(x, y, θ)` in the world frame. `θ` is kept wrapped into `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    theta: f64,
}

impl Pose {
    /// Builds a pose, wrapping `theta`. Non-finite components are rejected.
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::domain(format!("non-finite position ({x}, {y})")));
        }
        Ok(Pose {
            x,
            y,
            theta: wrap_angle(theta)?,
        })
    }

    pub(crate) fn from_parts(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap(theta),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn set_theta(&mut self, theta: f64) {
        self.theta = wrap(theta);
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        (self.x - p[0]).hypot(self.y - p[1])
    }
}

impl From<Pose> for [f64; 3] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.theta]
    }
}

impl TryFrom<[f64; 3]> for Pose {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Pose::new(v[0], v[1], v[2])
    }
}

/// Mean of a set of points; the center used for center-out ordering.
pub fn shape_centroid(cells: &[Point]) -> Result<Point> {
    if cells.is_empty() {
        return Err(Error::domain("centroid of an empty shape"));
    }
    let n = cells.len() as f64;
    let (sx, sy) = cells
        .iter()
        .fold((0.0, 0.0), |(sx, sy), c| (sx + c[0], sy + c[1]));
    Ok([sx / n, sy / n])
}

/// The set of grid cells a swarm must occupy.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetShape {
    cells: Vec<Point>,
    cell_size: f64,
    centroid: Option<Point>,
}

impl TargetShape {
    /// Validates grid snapping and distinctness; keeps the caller's cell order.
    pub fn new(cells: Vec<Point>, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::domain(format!("cell size must be positive, got {cell_size}")));
        }
        for (i, c) in cells.iter().enumerate() {
            for (axis, v) in c.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::domain(format!("cell {i} has a non-finite coordinate")));
                }
                let snapped = (v / cell_size).round() * cell_size;
                if (v - snapped).abs() > GRID_SNAP_TOLERANCE {
                    let name = if axis == 0 { "x" } else { "y" };
                    return Err(Error::domain(format!(
                        "cell {i} {name} = {v} is not a multiple of the cell size {cell_size}"
                    )));
                }
            }
        }
        let mut keys: Vec<(i64, i64, usize)> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (grid_index(c[0], cell_size), grid_index(c[1], cell_size), i))
            .collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::domain(format!("cells {} and {} coincide", w[0].2, w[1].2)));
        }
        let centroid = shape_centroid(&cells).ok();
        Ok(TargetShape {
            cells,
            cell_size,
            centroid,
        })
    }

    pub fn cells(&self) -> &[Point] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn centroid(&self) -> Result<Point> {
        self.centroid
            .ok_or_else(|| Error::domain("centroid of an empty shape"))
    }

    /// True when `p` lies on the grid (within [`GRID_SNAP_TOLERANCE`] per axis).
    pub fn is_snapped(&self, p: Point) -> bool {
        p.iter().all(|v| {
            let snapped = (v / self.cell_size).round() * self.cell_size;
            (v - snapped).abs() <= 1e-6
        })
    }
}

fn grid_index(v: f64, cell_size: f64) -> i64 {
    (v / cell_size).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Complementary,
    Ekf,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complementary" => Ok(EstimatorKind::Complementary),
            "ekf" => Ok(EstimatorKind::Ekf),
            other => Err(Error::domain(format!(
                "unknown estimator `{other}` (expected complementary or ekf)"
            ))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Complementary => "complementary",
            EstimatorKind::Ekf => "ekf",
        })
    }
}

/// Platform limits and controller gains. Defaults are the TurtleBot3 Burger values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    pub v_max: f64,
    pub omega_max: f64,
    pub wheel_radius: f64,
    pub wheelbase: f64,
    pub body_radius: f64,
    /// Heading error above which the controller turns in place, radians.
    pub heading_tol: f64,
    /// Approach gain, 1/s.
    pub k_v: f64,
    /// Heading gain, 1/s.
    pub k_theta: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            v_max: 0.22,
            omega_max: 2.84,
            wheel_radius: 0.033,
            wheelbase: 0.16,
            body_radius: 0.09,
            heading_tol: 0.05,
            k_v: 1.0,
            k_theta: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingParams {
    pub sigma_gps: f64,
    pub alpha: f64,
    /// Odometry variance growth per meter traveled, m²/m.
    pub k1: f64,
    /// Odometry variance growth per radian turned, m²/rad.
    pub k2: f64,
    /// A GPS fix is produced every this many ticks.
    pub gps_every_ticks: u32,
}

impl Default for SensingParams {
    fn default() -> Self {
        SensingParams {
            sigma_gps: 0.05,
            alpha: 0.7,
            k1: 0.01,
            k2: 0.005,
            gps_every_ticks: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommsParams {
    pub r_comm_local: f64,
    pub loss_probability: f64,
}

impl Default for CommsParams {
    fn default() -> Self {
        CommsParams {
            r_comm_local: 0.2,
            loss_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub cell_size: f64,
    pub k_row_size: usize,
    pub epsilon_pos: f64,
    pub start_offset: f64,
    pub delay_base: f64,
    pub delay_step: f64,
    pub reverify_period: f64,
    /// Velocity-obstacle look-ahead, seconds.
    pub vo_horizon: f64,
    /// Clearance added to the summed body radii when building velocity obstacles, meters.
    pub vo_margin: f64,
    /// Time a robot holds still at a goal to average GPS fixes, seconds.
    pub settle_time: f64,
    /// Largest averaged error along the direction of travel accepted at a goal, meters.
    pub verify_tol: f64,
    /// Largest averaged error across the direction of travel accepted at a goal, meters.
    pub lateral_tol: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            cell_size: 0.25,
            k_row_size: 6,
            epsilon_pos: 0.05,
            start_offset: 0.25,
            delay_base: 1.0,
            delay_step: 3.0,
            reverify_period: 1.0,
            vo_horizon: 5.0,
            vo_margin: 0.01,
            settle_time: 3.0,
            verify_tol: 0.02,
            lateral_tol: 0.035,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    pub seed: u64,
    pub max_ticks: u64,
    pub estimator: EstimatorKind,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 0.05,
            seed: 1,
            max_ticks: 20_000,
            estimator: EstimatorKind::Complementary,
        }
    }
}

/// A complete, validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub robot: RobotParams,
    #[serde(default)]
    pub sensing: SensingParams,
    #[serde(default)]
    pub comms: CommsParams,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub sim: SimParams,
    pub initial_poses: Vec<Pose>,
    pub targets: Vec<Point>,
}

impl ScenarioConfig {
    pub fn robot_count(&self) -> usize {
        self.initial_poses.len()
    }

    pub fn shape(&self) -> Result<TargetShape> {
        TargetShape::new(self.targets.clone(), self.protocol.cell_size)
    }

    /// Checks every invariant; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        fn positive(path: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be > 0, got {v}")))
            }
        }
        fn non_negative(path: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be >= 0, got {v}")))
            }
        }

        let r = &self.robot;
        positive("robot.v_max", r.v_max)?;
        positive("robot.omega_max", r.omega_max)?;
        positive("robot.wheel_radius", r.wheel_radius)?;
        positive("robot.wheelbase", r.wheelbase)?;
        positive("robot.body_radius", r.body_radius)?;
        positive("robot.heading_tol", r.heading_tol)?;
        positive("robot.k_v", r.k_v)?;
        positive("robot.k_theta", r.k_theta)?;

        let s = &self.sensing;
        non_negative("sensing.sigma_gps", s.sigma_gps)?;
        if !(0.0..=1.0).contains(&s.alpha) {
            return Err(Error::config("sensing.alpha", format!("must lie in [0, 1], got {}", s.alpha)));
        }
        non_negative("sensing.k1", s.k1)?;
        non_negative("sensing.k2", s.k2)?;
        if s.gps_every_ticks == 0 {
            return Err(Error::config("sensing.gps_every_ticks", "must be >= 1"));
        }

        let c = &self.comms;
        non_negative("comms.r_comm_local", c.r_comm_local)?;
        if !(0.0..1.0).contains(&c.loss_probability) {
            return Err(Error::config(
                "comms.loss_probability",
                format!("must lie in [0, 1), got {}", c.loss_probability),
            ));
        }

        let p = &self.protocol;
        positive("protocol.cell_size", p.cell_size)?;
        if p.k_row_size == 0 {
            return Err(Error::config("protocol.k_row_size", "must be >= 1"));
        }
        positive("protocol.epsilon_pos", p.epsilon_pos)?;
        non_negative("protocol.start_offset", p.start_offset)?;
        non_negative("protocol.delay_base", p.delay_base)?;
        non_negative("protocol.delay_step", p.delay_step)?;
        positive("protocol.reverify_period", p.reverify_period)?;
        positive("protocol.vo_horizon", p.vo_horizon)?;
        non_negative("protocol.vo_margin", p.vo_margin)?;
        non_negative("protocol.settle_time", p.settle_time)?;
        positive("protocol.verify_tol", p.verify_tol)?;
        positive("protocol.lateral_tol", p.lateral_tol)?;

        positive("sim.dt", self.sim.dt)?;
        if self.sim.max_ticks == 0 {
            return Err(Error::config("sim.max_ticks", "must be >= 1"));
        }

        if self.initial_poses.len() != self.targets.len() {
            return Err(Error::config(
                "initial_poses",
                format!(
                    "robot/cell mismatch: {} robots but {} target cells",
                    self.initial_poses.len(),
                    self.targets.len()
                ),
            ));
        }
        self.shape()
            .map_err(|e| Error::config("targets", e.to_string()))?;
        Ok(())
    }

    /// Serializes the resolved config, every default spelled out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config is always serializable")
    }
}

/// Parses and validates a scenario document. Missing optional fields take their defaults.
pub fn load_scenario(text: &str) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}
