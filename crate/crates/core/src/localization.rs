//! GPS sensing and the two pose estimators: a complementary filter and a pose-only EKF.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locomotion::{arc_displacement, odometry_step, OdometryState, WheelCommand};
use crate::world::{wrap, EstimatorKind, Point, Pose};

/// One absolute position reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub x: f64,
    pub y: f64,
    pub timestamp: f64,
}

impl GpsFix {
    pub fn position(&self) -> Point {
        [self.x, self.y]
    }
}

/// True position plus independent Gaussian noise on each axis.
pub fn sample_gps<R: Rng + ?Sized>(true_pos: Point, sigma_gps: f64, timestamp: f64, rng: &mut R) -> GpsFix {
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    GpsFix {
        x: true_pos[0] + sigma_gps * nx,
        y: true_pos[1] + sigma_gps * ny,
        timestamp,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Componentwise `α·gps + (1−α)·odom`; without a fix the odometry passes through.
pub fn complementary_fuse(odom: Point, gps: Option<Point>, alpha: f64) -> Result<Point> {
    check_alpha(alpha)?;
    Ok(match gps {
        None => odom,
        Some(g) => [
            alpha * g[0] + (1.0 - alpha) * odom[0],
            alpha * g[1] + (1.0 - alpha) * odom[1],
        ],
    })
}

/// Dead reckoning corrected by complementary fusion of GPS fixes.
///
/// After each fusion the odometry origin moves to the fused position, so drift is
/// bounded by the fix rate rather than accumulating for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryFilter {
    odom: OdometryState,
    alpha: f64,
    last_gps: Option<GpsFix>,
}

impl ComplementaryFilter {
    pub fn new(initial: Pose, alpha: f64, k1: f64, k2: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(ComplementaryFilter {
            odom: OdometryState::new(initial, k1, k2),
            alpha,
            last_gps: None,
        })
    }

    pub fn estimate(&self) -> Pose {
        self.odom.pose
    }

    pub fn last_gps(&self) -> Option<GpsFix> {
        self.last_gps
    }

    pub fn odometry(&self) -> &OdometryState {
        &self.odom
    }

    pub fn on_encoders(&mut self, dphi_r: f64, dphi_l: f64, wheel_radius: f64, wheelbase: f64) {
        self.odom = odometry_step(&self.odom, dphi_r, dphi_l, wheel_radius, wheelbase);
    }

    pub fn on_gps(&mut self, fix: GpsFix) {
        let fused = complementary_fuse(self.odom.pose.position(), Some(fix.position()), self.alpha)
            .expect("alpha validated at construction");
        self.odom.pose.x = fused[0];
        self.odom.pose.y = fused[1];
        self.last_gps = Some(fix);
    }

    /// Replaces the position estimate, keeping the heading.
    pub fn rebase(&mut self, position: Point) {
        self.odom.pose.x = position[0];
        self.odom.pose.y = position[1];
    }
}

/// Gaussian belief over `[x, y, θ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub mu: Vector3<f64>,
    pub sigma: Matrix3<f64>,
}

impl EkfState {
    pub fn new(pose: Pose, sigma: Matrix3<f64>) -> Self {
        EkfState {
            mu: Vector3::new(pose.x, pose.y, pose.theta()),
            sigma,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::from_parts(self.mu[0], self.mu[1], self.mu[2])
    }
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Jacobian of the exact-arc motion model with respect to the state.
pub fn motion_jacobian(theta: f64, cmd: WheelCommand, dt: f64) -> Matrix3<f64> {
    let (dx, dy, _) = arc_displacement(theta, cmd, dt);
    Matrix3::new(1.0, 0.0, -dy, 0.0, 1.0, dx, 0.0, 0.0, 1.0)
}

/// Prediction through the exact-arc motion model, `Σ ← GΣGᵀ + R`.
pub fn ekf_predict(state: &EkfState, cmd: WheelCommand, dt: f64, r_t: &Matrix3<f64>) -> Result<EkfState> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    let theta = state.mu[2];
    let (dx, dy, dth) = arc_displacement(theta, cmd, dt);
    let g = motion_jacobian(theta, cmd, dt);
    let mu = Vector3::new(state.mu[0] + dx, state.mu[1] + dy, wrap(theta + dth));
    let sigma = symmetrize(&(g * state.sigma * g.transpose() + r_t));
    Ok(EkfState { mu, sigma })
}

/// Position-only measurement update in Joseph form.
pub fn ekf_update(state: &EkfState, z: &GpsFix, q_t: &Matrix2<f64>) -> Result<EkfState> {
    let h = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let s = h * state.sigma * h.transpose() + q_t;
    let s_inv = s
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;
    let k = state.sigma * h.transpose() * s_inv;
    let innovation = Vector2::new(z.x - state.mu[0], z.y - state.mu[1]);
    let mut mu = state.mu + k * innovation;
    mu[2] = wrap(mu[2]);
    let i_kh = Matrix3::identity() - k * h;
    let sigma = symmetrize(&(i_kh * state.sigma * i_kh.transpose() + k * q_t * k.transpose()));
    Ok(EkfState { mu, sigma })
}

/// Per-tick process noise tied to the odometry slip model.
///
/// Slip acts on the traveled distance only, so its variance lands on both position
/// axes and the heading row stays noise free.
pub fn odometry_process_noise(ds: f64, dtheta: f64, k1: f64, k2: f64) -> Matrix3<f64> {
    let q = k1 * ds.abs() + k2 * dtheta.abs();
    Matrix3::from_diagonal(&Vector3::new(q, q, 0.0))
}

/// EKF driven by wheel odometry and corrected by GPS.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEkf {
    state: EkfState,
    q_t: Matrix2<f64>,
    k1: f64,
    k2: f64,
    last_gps: Option<GpsFix>,
}

impl PoseEkf {
    pub fn new(initial: Pose, sigma_gps: f64, k1: f64, k2: f64) -> Self {
        PoseEkf {
            state: EkfState::new(initial, Matrix3::zeros()),
            q_t: Matrix2::identity() * sigma_gps * sigma_gps,
            k1,
            k2,
            last_gps: None,
        }
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    pub fn estimate(&self) -> Pose {
        self.state.pose()
    }

    pub fn last_gps(&self) -> Option<GpsFix> {
        self.last_gps
    }

    pub fn on_encoders(&mut self, dphi_r: f64, dphi_l: f64, wheel_radius: f64, wheelbase: f64, dt: f64) {
        let ds = 0.5 * wheel_radius * (dphi_r + dphi_l);
        let dtheta = wheel_radius / wheelbase * (dphi_r - dphi_l);
        let cmd = WheelCommand::new(ds / dt, dtheta / dt);
        let r_t = odometry_process_noise(ds, dtheta, self.k1, self.k2);
        if let Ok(next) = ekf_predict(&self.state, cmd, dt, &r_t) {
            self.state = next;
        }
    }

    pub fn on_gps(&mut self, fix: GpsFix) -> Result<()> {
        self.state = ekf_update(&self.state, &fix, &self.q_t)?;
        self.last_gps = Some(fix);
        Ok(())
    }

    /// Replaces the position belief with `position` at the given per-axis variance.
    pub fn rebase(&mut self, position: Point, variance: f64) {
        self.state.mu[0] = position[0];
        self.state.mu[1] = position[1];
        for i in 0..3 {
            for j in 0..3 {
                if i < 2 || j < 2 {
                    self.state.sigma[(i, j)] = 0.0;
                }
            }
        }
        self.state.sigma[(0, 0)] = variance;
        self.state.sigma[(1, 1)] = variance;
    }
}

/// Either estimator behind one interface, as selected by the scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Complementary(ComplementaryFilter),
    Ekf(PoseEkf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    pub alpha: f64,
    pub sigma_gps: f64,
    pub k1: f64,
    pub k2: f64,
    pub wheel_radius: f64,
    pub wheelbase: f64,
    pub dt: f64,
}

/// Estimator plus the geometry it needs to interpret encoder readings.
#[derive(Debug, Clone, PartialEq)]
pub struct Localizer {
    pub params: EstimatorParams,
    pub estimator: Estimator,
}

impl Localizer {
    pub fn new(kind: EstimatorKind, initial: Pose, params: EstimatorParams) -> Result<Self> {
        let estimator = match kind {
            EstimatorKind::Complementary => Estimator::Complementary(ComplementaryFilter::new(
                initial,
                params.alpha,
                params.k1,
                params.k2,
            )?),
            EstimatorKind::Ekf => Estimator::Ekf(PoseEkf::new(initial, params.sigma_gps, params.k1, params.k2)),
        };
        Ok(Localizer { params, estimator })
    }

    pub fn estimate(&self) -> Pose {
        match &self.estimator {
            Estimator::Complementary(f) => f.estimate(),
            Estimator::Ekf(f) => f.estimate(),
        }
    }

    pub fn on_encoders(&mut self, dphi_r: f64, dphi_l: f64) {
        let p = self.params;
        match &mut self.estimator {
            Estimator::Complementary(f) => f.on_encoders(dphi_r, dphi_l, p.wheel_radius, p.wheelbase),
            Estimator::Ekf(f) => f.on_encoders(dphi_r, dphi_l, p.wheel_radius, p.wheelbase, p.dt),
        }
    }

    pub fn on_gps(&mut self, fix: GpsFix) -> Result<()> {
        match &mut self.estimator {
            Estimator::Complementary(f) => {
                f.on_gps(fix);
                Ok(())
            }
            Estimator::Ekf(f) => f.on_gps(fix),
        }
    }

    pub fn rebase(&mut self, position: Point, variance: f64) {
        match &mut self.estimator {
            Estimator::Complementary(f) => f.rebase(position),
            Estimator::Ekf(f) => f.rebase(position, variance),
        }
    }
}
