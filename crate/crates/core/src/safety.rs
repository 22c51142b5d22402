//! Velocity obstacles, PD formation control and discrete-time consensus.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::network::CommGraph;
use crate::world::wrap;

pub type Vec2 = [f64; 2];

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Set of velocities that bring robot `i` within `combined_radius` of obstacle `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityObstacle {
    /// `p_j − p_i`.
    pub apex: Vec2,
    pub combined_radius: f64,
    pub obstacle_velocity: Vec2,
}

impl VelocityObstacle {
    pub fn new(apex: Vec2, combined_radius: f64, obstacle_velocity: Vec2) -> Result<Self> {
        if !(combined_radius > 0.0) {
            return Err(Error::domain(format!("combined radius must be positive, got {combined_radius}")));
        }
        Ok(VelocityObstacle { apex, combined_radius, obstacle_velocity })
    }
}

/// Whether moving at `v` reaches the obstacle disk at some `t ∈ (0, tau]`.
///
/// The relative offset is `a + t·w` with `w = v_j − v`; its squared length is a
/// quadratic in `t` whose minimizer is clamped to the horizon.
pub fn in_velocity_obstacle(v: Vec2, vo: &VelocityObstacle, tau: f64) -> bool {
    let a = vo.apex;
    let r2 = vo.combined_radius * vo.combined_radius;
    let w = [vo.obstacle_velocity[0] - v[0], vo.obstacle_velocity[1] - v[1]];
    let ww = dot(w, w);
    let aa = dot(a, a);
    if ww == 0.0 {
        return aa <= r2;
    }
    let t_star = -dot(a, w) / ww;
    if t_star <= 0.0 {
        // Separating for every t > 0; the infimum |a|² is approached but not attained.
        return aa < r2;
    }
    let t = t_star.min(tau);
    let p = [a[0] + t * w[0], a[1] + t * w[1]];
    dot(p, p) <= r2
}

pub const VO_HEADINGS: usize = 36;
pub const VO_SPEEDS: usize = 8;

/// Candidate velocities in selection order: `v_pref`, zero, then the polar grid.
pub fn velocity_candidates(v_pref: Vec2, v_max: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(2 + VO_HEADINGS * VO_SPEEDS);
    out.push(v_pref);
    out.push([0.0, 0.0]);
    for h in 0..VO_HEADINGS {
        let angle = TAU * h as f64 / VO_HEADINGS as f64;
        let (s, c) = angle.sin_cos();
        for k in 1..=VO_SPEEDS {
            let speed = v_max * k as f64 / VO_SPEEDS as f64;
            out.push([speed * c, speed * s]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityChoice {
    pub velocity: Vec2,
    /// Every candidate was inside some obstacle; `velocity` is zero.
    pub blocked: bool,
}

/// Free candidate closest to `v_pref`; earlier candidates win ties.
pub fn select_velocity(v_pref: Vec2, obstacles: &[VelocityObstacle], v_max: f64, tau: f64) -> VelocityChoice {
    let free = |v: Vec2| obstacles.iter().all(|o| !in_velocity_obstacle(v, o, tau));
    if free(v_pref) {
        return VelocityChoice { velocity: v_pref, blocked: false };
    }
    let mut best: Option<(f64, Vec2)> = None;
    for c in velocity_candidates(v_pref, v_max).into_iter().skip(1) {
        let d = norm([c[0] - v_pref[0], c[1] - v_pref[1]]);
        if best.is_some_and(|(bd, _)| d >= bd) {
            continue;
        }
        if free(c) {
            best = Some((d, c));
        }
    }
    match best {
        Some((_, velocity)) => VelocityChoice { velocity, blocked: false },
        None => VelocityChoice { velocity: [0.0, 0.0], blocked: true },
    }
}

/// Gains of an overdamped PD law, `K_p > 0` and `K_d > 2√K_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    kp: f64,
    kd: f64,
}

impl PdGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self> {
        if !(kp > 0.0) || !(kd > 2.0 * kp.sqrt()) {
            return Err(Error::domain(format!(
                "PD gains need K_p > 0 and K_d > 2·sqrt(K_p), got K_p = {kp}, K_d = {kd}"
            )));
        }
        Ok(PdGains { kp, kd })
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn kd(&self) -> f64 {
        self.kd
    }
}

/// `u = −K_p (q − q_d) − K_d q̇` on `[x, y, θ]`, with a wrapped heading difference.
pub fn pd_control(q: [f64; 3], q_dot: [f64; 3], q_d: [f64; 3], gains: PdGains) -> [f64; 3] {
    let e = [q[0] - q_d[0], q[1] - q_d[1], wrap(q[2] - q_d[2])];
    std::array::from_fn(|i| -gains.kp * e[i] - gains.kd * q_dot[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusStep {
    pub values: Vec<f64>,
    /// The step size is at least `1/d_max`, outside the convergence condition.
    pub unstable_step: bool,
}

/// One synchronous update `x_i ← x_i + ε·Σ_{j∈N_i}(x_j − x_i)`.
pub fn consensus_step(values: &[f64], graph: &CommGraph, epsilon_step: f64) -> Result<ConsensusStep> {
    if !(epsilon_step > 0.0) {
        return Err(Error::domain(format!("consensus step must be positive, got {epsilon_step}")));
    }
    if graph.len() != values.len() {
        return Err(Error::domain("graph and value vector differ in size"));
    }
    let d_max = graph.max_degree();
    let unstable_step = d_max > 0 && epsilon_step >= 1.0 / d_max as f64;
    let next = values
        .iter()
        .enumerate()
        .map(|(i, &x)| x + epsilon_step * graph.neighbors(i).iter().map(|&j| values[j] - x).sum::<f64>())
        .collect();
    Ok(ConsensusStep { values: next, unstable_step })
}
