//! Fixed-timestep simulation: sense, communicate, decide, actuate, integrate.
//!
//! Each tick runs the same sub-phases for every robot in ascending id order:
//!
//! 1. deliver messages sent on the previous tick
//! 2. sample encoders (last tick's command) and GPS (on schedule)
//! 3. update estimators
//! 4. step protocol agents and broadcast their messages
//! 5. compute navigation commands and filter them through velocity obstacles
//! 6. saturate and integrate true poses
//! 7. detect collisions
//! 8. emit trace events
//!
//! Per-robot work inside a sub-phase touches only that robot, so it may run in
//! parallel without changing a single bit of the result. Message sends, which
//! draw from the sender's comms stream and append to a shared queue, stay
//! sequential.

pub mod nav;
pub mod rng;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localization::{sample_gps, EstimatorParams, GpsFix, Localizer};
use crate::locomotion::{integrate_pose, saturate, simulate_encoders, ControllerConfig, EncoderModel, WheelCommand};
use crate::network::{Channel, Network};
use crate::par::Execution;
use crate::protocol::{Agent, AgentInput, Inbound, NavGoal, Phase, Plan, ProtocolMessage};
use crate::safety::{in_velocity_obstacle, select_velocity, VelocityObstacle};
use crate::world::{Point, Pose, ScenarioConfig};

use nav::{NavCommand, NavParams, Navigator};
use rng::{stream, Subsystem};
use trace::{event_line, header_line, Digest, NullSink, PhaseTransition, TraceEvent, TraceHeader, TraceSink};

/// Robots farther apart than this are ignored by velocity-obstacle filtering.
const VO_RANGE: f64 = 1.0;
/// Speed of the short metered correction moves, m/s.
const FINE_SPEED: f64 = 0.05;
/// Heading accuracy required before a correction move, radians.
const FINE_HEADING_TOL: f64 = 1e-3;

/// Pairs `(i, j)`, `i < j`, whose centers are closer than `2·body_radius`.
pub fn detect_collisions(positions: &[Point], body_radius: f64) -> Vec<(usize, usize)> {
    let limit = 2.0 * body_radius;
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = (positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]);
            if d < limit {
                out.push((i, j));
            }
        }
    }
    out
}

/// State of one simulated robot.
#[derive(Debug, Clone)]
pub struct RobotSim {
    pub id: usize,
    pub true_pose: Pose,
    pub localizer: Localizer,
    pub agent: Agent,
    pub nav: Navigator,
    pub distance: f64,
    last_cmd: WheelCommand,
    goal: Option<NavGoal>,
    gps_rng: ChaCha8Rng,
    enc_rng: ChaCha8Rng,
    comms_rng: ChaCha8Rng,
    inbox: Vec<Inbound>,
    outbox: Vec<String>,
    nav_cmd: NavCommand,
}

/// Read-only per-run constants shared by the per-robot sub-phases.
#[derive(Debug, Clone)]
struct Context {
    dt: f64,
    encoders: EncoderModel,
    sigma_gps: f64,
    gps_every: u64,
    body_radius: f64,
    v_max: f64,
    omega_max: f64,
    vo_margin: f64,
    vo_horizon: f64,
    axis_tol: f64,
    plan: Arc<Plan>,
}

impl RobotSim {
    fn sense_decide(&mut self, tick: u64, ctx: &Context) -> Result<()> {
        let mut fix: Option<GpsFix> = None;
        if tick > 0 {
            let (r, l) = simulate_encoders(self.last_cmd, ctx.dt, &ctx.encoders, &mut self.enc_rng);
            self.localizer.on_encoders(r, l);
            if tick.is_multiple_of(ctx.gps_every) {
                fix = Some(sample_gps(self.true_pose.position(), ctx.sigma_gps, tick as f64 * ctx.dt, &mut self.gps_rng));
            }
        }
        if let Some(f) = fix {
            if !self.nav.gps_suspended() {
                self.localizer.on_gps(f)?;
            }
        }
        let est = self.localizer.estimate();
        let out = self.agent.step(AgentInput {
            tick,
            est,
            inbox: &self.inbox,
            nav_arrived: self.nav.arrived(),
        });
        self.outbox = out.messages.iter().map(ProtocolMessage::to_string).collect();
        if out.goal != self.goal {
            self.goal = out.goal;
            match out.goal {
                Some(NavGoal::Staging) => self.nav.start(self.staging_route(ctx)),
                Some(NavGoal::Target) => self.nav.start(vec![ctx.plan.assignments[self.id].target]),
                None => self.nav.stop(),
            }
        }
        let est = self.localizer.estimate();
        self.nav_cmd = self.nav.step(tick, &est, fix.as_ref(), &mut self.localizer);
        Ok(())
    }

    /// Up to the lane at the current abscissa, then along the lane to the staging slot.
    fn staging_route(&self, ctx: &Context) -> Vec<Point> {
        let from = self.nav.anchor();
        let stage = ctx.plan.staging_point(self.id);
        let corner = [from[0], stage[1]];
        let degenerate = (corner[1] - from[1]).abs() <= ctx.axis_tol || (corner[0] - stage[0]).abs() <= ctx.axis_tol;
        if degenerate {
            vec![stage]
        } else {
            vec![corner, stage]
        }
    }

    fn velocity(&self) -> [f64; 2] {
        let th = self.true_pose.theta();
        [self.last_cmd.v * th.cos(), self.last_cmd.v * th.sin()]
    }
}

/// Filters a unicycle command through velocity obstacles.
///
/// The preferred velocity is the command's forward speed along the current
/// heading. Lower-id neighbors move with last tick's velocity, higher ids are
/// treated as static. A deflected choice is projected back onto the heading,
/// since the robot cannot translate sideways; a projection that reverses the
/// motion or still collides becomes a stop. The turn rate is kept.
fn avoid(me: usize, snap: &[(Point, [f64; 2])], theta: f64, nc: NavCommand, ctx: &Context) -> WheelCommand {
    let cmd = nc.cmd;
    if cmd.v == 0.0 {
        return cmd;
    }
    let heading = [theta.cos(), theta.sin()];
    let v_pref = [cmd.v * heading[0], cmd.v * heading[1]];
    let p = snap[me].0;
    let radius = 2.0 * ctx.body_radius + ctx.vo_margin;
    let mut obstacles = Vec::new();
    for (j, &(q, vel)) in snap.iter().enumerate() {
        if j == me {
            continue;
        }
        let apex = [q[0] - p[0], q[1] - p[1]];
        let d = apex[0].hypot(apex[1]);
        if d > VO_RANGE || d == 0.0 {
            continue;
        }
        // Already inside the disk: shrink it so only closing velocities are excluded.
        let r = if d <= radius { 0.99 * d } else { radius };
        let v_j = if j < me { vel } else { [0.0, 0.0] };
        if let Ok(vo) = VelocityObstacle::new(apex, r, v_j) {
            obstacles.push(vo);
        }
    }
    if obstacles.is_empty() {
        return cmd;
    }
    let tau = ctx.vo_horizon.min(nc.remaining / cmd.v.abs()).max(ctx.dt);
    let choice = select_velocity(v_pref, &obstacles, ctx.v_max, tau);
    if choice.velocity == v_pref {
        return cmd;
    }
    let along = choice.velocity[0] * heading[0] + choice.velocity[1] * heading[1];
    let v = if along * cmd.v <= 0.0 { 0.0 } else { along };
    let projected = [v * heading[0], v * heading[1]];
    let v = if v != 0.0 && obstacles.iter().any(|o| in_velocity_obstacle(projected, o, tau)) {
        0.0
    } else {
        v
    };
    WheelCommand::new(v, cmd.omega)
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub loss_probability: f64,
    pub completion_tick: Option<u64>,
    pub collisions: u64,
    pub messages_sent: u64,
    pub messages_lost: u64,
    pub max_terminal_error_m: f64,
    pub timeout_flag: bool,
    /// Empty unless the run failed outright.
    pub error: String,
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub loss_probability: f64,
    /// Ticks executed.
    pub ticks: u64,
    /// First tick at which every robot was done.
    pub completion_tick: Option<u64>,
    pub timeout: bool,
    /// Collision onsets: a pair counts once per contiguous overlap.
    pub collisions: u64,
    pub messages_sent: u64,
    pub messages_lost: u64,
    pub messages_by_kind: BTreeMap<String, u64>,
    pub malformed_messages: u64,
    pub claim_conflicts: u64,
    /// Waypoint re-approaches after a failed settle check, over all robots.
    pub corrections: u64,
    pub terminal_errors: Vec<f64>,
    pub max_terminal_error: f64,
    pub distances: Vec<f64>,
    pub digest: u64,
    pub transitions: Vec<PhaseTransition>,
    #[serde(skip)]
    pub plan: Arc<Plan>,
}

impl RunReport {
    pub fn metrics(&self) -> MetricsRow {
        MetricsRow {
            seed: self.seed,
            loss_probability: self.loss_probability,
            completion_tick: self.completion_tick,
            collisions: self.collisions,
            messages_sent: self.messages_sent,
            messages_lost: self.messages_lost,
            max_terminal_error_m: self.max_terminal_error,
            timeout_flag: self.timeout,
            error: String::new(),
        }
    }

    pub fn timeline(&self) -> trace::Timeline {
        trace::Timeline::new(&self.plan, &self.transitions)
    }

    pub fn total_distance(&self) -> f64 {
        self.distances.iter().sum()
    }
}

/// The whole simulated world.
pub struct Simulation {
    config: ScenarioConfig,
    ctx: Context,
    robots: Vec<RobotSim>,
    network: Network<String>,
    tick: u64,
    exec: Execution,
    touching: BTreeSet<(usize, usize)>,
    collisions: u64,
    transitions: Vec<PhaseTransition>,
    messages_by_kind: BTreeMap<String, u64>,
    completion_tick: Option<u64>,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let shape = Arc::new(config.shape()?);
        let p = &config.protocol;
        let plan = Arc::new(Plan::new(&shape, &config.initial_poses, p.k_row_size, p.start_offset, p.epsilon_pos)?);
        let dt = config.sim.dt;
        let seed = config.sim.seed;
        let est_params = EstimatorParams {
            alpha: config.sensing.alpha,
            sigma_gps: config.sensing.sigma_gps,
            k1: config.sensing.k1,
            k2: config.sensing.k2,
            wheel_radius: config.robot.wheel_radius,
            wheelbase: config.robot.wheelbase,
            dt,
        };
        let controller = ControllerConfig {
            v_max: config.robot.v_max,
            omega_max: config.robot.omega_max,
            axis_tol: p.epsilon_pos,
            heading_tol: config.robot.heading_tol,
            k_v: config.robot.k_v,
            k_theta: config.robot.k_theta,
            ..ControllerConfig::default()
        };
        let nav_params = NavParams {
            controller,
            settle_ticks: (p.settle_time / dt).round() as u64,
            verify_tol: p.verify_tol,
            lateral_tol: p.lateral_tol,
            fine_speed: FINE_SPEED,
            fine_heading_tol: FINE_HEADING_TOL,
            sigma_gps: config.sensing.sigma_gps,
            dt,
        };
        let mut robots = Vec::with_capacity(config.robot_count());
        for (id, &pose) in config.initial_poses.iter().enumerate() {
            robots.push(RobotSim {
                id,
                true_pose: pose,
                localizer: Localizer::new(config.sim.estimator, pose, est_params)?,
                agent: Agent::new(id, plan.clone(), shape.clone(), p.clone(), dt),
                nav: Navigator::new(nav_params, pose.position()),
                distance: 0.0,
                last_cmd: WheelCommand::ZERO,
                goal: None,
                gps_rng: stream(seed, id, Subsystem::Gps),
                enc_rng: stream(seed, id, Subsystem::Encoders),
                comms_rng: stream(seed, id, Subsystem::Comms),
                inbox: Vec::new(),
                outbox: Vec::new(),
                nav_cmd: NavCommand { cmd: WheelCommand::ZERO, remaining: 0.0 },
            });
        }
        let ctx = Context {
            dt,
            encoders: EncoderModel {
                wheel_radius: config.robot.wheel_radius,
                wheelbase: config.robot.wheelbase,
                k1: config.sensing.k1,
                k2: config.sensing.k2,
            },
            sigma_gps: config.sensing.sigma_gps,
            gps_every: u64::from(config.sensing.gps_every_ticks),
            body_radius: config.robot.body_radius,
            v_max: config.robot.v_max,
            omega_max: config.robot.omega_max,
            vo_margin: p.vo_margin,
            vo_horizon: p.vo_horizon,
            axis_tol: p.epsilon_pos,
            plan,
        };
        let network = Network::new(robots.len(), config.comms.r_comm_local, config.comms.loss_probability);
        Ok(Simulation {
            config,
            ctx,
            robots,
            network,
            tick: 0,
            exec: Execution::default(),
            touching: BTreeSet::new(),
            collisions: 0,
            transitions: Vec::new(),
            messages_by_kind: BTreeMap::new(),
            completion_tick: None,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Simulated time, seconds.
    pub fn clock(&self) -> f64 {
        self.tick as f64 * self.ctx.dt
    }

    pub fn robots(&self) -> &[RobotSim] {
        &self.robots
    }

    pub fn plan(&self) -> &Arc<Plan> {
        &self.ctx.plan
    }

    pub fn is_complete(&self) -> bool {
        self.completion_tick.is_some()
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            seed: self.config.sim.seed,
            config: self.config.clone(),
            plan: (*self.ctx.plan).clone(),
        }
    }

    fn positions(&self) -> Vec<Point> {
        self.robots.iter().map(|r| r.true_pose.position()).collect()
    }

    /// Advances one tick and returns its trace events, ordered by robot id.
    pub fn step(&mut self) -> Result<Vec<TraceEvent>> {
        let tick = self.tick;
        let ctx = &self.ctx;

        for (robot, inbox) in self.robots.iter_mut().zip(self.network.deliver(tick)) {
            robot.inbox = inbox
                .into_iter()
                .map(|e| Inbound { sender: e.sender, sent_tick: e.sent_tick, wire: e.payload })
                .collect();
        }
        let phases_before: Vec<Phase> = self.robots.iter().map(|r| r.agent.phase()).collect();

        self.exec.try_for_each_mut(&mut self.robots, |r| r.sense_decide(tick, ctx))?;

        let positions = self.positions();
        for i in 0..self.robots.len() {
            let robot = &mut self.robots[i];
            for wire in &robot.outbox {
                let kind = wire.split('|').next().unwrap_or_default();
                *self.messages_by_kind.entry(kind.to_owned()).or_default() += 1;
                self.network.send(i, Channel::Global, wire.clone(), tick, &positions, &mut robot.comms_rng);
            }
        }

        let snap: Vec<(Point, [f64; 2])> = self.robots.iter().map(|r| (r.true_pose.position(), r.velocity())).collect();
        let ids: Vec<usize> = (0..self.robots.len()).collect();
        let robots = &self.robots;
        let cmds = self.exec.map(&ids, |&i| {
            let r = &robots[i];
            let cmd = avoid(i, &snap, r.true_pose.theta(), r.nav_cmd, ctx);
            saturate(cmd, ctx.v_max, ctx.omega_max)
        });
        for (r, cmd) in self.robots.iter_mut().zip(cmds) {
            r.last_cmd = cmd;
            let theta = r.localizer.estimate().theta();
            r.nav.on_applied(cmd, theta);
        }
        self.exec.try_for_each_mut(&mut self.robots, |r| {
            let next = integrate_pose(&r.true_pose, r.last_cmd, ctx.dt)?;
            r.distance += next.distance_to(r.true_pose.position());
            r.true_pose = next;
            Ok::<(), Error>(())
        })?;

        let pairs = detect_collisions(&self.positions(), ctx.body_radius);
        let now: BTreeSet<(usize, usize)> = pairs.iter().copied().collect();
        let onsets = now.difference(&self.touching).count() as u64;
        if onsets > 0 {
            log::warn!("tick {tick}: {onsets} new collision(s)");
        }
        self.collisions += onsets;
        self.touching = now;
        let mut partners: Vec<Vec<usize>> = vec![Vec::new(); self.robots.len()];
        for &(i, j) in &pairs {
            partners[i].push(j);
            partners[j].push(i);
        }

        let mut events = Vec::with_capacity(self.robots.len());
        for (r, collision) in self.robots.iter_mut().zip(partners) {
            let phase = r.agent.phase();
            if phase != phases_before[r.id] {
                self.transitions.push(PhaseTransition { tick, robot: r.id, from: phases_before[r.id], to: phase });
            }
            let t = r.true_pose;
            let e = r.localizer.estimate();
            events.push(TraceEvent {
                tick,
                robot: r.id,
                true_pose: [t.x, t.y, t.theta()],
                est: [e.x, e.y, e.theta()],
                phase,
                cmd: [r.last_cmd.v, r.last_cmd.omega],
                sent: std::mem::take(&mut r.outbox),
                recv: r.inbox.drain(..).map(|m| m.wire).collect(),
                collision,
            });
        }

        self.tick += 1;
        if self.completion_tick.is_none() && self.robots.iter().all(|r| r.agent.phase() == Phase::Done) {
            self.completion_tick = Some(self.tick);
        }
        Ok(events)
    }

    /// Steps until every robot is done or `max_ticks` is reached.
    pub fn run_with(mut self, sink: &mut dyn TraceSink) -> Result<RunReport> {
        let mut digest = Digest::default();
        let header = header_line(&self.header());
        digest.line(&header);
        sink.record(&header, None)?;
        while self.completion_tick.is_none() && self.tick < self.config.sim.max_ticks {
            for e in self.step()? {
                let line = event_line(&e);
                digest.line(&line);
                sink.record(&line, Some(&e))?;
            }
        }
        sink.finish()?;
        Ok(self.report(digest.value()))
    }

    pub fn run(self) -> Result<RunReport> {
        self.run_with(&mut NullSink)
    }

    fn report(self, digest: u64) -> RunReport {
        let plan = self.ctx.plan.clone();
        let terminal_errors: Vec<f64> = self
            .robots
            .iter()
            .map(|r| r.true_pose.distance_to(plan.assignments[r.id].target))
            .collect();
        let max_terminal_error = terminal_errors.iter().copied().fold(0.0, f64::max);
        let stats = self.network.stats();
        let timeout = self.completion_tick.is_none();
        if timeout {
            log::warn!("timed out after {} ticks", self.tick);
        } else {
            log::info!("completed at tick {}", self.tick);
        }
        RunReport {
            seed: self.config.sim.seed,
            loss_probability: self.config.comms.loss_probability,
            ticks: self.tick,
            completion_tick: self.completion_tick,
            timeout,
            collisions: self.collisions,
            messages_sent: stats.sent,
            messages_lost: stats.lost,
            messages_by_kind: self.messages_by_kind,
            malformed_messages: self.robots.iter().map(|r| r.agent.counters.malformed).sum(),
            claim_conflicts: self.robots.iter().map(|r| r.agent.counters.claim_conflicts).sum(),
            corrections: self.robots.iter().map(|r| r.nav.corrections).sum(),
            terminal_errors,
            max_terminal_error,
            distances: self.robots.iter().map(|r| r.distance).collect(),
            digest,
            transitions: self.transitions,
            plan,
        }
    }
}

/// Builds and runs a scenario without keeping a trace.
pub fn run(config: ScenarioConfig) -> Result<RunReport> {
    Simulation::new(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collision_boundary_is_strict() {
        assert_eq!(detect_collisions(&[[0.0, 0.0], [0.15, 0.0]], 0.1), vec![(0, 1)]);
        assert!(detect_collisions(&[[0.0, 0.0], [0.2, 0.0]], 0.1).is_empty());
        let grid: Vec<Point> = (0..16).map(|i| [0.25 * (i % 4) as f64, 0.25 * (i / 4) as f64]).collect();
        assert!(detect_collisions(&grid, 0.1).is_empty());
    }
}
