use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{cell_key, phase0_check, staggered_delay, Plan, ProtocolMessage};
use crate::world::{Pose, ProtocolParams, TargetShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Phase0Check,
    WaitRowUnlock,
    Phase1ToStart,
    StagedDelay,
    Phase2ToTarget,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Phase0Check => "Phase0Check",
            Phase::WaitRowUnlock => "WaitRowUnlock",
            Phase::Phase1ToStart => "Phase1ToStart",
            Phase::StagedDelay => "StagedDelay",
            Phase::Phase2ToTarget => "Phase2ToTarget",
            Phase::Done => "Done",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        [
            Phase::Phase0Check,
            Phase::WaitRowUnlock,
            Phase::Phase1ToStart,
            Phase::StagedDelay,
            Phase::Phase2ToTarget,
            Phase::Done,
        ]
        .into_iter()
        .find(|p| p.name() == s)
    }
}

/// Where the navigator should take the robot this tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NavGoal {
    Staging,
    Target,
}

/// A received wire record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inbound {
    pub sender: usize,
    pub sent_tick: u64,
    pub wire: String,
}

#[derive(Debug, Clone, Copy)]
pub struct AgentInput<'a> {
    pub tick: u64,
    pub est: Pose,
    pub inbox: &'a [Inbound],
    /// The navigator finished (and verified) the goal requested last tick.
    pub nav_arrived: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentOutput {
    pub messages: Vec<ProtocolMessage>,
    pub goal: Option<NavGoal>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolCounters {
    pub malformed: u64,
    pub claim_conflicts: u64,
}

/// Everything one robot knows about the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotProtocolState {
    pub phase: Phase,
    pub completed_robots: BTreeMap<u32, BTreeSet<String>>,
    pub can_my_row_move: bool,
    pub row_start_broadcast: bool,
    /// How many row-mates had staged before this robot did.
    pub arrival_order: Option<u32>,
    /// Release time, seconds.
    pub delay_deadline: Option<f64>,
    /// First staging tick heard for each robot.
    staged: BTreeMap<usize, u64>,
    /// Robots known to have reached their target.
    finished: BTreeSet<usize>,
    claims: BTreeMap<(i64, i64), usize>,
    occupied: BTreeMap<(i64, i64), usize>,
    heard_own_row_moving: bool,
    done_tick: Option<u64>,
    last_done_send: u64,
    last_claim_send: u64,
    row_moving_tick: Option<u64>,
    late_done: bool,
    deadline_tick: Option<u64>,
}

impl RobotProtocolState {
    fn new() -> Self {
        RobotProtocolState {
            phase: Phase::Phase0Check,
            completed_robots: BTreeMap::new(),
            can_my_row_move: false,
            row_start_broadcast: false,
            arrival_order: None,
            delay_deadline: None,
            staged: BTreeMap::new(),
            finished: BTreeSet::new(),
            claims: BTreeMap::new(),
            occupied: BTreeMap::new(),
            heard_own_row_moving: false,
            done_tick: None,
            last_done_send: 0,
            last_claim_send: 0,
            row_moving_tick: None,
            late_done: false,
            deadline_tick: None,
        }
    }

    pub fn completed(&self, row: u32) -> usize {
        self.completed_robots.get(&row).map_or(0, BTreeSet::len)
    }

    pub fn claim_holder(&self, cell: [f64; 2]) -> Option<usize> {
        self.claims.get(&cell_key(cell)).copied()
    }

    pub fn occupant(&self, cell: [f64; 2]) -> Option<usize> {
        self.occupied.get(&cell_key(cell)).copied()
    }
}

/// One robot's protocol state machine: `(state, inbox, clock) → (state, outbox)`.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    plan: Arc<Plan>,
    shape: Arc<TargetShape>,
    params: ProtocolParams,
    dt: f64,
    pub state: RobotProtocolState,
    pub counters: ProtocolCounters,
}

impl Agent {
    pub fn new(id: usize, plan: Arc<Plan>, shape: Arc<TargetShape>, params: ProtocolParams, dt: f64) -> Self {
        Agent {
            id,
            plan,
            shape,
            params,
            dt,
            state: RobotProtocolState::new(),
            counters: ProtocolCounters::default(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn row(&self) -> u32 {
        self.plan.assignments[self.id].row
    }

    fn ticks(&self, seconds: f64) -> u64 {
        (seconds / self.dt).round().max(0.0) as u64
    }

    fn period(&self) -> u64 {
        self.ticks(self.params.reverify_period).max(1)
    }

    fn is_last(&self) -> bool {
        self.plan.last_in_row(self.row()) == Some(self.id)
    }

    /// Rows 1 and 2 move at once; later rows wait for `ROW_MOVING(n − 2)`.
    pub fn row_gate(&self) -> bool {
        self.row() <= 2 || self.state.can_my_row_move
    }

    fn known_staged_or_done(&self, r: usize) -> bool {
        self.state.staged.contains_key(&r) || self.state.finished.contains(&r)
    }

    /// Applies one received message.
    pub fn handle_message(&mut self, msg: &ProtocolMessage, sender: usize, sent_tick: u64) {
        let my_row = self.row();
        let s = &mut self.state;
        match msg {
            ProtocolMessage::RowRobotDone { row, robot } => {
                s.completed_robots.entry(*row).or_default().insert(robot.clone());
                s.finished.insert(sender);
                if *row == my_row && s.row_moving_tick.is_some_and(|t| sent_tick > t) {
                    s.late_done = true;
                }
            }
            ProtocolMessage::RowMoving { row } => {
                if row + 2 == my_row {
                    s.can_my_row_move = true;
                }
                if *row == my_row {
                    s.heard_own_row_moving = true;
                }
            }
            ProtocolMessage::Occupied { x, y, robot } => {
                s.occupied.insert(cell_key([*x, *y]), *robot);
                s.finished.insert(*robot);
            }
            ProtocolMessage::Claim { x, y, robot } => {
                let key = cell_key([*x, *y]);
                match s.claims.get(&key).copied() {
                    Some(holder) if holder != *robot => {
                        self.counters.claim_conflicts += 1;
                        let winner = holder.min(*robot);
                        s.claims.insert(key, winner);
                        if winner != self.id && (holder == self.id || *robot == self.id) {
                            log::warn!("robot {} lost the claim on ({x:.4}, {y:.4}) to {winner}", self.id);
                        }
                    }
                    _ => {
                        s.claims.insert(key, *robot);
                    }
                }
                s.staged.entry(*robot).or_insert(sent_tick);
            }
        }
    }

    fn finish(&mut self, tick: u64, out: &mut Vec<ProtocolMessage>) {
        let a = self.plan.assignments[self.id];
        out.push(ProtocolMessage::Occupied { x: a.target[0], y: a.target[1], robot: self.id });
        out.push(ProtocolMessage::RowRobotDone { row: a.row, robot: Plan::name(self.id) });
        let s = &mut self.state;
        s.completed_robots.entry(a.row).or_default().insert(Plan::name(self.id));
        s.finished.insert(self.id);
        s.occupied.insert(cell_key(a.target), self.id);
        s.phase = Phase::Done;
        s.done_tick = Some(tick);
        s.last_done_send = tick;
    }

    /// The last robot's periodic row check, with lost-message recovery.
    fn completion_tick(&mut self, tick: u64, out: &mut Vec<ProtocolMessage>) {
        let Some(done) = self.state.done_tick else { return };
        if !(tick - done).is_multiple_of(self.period()) {
            return;
        }
        let n = self.row();
        if self.state.row_start_broadcast {
            let unacked = self
                .plan
                .row_members(n + 2)
                .iter()
                .any(|&m| !self.known_staged_or_done(m));
            if unacked || self.state.late_done {
                self.state.row_start_broadcast = false;
                self.state.late_done = false;
            }
        }
        if !self.state.row_start_broadcast && self.state.completed(n) >= self.plan.row_size(n) {
            out.push(ProtocolMessage::RowMoving { row: n });
            self.state.row_start_broadcast = true;
            self.state.row_moving_tick = Some(tick);
        }
    }

    /// Staging tick shared by the whole row once every member is staged or done.
    fn row_reference_tick(&self) -> Option<u64> {
        let mut latest = None;
        for &m in self.plan.row_members(self.row()) {
            if self.state.finished.contains(&m) {
                continue;
            }
            let t = *self.state.staged.get(&m)?;
            latest = latest.max(Some(t));
        }
        latest
    }

    pub fn step(&mut self, input: AgentInput<'_>) -> AgentOutput {
        for m in input.inbox {
            match m.wire.parse::<ProtocolMessage>() {
                Ok(msg) => self.handle_message(&msg, m.sender, m.sent_tick),
                Err(e) => {
                    self.counters.malformed += 1;
                    log::debug!("robot {} dropped message from {}: {e}", self.id, m.sender);
                }
            }
        }
        let tick = input.tick;
        let a = self.plan.assignments[self.id];
        let mut out = Vec::new();

        if self.state.phase == Phase::Phase0Check {
            match phase0_check(&input.est, &self.shape, self.params.epsilon_pos) {
                Some(cell) if cell_key(cell) == cell_key(a.target) => self.finish(tick, &mut out),
                Some(cell) => {
                    log::warn!("robot {} starts on ({:.4}, {:.4}) but is assigned elsewhere", self.id, cell[0], cell[1]);
                    self.state.phase = Phase::WaitRowUnlock;
                }
                None => self.state.phase = Phase::WaitRowUnlock,
            }
        }

        if self.state.phase == Phase::WaitRowUnlock
            && self.row_gate()
            && self.plan.lane_predecessors(self.id).iter().all(|&r| self.known_staged_or_done(r))
        {
            self.state.phase = Phase::Phase1ToStart;
        } else if self.state.phase == Phase::Phase1ToStart && input.nav_arrived {
            let before = self
                .plan
                .row_members(a.row)
                .iter()
                .filter(|&&m| m != self.id && self.state.staged.contains_key(&m))
                .count();
            self.state.arrival_order = Some(before as u32);
            if before as u32 != a.order {
                log::debug!("robot {} staged {before}th but has order {}", self.id, a.order);
            }
            self.state.staged.insert(self.id, tick);
            self.state.claims.entry(cell_key(a.target)).or_insert(self.id);
            self.state.last_claim_send = tick;
            out.push(ProtocolMessage::Claim { x: a.target[0], y: a.target[1], robot: self.id });
            self.state.phase = Phase::StagedDelay;
        } else if self.state.phase == Phase::Phase2ToTarget && input.nav_arrived {
            self.finish(tick, &mut out);
        }

        if self.state.phase == Phase::StagedDelay {
            if self.state.deadline_tick.is_none() {
                if let Some(reference) = self.row_reference_tick() {
                    let delay = staggered_delay(a.order, self.params.delay_base, self.params.delay_step);
                    let deadline = reference + self.ticks(delay);
                    self.state.deadline_tick = Some(deadline);
                    self.state.delay_deadline = Some(deadline as f64 * self.dt);
                }
            }
            if self.state.deadline_tick.is_some_and(|d| tick >= d) {
                self.state.phase = Phase::Phase2ToTarget;
            } else if tick - self.state.last_claim_send >= self.period() {
                self.state.last_claim_send = tick;
                out.push(ProtocolMessage::Claim { x: a.target[0], y: a.target[1], robot: self.id });
            }
        }

        if self.state.phase == Phase::Done {
            if self.is_last() {
                self.completion_tick(tick, &mut out);
            } else if !self.state.heard_own_row_moving && tick - self.state.last_done_send >= self.period() {
                self.state.last_done_send = tick;
                out.push(ProtocolMessage::RowRobotDone { row: a.row, robot: Plan::name(self.id) });
            }
        }

        let goal = match self.state.phase {
            Phase::Phase1ToStart => Some(NavGoal::Staging),
            Phase::Phase2ToTarget => Some(NavGoal::Target),
            _ => None,
        };
        AgentOutput { messages: out, goal }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::ProtocolParams;

    /// Two rows of two cells on the right side of a four-cell strip.
    fn setup(robots: &[[f64; 2]]) -> (Arc<Plan>, Arc<TargetShape>) {
        let cells = vec![[0.0, 0.0], [0.25, 0.0], [0.5, 0.0], [0.75, 0.0]];
        let shape = TargetShape::new(cells, 0.25).unwrap();
        let poses: Vec<Pose> = robots.iter().map(|p| Pose::new(p[0], p[1], 0.0).unwrap()).collect();
        let plan = Plan::new(&shape, &poses, 1, 0.25, 0.05).unwrap();
        (Arc::new(plan), Arc::new(shape))
    }

    fn agent(id: usize, plan: &Arc<Plan>, shape: &Arc<TargetShape>) -> Agent {
        Agent::new(id, plan.clone(), shape.clone(), ProtocolParams::default(), 0.05)
    }

    fn inbound(sender: usize, sent_tick: u64, msg: ProtocolMessage) -> Inbound {
        Inbound { sender, sent_tick, wire: msg.to_string() }
    }

    fn far() -> Vec<[f64; 2]> {
        vec![[3.0, -1.0], [3.5, -1.0], [-2.0, -1.0], [-2.5, -1.0]]
    }

    fn idle(tick: u64, est: Pose) -> AgentInput<'static> {
        AgentInput { tick, est, inbox: &[], nav_arrived: false }
    }

    #[test]
    fn done_set_is_idempotent() {
        let (plan, shape) = setup(&far());
        let mut a = agent(0, &plan, &shape);
        let msg = ProtocolMessage::RowRobotDone { row: 1, robot: "r4".into() };
        a.handle_message(&msg, 4, 3);
        a.handle_message(&msg, 4, 9);
        assert_eq!(a.state.completed(1), 1);
    }

    #[test]
    fn row_moving_unlocks_row_two_below() {
        let (plan, shape) = setup(&far());
        let r3 = (0..4).find(|&r| plan.assignments[r].row == 3).unwrap();
        let mut a = agent(r3, &plan, &shape);
        assert!(!a.row_gate());
        a.handle_message(&ProtocolMessage::RowMoving { row: 1 }, 0, 0);
        assert!(a.row_gate());
        let r1 = (0..4).find(|&r| plan.assignments[r].row == 1).unwrap();
        assert!(agent(r1, &plan, &shape).row_gate());
    }

    #[test]
    fn lower_id_wins_a_claim_in_either_order() {
        let (plan, shape) = setup(&far());
        for order in [[2usize, 7], [7, 2]] {
            let mut a = agent(0, &plan, &shape);
            for r in order {
                a.handle_message(&ProtocolMessage::Claim { x: 0.5, y: 0.0, robot: r }, r, 1);
            }
            assert_eq!(a.state.claim_holder([0.5, 0.0]), Some(2));
            assert_eq!(a.counters.claim_conflicts, 1);
        }
    }

    #[test]
    fn malformed_messages_are_counted_and_dropped() {
        let (plan, shape) = setup(&far());
        let mut a = agent(0, &plan, &shape);
        let inbox = [Inbound { sender: 1, sent_tick: 0, wire: "ROW_MOVING|banana".into() }];
        let est = Pose::new(3.0, -1.0, 0.0).unwrap();
        a.step(AgentInput { tick: 1, est, inbox: &inbox, nav_arrived: false });
        assert_eq!(a.counters.malformed, 1);
    }

    #[test]
    fn prepositioned_robot_finishes_on_its_first_check() {
        let (plan, shape) = setup(&[[0.0, 0.0], [0.25, 0.0], [0.5, 0.0], [0.75, 0.0]]);
        let mut a = agent(1, &plan, &shape);
        let out = a.step(idle(0, Pose::new(0.25, 0.0, 0.0).unwrap()));
        assert_eq!(a.phase(), Phase::Done);
        let kinds: Vec<&str> = out.messages.iter().map(ProtocolMessage::kind).collect();
        // A single-robot row is also complete at once.
        assert_eq!(kinds, vec!["OCCUPIED", "ROW_ROBOT_DONE", "ROW_MOVING"]);
    }

    #[test]
    fn staged_release_follows_the_row_reference() {
        // One row holding all four cells: order o waits 1 + 3·o seconds after
        // the last row-mate staged.
        let cells = vec![[0.0, 0.0], [0.25, 0.0], [0.5, 0.0], [0.75, 0.0]];
        let shape = Arc::new(TargetShape::new(cells, 0.25).unwrap());
        let poses: Vec<Pose> = far().iter().map(|p| Pose::new(p[0], p[1], 0.0).unwrap()).collect();
        let plan = Arc::new(Plan::new(&shape, &poses, 6, 0.25, 0.05).unwrap());
        let row = plan.rows[&1].clone();
        assert_eq!(row.len(), 2);
        let (first, second) = (row[0], row[1]);
        let mut a = agent(second, &plan, &shape);
        let est = poses[second];
        a.step(idle(0, est));
        // The lane predecessor must be staged before this robot leaves.
        assert_eq!(a.phase(), Phase::WaitRowUnlock);
        let claim = inbound(first, 10, ProtocolMessage::Claim { x: 0.0, y: 0.0, robot: first });
        a.step(AgentInput { tick: 11, est, inbox: std::slice::from_ref(&claim), nav_arrived: false });
        assert_eq!(a.phase(), Phase::Phase1ToStart);
        let out = a.step(AgentInput { tick: 40, est, inbox: &[], nav_arrived: true });
        assert_eq!(out.messages[0].kind(), "CLAIM");
        assert_eq!(a.phase(), Phase::StagedDelay);
        assert_eq!(a.state.delay_deadline, Some((40.0 + 80.0) * 0.05));
        a.step(idle(119, est));
        assert_eq!(a.phase(), Phase::StagedDelay);
        let out = a.step(idle(120, est));
        assert_eq!(a.phase(), Phase::Phase2ToTarget);
        assert_eq!(out.goal, Some(NavGoal::Target));
    }

    /// Lossy delivery of every message in a two-robot row, checked exhaustively.
    ///
    /// Both right-side robots start on their cells. Each of the first `horizon` resends of DONE from robot 1 is either lost or
    /// delivered; ROW_MOVING must eventually be sent whenever one copy survives.
    #[test]
    fn row_moving_is_eventually_sent_under_any_loss_pattern() {
        let cells = vec![[0.0, 0.0], [0.25, 0.0], [0.5, 0.0]];
        let shape = Arc::new(TargetShape::new(cells, 0.25).unwrap());
        let poses = [0.5, 0.25, 0.0].map(|x| Pose::new(x, 0.0, 0.0).unwrap());
        let plan = Arc::new(Plan::new(&shape, &poses, 2, 0.25, 0.05).unwrap());
        let ids = plan.rows[&1].clone();
        assert_eq!(ids.len(), 2);
        let (first, last) = (ids[0], ids[1]);
        let horizon = 6;
        for pattern in 0u32..(1 << horizon) {
            if pattern == 0 {
                continue;
            }
            let mut a_first = agent(first, &plan, &shape);
            let mut a_last = agent(last, &plan, &shape);
            let mut to_last: Vec<Inbound> = Vec::new();
            let mut sent_done = 0;
            let mut moving_sent = false;
            for tick in 0..(horizon as u64 + 2) * 20 {
                let inbox = std::mem::take(&mut to_last);
                let out_last = a_last.step(AgentInput { tick, est: poses[last], inbox: &inbox, nav_arrived: false });
                moving_sent |= out_last.messages.iter().any(|m| m.kind() == "ROW_MOVING");
                let out_first = a_first.step(idle(tick, poses[first]));
                for m in out_first.messages {
                    if m.kind() == "ROW_ROBOT_DONE" {
                        let delivered = sent_done >= horizon || pattern & (1 << sent_done) != 0;
                        sent_done += 1;
                        if delivered {
                            to_last.push(inbound(first, tick, m));
                        }
                    }
                }
            }
            assert!(moving_sent, "pattern {pattern:b}");
        }
    }
}
