//! Row-by-row formation protocol: planning, messages and the per-robot state machine.

mod agent;

pub use agent::{Agent, AgentInput, AgentOutput, Inbound, NavGoal, Phase, ProtocolCounters, RobotProtocolState};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Point, Pose, TargetShape};

/// Which starting line a row fills from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Odd rows fill from the right, even rows from the left.
    pub fn of_row(n: u32) -> Side {
        if n % 2 == 1 {
            Side::Right
        } else {
            Side::Left
        }
    }

    /// +1 for the right side, −1 for the left; points away from the shape.
    pub fn outward(self) -> f64 {
        match self {
            Side::Right => 1.0,
            Side::Left => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub robot: usize,
    pub target: Point,
    /// 1-based row index.
    pub row: u32,
    pub side: Side,
    /// Center-out order within the row.
    pub order: u32,
    pub start_point: Point,
}

/// Starting line abscissae `(x_right, x_left)`.
pub fn starting_lines(shape: &TargetShape, offset: f64) -> (f64, f64) {
    let xs = shape.cells().iter().map(|c| c[0]);
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.fold(f64::INFINITY, f64::min);
    (max + offset, min - offset)
}

/// Staggered release delay for order `o`, seconds.
pub fn staggered_delay(order: u32, base: f64, step: f64) -> f64 {
    base + step * order as f64
}

/// Nearest cell within `epsilon_pos` of the estimate.
pub fn phase0_check(est: &Pose, shape: &TargetShape, epsilon_pos: f64) -> Option<Point> {
    shape
        .cells()
        .iter()
        .map(|&c| (est.distance_to(c), c))
        .filter(|(d, _)| *d <= epsilon_pos)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

/// Distances equal to within a nanometer compare equal, so symmetric cells fall
/// back to the `(y, x)` tie-break regardless of rounding in the centroid.
fn quantize(d: f64) -> i64 {
    (d * 1e9).round() as i64
}

/// Splits the shape into rows and matches robots to cells.
///
/// Robots already within `epsilon_pos` of a cell keep that cell, which is what
/// lets pre-positioned robots finish in their first check. Remaining cells are
/// filled by rows in increasing `n`, each cell taking the nearest free robot
/// that starts on the cell's side of the centroid. Only when that side has run
/// out does a cell look across. Without the side filter, near-center cells
/// routinely pull a robot from the far block, whose path then cuts through the
/// half-built shape.
pub fn partition_and_assign(
    shape: &TargetShape,
    robots: &[Pose],
    k: usize,
    start_offset: f64,
    epsilon_pos: f64,
) -> Result<Vec<Assignment>> {
    if robots.len() != shape.len() {
        return Err(Error::domain(format!(
            "{} robots for {} target cells",
            robots.len(),
            shape.len()
        )));
    }
    if k == 0 {
        return Err(Error::domain("row size must be at least 1"));
    }
    if shape.is_empty() {
        return Ok(Vec::new());
    }
    let centroid = shape.centroid()?;
    let (x_right, x_left) = starting_lines(shape, start_offset);

    let mut sides: BTreeMap<Side, Vec<Point>> = BTreeMap::new();
    for &c in shape.cells() {
        let side = if c[0] >= centroid[0] - 1e-9 { Side::Right } else { Side::Left };
        sides.entry(side).or_default().push(c);
    }

    // (row, order, cell) in row-major order.
    let mut slots: Vec<(u32, u32, Point)> = Vec::with_capacity(shape.len());
    for (side, cells) in &mut sides {
        cells.sort_by(|a, b| {
            let da = quantize((a[0] - centroid[0]).hypot(a[1] - centroid[1]));
            let db = quantize((b[0] - centroid[0]).hypot(b[1] - centroid[1]));
            da.cmp(&db)
                .then(a[1].total_cmp(&b[1]))
                .then(a[0].total_cmp(&b[0]))
        });
        for (chunk_idx, chunk) in cells.chunks(k).enumerate() {
            let n = match side {
                Side::Right => 2 * chunk_idx as u32 + 1,
                Side::Left => 2 * chunk_idx as u32 + 2,
            };
            for (o, &cell) in chunk.iter().enumerate() {
                slots.push((n, o as u32, cell));
            }
        }
    }
    slots.sort_by_key(|&(n, o, _)| (n, o));

    let mut owner: Vec<Option<usize>> = vec![None; slots.len()];
    let mut taken = vec![false; robots.len()];
    for (r, pose) in robots.iter().enumerate() {
        let best = slots
            .iter()
            .enumerate()
            .filter(|(s, _)| owner[*s].is_none())
            .map(|(s, slot)| (pose.distance_to(slot.2), s))
            .filter(|(d, _)| *d <= epsilon_pos)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, s)) = best {
            owner[s] = Some(r);
            taken[r] = true;
        }
    }
    for (s, slot) in slots.iter().enumerate() {
        if owner[s].is_some() {
            continue;
        }
        let own_side = |r: usize| (robots[r].x >= centroid[0] - 1e-9) == (Side::of_row(slot.0) == Side::Right);
        let pool: Vec<usize> = (0..robots.len()).filter(|&r| !taken[r]).collect();
        let own: Vec<usize> = pool.iter().copied().filter(|&r| own_side(r)).collect();
        let r = if own.is_empty() { pool } else { own }
            .into_iter()
            .min_by(|&a, &b| {
                robots[a]
                    .distance_to(slot.2)
                    .total_cmp(&robots[b].distance_to(slot.2))
                    .then(a.cmp(&b))
            })
            .expect("robot and cell counts match");
        owner[s] = Some(r);
        taken[r] = true;
    }

    let mut out: Vec<Assignment> = slots
        .iter()
        .zip(owner)
        .map(|(&(row, order, target), r)| {
            let side = Side::of_row(row);
            let x = match side {
                Side::Right => x_right,
                Side::Left => x_left,
            };
            Assignment {
                robot: r.expect("every slot owned"),
                target,
                row,
                side,
                order,
                start_point: [x, target[1]],
            }
        })
        .collect();
    out.sort_by_key(|a| a.robot);
    Ok(out)
}

/// Shared, immutable result of planning, indexed by robot id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub assignments: Vec<Assignment>,
    /// Robot ids of each row in order.
    pub rows: BTreeMap<u32, Vec<usize>>,
    pub x_right: f64,
    pub x_left: f64,
    pub cell_size: f64,
}

impl Plan {
    pub fn new(
        shape: &TargetShape,
        robots: &[Pose],
        k: usize,
        start_offset: f64,
        epsilon_pos: f64,
    ) -> Result<Self> {
        let assignments = partition_and_assign(shape, robots, k, start_offset, epsilon_pos)?;
        let mut rows: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for a in &assignments {
            rows.entry(a.row).or_default().push(a.robot);
        }
        for ids in rows.values_mut() {
            ids.sort_by_key(|&r| assignments[r].order);
        }
        let (x_right, x_left) = if shape.is_empty() {
            (0.0, 0.0)
        } else {
            starting_lines(shape, start_offset)
        };
        Ok(Plan {
            assignments,
            rows,
            x_right,
            x_left,
            cell_size: shape.cell_size(),
        })
    }

    pub fn row_members(&self, n: u32) -> &[usize] {
        self.rows.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn row_size(&self, n: u32) -> usize {
        self.row_members(n).len()
    }

    /// Highest order present in row `n`.
    pub fn last_in_row(&self, n: u32) -> Option<usize> {
        self.row_members(n).last().copied()
    }

    /// Row-mates heading to the same lane (target `y`) with a lower order.
    pub fn lane_predecessors(&self, robot: usize) -> Vec<usize> {
        let me = &self.assignments[robot];
        self.row_members(me.row)
            .iter()
            .copied()
            .filter(|&r| {
                let a = &self.assignments[r];
                a.order < me.order && (a.target[1] - me.target[1]).abs() < 1e-9
            })
            .collect()
    }

    /// Where the robot waits before release.
    ///
    /// Lane-mates queue outward from the start point one cell apart, so a whole
    /// row can be staged at once even when several targets share a lane.
    pub fn staging_point(&self, robot: usize) -> Point {
        let a = &self.assignments[robot];
        let q = self.lane_predecessors(robot).len() as f64;
        [a.start_point[0] + a.side.outward() * q * self.cell_size, a.start_point[1]]
    }

    pub fn name(robot: usize) -> String {
        format!("r{robot}")
    }
}

/// Inter-robot protocol messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProtocolMessage {
    Occupied { x: f64, y: f64, robot: usize },
    RowRobotDone { row: u32, robot: String },
    RowMoving { row: u32 },
    Claim { x: f64, y: f64, robot: usize },
}

impl ProtocolMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolMessage::Occupied { .. } => "OCCUPIED",
            ProtocolMessage::RowRobotDone { .. } => "ROW_ROBOT_DONE",
            ProtocolMessage::RowMoving { .. } => "ROW_MOVING",
            ProtocolMessage::Claim { .. } => "CLAIM",
        }
    }
}

impl fmt::Display for ProtocolMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolMessage::Occupied { x, y, robot } => write!(f, "OCCUPIED|{x:.4}|{y:.4}|{robot}"),
            ProtocolMessage::RowRobotDone { row, robot } => write!(f, "ROW_ROBOT_DONE|{row}|{robot}"),
            ProtocolMessage::RowMoving { row } => write!(f, "ROW_MOVING|{row}"),
            ProtocolMessage::Claim { x, y, robot } => write!(f, "CLAIM|{x:.4}|{y:.4}|{robot}"),
        }
    }
}

fn field<T: FromStr>(parts: &[&str], i: usize, wire: &str) -> Result<T> {
    parts
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Message(format!("bad field {i} in {wire:?}")))
}

fn row_field(parts: &[&str], wire: &str) -> Result<u32> {
    let row: u32 = field(parts, 1, wire)?;
    if row == 0 {
        return Err(Error::Message(format!("row index must be at least 1 in {wire:?}")));
    }
    Ok(row)
}

fn coord(parts: &[&str], i: usize, wire: &str) -> Result<f64> {
    let v: f64 = field(parts, i, wire)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Message(format!("non-finite coordinate in {wire:?}")))
    }
}

impl FromStr for ProtocolMessage {
    type Err = Error;

    fn from_str(wire: &str) -> Result<Self> {
        let parts: Vec<&str> = wire.split('|').collect();
        let arity = |n: usize| {
            if parts.len() == n {
                Ok(())
            } else {
                Err(Error::Message(format!("expected {n} fields in {wire:?}")))
            }
        };
        match parts[0] {
            "OCCUPIED" => {
                arity(4)?;
                Ok(ProtocolMessage::Occupied {
                    x: coord(&parts, 1, wire)?,
                    y: coord(&parts, 2, wire)?,
                    robot: field(&parts, 3, wire)?,
                })
            }
            "ROW_ROBOT_DONE" => {
                arity(3)?;
                if parts[2].is_empty() {
                    return Err(Error::Message(format!("empty robot name in {wire:?}")));
                }
                Ok(ProtocolMessage::RowRobotDone {
                    row: row_field(&parts, wire)?,
                    robot: parts[2].to_string(),
                })
            }
            "ROW_MOVING" => {
                arity(2)?;
                Ok(ProtocolMessage::RowMoving { row: row_field(&parts, wire)? })
            }
            "CLAIM" => {
                arity(4)?;
                Ok(ProtocolMessage::Claim {
                    x: coord(&parts, 1, wire)?,
                    y: coord(&parts, 2, wire)?,
                    robot: field(&parts, 3, wire)?,
                })
            }
            other => Err(Error::Message(format!("unknown message type {other:?}"))),
        }
    }
}

/// Grid key of a coordinate pair, robust to the 4-decimal wire rounding.
pub(crate) fn cell_key(p: Point) -> (i64, i64) {
    ((p[0] * 1e3).round() as i64, (p[1] * 1e3).round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize) -> TargetShape {
        let cells = (0..h)
            .flat_map(|j| (0..w).map(move |i| [i as f64 * 0.25, j as f64 * 0.25]))
            .collect();
        TargetShape::new(cells, 0.25).unwrap()
    }

    fn poses(pts: &[Point]) -> Vec<Pose> {
        pts.iter().map(|p| Pose::new(p[0], p[1], 0.0).unwrap()).collect()
    }

    #[test]
    fn side_parity() {
        assert_eq!(Side::of_row(1), Side::Right);
        assert_eq!(Side::of_row(2), Side::Left);
    }

    #[test]
    fn starting_line_examples() {
        let shape = TargetShape::new(vec![[0.0, 0.0], [2.0, 0.0]], 0.25).unwrap();
        assert_eq!(starting_lines(&shape, 0.25), (2.25, -0.25));
        assert_eq!(starting_lines(&shape, 0.0), (2.0, 0.0));
    }

    #[test]
    fn delay_examples() {
        assert_eq!(staggered_delay(0, 1.0, 3.0), 1.0);
        assert_eq!(staggered_delay(5, 1.0, 3.0), 16.0);
        assert_eq!(staggered_delay(2, 1.0, 3.0), 7.0);
    }

    #[test]
    fn phase0_examples() {
        let shape = TargetShape::new(vec![[0.0, 0.0], [0.25, 0.0]], 0.25).unwrap();
        let at = |x, y| Pose::new(x, y, 0.0).unwrap();
        assert_eq!(phase0_check(&at(0.25, 0.0), &shape, 0.05), Some([0.25, 0.0]));
        assert_eq!(phase0_check(&at(0.04, 0.0), &shape, 0.05), Some([0.0, 0.0]));
        assert_eq!(phase0_check(&at(0.0, 0.06), &shape, 0.05), None);
    }

    #[test]
    fn collinear_cells_start_at_the_center() {
        let cells = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let shape = TargetShape::new(cells.clone(), 0.25).unwrap();
        let robots = poses(&[[5.0, 5.0], [6.0, 5.0], [7.0, 5.0]]);
        let plan = partition_and_assign(&shape, &robots, 6, 0.25, 0.05).unwrap();
        let first = plan.iter().find(|a| a.row == 1 && a.order == 0).unwrap();
        assert_eq!(first.target, [1.0, 0.0]);
    }

    #[test]
    fn rectangle_partition_is_a_parity_respecting_bijection() {
        let shape = rect(6, 6);
        let robots: Vec<Pose> = (0..36)
            .map(|i| Pose::new(4.0 + (i % 6) as f64 * 0.3, -1.0 - (i / 6) as f64 * 0.3, 0.0).unwrap())
            .collect();
        let plan = Plan::new(&shape, &robots, 6, 0.25, 0.05).unwrap();
        assert_eq!(plan.rows.len(), 6);
        assert!(plan.rows.values().all(|r| r.len() == 6));
        let mut targets: Vec<(i64, i64)> = plan.assignments.iter().map(|a| cell_key(a.target)).collect();
        targets.sort_unstable();
        targets.dedup();
        assert_eq!(targets.len(), 36);
        let centroid = shape.centroid().unwrap();
        for a in &plan.assignments {
            assert_eq!(a.side, Side::of_row(a.row));
            assert_eq!(a.side == Side::Right, a.target[0] >= centroid[0]);
            let x = if a.side == Side::Right { plan.x_right } else { plan.x_left };
            assert_eq!(a.start_point, [x, a.target[1]]);
        }
    }

    #[test]
    fn mirrored_blocks_stay_on_their_side() {
        // Plain nearest-robot matching sends a left-block robot to a right cell here.
        let shape = rect(6, 6);
        let c = shape.centroid().unwrap();
        let mut pts = Vec::new();
        for level in 0..3 {
            for col in 0..6 {
                let dx = 2.0 + 0.35 * col as f64;
                let y = -0.5 - 0.35 * level as f64;
                pts.push([c[0] + dx, y]);
                pts.push([c[0] - dx, y]);
            }
        }
        let plan = Plan::new(&shape, &poses(&pts), 6, 0.25, 0.05).unwrap();
        for a in &plan.assignments {
            let x = pts[a.robot][0];
            match a.side {
                Side::Right => assert!(x > plan.x_right),
                Side::Left => assert!(x < plan.x_left),
            }
        }
    }

    #[test]
    fn pre_positioned_robots_keep_their_cells() {
        let shape = rect(3, 2);
        let robots = poses(&[[0.5, 0.25], [0.0, 0.0], [0.25, 0.25], [0.5, 0.0], [0.0, 0.25], [0.25, 0.0]]);
        let plan = partition_and_assign(&shape, &robots, 6, 0.25, 0.05).unwrap();
        for a in &plan {
            assert_eq!(a.target, robots[a.robot].position());
        }
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let shape = rect(2, 1);
        assert!(partition_and_assign(&shape, &poses(&[[0.0, 0.0]]), 6, 0.25, 0.05).is_err());
    }

    #[test]
    fn staging_points_queue_outward_per_lane() {
        let shape = TargetShape::new(vec![[0.0, 0.0], [0.25, 0.0], [0.5, 0.0], [0.75, 0.0]], 0.25).unwrap();
        let robots = poses(&[[2.0, -1.0], [2.3, -1.0], [-1.0, -1.0], [-1.3, -1.0]]);
        let plan = Plan::new(&shape, &robots, 6, 0.25, 0.05).unwrap();
        for (n, ids) in &plan.rows {
            for (q, &r) in ids.iter().enumerate() {
                let s = plan.staging_point(r);
                let side = Side::of_row(*n);
                assert!((s[0] - (plan.assignments[r].start_point[0] + side.outward() * 0.25 * q as f64)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wire_format_round_trips() {
        let msgs = [
            ProtocolMessage::Occupied { x: 1.25, y: 0.5, robot: 3 },
            ProtocolMessage::RowRobotDone { row: 1, robot: "r4".into() },
            ProtocolMessage::RowMoving { row: 3 },
            ProtocolMessage::Claim { x: 0.0, y: -0.25, robot: 7 },
        ];
        assert_eq!(msgs[0].to_string(), "OCCUPIED|1.2500|0.5000|3");
        assert_eq!(msgs[1].to_string(), "ROW_ROBOT_DONE|1|r4");
        for m in msgs {
            assert_eq!(m.to_string().parse::<ProtocolMessage>().unwrap(), m);
        }
        for bad in ["", "HELLO|1", "ROW_MOVING|0", "ROW_MOVING|x", "CLAIM|1|2", "OCCUPIED|a|0|1", "ROW_ROBOT_DONE|1|"] {
            assert!(bad.parse::<ProtocolMessage>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn assignment_is_bijective(w in 1usize..7, h in 1usize..7, k in 1usize..8, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let shape = rect(w, h);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let robots: Vec<Pose> = (0..shape.len())
                .map(|_| Pose::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0).unwrap())
                .collect();
            let plan = Plan::new(&shape, &robots, k, 0.25, 0.05).unwrap();
            let mut robots_seen: Vec<usize> = plan.assignments.iter().map(|a| a.robot).collect();
            robots_seen.dedup();
            prop_assert_eq!(robots_seen.len(), shape.len());
            let mut cells: Vec<(i64, i64)> = plan.assignments.iter().map(|a| cell_key(a.target)).collect();
            cells.sort_unstable();
            cells.dedup();
            prop_assert_eq!(cells.len(), shape.len());
            for ids in plan.rows.values() {
                prop_assert!(ids.len() <= k);
                for (o, &r) in ids.iter().enumerate() {
                    prop_assert_eq!(plan.assignments[r].order as usize, o);
                }
            }
        }
    }
}
