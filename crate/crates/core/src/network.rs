//! Proximity graph and lossy broadcast channels with one-tick latency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::world::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// Reaches every other robot.
    Global,
    /// Reaches robots within the local communication radius.
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<P> {
    pub sender: usize,
    /// Per-sender sequence number.
    pub seq: u64,
    pub channel: Channel,
    pub payload: P,
    pub sent_tick: u64,
}

/// Symmetric, irreflexive proximity relation at one instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Neighbor ids of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Graph from explicit undirected edges; self loops are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i != j {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        CommGraph { neighbors }
    }
}

/// Edge `(i, j)` iff `‖p_i − p_j‖ ≤ r_comm`.
pub fn build_graph(positions: &[Point], r_comm: f64) -> CommGraph {
    let n = positions.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]);
            if d <= r_comm {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    CommGraph { neighbors }
}

/// Recipients that survive per-link Bernoulli loss.
///
/// One uniform draw is taken per candidate recipient, in ascending id order.
pub fn broadcast<P, R: Rng + ?Sized>(
    env: &Envelope<P>,
    positions: &[Point],
    r_comm_local: f64,
    loss_probability: f64,
    rng: &mut R,
) -> (Vec<usize>, usize) {
    let candidates: Vec<usize> = match env.channel {
        Channel::Global => (0..positions.len()).filter(|&j| j != env.sender).collect(),
        Channel::Local => {
            let me = positions[env.sender];
            (0..positions.len())
                .filter(|&j| {
                    j != env.sender
                        && (positions[j][0] - me[0]).hypot(positions[j][1] - me[1]) <= r_comm_local
                })
                .collect()
        }
    };
    let mut lost = 0;
    let mut delivered = Vec::with_capacity(candidates.len());
    for j in candidates {
        if loss_probability > 0.0 && rng.random::<f64>() < loss_probability {
            lost += 1;
        } else {
            delivered.push(j);
        }
    }
    (delivered, lost)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStats {
    /// Envelopes handed to the network.
    pub sent: u64,
    /// Per-recipient copies dropped by the loss model.
    pub lost: u64,
    /// Per-recipient copies delivered.
    pub delivered: u64,
}

/// Message queue owned by the engine.
#[derive(Debug, Clone)]
pub struct Network<P> {
    r_comm_local: f64,
    loss_probability: f64,
    /// (recipient, envelope) pairs due at the next delivery.
    pending: Vec<(usize, Envelope<P>)>,
    next_seq: Vec<u64>,
    stats: NetworkStats,
}

impl<P: Clone> Network<P> {
    pub fn new(robots: usize, r_comm_local: f64, loss_probability: f64) -> Self {
        Network {
            r_comm_local,
            loss_probability,
            pending: Vec::new(),
            next_seq: vec![0; robots],
            stats: NetworkStats::default(),
        }
    }

    pub fn stats(&self) -> NetworkStats {
        self.stats
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Queues `payload` for delivery on the next tick; returns the envelope's sequence number.
    pub fn send<R: Rng + ?Sized>(
        &mut self,
        sender: usize,
        channel: Channel,
        payload: P,
        tick: u64,
        positions: &[Point],
        rng: &mut R,
    ) -> u64 {
        let seq = self.next_seq[sender];
        self.next_seq[sender] += 1;
        let env = Envelope { sender, seq, channel, payload, sent_tick: tick };
        let (recipients, lost) = broadcast(&env, positions, self.r_comm_local, self.loss_probability, rng);
        self.stats.sent += 1;
        self.stats.lost += lost as u64;
        for r in recipients {
            self.pending.push((r, env.clone()));
        }
        seq
    }

    /// Drains everything sent before `tick` into per-robot inboxes ordered by (sender, seq).
    pub fn deliver(&mut self, tick: u64) -> Vec<Vec<Envelope<P>>> {
        let mut inboxes: Vec<Vec<Envelope<P>>> = vec![Vec::new(); self.next_seq.len()];
        let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|(_, env)| env.sent_tick < tick);
        self.pending = keep;
        for (r, env) in due {
            self.stats.delivered += 1;
            inboxes[r].push(env);
        }
        for inbox in &mut inboxes {
            inbox.sort_by_key(|e| (e.sender, e.seq));
        }
        inboxes
    }
}
