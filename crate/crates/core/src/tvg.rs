//! Adversary-facing time-varying graph.
//!
//! The topology owns everything the adversary manipulates between protocol
//! steps: port bindings, per-edge message channels, per-node disconnection
//! detectors, the loopback queue behind port 0, and an append-only presence
//! log that checkers replay to reconstruct edge lifetimes.
//!
//! Rules enforced here, independent of the protocol layer:
//! * every node has `delta` connection ports; `connect` takes the
//!   lowest-numbered open port on each endpoint and the labels stay fixed
//!   until the edge is severed;
//! * severing an edge drops both directions of its channel and files the
//!   local port label with each endpoint's detector;
//! * a reconnection creates a fresh channel — messages from an earlier
//!   incarnation of an edge can never resurface;
//! * port 0 is a loopback queue: sends to it are never lost, but delivery
//!   is still scheduled (and delayed) by the adversary.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Message, Port};

/// Node identifier, densely allocated from zero.
pub type NodeId = usize;
/// Discrete round counter.
pub type Round = u64;
/// Global send sequence number; stable identity of one in-flight message.
pub type MsgSeq = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TvgError {
    #[error("node {node} has no open port")]
    NoOpenPort { node: NodeId },
    #[error("nodes {u} and {v} are already adjacent")]
    AlreadyAdjacent { u: NodeId, v: NodeId },
    #[error("nodes {u} and {v} are not adjacent")]
    NotAdjacent { u: NodeId, v: NodeId },
    #[error("node {node} already sent on port {port} in this execution")]
    DuplicateSendOnPort { node: NodeId, port: Port },
}

/// Both endpoints' view of one live edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortBinding {
    pub node_a: NodeId,
    pub port_a: Port,
    pub node_b: NodeId,
    pub port_b: Port,
    /// Round the edge appeared; also the birth round of its channel.
    pub since: Round,
}

impl PortBinding {
    /// The port `node` uses for this edge. Panics if `node` is not an endpoint.
    pub fn port_of(&self, node: NodeId) -> Port {
        if node == self.node_a {
            self.port_a
        } else if node == self.node_b {
            self.port_b
        } else {
            panic!("node {node} is not an endpoint of {self:?}");
        }
    }

    /// The opposite endpoint. Panics if `node` is not an endpoint.
    pub fn peer_of(&self, node: NodeId) -> NodeId {
        if node == self.node_a {
            self.node_b
        } else if node == self.node_b {
            self.node_a
        } else {
            panic!("node {node} is not an endpoint of {self:?}");
        }
    }
}

/// One message in flight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InTransit {
    pub seq: MsgSeq,
    pub msg: Message,
    /// Round the send became visible (for async spans: the span's start).
    pub sent_round: Round,
}

/// Unordered, lossy transport of one edge: two direction-separated multisets.
#[derive(Clone, Debug, Default)]
pub struct Channel {
    /// Messages travelling from the lower-numbered endpoint to the higher.
    pub to_b: Vec<InTransit>,
    /// Messages travelling from the higher-numbered endpoint to the lower.
    pub to_a: Vec<InTransit>,
}

impl Channel {
    pub fn occupancy(&self) -> usize {
        self.to_a.len() + self.to_b.len()
    }
}

#[derive(Clone, Debug)]
struct EdgeState {
    binding: PortBinding,
    channel: Channel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresenceChange {
    Added,
    Removed,
}

/// Append-only record of one edge appearing or disappearing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceEvent {
    pub round: Round,
    pub change: PresenceChange,
    pub u: NodeId,
    pub v: NodeId,
    pub port_u: Port,
    pub port_v: Port,
}

#[derive(Clone, Debug)]
struct NodeSlots {
    /// `ports[i]` is the peer bound to label `i + 1`, if any.
    ports: Vec<Option<NodeId>>,
    /// Detector accumulator: labels severed since the last snapshot.
    pending: BTreeSet<Port>,
    /// Loopback queue behind port 0. Never dropped.
    loopback: Vec<InTransit>,
    /// Ports already used by the send phase currently in progress.
    sent_this_phase: BTreeSet<Port>,
}

/// The complete communication substrate for one run.
#[derive(Clone, Debug)]
pub struct Topology {
    node_count: usize,
    delta: u8,
    round: Round,
    nodes: Vec<NodeSlots>,
    /// Live edges, keyed by normalized `(min, max)` node pair.
    edges: BTreeMap<(NodeId, NodeId), EdgeState>,
    presence_log: Vec<PresenceEvent>,
    next_seq: MsgSeq,
    pub messages_sent: u64,
    pub messages_lost: u64,
}

fn norm(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

impl Topology {
    /// An empty graph on `node_count` nodes with `delta` ports each.
    pub fn new(node_count: usize, delta: u8) -> Topology {
        assert!(delta >= 1, "port bound must be at least 1");
        Topology {
            node_count,
            delta,
            round: 0,
            nodes: (0..node_count)
                .map(|_| NodeSlots {
                    ports: vec![None; delta as usize],
                    pending: BTreeSet::new(),
                    loopback: Vec::new(),
                    sent_this_phase: BTreeSet::new(),
                })
                .collect(),
            edges: BTreeMap::new(),
            presence_log: Vec::new(),
            next_seq: 0,
            messages_sent: 0,
            messages_lost: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn delta(&self) -> u8 {
        self.delta
    }

    pub fn round(&self) -> Round {
        self.round
    }

    /// Advances the topology clock. Called once per simulated round by the
    /// scheduler, after all executions of the round have been applied.
    pub fn advance_round(&mut self) {
        self.round += 1;
    }

    fn lowest_open_port(&self, node: NodeId) -> Option<Port> {
        self.nodes[node]
            .ports
            .iter()
            .position(|slot| slot.is_none())
            .map(|idx| (idx + 1) as Port)
    }

    /// Connects `u` and `v`, assigning the lowest-numbered open port on each
    /// endpoint, and opens a fresh, empty channel.
    pub fn connect(&mut self, u: NodeId, v: NodeId) -> Result<PortBinding, TvgError> {
        assert!(u != v, "self-edges are reserved for the loopback port");
        if self.edges.contains_key(&norm(u, v)) {
            return Err(TvgError::AlreadyAdjacent { u, v });
        }
        let port_u = self.lowest_open_port(u).ok_or(TvgError::NoOpenPort { node: u })?;
        let port_v = self.lowest_open_port(v).ok_or(TvgError::NoOpenPort { node: v })?;
        let (a, b) = norm(u, v);
        let binding = PortBinding {
            node_a: a,
            port_a: if a == u { port_u } else { port_v },
            node_b: b,
            port_b: if b == v { port_v } else { port_u },
            since: self.round,
        };
        self.nodes[u].ports[port_u as usize - 1] = Some(v);
        self.nodes[v].ports[port_v as usize - 1] = Some(u);
        self.edges.insert((a, b), EdgeState { binding, channel: Channel::default() });
        self.presence_log.push(PresenceEvent {
            round: self.round,
            change: PresenceChange::Added,
            u,
            v,
            port_u,
            port_v,
        });
        Ok(binding)
    }

    /// Severs the edge between `u` and `v`: drops all in-transit messages on
    /// its channel, releases both ports, and files the severed labels with
    /// both endpoints' detectors.
    pub fn disconnect(&mut self, u: NodeId, v: NodeId) -> Result<(), TvgError> {
        let edge = self.edges.remove(&norm(u, v)).ok_or(TvgError::NotAdjacent { u, v })?;
        let lost = edge.channel.occupancy();
        self.messages_lost += lost as u64;
        let (pu, pv) = (edge.binding.port_of(u), edge.binding.port_of(v));
        self.nodes[u].ports[pu as usize - 1] = None;
        self.nodes[v].ports[pv as usize - 1] = None;
        self.nodes[u].pending.insert(pu);
        self.nodes[v].pending.insert(pv);
        self.presence_log.push(PresenceEvent {
            round: self.round,
            change: PresenceChange::Removed,
            u,
            v,
            port_u: pu,
            port_v: pv,
        });
        Ok(())
    }

    /// The detector's accumulated labels, without consuming them.
    pub fn detector_pending(&self, node: NodeId) -> &BTreeSet<Port> {
        &self.nodes[node].pending
    }

    /// Consumes and returns the detector accumulator. Called exactly once at
    /// the start of each action execution of `node`.
    pub fn take_detector_snapshot(&mut self, node: NodeId) -> BTreeSet<Port> {
        std::mem::take(&mut self.nodes[node].pending)
    }

    /// Opens a send phase for `node`: clears its per-phase duplicate-port
    /// guard. The scheduler calls this before applying a batch of sends.
    pub fn begin_sends(&mut self, node: NodeId) {
        self.nodes[node].sent_this_phase.clear();
    }

    /// Sends `msg` out of `node` on `port`.
    ///
    /// Returns the sequence number of the enqueued message, or `None` if the
    /// port is currently unbound (the message is silently dropped, as the
    /// edge it targeted no longer exists). `sent_round` is the visibility
    /// round recorded on the message — the current round for semi-synchronous
    /// execution, the sender's span start for asynchronous execution.
    pub fn send(
        &mut self,
        node: NodeId,
        port: Port,
        msg: Message,
        sent_round: Round,
    ) -> Result<Option<MsgSeq>, TvgError> {
        assert!(port <= self.delta, "port {port} out of range for delta {}", self.delta);
        if !self.nodes[node].sent_this_phase.insert(port) {
            return Err(TvgError::DuplicateSendOnPort { node, port });
        }
        self.messages_sent += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        let item = InTransit { seq, msg, sent_round };
        if port == 0 {
            self.nodes[node].loopback.push(item);
            return Ok(Some(seq));
        }
        let Some(peer) = self.nodes[node].ports[port as usize - 1] else {
            self.messages_lost += 1;
            return Ok(None);
        };
        let key = norm(node, peer);
        let edge = self.edges.get_mut(&key).expect("bound port without edge entry");
        if node == key.0 {
            edge.channel.to_b.push(item);
        } else {
            edge.channel.to_a.push(item);
        }
        Ok(Some(seq))
    }

    /// Like [`Topology::send`], but additionally drops the message when the
    /// edge bound to `port` is younger than `origin_round`. Asynchronous
    /// executions commit their sends at span end; a send is lost if its edge
    /// did not exist continuously since the span started.
    pub fn send_if_continuous(
        &mut self,
        node: NodeId,
        port: Port,
        msg: Message,
        origin_round: Round,
    ) -> Result<Option<MsgSeq>, TvgError> {
        if port != 0 {
            let alive_since = self.nodes[node].ports[port as usize - 1]
                .map(|peer| self.edges[&norm(node, peer)].binding.since);
            match alive_since {
                Some(since) if since <= origin_round => {}
                _ => {
                    // Count the attempt as a loss without touching the guard
                    // set: the model says the send happened and vanished.
                    if !self.nodes[node].sent_this_phase.insert(port) {
                        return Err(TvgError::DuplicateSendOnPort { node, port });
                    }
                    self.messages_sent += 1;
                    self.messages_lost += 1;
                    return Ok(None);
                }
            }
        }
        self.send(node, port, msg, origin_round)
    }

    /// The node bound to `port` of `node`, if any. Port 0 maps to the node
    /// itself.
    pub fn peer_on_port(&self, node: NodeId, port: Port) -> Option<NodeId> {
        if port == 0 {
            return Some(node);
        }
        self.nodes[node].ports[port as usize - 1]
    }

    /// The port `node` uses to reach `peer`, if they are adjacent.
    pub fn port_to(&self, node: NodeId, peer: NodeId) -> Option<Port> {
        if node == peer {
            return Some(0);
        }
        self.edges.get(&norm(node, peer)).map(|e| e.binding.port_of(node))
    }

    pub fn is_adjacent(&self, u: NodeId, v: NodeId) -> bool {
        self.edges.contains_key(&norm(u, v))
    }

    /// Current neighborhood of `node` as `(port, peer)` pairs in ascending
    /// port order. Excludes the loopback port.
    pub fn neighborhood(&self, node: NodeId) -> Vec<(Port, NodeId)> {
        self.nodes[node]
            .ports
            .iter()
            .enumerate()
            .filter_map(|(idx, slot)| slot.map(|peer| ((idx + 1) as Port, peer)))
            .collect()
    }

    /// Labels currently bound on `node`, excluding the loopback port.
    pub fn bound_ports(&self, node: NodeId) -> BTreeSet<Port> {
        self.neighborhood(node).into_iter().map(|(p, _)| p).collect()
    }

    /// All messages currently deliverable *to* `node`: channel traffic
    /// arriving on bound ports plus the loopback queue. Ascending port order,
    /// insertion order within a port.
    pub fn in_transit_to(&self, node: NodeId) -> Vec<(Port, InTransit)> {
        let mut out: Vec<(Port, InTransit)> =
            self.nodes[node].loopback.iter().map(|m| (0, *m)).collect();
        for (port, peer) in self.neighborhood(node) {
            let key = norm(node, peer);
            let edge = &self.edges[&key];
            let lane = if node == key.0 { &edge.channel.to_a } else { &edge.channel.to_b };
            out.extend(lane.iter().map(|m| (port, *m)));
        }
        out.sort_by_key(|(port, m)| (*port, m.seq));
        out
    }

    /// Removes and returns the in-transit message `seq` addressed to `node`
    /// on `port`. Returns `None` if it is no longer there (e.g. the edge was
    /// severed in the meantime).
    pub fn take_message(&mut self, node: NodeId, port: Port, seq: MsgSeq) -> Option<InTransit> {
        if port == 0 {
            let lane = &mut self.nodes[node].loopback;
            let idx = lane.iter().position(|m| m.seq == seq)?;
            return Some(lane.remove(idx));
        }
        let peer = self.nodes[node].ports[port as usize - 1]?;
        let key = norm(node, peer);
        let edge = self.edges.get_mut(&key)?;
        let lane = if node == key.0 { &mut edge.channel.to_a } else { &mut edge.channel.to_b };
        let idx = lane.iter().position(|m| m.seq == seq)?;
        Some(lane.remove(idx))
    }

    /// Live edges with their channels, for monitors.
    pub fn channels(&self) -> impl Iterator<Item = (&PortBinding, &Channel)> {
        self.edges.values().map(|e| (&e.binding, &e.channel))
    }

    /// Live edge bindings, for checkers that resolve ports to nodes.
    pub fn bindings(&self) -> impl Iterator<Item = &PortBinding> {
        self.edges.values().map(|e| &e.binding)
    }

    /// Loopback queue length of `node`, for monitors and tests.
    pub fn loopback_len(&self, node: NodeId) -> usize {
        self.nodes[node].loopback.len()
    }

    /// Complete edge-lifetime history since round 0.
    pub fn presence_log(&self) -> &[PresenceEvent] {
        &self.presence_log
    }

    /// True if the edge `{u, v}` existed continuously over `[from, to]`
    /// according to the presence log. An event logged at round `r` takes
    /// effect at the start of round `r`, so the edge must have been added at
    /// or before `from` and no event of either kind may fall in `(from, to]`
    /// (presence events for a pair alternate, so any event there breaks
    /// continuity).
    pub fn edge_continuous(&self, u: NodeId, v: NodeId, from: Round, to: Round) -> bool {
        debug_assert!(from <= to);
        let key = norm(u, v);
        let mut present_at_from = false;
        for ev in &self.presence_log {
            if norm(ev.u, ev.v) != key {
                continue;
            }
            if ev.round <= from {
                present_at_from = ev.change == PresenceChange::Added;
            } else if ev.round <= to {
                return false;
            } else {
                break;
            }
        }
        present_at_from
    }

    /// Internal audit: every bound port appears in exactly one live edge and
    /// vice versa. Used by tests and debug assertions.
    pub fn audit_port_conservation(&self) -> bool {
        let mut seen: BTreeSet<(NodeId, Port)> = BTreeSet::new();
        for edge in self.edges.values() {
            let b = &edge.binding;
            for (n, p) in [(b.node_a, b.port_a), (b.node_b, b.port_b)] {
                if self.nodes[n].ports[p as usize - 1] != Some(b.peer_of(n)) {
                    return false;
                }
                if !seen.insert((n, p)) {
                    return false;
                }
            }
        }
        for (n, slots) in self.nodes.iter().enumerate() {
            for (idx, slot) in slots.ports.iter().enumerate() {
                if slot.is_some() && !seen.contains(&(n, (idx + 1) as Port)) {
                    return false;
                }
            }
        }
        true
    }
}
