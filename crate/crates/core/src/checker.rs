//! Runtime monitors: global-visibility observers that assert the protocol's
//! safety and progress properties over a live run.
//!
//! A [`Checker`] is fed once per round with the world and the round's new
//! trace events. It never feeds information back into the simulation; it
//! mirrors what it needs (edge lifetimes, request/win conversations, pending
//! API calls) from the event stream and reads node states directly when a
//! property is defined over them. Violations are data, not errors: the run
//! continues and the report lists everything found.
//!
//! Properties checked every round:
//!   * **Mutual exclusion** — the held sets of locked nodes are pairwise
//!     disjoint. A node `v` counts as held by `u` only under two-sided
//!     agreement: `u` is `Locked` with the port to `v` in its lock set, and
//!     `v`'s lock variable points back at `u`. One-sided (stale) claims are
//!     benign by construction — the disconnected side cleans up on its next
//!     execution — and counting them would flag false conflicts after a
//!     disconnect-reconnect race.
//!   * **Channel bound** — every edge channel holds ≤ 2 messages in total.
//!   * **Dependency acyclicity** — the initiator/participant wait-for graph
//!     (who owes whom a request-lock or win message) has no directed cycle.
//!
//! Per-request checks:
//!   * **Success exactness** — when a lock operation reports success, the
//!     claimed port set must equal the targeted neighbors whose edge existed
//!     continuously (same binding incarnation) from issue to success,
//!     plus the node itself.
//!   * **Progress** — requests that outlive `10 · F · (Δ² + 1)` rounds are
//!     flagged slow; requests never resolved by the horizon are reported.
//!
//! Statistical check:
//!   * **Open-trial win rate** — competition trials in which no tracked
//!     participant was locked at any sampled instant are "open"; the
//!     empirical win rate over open trials is compared against the analytic
//!     lower bound `(1 − 1/K)^(2Δ²) / (2Δ²)` using a one-sided Wilson
//!     interval.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::message::{Message, Port};
use crate::protocol::{ActionId, ApiOutcome, LockState, LockTarget};
use crate::scheduler::{ApiCall, RunConfig, TraceEvent, World};
use crate::tvg::{NodeId, Round};

/// z for a one-sided 99% confidence bound.
pub const WILSON_Z_99: f64 = 2.3263478740408408;

/// A property violation or anomaly found during a run.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Two locked nodes' held sets intersect.
    MutualExclusion { round: Round, holder_a: NodeId, holder_b: NodeId, shared: NodeId },
    /// An edge channel holds more than two messages.
    ChannelOverflow { round: Round, u: NodeId, v: NodeId, occupancy: usize },
    /// The dependency graph has a directed cycle (nodes listed in order).
    DependencyCycle { round: Round, cycle: Vec<(DependencyRole, NodeId)> },
    /// A lock operation's claimed set differs from the persistent target set.
    SuccessAnomaly {
        node: NodeId,
        issue_round: Round,
        success_round: Round,
        claimed: BTreeSet<Port>,
        required: BTreeSet<Port>,
    },
}

/// Which side of the bipartite dependency graph a vertex is on. A node that
/// is both an initiator and a participant appears as two distinct vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DependencyRole {
    Initiator,
    Participant,
}

/// One tracked `Lock` operation, from API call to resolution.
#[derive(Clone, Debug)]
pub struct LockRequestRecord {
    pub node: NodeId,
    /// Round the API call was admitted.
    pub call_round: Round,
    /// Round the InitLock action executed (span start).
    pub issue_round: Round,
    pub target: LockTarget,
    /// The targeted neighbors bound at issue, by port.
    pub neighbors_at_issue: BTreeMap<Port, NodeId>,
    /// Span-start round of the successful CheckDone, once resolved.
    pub success_round: Option<Round>,
    /// Number of competition trials entered (request-lock batches sent).
    pub trials: u64,
}

impl LockRequestRecord {
    pub fn latency(&self) -> Option<Round> {
        self.success_round.map(|j| j - self.call_round)
    }
}

/// One competition trial of one initiator.
#[derive(Clone, Debug)]
pub struct Trial {
    pub node: NodeId,
    pub start: Round,
    /// Participant nodes (the initiator itself included) at trial start.
    pub participants: Vec<NodeId>,
    /// True while no participant was observed locked at any sampled round
    /// of the trial's lifetime.
    pub open: bool,
    /// `Some(true)` won, `Some(false)` lost, `None` unresolved at horizon.
    pub outcome: Option<bool>,
}

/// Aggregated results of a checked run.
#[derive(Clone, Debug, Default)]
pub struct CheckerReport {
    pub rounds_observed: u64,
    pub violations: Vec<Violation>,
    pub records: Vec<LockRequestRecord>,
    pub lock_calls: u64,
    pub lock_rejections: u64,
    pub lock_successes: u64,
    /// Requests that succeeded but took longer than `10·F·(Δ²+1)` rounds.
    pub slow_requests: u64,
    /// Requests still unresolved when observation ended.
    pub unresolved_requests: u64,
    pub unlock_calls: u64,
    pub unlock_successes: u64,
    pub trials: Vec<Trial>,
    pub max_edge_channel_occupancy: usize,
    pub max_loopback_occupancy: usize,
}

impl CheckerReport {
    /// Per-request success latencies in rounds, for histograms.
    pub fn latencies(&self) -> Vec<u64> {
        self.records.iter().filter_map(|r| r.latency()).collect()
    }

    /// `(wins, resolved trials)` over open trials only.
    pub fn open_trial_outcomes(&self) -> (u64, u64) {
        let resolved =
            self.trials.iter().filter(|t| t.open && t.outcome.is_some());
        let total = resolved.clone().count() as u64;
        let wins = resolved.filter(|t| t.outcome == Some(true)).count() as u64;
        (wins, total)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("{got} samples, need at least {needed}")]
    InsufficientSamples { got: u64, needed: u64 },
}

/// Analytic lower bound on the probability that an initiator holds the
/// unique highest priority in an open competition trial:
/// `(1 − 1/K)^(2Δ²) / (2Δ²)`.
pub fn win_rate_bound(delta: u8, k: u16) -> f64 {
    let two_delta_sq = 2.0 * f64::from(delta) * f64::from(delta);
    (1.0 - 1.0 / f64::from(k)).powf(two_delta_sq) / two_delta_sq
}

/// One-sided Wilson lower confidence bound for a binomial proportion.
pub fn wilson_lower(successes: u64, samples: u64, z: f64) -> f64 {
    if samples == 0 {
        return 0.0;
    }
    let n = samples as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = p + z2 / (2.0 * n);
    let radius = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - radius) / (1.0 + z2 / n)).max(0.0)
}

/// Compares the empirical open-trial win rate with the analytic bound.
/// Returns `(empirical rate, bound, wilson 99% lower bound)`.
pub fn measure_open_trial_win_rate(
    outcomes: &[bool],
    delta: u8,
    k: u16,
    min_samples: u64,
) -> Result<(f64, f64, f64), StatError> {
    let n = outcomes.len() as u64;
    if n < min_samples {
        return Err(StatError::InsufficientSamples { got: n, needed: min_samples });
    }
    let wins = outcomes.iter().filter(|&&w| w).count() as u64;
    let empirical = wins as f64 / n as f64;
    Ok((empirical, win_rate_bound(delta, k), wilson_lower(wins, n, WILSON_Z_99)))
}

/// One lifetime of one port binding, as mirrored from the event stream.
#[derive(Clone, Debug)]
struct PortInterval {
    peer: NodeId,
    from: Round,
    /// Exclusive; `Round::MAX` while the binding is alive.
    until: Round,
}

// Conversation obligations are tracked as two relations over node pairs.
// An obligation attaches when the obliging message is *received* (its
// Delivery event) and discharges when the response is *sent*: a message
// still in transit obligates nobody, and a node that has sent its whole
// response batch owes nothing even while those messages are in flight.

/// Incremental run monitor. Feed it [`Checker::observe_round`] after every
/// `step_round`, then consume the report with [`Checker::finish`].
pub struct Checker {
    nodes: usize,
    delta: u8,
    k: u16,
    fairness_bound: u64,
    rounds_observed: u64,
    /// Binding history per (node, port), newest last.
    intervals: BTreeMap<(NodeId, Port), Vec<PortInterval>>,
    /// Live (node, port) → peer view.
    port_peer: BTreeMap<(NodeId, Port), NodeId>,
    /// `(participant, initiator)`: the participant has received a
    /// request-lock from the initiator and not yet sent back a win.
    pending_requests: BTreeSet<(NodeId, NodeId)>,
    /// `(initiator, participant)`: the initiator has received a win from
    /// the participant and not yet sent the follow-up (a fresh request-lock
    /// on a redraw, or set-lock after winning).
    owed_rebids: BTreeSet<(NodeId, NodeId)>,
    /// Pending Lock call per node: (call round, pair port), newest wins,
    /// mirroring the simulator's single request slot.
    lock_slot: Vec<Option<(Round, Option<Port>)>>,
    records: Vec<LockRequestRecord>,
    open_record: Vec<Option<usize>>,
    trials: Vec<Trial>,
    open_trial: Vec<Option<usize>>,
    /// Lock variables at the start of the round being observed.
    prev_locks: Vec<Option<Port>>,
    violations: Vec<Violation>,
    lock_calls: u64,
    lock_rejections: u64,
    lock_successes: u64,
    unlock_calls: u64,
    unlock_successes: u64,
    max_edge_channel_occupancy: usize,
    max_loopback_occupancy: usize,
}

impl Checker {
    pub fn new(config: &RunConfig) -> Checker {
        Checker {
            nodes: config.nodes,
            delta: config.delta,
            k: config.k,
            fairness_bound: config.fairness_bound,
            rounds_observed: 0,
            intervals: BTreeMap::new(),
            port_peer: BTreeMap::new(),
            pending_requests: BTreeSet::new(),
            owed_rebids: BTreeSet::new(),
            lock_slot: vec![None; config.nodes],
            records: Vec::new(),
            open_record: vec![None; config.nodes],
            trials: Vec::new(),
            open_trial: vec![None; config.nodes],
            prev_locks: vec![None; config.nodes],
            violations: Vec::new(),
            lock_calls: 0,
            lock_rejections: 0,
            lock_successes: 0,
            unlock_calls: 0,
            unlock_successes: 0,
            max_edge_channel_occupancy: 0,
            max_loopback_occupancy: 0,
        }
    }

    /// Threshold beyond which a successful request is still flagged slow:
    /// `10 · F · (Δ² + 1)` rounds.
    pub fn slow_threshold(&self) -> u64 {
        10 * self.fairness_bound * (u64::from(self.delta) * u64::from(self.delta) + 1)
    }

    /// Observes one completed round: `events` are the trace records the
    /// round appended, `world` is the post-round state.
    pub fn observe_round(&mut self, world: &World, events: &[TraceEvent]) {
        for event in events {
            self.consume_event(world, event);
        }
        // The step advanced the round counter past the observed round.
        let round = world.round - 1;
        self.check_mutual_exclusion(world, round);
        self.check_channel_bound(world, round);
        self.check_dependency_dag(world, round);
        self.sample_trial_openness(world);
        for (node, state) in world.states.iter().enumerate() {
            self.prev_locks[node] = state.lock;
        }
        self.rounds_observed += 1;
    }

    /// Finalizes the report. Open trials and unresolved requests are counted
    /// as such, not dropped.
    pub fn finish(self) -> CheckerReport {
        let slow_threshold = self.slow_threshold();
        let slow = self
            .records
            .iter()
            .filter(|r| r.latency().is_some_and(|l| l > slow_threshold))
            .count() as u64;
        let unresolved =
            self.records.iter().filter(|r| r.success_round.is_none()).count() as u64;
        CheckerReport {
            rounds_observed: self.rounds_observed,
            violations: self.violations,
            records: self.records,
            lock_calls: self.lock_calls,
            lock_rejections: self.lock_rejections,
            lock_successes: self.lock_successes,
            slow_requests: slow,
            unresolved_requests: unresolved,
            unlock_calls: self.unlock_calls,
            unlock_successes: self.unlock_successes,
            trials: self.trials,
            max_edge_channel_occupancy: self.max_edge_channel_occupancy,
            max_loopback_occupancy: self.max_loopback_occupancy,
        }
    }

    // ------------------------------------------------------------------
    // Event mirroring.
    // ------------------------------------------------------------------

    fn consume_event(&mut self, world: &World, event: &TraceEvent) {
        match event {
            TraceEvent::Connect { round, u, v, port_u, port_v } => {
                self.open_interval(*u, *port_u, *v, *round);
                self.open_interval(*v, *port_v, *u, *round);
            }
            TraceEvent::Disconnect { round, u, v, port_u, port_v } => {
                self.close_interval(*u, *port_u, *round);
                self.close_interval(*v, *port_v, *round);
                // Messages died with the channel and cleanup purges the peer
                // from every set: any outstanding obligation between the pair
                // is void, and a later reconnection starts a fresh exchange.
                self.pending_requests.remove(&(*u, *v));
                self.pending_requests.remove(&(*v, *u));
                self.owed_rebids.remove(&(*u, *v));
                self.owed_rebids.remove(&(*v, *u));
            }
            TraceEvent::ApiCall { round, node, call } => match call {
                ApiCall::Lock { pair_port } => {
                    self.lock_calls += 1;
                    self.lock_slot[*node] = Some((*round, *pair_port));
                }
                ApiCall::Unlock => self.unlock_calls += 1,
            },
            TraceEvent::Delivery { node, port, word, .. } => {
                self.attach_obligation(*node, *port, *word);
            }
            TraceEvent::Activation { round, node, action, effects, .. } => {
                self.discharge_obligations(*node, effects);
                self.track_request_lifecycle(world, *round, *node, *action, effects);
            }
        }
    }

    fn open_interval(&mut self, node: NodeId, port: Port, peer: NodeId, round: Round) {
        self.intervals
            .entry((node, port))
            .or_default()
            .push(PortInterval { peer, from: round, until: Round::MAX });
        self.port_peer.insert((node, port), peer);
    }

    fn close_interval(&mut self, node: NodeId, port: Port, round: Round) {
        if let Some(intervals) = self.intervals.get_mut(&(node, port)) {
            if let Some(last) = intervals.last_mut() {
                if last.until == Round::MAX {
                    last.until = round;
                }
            }
        }
        self.port_peer.remove(&(node, port));
    }

    /// The peer bound to (node, port) at `round`, if any.
    fn peer_at(&self, node: NodeId, port: Port, round: Round) -> Option<NodeId> {
        if port == 0 {
            return Some(node);
        }
        self.intervals.get(&(node, port))?.iter().find_map(|iv| {
            (iv.from <= round && round < iv.until).then_some(iv.peer)
        })
    }

    /// True when one binding incarnation of (node, port) covers all of
    /// `[from, to]`. The loopback port always qualifies.
    fn port_persistent(&self, node: NodeId, port: Port, from: Round, to: Round) -> bool {
        if port == 0 {
            return true;
        }
        self.intervals
            .get(&(node, port))
            .is_some_and(|ivs| ivs.iter().any(|iv| iv.from <= from && to < iv.until))
    }

    /// Records the obligation a just-delivered message creates: a received
    /// request-lock obliges the receiver (as participant) to answer with a
    /// win; a received win obliges the receiver (as initiator) to follow up
    /// with a fresh request-lock or a set-lock.
    fn attach_obligation(&mut self, receiver: NodeId, port: Port, word: u32) {
        let peer = if port == 0 {
            receiver
        } else {
            match self.port_peer.get(&(receiver, port)) {
                Some(&p) => p,
                None => return,
            }
        };
        match Message::decode(word, self.k) {
            Some(Message::RequestLock { .. }) => {
                self.pending_requests.insert((receiver, peer));
            }
            Some(Message::Win { .. }) => {
                self.owed_rebids.insert((receiver, peer));
            }
            _ => {}
        }
    }

    /// Clears the obligations an execution's sends fulfil. A dropped send
    /// (no sequence number) still discharges: the sender's part of the
    /// conversation is done, and the dead edge voids the exchange anyway.
    fn discharge_obligations(
        &mut self,
        sender: NodeId,
        effects: &crate::scheduler::EffectsRecord,
    ) {
        for send in &effects.sends {
            let peer = if send.port == 0 {
                sender
            } else {
                match self.port_peer.get(&(sender, send.port)) {
                    Some(&p) => p,
                    None => continue,
                }
            };
            match Message::decode(send.word, self.k) {
                Some(Message::Win { .. }) => {
                    self.pending_requests.remove(&(sender, peer));
                }
                Some(Message::RequestLock { .. }) | Some(Message::SetLock) => {
                    self.owed_rebids.remove(&(sender, peer));
                }
                _ => {}
            }
        }
    }

    fn track_request_lifecycle(
        &mut self,
        world: &World,
        round: Round,
        node: NodeId,
        action: ActionId,
        effects: &crate::scheduler::EffectsRecord,
    ) {
        match action {
            ActionId::InitLock => {
                let (call_round, pair_port) =
                    self.lock_slot[node].take().unwrap_or((round, None));
                if effects.api == Some(ApiOutcome::RequestRejected) {
                    self.lock_rejections += 1;
                    return;
                }
                let target = match pair_port {
                    Some(p) => LockTarget::Pair(p),
                    None => LockTarget::ClosedNeighborhood,
                };
                let mut neighbors = BTreeMap::new();
                match target {
                    LockTarget::ClosedNeighborhood => {
                        for (&(owner, port), _) in
                            self.intervals.range((node, 1)..=(node, Port::MAX))
                        {
                            debug_assert_eq!(owner, node);
                            if let Some(peer) = self.peer_at(node, port, round) {
                                neighbors.insert(port, peer);
                            }
                        }
                    }
                    LockTarget::Pair(p) => {
                        if let Some(peer) = self.peer_at(node, p, round) {
                            neighbors.insert(p, peer);
                        }
                    }
                }
                self.records.push(LockRequestRecord {
                    node,
                    call_round,
                    issue_round: round,
                    target,
                    neighbors_at_issue: neighbors,
                    success_round: None,
                    trials: 0,
                });
                self.open_record[node] = Some(self.records.len() - 1);
            }
            ActionId::CheckStart | ActionId::CheckWin => {
                let sent_requests = effects.sends.iter().any(|s| {
                    matches!(Message::decode(s.word, self.k), Some(Message::RequestLock { .. }))
                });
                let sent_setlocks = effects.sends.iter().any(|s| {
                    matches!(Message::decode(s.word, self.k), Some(Message::SetLock))
                });
                if sent_setlocks {
                    self.resolve_trial(node, true);
                }
                if sent_requests {
                    // A request batch both loses the previous trial (CheckWin
                    // retry) and starts the next one.
                    if action == ActionId::CheckWin {
                        self.resolve_trial(node, false);
                    }
                    if let Some(idx) = self.open_record[node] {
                        self.records[idx].trials += 1;
                    }
                    let participants: Vec<NodeId> = world.states[node]
                        .l
                        .iter()
                        .filter_map(|&p| self.peer_at(node, p, round))
                        .collect();
                    let open = participants.iter().all(|&p| self.prev_locks[p].is_none());
                    self.trials.push(Trial {
                        node,
                        start: round,
                        participants,
                        open,
                        outcome: None,
                    });
                    self.open_trial[node] = Some(self.trials.len() - 1);
                }
            }
            ActionId::CheckDone => {
                if let Some(ApiOutcome::LockSucceeded(claimed)) = &effects.api {
                    self.lock_successes += 1;
                    if let Some(idx) = self.open_record[node].take() {
                        self.records[idx].success_round = Some(round);
                        let issue_round = self.records[idx].issue_round;
                        let issued_ports: Vec<Port> =
                            self.records[idx].neighbors_at_issue.keys().copied().collect();
                        let mut required: BTreeSet<Port> = issued_ports
                            .into_iter()
                            .filter(|&p| self.port_persistent(node, p, issue_round, round))
                            .collect();
                        required.insert(0);
                        if *claimed != required {
                            self.violations.push(Violation::SuccessAnomaly {
                                node,
                                issue_round,
                                success_round: round,
                                claimed: claimed.clone(),
                                required,
                            });
                        }
                    }
                }
            }
            ActionId::CheckUnlocked if effects.api == Some(ApiOutcome::UnlockSucceeded) => {
                self.unlock_successes += 1;
            }
            _ => {}
        }
    }

    fn resolve_trial(&mut self, node: NodeId, won: bool) {
        if let Some(idx) = self.open_trial[node].take() {
            self.trials[idx].outcome = Some(won);
        }
    }

    // ------------------------------------------------------------------
    // Per-round world checks.
    // ------------------------------------------------------------------

    /// Held set of a locked node under two-sided agreement.
    fn held_set(&self, world: &World, holder: NodeId) -> BTreeSet<NodeId> {
        let mut held = BTreeSet::from([holder]);
        for &port in &world.states[holder].l {
            if port == 0 {
                continue;
            }
            let Some(&peer) = self.port_peer.get(&(holder, port)) else { continue };
            let agrees = world.states[peer].lock.is_some_and(|back| {
                back != 0 && self.port_peer.get(&(peer, back)) == Some(&holder)
            });
            if agrees {
                held.insert(peer);
            }
        }
        held
    }

    fn check_mutual_exclusion(&mut self, world: &World, round: Round) {
        let holders: Vec<NodeId> = (0..self.nodes)
            .filter(|&n| world.states[n].state == LockState::Locked)
            .collect();
        let sets: Vec<BTreeSet<NodeId>> =
            holders.iter().map(|&h| self.held_set(world, h)).collect();
        for i in 0..holders.len() {
            for j in (i + 1)..holders.len() {
                if let Some(&shared) = sets[i].intersection(&sets[j]).next() {
                    self.violations.push(Violation::MutualExclusion {
                        round,
                        holder_a: holders[i],
                        holder_b: holders[j],
                        shared,
                    });
                }
            }
        }
    }

    fn check_channel_bound(&mut self, world: &World, round: Round) {
        for (binding, channel) in world.topo.channels() {
            let occupancy = channel.occupancy();
            self.max_edge_channel_occupancy = self.max_edge_channel_occupancy.max(occupancy);
            if occupancy > 2 {
                self.violations.push(Violation::ChannelOverflow {
                    round,
                    u: binding.node_a,
                    v: binding.node_b,
                    occupancy,
                });
            }
        }
        for node in 0..self.nodes {
            self.max_loopback_occupancy =
                self.max_loopback_occupancy.max(world.topo.loopback_len(node));
        }
    }

    fn check_dependency_dag(&mut self, world: &World, round: Round) {
        if let Err(cycle) = dependency_cycle_check(
            world,
            &self.pending_requests,
            &self.owed_rebids,
            &self.port_peer,
        ) {
            self.violations.push(Violation::DependencyCycle { round, cycle });
        }
    }

    fn sample_trial_openness(&mut self, world: &World) {
        for &open_idx in self.open_trial.iter().flatten() {
            let trial = &mut self.trials[open_idx];
            if trial.open
                && trial.participants.iter().any(|&p| world.states[p].lock.is_some())
            {
                trial.open = false;
            }
        }
    }
}

/// Builds the dependency graph over (role, node) vertices and checks it for
/// directed cycles. Exposed for structural tests; [`Checker`] wires it to
/// its own obligation mirror.
///
/// Vertices: every node in state `Compete` as an initiator, and every
/// current member of a competing node's lock set as a participant (a node
/// can appear in both roles; the roles are distinct vertices). For an
/// initiator `u` and participant `v` connected now (or `u = v`):
/// * `u → v` when `u` has received a win from `v` and not yet sent the
///   follow-up — `u` owes `v` a request-lock (or set-lock);
/// * `v → u` when `v` has received a request-lock from `u` and not yet
///   answered — `v` owes `u` a win.
///
/// Obligations attach at receipt and discharge at send, so a message in
/// flight burdens no one and a sent answer clears its sender immediately.
fn dependency_cycle_check(
    world: &World,
    pending_requests: &BTreeSet<(NodeId, NodeId)>,
    owed_rebids: &BTreeSet<(NodeId, NodeId)>,
    port_peer: &BTreeMap<(NodeId, Port), NodeId>,
) -> Result<(), Vec<(DependencyRole, NodeId)>> {
    type Vertex = (DependencyRole, NodeId);
    let mut edges: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
    for (u, state) in world.states.iter().enumerate() {
        if state.state != LockState::Compete {
            continue;
        }
        for &port in &state.l {
            let v = if port == 0 {
                u
            } else {
                match port_peer.get(&(u, port)) {
                    Some(&peer) => peer,
                    None => continue,
                }
            };
            let initiator = (DependencyRole::Initiator, u);
            let participant = (DependencyRole::Participant, v);
            if owed_rebids.contains(&(u, v)) {
                edges.entry(initiator).or_default().push(participant);
            }
            if pending_requests.contains(&(v, u)) {
                edges.entry(participant).or_default().push(initiator);
            }
        }
    }

    // Iterative DFS three-color cycle search.
    let mut color: BTreeMap<Vertex, u8> = BTreeMap::new();
    let vertices: Vec<Vertex> = edges.keys().copied().collect();
    for &start in &vertices {
        if color.get(&start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(Vertex, usize)> = vec![(start, 0)];
        let mut path: Vec<Vertex> = Vec::new();
        while let Some(&mut (vertex, ref mut next)) = stack.last_mut() {
            if *next == 0 {
                color.insert(vertex, 1);
                path.push(vertex);
            }
            let successors = edges.get(&vertex).map(Vec::as_slice).unwrap_or(&[]);
            if *next < successors.len() {
                let succ = successors[*next];
                *next += 1;
                match color.get(&succ).copied().unwrap_or(0) {
                    0 => stack.push((succ, 0)),
                    1 => {
                        let cycle_start =
                            path.iter().position(|&p| p == succ).expect("gray is on path");
                        return Err(path[cycle_start..].to_vec());
                    }
                    _ => {}
                }
            } else {
                color.insert(vertex, 2);
                path.pop();
                stack.pop();
            }
        }
    }
    Ok(())
}
