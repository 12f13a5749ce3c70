//! The randomized local locking protocol: per-node state, action guards,
//! and the pure transition function.
//!
//! A node interacts with the world only through its ports. Every action
//! execution receives the detector snapshot taken at its start and begins by
//! processing it (`CleanUp`), with one deliberate exception: a `SET_LOCK`
//! arrival assigns the lock variable and retires the winning candidate
//! *before* disconnections are processed, so a stale disconnection of the
//! same label correctly clears the fresh lock again.
//!
//! `execute` is pure: it never touches a topology. It returns the successor
//! state plus the messages to send and any API result to surface, and the
//! caller (scheduler or test) applies those effects.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{priority_bits, Message, Port};
use crate::tvg::MsgSeq;

/// Values of the `state` variable: the node's own progress through one
/// lock/unlock operation. `Idle` is the pseudocode's ⊥.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub enum LockState {
    #[default]
    Idle,
    Prepare,
    Compete,
    Win,
    Locked,
    Unlock,
}

/// Values of the `phase` variable: the node's role as a participant in
/// other nodes' operations. `Idle` is the pseudocode's ⊥.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    #[default]
    Idle,
    Prepare,
    Compete,
}

/// Complete protocol state of one node. All sets hold port labels; label 0
/// is the node itself.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeState {
    /// Which port holds this node's lock: `None` is the pseudocode's ⊥,
    /// `Some(0)` means the node locked itself.
    pub lock: Option<Port>,
    pub state: LockState,
    pub phase: Phase,
    /// Ports this node is trying to lock (fixed at `InitLock`, only shrinks).
    pub l: BTreeSet<Port>,
    /// Acknowledgements collected for the current wait (readies or acks).
    pub r: BTreeSet<Port>,
    /// Competition outcomes received from each member of `l`.
    pub w: BTreeMap<Port, bool>,
    /// Applicants put on hold while a competition is in progress.
    pub h: BTreeSet<Port>,
    /// Admitted applicants that have not yet requested the lock.
    pub a: BTreeSet<Port>,
    /// Candidates competing for this node's lock.
    pub c: BTreeSet<Port>,
    /// Priorities received from candidates in the current trial.
    pub p: BTreeMap<Port, u16>,
}

/// The sixteen protocol actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionId {
    InitLock,
    ReceivePrepare,
    ReceiveReady,
    CheckStart,
    CleanUpAction,
    ReceiveRequest,
    CheckPriorities,
    ReceiveWin,
    CheckWin,
    ReceiveSetLock,
    ReceiveAckLock,
    CheckDone,
    InitUnlock,
    ReceiveRelease,
    ReceiveAckUnlock,
    CheckUnlocked,
}

impl ActionId {
    pub const ALL: [ActionId; 16] = [
        ActionId::InitLock,
        ActionId::ReceivePrepare,
        ActionId::ReceiveReady,
        ActionId::CheckStart,
        ActionId::CleanUpAction,
        ActionId::ReceiveRequest,
        ActionId::CheckPriorities,
        ActionId::ReceiveWin,
        ActionId::CheckWin,
        ActionId::ReceiveSetLock,
        ActionId::ReceiveAckLock,
        ActionId::CheckDone,
        ActionId::InitUnlock,
        ActionId::ReceiveRelease,
        ActionId::ReceiveAckUnlock,
        ActionId::CheckUnlocked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionId::InitLock => "InitLock",
            ActionId::ReceivePrepare => "ReceivePrepare",
            ActionId::ReceiveReady => "ReceiveReady",
            ActionId::CheckStart => "CheckStart",
            ActionId::CleanUpAction => "CleanUp",
            ActionId::ReceiveRequest => "ReceiveRequest",
            ActionId::CheckPriorities => "CheckPriorities",
            ActionId::ReceiveWin => "ReceiveWin",
            ActionId::CheckWin => "CheckWin",
            ActionId::ReceiveSetLock => "ReceiveSetLock",
            ActionId::ReceiveAckLock => "ReceiveAckLock",
            ActionId::CheckDone => "CheckDone",
            ActionId::InitUnlock => "InitUnlock",
            ActionId::ReceiveRelease => "ReceiveRelease",
            ActionId::ReceiveAckUnlock => "ReceiveAckUnlock",
            ActionId::CheckUnlocked => "CheckUnlocked",
        }
    }

    pub fn from_name(name: &str) -> Option<ActionId> {
        ActionId::ALL.iter().copied().find(|a| a.name() == name)
    }

    /// The receive action that consumes a given message kind, if any.
    pub fn receiver_for(msg: Message) -> ActionId {
        match msg {
            Message::Prepare => ActionId::ReceivePrepare,
            Message::Ready => ActionId::ReceiveReady,
            Message::RequestLock { .. } => ActionId::ReceiveRequest,
            Message::Win { .. } => ActionId::ReceiveWin,
            Message::SetLock => ActionId::ReceiveSetLock,
            Message::AckLock => ActionId::ReceiveAckLock,
            Message::ReleaseLock => ActionId::ReceiveRelease,
            Message::AckUnlock => ActionId::ReceiveAckUnlock,
        }
    }

    pub fn is_receive(self) -> bool {
        matches!(
            self,
            ActionId::ReceivePrepare
                | ActionId::ReceiveReady
                | ActionId::ReceiveRequest
                | ActionId::ReceiveWin
                | ActionId::ReceiveSetLock
                | ActionId::ReceiveAckLock
                | ActionId::ReceiveRelease
                | ActionId::ReceiveAckUnlock
        )
    }
}

/// What an accepted `Lock` call should try to acquire.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LockTarget {
    /// The whole closed neighborhood at issue time (the protocol default).
    #[default]
    ClosedNeighborhood,
    /// Just the node itself and one chosen neighbor port.
    Pair(Port),
}

/// Result surfaced to the caller of the `Lock`/`Unlock` API.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApiOutcome {
    /// The lock operation completed; the set is the held ports (label 0 is
    /// the node itself).
    LockSucceeded(BTreeSet<Port>),
    UnlockSucceeded,
    /// The call arrived while the node could not serve it (`Lock` while not
    /// idle, `Unlock` while not holding locks). No protocol state changed.
    RequestRejected,
}

/// One outgoing message produced by an execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Send {
    pub port: Port,
    pub msg: Message,
    /// True if emitted by the CleanUp helper (the held-applicant flush)
    /// rather than the action body. CleanUp may legitimately address the
    /// same port as the body within one execution — e.g. a `READY` owed to a
    /// held applicant followed by the body's `PREPARE` to the same neighbor
    /// — so the two groups are tracked separately.
    pub from_cleanup: bool,
}

/// Everything an execution asks the outside world to do.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Effects {
    pub sends: Vec<Send>,
    pub api: Option<ApiOutcome>,
}

impl Effects {
    fn push_send(&mut self, port: Port, msg: Message, from_cleanup: bool) {
        debug_assert!(
            !self.sends.iter().any(|s| s.port == port && s.from_cleanup == from_cleanup),
            "duplicate {} send on port {port}",
            if from_cleanup { "cleanup" } else { "body" }
        );
        self.sends.push(Send { port, msg, from_cleanup });
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("action {action:?} is not enabled for this state/input")]
    NotEnabled { action: ActionId },
}

/// Immutable context an execution runs against.
#[derive(Clone, Debug)]
pub struct ExecCtx<'a> {
    /// Detector snapshot taken at the start of this execution.
    pub snapshot: &'a BTreeSet<Port>,
    /// The delivered message for receive actions: `(arrival port, message)`.
    pub incoming: Option<(Port, Message)>,
    /// Labels currently bound on the node (excluding the loopback port);
    /// used by `InitLock` to form the closed neighborhood.
    pub bound_ports: &'a BTreeSet<Port>,
    /// What an accepted `Lock` call should lock.
    pub lock_target: LockTarget,
    /// Priority range size of the run.
    pub k: u16,
}

/// Draws a competition priority uniformly from `0..k`.
pub fn draw_priority(rng: &mut impl RngCore, k: u16) -> u16 {
    if k == 1 {
        return 0;
    }
    rng.random_range(0..k)
}

/// Processes a detector snapshot against `state` in place, returning the
/// `READY` messages the flush owes to held applicants.
///
/// This is the pseudocode's `CleanUp` helper: forget every severed label
/// (clearing the lock variable if it pointed there), and — whenever no
/// competition is in progress — admit all held applicants and recompute the
/// participant phase.
pub fn apply_cleanup(state: &mut NodeState, snapshot: &BTreeSet<Port>) -> Vec<Send> {
    let mut sends = Vec::new();
    for &label in snapshot {
        if state.lock == Some(label) {
            state.lock = None;
        }
        state.l.remove(&label);
        state.r.remove(&label);
        state.w.remove(&label);
        state.h.remove(&label);
        state.a.remove(&label);
        state.c.remove(&label);
        state.p.remove(&label);
    }
    if state.c.is_empty() {
        for &label in &state.h {
            sends.push(Send { port: label, msg: Message::Ready, from_cleanup: true });
        }
        let held = std::mem::take(&mut state.h);
        state.a.extend(held);
        state.phase = if state.a.is_empty() { Phase::Idle } else { Phase::Prepare };
    }
    sends
}

/// True if `action`'s guard holds for `state` given the pending input.
///
/// API actions are guarded only by their call flags (which the caller
/// tracks), and receive actions by the availability of a matching message;
/// both therefore validate through `incoming`/caller context rather than
/// state. Check actions and the stand-alone CleanUp read the state proper.
pub fn guard_holds(state: &NodeState, action: ActionId, incoming: Option<&Message>) -> bool {
    let incoming_matches = |want: fn(&Message) -> bool| incoming.map(want).unwrap_or(false);
    match action {
        ActionId::InitLock | ActionId::InitUnlock => true,
        ActionId::ReceivePrepare => incoming_matches(|m| matches!(m, Message::Prepare)),
        ActionId::ReceiveReady => incoming_matches(|m| matches!(m, Message::Ready)),
        ActionId::ReceiveRequest => incoming_matches(|m| matches!(m, Message::RequestLock { .. })),
        ActionId::ReceiveWin => incoming_matches(|m| matches!(m, Message::Win { .. })),
        ActionId::ReceiveSetLock => incoming_matches(|m| matches!(m, Message::SetLock)),
        ActionId::ReceiveAckLock => incoming_matches(|m| matches!(m, Message::AckLock)),
        ActionId::ReceiveRelease => incoming_matches(|m| matches!(m, Message::ReleaseLock)),
        ActionId::ReceiveAckUnlock => incoming_matches(|m| matches!(m, Message::AckUnlock)),
        ActionId::CheckStart => state.state == LockState::Prepare && state.r == state.l,
        ActionId::CheckPriorities => {
            state.phase == Phase::Compete && state.c.len() == state.p.len()
        }
        ActionId::CheckWin => state.state == LockState::Compete && state.w.len() == state.l.len(),
        ActionId::CheckDone => state.state == LockState::Win && state.r == state.l,
        ActionId::CheckUnlocked => state.state == LockState::Unlock && state.r == state.l,
        ActionId::CleanUpAction => state.phase != Phase::Idle || state.state == LockState::Unlock,
    }
}

/// Executes one action against `state`, returning the successor state and
/// the effects to apply. Pure: equal inputs (including the RNG state) give
/// equal outputs.
///
/// The guard is re-validated at entry as a simulator bug guard; the
/// scheduler only selects enabled actions, so `NotEnabled` firing indicates
/// a harness defect, not an adversary behavior.
///
/// A pre-enabled action — one whose guard holds only after the entry
/// CleanUp processes the pending disconnection snapshot — is accepted:
/// since every execution begins with CleanUp, the guard is established by
/// the time the action body runs. This is what lets the scheduler unstick
/// a Check* action whose last missing response was severed after all other
/// messages were already consumed.
pub fn execute(
    state: &NodeState,
    action: ActionId,
    ctx: &ExecCtx,
    rng: &mut impl RngCore,
) -> Result<(NodeState, Effects), ProtocolError> {
    let incoming_msg = ctx.incoming.as_ref().map(|(_, m)| m);
    if !guard_holds(state, action, incoming_msg) {
        let mut cleaned = state.clone();
        apply_cleanup(&mut cleaned, ctx.snapshot);
        if !guard_holds(&cleaned, action, incoming_msg) {
            return Err(ProtocolError::NotEnabled { action });
        }
    }
    let mut s = state.clone();
    let mut eff = Effects::default();

    // SET_LOCK applies its assignment before disconnections are processed;
    // every other action starts with CleanUp.
    if action == ActionId::ReceiveSetLock {
        let (port, _) = ctx.incoming.expect("guard validated incoming");
        s.lock = Some(port);
        s.c.remove(&port);
    }
    for send in apply_cleanup(&mut s, ctx.snapshot) {
        eff.sends.push(send);
    }

    match action {
        ActionId::InitLock => {
            if s.state == LockState::Idle {
                s.state = LockState::Prepare;
                s.l = match ctx.lock_target {
                    LockTarget::ClosedNeighborhood => {
                        let mut l = ctx.bound_ports.clone();
                        l.insert(0);
                        l
                    }
                    // A pair target is honored only while its port is still
                    // bound. The targeted edge may die between the API call
                    // and this execution, possibly with its disconnection
                    // snapshot already consumed; admitting the dead label
                    // would leave it in L with nothing left to prune it and
                    // the operation could never finish. Degenerating to a
                    // self-lock keeps the call live; the caller sees the
                    // reduced lock set and can retry against a live port.
                    LockTarget::Pair(port) if ctx.bound_ports.contains(&port) => {
                        BTreeSet::from([0, port])
                    }
                    LockTarget::Pair(_) => BTreeSet::from([0]),
                };
                for &label in &s.l.clone() {
                    eff.push_send(label, Message::Prepare, false);
                }
            } else {
                eff.api = Some(ApiOutcome::RequestRejected);
            }
        }
        ActionId::ReceivePrepare => {
            let (port, _) = ctx.incoming.expect("guard validated incoming");
            if s.phase == Phase::Compete {
                s.h.insert(port);
            } else {
                s.a.insert(port);
                s.phase = Phase::Prepare;
                eff.push_send(port, Message::Ready, false);
            }
        }
        ActionId::ReceiveReady => {
            let (port, _) = ctx.incoming.expect("guard validated incoming");
            s.r.insert(port);
        }
        ActionId::CheckStart => {
            s.state = LockState::Compete;
            s.r.clear();
            s.w.clear();
            let priority = draw_priority(rng, ctx.k);
            for &label in &s.l.clone() {
                eff.push_send(label, Message::RequestLock { priority }, false);
            }
        }
        ActionId::CleanUpAction => {}
        ActionId::ReceiveRequest => {
            let (port, msg) = ctx.incoming.expect("guard validated incoming");
            let Message::RequestLock { priority } = msg else { unreachable!() };
            if s.c.contains(&port) {
                // A candidate refreshing its bid for the next trial.
                s.p.insert(port, priority);
                s.phase = Phase::Compete;
            } else if s.a.contains(&port) {
                if s.c.iter().all(|l| s.p.contains_key(l)) {
                    // No candidate has been answered and left waiting, so
                    // the trial that will fire next still answers everyone:
                    // the applicant may join it.
                    s.a.remove(&port);
                    s.c.insert(port);
                    s.p.insert(port, priority);
                    s.phase = Phase::Compete;
                } else {
                    // Some candidate was already answered and owes a fresh
                    // request before the next trial can fire. Admitting a
                    // newcomer now would leave its request unanswerable
                    // until that candidate returns, and two nodes in this
                    // position can each hold the request the other needs
                    // answered: a standstill. Turn the newcomer away with a
                    // loss instead; it stays an applicant and its redrawn
                    // request can join a later trial.
                    eff.push_send(port, Message::Win { outcome: false }, false);
                }
            }
            // A request from a port that is neither applicant nor candidate
            // has no live conversation behind it (READY always precedes
            // REQUEST_LOCK and reconnection wipes the channel): drop it.
        }
        ActionId::CheckPriorities => {
            let unique_highest = s
                .p
                .values()
                .max()
                .copied()
                .filter(|&top| s.p.values().filter(|&&p| p == top).count() == 1)
                .and_then(|top| s.p.iter().find(|(_, &p)| p == top).map(|(&l, _)| l));
            match (s.lock, unique_highest) {
                (None, Some(winner)) => {
                    eff.push_send(winner, Message::Win { outcome: true }, false);
                    for &label in &s.c {
                        if label != winner {
                            eff.push_send(label, Message::Win { outcome: false }, false);
                        }
                    }
                }
                _ => {
                    for &label in &s.c {
                        eff.push_send(label, Message::Win { outcome: false }, false);
                    }
                }
            }
            s.p.clear();
        }
        ActionId::ReceiveWin => {
            let (port, msg) = ctx.incoming.expect("guard validated incoming");
            let Message::Win { outcome } = msg else { unreachable!() };
            s.w.insert(port, outcome);
        }
        ActionId::CheckWin => {
            if s.w.values().any(|&won| !won) {
                let priority = draw_priority(rng, ctx.k);
                for &label in &s.l.clone() {
                    eff.push_send(label, Message::RequestLock { priority }, false);
                }
            } else {
                s.state = LockState::Win;
                s.r.clear();
                for &label in &s.l.clone() {
                    eff.push_send(label, Message::SetLock, false);
                }
            }
            s.w.clear();
        }
        ActionId::ReceiveSetLock => {
            // Lock assignment and candidate retirement already happened
            // above, before CleanUp.
            let (port, _) = ctx.incoming.expect("guard validated incoming");
            eff.push_send(port, Message::AckLock, false);
        }
        ActionId::ReceiveAckLock => {
            let (port, _) = ctx.incoming.expect("guard validated incoming");
            s.r.insert(port);
        }
        ActionId::CheckDone => {
            s.state = LockState::Locked;
            s.r.clear();
            eff.api = Some(ApiOutcome::LockSucceeded(s.l.clone()));
        }
        ActionId::InitUnlock => {
            if s.state == LockState::Locked {
                s.state = LockState::Unlock;
                s.r.clear();
                for &label in &s.l.clone() {
                    eff.push_send(label, Message::ReleaseLock, false);
                }
            } else {
                eff.api = Some(ApiOutcome::RequestRejected);
            }
        }
        ActionId::ReceiveRelease => {
            let (port, _) = ctx.incoming.expect("guard validated incoming");
            s.lock = None;
            eff.push_send(port, Message::AckUnlock, false);
        }
        ActionId::ReceiveAckUnlock => {
            let (port, _) = ctx.incoming.expect("guard validated incoming");
            s.r.insert(port);
        }
        ActionId::CheckUnlocked => {
            s.state = LockState::Idle;
            s.r.clear();
            eff.api = Some(ApiOutcome::UnlockSucceeded);
        }
    }
    Ok((s, eff))
}

/// One selectable action, optionally tied to the message it would consume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnabledAction {
    pub action: ActionId,
    /// For receive actions: the specific in-transit message this choice
    /// delivers, as `(arrival port, sequence number)`.
    pub message: Option<(Port, MsgSeq)>,
}

/// The choices open to the adversary for one node, plus the actions that
/// would become enabled after a stand-alone CleanUp of the current detector
/// accumulator (the "pre-enabled" set, which fairness must also age).
#[derive(Clone, Debug, Default)]
pub struct Enabled {
    pub choices: Vec<EnabledAction>,
    pub pre_enabled: Vec<ActionId>,
}

/// Computes the enabled set for one node.
///
/// `available` lists the in-transit messages currently deliverable to the
/// node as `(port, seq, message)`; each yields one choice of its matching
/// receive action. API actions are enabled by their pending call flags.
pub fn enabled_actions(
    state: &NodeState,
    available: &[(Port, MsgSeq, Message)],
    lock_api_called: bool,
    unlock_api_called: bool,
    detector_pending: &BTreeSet<Port>,
) -> Enabled {
    let mut out = Enabled::default();
    if lock_api_called {
        out.choices.push(EnabledAction { action: ActionId::InitLock, message: None });
    }
    if unlock_api_called {
        out.choices.push(EnabledAction { action: ActionId::InitUnlock, message: None });
    }
    for &(port, seq, msg) in available {
        out.choices.push(EnabledAction {
            action: ActionId::receiver_for(msg),
            message: Some((port, seq)),
        });
    }
    let state_guarded = [
        ActionId::CheckStart,
        ActionId::CheckPriorities,
        ActionId::CheckWin,
        ActionId::CheckDone,
        ActionId::CheckUnlocked,
        ActionId::CleanUpAction,
    ];
    for action in state_guarded {
        if guard_holds(state, action, None) {
            out.choices.push(EnabledAction { action, message: None });
        }
    }
    if !detector_pending.is_empty() {
        let mut after = state.clone();
        apply_cleanup(&mut after, detector_pending);
        for action in state_guarded {
            if guard_holds(&after, action, None) && !guard_holds(state, action, None) {
                out.pre_enabled.push(action);
            }
        }
    }
    out
}

/// Exact serialized size of a node state in bits, for the given run
/// parameters. Matches [`encode_compact`].
pub fn state_bits(delta: u8, k: u16) -> usize {
    let slots = delta as usize + 1;
    let lock_width = ceil_log2(delta as usize + 2);
    lock_width + 3 + 2 + 5 * slots + 2 * slots + (1 + priority_bits(k) as usize) * slots
}

fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Serializes a node state into a canonical little-endian bit stream of
/// exactly [`state_bits`] bits. The layout packs the lock variable, the two
/// scalar enums, five port-membership masks, the outcome map and the
/// priority map; everything is linear in the port bound.
pub fn encode_compact(state: &NodeState, delta: u8, k: u16) -> Vec<u8> {
    let mut w = BitWriter::default();
    let lock_width = ceil_log2(delta as usize + 2);
    let lock_value = match state.lock {
        None => 0,
        Some(port) => u64::from(port) + 1,
    };
    w.push(lock_value, lock_width);
    w.push(state.state as u64, 3);
    w.push(state.phase as u64, 2);
    for set in [&state.l, &state.r, &state.h, &state.a, &state.c] {
        for port in 0..=delta {
            w.push(u64::from(set.contains(&port)), 1);
        }
    }
    for port in 0..=delta {
        match state.w.get(&port) {
            Some(&outcome) => {
                w.push(1, 1);
                w.push(u64::from(outcome), 1);
            }
            None => w.push(0, 2),
        }
    }
    let pb = priority_bits(k) as usize;
    for port in 0..=delta {
        match state.p.get(&port) {
            Some(&pri) => {
                w.push(1, 1);
                w.push(u64::from(pri), pb);
            }
            None => w.push(0, 1 + pb),
        }
    }
    debug_assert_eq!(w.bits, state_bits(delta, k));
    w.bytes
}

/// Inverse of [`encode_compact`]. Used by round-trip tests and the state
/// hash machinery.
pub fn decode_compact(bytes: &[u8], delta: u8, k: u16) -> NodeState {
    let mut r = BitReader { bytes, pos: 0 };
    let lock_width = ceil_log2(delta as usize + 2);
    let mut s = NodeState {
        lock: match r.pull(lock_width) {
            0 => None,
            v => Some((v - 1) as Port),
        },
        ..NodeState::default()
    };
    s.state = match r.pull(3) {
        0 => LockState::Idle,
        1 => LockState::Prepare,
        2 => LockState::Compete,
        3 => LockState::Win,
        4 => LockState::Locked,
        _ => LockState::Unlock,
    };
    s.phase = match r.pull(2) {
        0 => Phase::Idle,
        1 => Phase::Prepare,
        _ => Phase::Compete,
    };
    let mut sets = [BTreeSet::new(), BTreeSet::new(), BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
    for set in &mut sets {
        for port in 0..=delta {
            if r.pull(1) == 1 {
                set.insert(port);
            }
        }
    }
    [s.l, s.r, s.h, s.a, s.c] = sets;
    for port in 0..=delta {
        if r.pull(1) == 1 {
            s.w.insert(port, r.pull(1) == 1);
        } else {
            r.pull(1);
        }
    }
    let pb = priority_bits(k) as usize;
    for port in 0..=delta {
        if r.pull(1) == 1 {
            s.p.insert(port, r.pull(pb) as u16);
        } else {
            r.pull(pb);
        }
    }
    s
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    fn push(&mut self, value: u64, width: usize) {
        debug_assert!(width == 64 || value < (1 << width));
        for i in 0..width {
            if self.bits.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if value >> i & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (self.bits % 8);
            }
            self.bits += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn pull(&mut self, width: usize) -> u64 {
        let mut value = 0;
        for i in 0..width {
            let byte = self.bytes[self.pos / 8];
            if byte >> (self.pos % 8) & 1 == 1 {
                value |= 1 << i;
            }
            self.pos += 1;
        }
        value
    }
}
