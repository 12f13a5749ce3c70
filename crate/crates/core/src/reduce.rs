//! Reduction of asynchronous runs to semi-synchronous ones.
//!
//! An asynchronous execution spans many rounds; its only observable
//! couplings to the rest of the run are the state left by the same node's
//! previous execution, the message it consumes, and the topology's history.
//! Those couplings form a causal partial order on executions: program order
//! (consecutive executions of one node) and message order (sender before
//! consumer). Scheduling every execution at its span-start round with
//! duration 1 — topology and API events untouched — linearizes that order
//! into a semi-synchronous schedule in which every execution reads the same
//! inputs and therefore produces the same outcome.
//!
//! [`reduce_to_semisync`] builds the causal DAG explicitly and topologically
//! sorts it before emitting the schedule; a cycle would mean executions
//! mutually caused each other and the simulator is broken, so it surfaces as
//! [`ReduceError::CyclicCausality`] rather than being papered over.
//! [`verify_reduction`] replays the reduced schedule and insists each
//! execution's effects match the original, one to one.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::message::Port;
use crate::protocol::ActionId;
use crate::scheduler::{
    ActivationPolicy, DeliveryPolicy, EffectsRecord, Mode, RoundScript, RunConfig, SchedulerError,
    ScriptedActivation, TraceEvent, World,
};
use crate::trace::TraceFile;
use crate::tvg::{MsgSeq, NodeId, Round};

#[derive(Debug, Error)]
pub enum ReduceError {
    /// The causal relation on executions contains a cycle. This indicates a
    /// simulator bug (a message consumed before it was sent); it must never
    /// fire on traces this crate produced.
    #[error("causal cycle through execution #{execution} (node {node}, round {round})")]
    CyclicCausality { execution: usize, node: NodeId, round: Round },
    #[error("trace references message seq {seq} that no recorded execution sent")]
    DanglingMessage { seq: MsgSeq },
    #[error(
        "outcome mismatch at execution #{index} (node {node}, round {round}): \
         original ran {original:?}, reduction ran {reduced:?}"
    )]
    OutcomeMismatch {
        index: usize,
        node: NodeId,
        round: Round,
        original: ActionId,
        reduced: ActionId,
    },
    #[error("reduction replay lost {missing} executions")]
    MissingExecutions { missing: usize },
    #[error(transparent)]
    Replay(#[from] SchedulerError),
}

/// One execution lifted out of a trace.
#[derive(Clone, Debug)]
struct Execution {
    node: NodeId,
    start: Round,
    action: ActionId,
    delivered: Option<(Port, MsgSeq)>,
    effects: EffectsRecord,
}

/// The product of a reduction: a scripted semi-synchronous run.
#[derive(Clone, Debug)]
pub struct Reduction {
    /// Configuration for the replay: the original's, with semi-synchronous
    /// timing and fully scripted policies.
    pub config: RunConfig,
    pub scripts: BTreeMap<Round, RoundScript>,
    /// Execution indices (into the original trace's activation order) in
    /// one valid causal order, as certified by the topological sort.
    pub causal_order: Vec<usize>,
}

/// Reduces an asynchronous trace to a semi-synchronous schedule containing
/// the same executions with the same outcomes.
pub fn reduce_to_semisync(trace: &TraceFile) -> Result<Reduction, ReduceError> {
    let executions: Vec<Execution> = trace
        .events
        .iter()
        .filter_map(|event| match event {
            TraceEvent::Activation { round, node, action, delivered, effects, .. } => {
                Some(Execution {
                    node: *node,
                    start: *round,
                    action: *action,
                    delivered: *delivered,
                    effects: effects.clone(),
                })
            }
            _ => None,
        })
        .collect();

    let causal_order = toposort_causal(&executions)?;

    // Emit the schedule: topology and API events at their original rounds,
    // each execution at its span start with duration 1. Span starts respect
    // the causal order (program successors start after their predecessor's
    // span, message consumers after the sender's span), which the sort above
    // certifies, so the single-round placement is causally consistent.
    let mut scripts: BTreeMap<Round, RoundScript> = BTreeMap::new();
    for event in &trace.events {
        match event {
            TraceEvent::Connect { round, u, v, .. } => {
                scripts.entry(*round).or_default().connects.push((*u, *v));
            }
            TraceEvent::Disconnect { round, u, v, .. } => {
                scripts.entry(*round).or_default().disconnects.push((*u, *v));
            }
            TraceEvent::ApiCall { round, node, call } => {
                scripts.entry(*round).or_default().api.push((*node, *call));
            }
            TraceEvent::Delivery { .. } | TraceEvent::Activation { .. } => {}
        }
    }
    for execution in &executions {
        scripts.entry(execution.start).or_default().activations.push(ScriptedActivation {
            node: execution.node,
            action: execution.action,
            delivered: execution.delivered,
            duration: 1,
            send_seqs: execution.effects.sends.iter().map(|s| s.seq).collect(),
        });
    }

    let mut config = trace.config.clone();
    config.mode = Mode::SemiSync;
    config.activation = ActivationPolicy::Scripted;
    config.delivery = DeliveryPolicy::Scripted;

    Ok(Reduction { config, scripts, causal_order })
}

/// Kahn's algorithm over program-order and message-order edges. Returns the
/// execution indices in a causal order, or the cycle participant found.
fn toposort_causal(executions: &[Execution]) -> Result<Vec<usize>, ReduceError> {
    let n = executions.len();
    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    let mut add_edge = |from: usize, to: usize, successors: &mut Vec<Vec<usize>>| {
        successors[from].push(to);
        indegree[to] += 1;
    };

    // Program order: consecutive executions of each node. Activation records
    // commit in span-end order, so sort per node by span start.
    let mut per_node: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (idx, execution) in executions.iter().enumerate() {
        per_node.entry(execution.node).or_default().push(idx);
    }
    for indices in per_node.values_mut() {
        indices.sort_by_key(|&i| executions[i].start);
        for pair in indices.windows(2) {
            add_edge(pair[0], pair[1], &mut successors);
        }
    }

    // Message order: the execution that sent seq s precedes the one that
    // consumed it.
    let mut sender_of: BTreeMap<MsgSeq, usize> = BTreeMap::new();
    for (idx, execution) in executions.iter().enumerate() {
        for send in &execution.effects.sends {
            if let Some(seq) = send.seq {
                sender_of.insert(seq, idx);
            }
        }
    }
    for (idx, execution) in executions.iter().enumerate() {
        if let Some((_, seq)) = execution.delivered {
            let &sender = sender_of
                .get(&seq)
                .ok_or(ReduceError::DanglingMessage { seq })?;
            add_edge(sender, idx, &mut successors);
        }
    }

    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(idx) = ready.pop() {
        order.push(idx);
        for &next in &successors[idx] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.push(next);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).expect("some node is on a cycle");
        return Err(ReduceError::CyclicCausality {
            execution: stuck,
            node: executions[stuck].node,
            round: executions[stuck].start,
        });
    }
    Ok(order)
}

/// Replays a reduction and checks execution-by-execution outcome equality
/// with the original trace. Executions are matched by their (span start,
/// node) key, which is unique: a node starts at most one execution per round.
pub fn verify_reduction(trace: &TraceFile) -> Result<(), ReduceError> {
    let reduction = reduce_to_semisync(trace)?;
    let mut world = World::new(reduction.config.clone())?;
    let empty = RoundScript::default();
    while world.round < world.config.horizon {
        let script = reduction.scripts.get(&world.round).unwrap_or(&empty);
        world.step_round(Some(script))?;
    }

    let key_of = |events: &[TraceEvent]| -> BTreeMap<(Round, NodeId), (ActionId, EffectsRecord)> {
        events
            .iter()
            .filter_map(|event| match event {
                TraceEvent::Activation { round, node, action, effects, .. } => {
                    Some(((*round, *node), (*action, effects.clone())))
                }
                _ => None,
            })
            .collect()
    };
    let original = key_of(&trace.events);
    let reduced = key_of(&world.trace);
    if original.len() != reduced.len() {
        return Err(ReduceError::MissingExecutions {
            missing: original.len().abs_diff(reduced.len()),
        });
    }
    for (index, ((&(round, node), (orig_action, orig_effects)), (_, (red_action, red_effects)))) in
        original.iter().zip(reduced.iter()).enumerate()
    {
        if orig_action != red_action || !orig_effects.same_outcome(red_effects) {
            return Err(ReduceError::OutcomeMismatch {
                index,
                node,
                round,
                original: *orig_action,
                reduced: *red_action,
            });
        }
    }
    Ok(())
}
