//! Run orchestration: drive one configured world under a workload, observe
//! every round with the checker, and package the result as a summary plus a
//! replayable trace.
//!
//! Three workloads cover the interesting ground: [`AppKind::LockCycle`]
//! keeps every node cycling Lock → Unlock → Lock (maximum contention),
//! [`AppKind::Population`] runs the rumor-spreading population protocol on
//! top of the lock layer, and [`AppKind::Idle`] issues nothing so only the
//! topology moves. Replaying a recorded trace with [`replay_trace`] rebuilds
//! the run decision-for-decision, re-runs the checker, and reports whether
//! the rebuilt world hashes to the recorded footer.

use thiserror::Error;

use crate::apps::{AgentProgram, PopulationError, PopulationSim};
use crate::checker::{Checker, CheckerReport};
use crate::protocol::{ApiOutcome, LockTarget};
use crate::scheduler::{RoundScript, RunConfig, SchedulerError, TraceEvent, World};
use crate::summary::RunSummary;
use crate::trace::TraceFile;
use crate::tvg::NodeId;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

/// The workload driving API calls during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AppKind {
    /// Every node locks its closed neighborhood, unlocks on success, and
    /// locks again — re-issuing until close to the horizon.
    #[default]
    LockCycle,
    /// Rumor-spreading population protocol; node 0 starts informed.
    Population,
    /// No API calls; the protocol idles while the topology churns.
    Idle,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub report: CheckerReport,
    pub trace: TraceFile,
    /// Final agent states, present when the population workload ran.
    pub agent_states: Option<Vec<u16>>,
}

/// Rounds before the horizon at which the lock-cycle workload stops issuing
/// new requests: the checker's own progress threshold. A request issued
/// with less room than this could be cut off mid-flight by the horizon and
/// would count as unresolved without indicating any protocol problem.
pub fn issue_cutoff(config: &RunConfig) -> u64 {
    let delta = config.delta as u64;
    let threshold = 10 * config.fairness_bound * (delta * delta + 1);
    config.horizon.saturating_sub(threshold)
}

/// Runs `config` to its horizon under the chosen workload, with the checker
/// observing every round.
pub fn run_live(config: RunConfig, app: AppKind) -> Result<RunOutput, RunnerError> {
    match app {
        AppKind::Idle => {
            let mut world = World::new(config)?;
            let mut checker = Checker::new(&world.config);
            while world.round < world.config.horizon {
                step_checked(&mut world, &mut checker, None)?;
            }
            Ok(package(world, checker, None))
        }
        AppKind::LockCycle => {
            let mut world = World::new(config)?;
            let mut checker = Checker::new(&world.config);
            let cutoff = issue_cutoff(&world.config);
            let mut driver = CycleDriver::new(world.config.nodes);
            while world.round < world.config.horizon {
                driver.issue(&mut world, cutoff);
                step_checked(&mut world, &mut checker, None)?;
                driver.absorb(&mut world);
            }
            Ok(package(world, checker, None))
        }
        AppKind::Population => {
            let nodes = config.nodes;
            let mut initial = vec![0u16; nodes];
            initial[0] = 1;
            let mut sim = PopulationSim::new(AgentProgram::rumor(), config, initial, false)?;
            let mut checker = Checker::new(&sim.world.config);
            while sim.world.round < sim.world.config.horizon {
                let range = sim.step()?;
                let events: Vec<TraceEvent> = sim.world.trace[range].to_vec();
                checker.observe_round(&sim.world, &events);
            }
            let states = sim.states.clone();
            Ok(package(sim.world, checker, Some(states)))
        }
    }
}

/// Replays a recorded trace round for round with the checker re-attached.
pub fn replay_trace(trace: &TraceFile) -> Result<ReplayOutput, RunnerError> {
    let mut world = World::new(trace.config.clone())?;
    let mut checker = Checker::new(&world.config);
    let scripts = trace.scripts();
    let empty = RoundScript::default();
    while world.round < world.config.horizon {
        let script = scripts.get(&world.round).unwrap_or(&empty);
        step_checked(&mut world, &mut checker, Some(script))?;
    }
    let hash_matches = trace.final_hash.map(|recorded| recorded == world.state_hash());
    Ok(ReplayOutput { output: package(world, checker, None), hash_matches })
}

/// A replay plus the verdict on its final-state hash: `Some(true)` matched,
/// `Some(false)` diverged, `None` when the trace had no footer to check.
#[derive(Clone, Debug)]
pub struct ReplayOutput {
    pub output: RunOutput,
    pub hash_matches: Option<bool>,
}

fn step_checked(
    world: &mut World,
    checker: &mut Checker,
    script: Option<&RoundScript>,
) -> Result<(), SchedulerError> {
    let range = world.step_round(script)?;
    let events: Vec<TraceEvent> = world.trace[range].to_vec();
    checker.observe_round(world, &events);
    Ok(())
}

fn package(world: World, checker: Checker, agent_states: Option<Vec<u16>>) -> RunOutput {
    let trace = TraceFile {
        config: world.config.clone(),
        events: world.trace.clone(),
        final_hash: Some(world.state_hash()),
    };
    let report = checker.finish();
    let summary = RunSummary::build(&world, &report);
    RunOutput { summary, report, trace, agent_states }
}

/// Lock → Unlock → Lock cycling for every node. Issues through the queued
/// API, watching outcomes to keep one operation in flight per node.
struct CycleDriver {
    phase: Vec<CyclePhase>,
    outcomes_seen: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum CyclePhase {
    Free,
    Locking,
    Unlocking,
}

impl CycleDriver {
    fn new(nodes: usize) -> CycleDriver {
        CycleDriver { phase: vec![CyclePhase::Free; nodes], outcomes_seen: 0 }
    }

    /// Queues a lock for every free node, while there is room to finish.
    fn issue(&mut self, world: &mut World, cutoff: u64) {
        if world.round >= cutoff {
            return;
        }
        for node in 0..world.config.nodes {
            if self.phase[node] == CyclePhase::Free {
                world.request_lock(node, LockTarget::ClosedNeighborhood);
                self.phase[node] = CyclePhase::Locking;
            }
        }
    }

    /// Reacts to fresh outcomes: unlock after a grant, free after release.
    fn absorb(&mut self, world: &mut World) {
        let fresh: Vec<(NodeId, ApiOutcome)> = world.api_outcomes[self.outcomes_seen..]
            .iter()
            .map(|(_, node, outcome)| (*node, outcome.clone()))
            .collect();
        self.outcomes_seen = world.api_outcomes.len();
        for (node, outcome) in fresh {
            match outcome {
                ApiOutcome::LockSucceeded(_) => {
                    world.request_unlock(node);
                    self.phase[node] = CyclePhase::Unlocking;
                }
                ApiOutcome::UnlockSucceeded => self.phase[node] = CyclePhase::Free,
                // Cannot happen under the one-in-flight discipline; recover
                // by letting the node try again.
                ApiOutcome::RequestRejected => self.phase[node] = CyclePhase::Free,
            }
        }
    }
}
