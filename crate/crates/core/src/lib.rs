//! Deterministic, seedable simulator for a randomized local mutual exclusion
//! protocol running on adversarially time-varying graphs.
//!
//! The crate is organized in layers:
//!
//! - [`message`] — the eight-message wire vocabulary and its compact encoding;
//! - [`tvg`] — the time-varying communication graph: port-labelled edges,
//!   bounded channels, the disconnection detector, and the presence log;
//! - [`protocol`] — the per-node automaton: guarded actions over a constant
//!   number of port-indexed registers, executed as pure state transitions;
//! - [`scheduler`] — semi-synchronous and asynchronous drivers with weak
//!   fairness, topology dynamics, and trace recording;
//! - [`reduce`] — the async-to-semi-sync execution mapping and its replay
//!   equivalence check;
//! - [`checker`] — runtime monitors: mutual exclusion, lock-success shape,
//!   channel occupancy, the wait-for dependency graph, and win-rate bounds;
//! - [`apps`] — demo drivers built on the Lock/Unlock API, including the
//!   pairwise population-protocol runner;
//! - [`trace`], [`scenario`], [`summary`], [`runner`] — file formats and
//!   orchestration for the command-line front end.

pub mod apps;
pub mod checker;
pub mod message;
pub mod protocol;
pub mod reduce;
pub mod runner;
pub mod scenario;
pub mod scheduler;
pub mod summary;
pub mod trace;
pub mod tvg;

pub use apps::{
    matching_violation, run_population, AgentProgram, ClientError, InteractionRecord,
    LockClient, PopulationError, PopulationSim, TableError,
};
pub use checker::{
    measure_open_trial_win_rate, wilson_lower, win_rate_bound, Checker, CheckerReport,
    LockRequestRecord, Trial, Violation,
};
pub use message::{wire_bits, wire_bytes, Message, Port};
pub use protocol::{
    enabled_actions, execute, state_bits, ActionId, ApiOutcome, Effects, ExecCtx, LockState,
    LockTarget, NodeState, Phase, ProtocolError, Send,
};
pub use reduce::{reduce_to_semisync, verify_reduction, ReduceError, Reduction};
pub use runner::{issue_cutoff, replay_trace, run_live, AppKind, ReplayOutput, RunOutput, RunnerError};
pub use scenario::{parse_mode, Scenario, ScenarioError};
pub use scheduler::{
    ActivationPolicy, ApiCall, DeliveryPolicy, EdgeEvent, Mode, RoundScript, RunConfig,
    SchedulerError, ScriptedActivation, TraceEvent, World,
};
pub use summary::{LatencySummary, RunSummary, ViolationCounts};
pub use trace::TraceFile;
pub use tvg::{MsgSeq, NodeId, Round, Topology, TvgError};
