//! Scenario files: TOML run descriptions consumed by the command line.
//!
//! A scenario sets any subset of the run parameters and optionally scripts
//! topology changes; whatever it leaves out keeps its default, and flags on
//! the command line override the file. The full schema:
//!
//! ```toml
//! # Ring of four with a chord flickering mid-run.
//! nodes = 4                 # node count
//! delta = 2                 # port budget per node
//! k = 8                     # priority range {0..k-1}
//! mode = "semisync"         # or "async"
//! seed = 11                 # 64-bit run seed
//! horizon = 2000            # round limit (exclusive)
//! fairness = 16             # weak-fairness forcing bound F, in rounds
//! max_span = 1              # longest async execution span (async mode)
//! p_add = 0.0               # per-pair connect probability per round
//! p_del = 0.0               # per-edge drop probability per round
//! initial_edges = [[0, 1], [1, 2], [2, 3], [3, 0]]
//!
//! [[events]]                # scripted changes, applied before that
//! round = 100               # round's random dynamics (round ≥ 1)
//! action = "connect"        # or "disconnect"
//! u = 0
//! v = 2
//!
//! [[events]]
//! round = 400
//! action = "disconnect"
//! u = 0
//! v = 2
//! ```
//!
//! Unknown keys are errors — a typo that silently changed nothing would be
//! worse than a parse failure.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::scheduler::{EdgeEvent, Mode, RunConfig};
use crate::tvg::{NodeId, Round};

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// TOML syntax or schema problem; the message carries line/column.
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("mode must be `semisync` or `async`, got `{0}`")]
    BadMode(String),
}

/// Parses a timing-mode name as the command line and scenario files spell
/// it. Accepts `semi_sync`/`semi-sync` as aliases for `semisync`.
pub fn parse_mode(text: &str) -> Option<Mode> {
    match text {
        "semisync" | "semi_sync" | "semi-sync" => Some(Mode::SemiSync),
        "async" => Some(Mode::Async),
        _ => None,
    }
}

/// One scripted topology change in a scenario file.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    pub round: Round,
    pub action: EdgeAction,
    pub u: NodeId,
    pub v: NodeId,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum EdgeAction {
    Connect,
    Disconnect,
}

/// A parsed scenario: every field optional, applied over a base
/// configuration with [`Scenario::apply`].
#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub nodes: Option<usize>,
    pub delta: Option<u8>,
    pub k: Option<u16>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub fairness: Option<u64>,
    pub max_span: Option<u64>,
    pub p_add: Option<f64>,
    pub p_del: Option<f64>,
    #[serde(default)]
    pub initial_edges: Vec<(NodeId, NodeId)>,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        Scenario::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Overlays this scenario on `base` and returns the combined
    /// configuration. Structural validation (node bounds, probability
    /// ranges, event collisions) happens when the world is built.
    pub fn apply(&self, mut base: RunConfig) -> Result<RunConfig, ScenarioError> {
        if let Some(nodes) = self.nodes {
            base.nodes = nodes;
        }
        if let Some(delta) = self.delta {
            base.delta = delta;
        }
        if let Some(k) = self.k {
            base.k = k;
        }
        if let Some(mode) = &self.mode {
            base.mode =
                parse_mode(mode).ok_or_else(|| ScenarioError::BadMode(mode.clone()))?;
        }
        if let Some(seed) = self.seed {
            base.seed = seed;
        }
        if let Some(horizon) = self.horizon {
            base.horizon = horizon;
        }
        if let Some(fairness) = self.fairness {
            base.fairness_bound = fairness;
        }
        if let Some(max_span) = self.max_span {
            base.async_max_duration = max_span;
        }
        if let Some(p_add) = self.p_add {
            base.p_add = p_add;
        }
        if let Some(p_del) = self.p_del {
            base.p_del = p_del;
        }
        if !self.initial_edges.is_empty() {
            base.initial_edges = self.initial_edges.clone();
        }
        if !self.events.is_empty() {
            base.edge_events = self
                .events
                .iter()
                .map(|e| EdgeEvent {
                    round: e.round,
                    connect: e.action == EdgeAction::Connect,
                    u: e.u,
                    v: e.v,
                })
                .collect();
        }
        Ok(base)
    }
}
