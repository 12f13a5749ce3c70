//! Run summaries: the aggregate a finished run (or a replayed trace)
//! reduces to for reporting.
//!
//! A [`RunSummary`] is pure data — serializable, comparable — so the same
//! numbers can be printed by the command line, recomputed from a trace
//! file, and asserted on in tests. Building one from a live run and from a
//! replay of that run's trace must give identical values; that equality is
//! what makes `stats` trustworthy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checker::{CheckerReport, Violation};
use crate::scheduler::{RunConfig, TraceEvent, World};

/// Violation tallies by property. All zero in a conforming run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub mutual_exclusion: u64,
    pub channel_overflow: u64,
    pub dependency_cycle: u64,
    pub success_anomaly: u64,
}

impl ViolationCounts {
    pub fn tally(violations: &[Violation]) -> ViolationCounts {
        let mut counts = ViolationCounts::default();
        for violation in violations {
            match violation {
                Violation::MutualExclusion { .. } => counts.mutual_exclusion += 1,
                Violation::ChannelOverflow { .. } => counts.channel_overflow += 1,
                Violation::DependencyCycle { .. } => counts.dependency_cycle += 1,
                Violation::SuccessAnomaly { .. } => counts.success_anomaly += 1,
            }
        }
        counts
    }

    pub fn total(&self) -> u64 {
        self.mutual_exclusion
            + self.channel_overflow
            + self.dependency_cycle
            + self.success_anomaly
    }
}

/// Lock-success latencies in rounds, nearest-rank percentiles. `None` when
/// no request succeeded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: Option<u64>,
    pub p90: Option<u64>,
    pub p99: Option<u64>,
    pub max: Option<u64>,
}

impl LatencySummary {
    pub fn from_latencies(latencies: &[u64]) -> LatencySummary {
        let mut sorted = latencies.to_vec();
        sorted.sort_unstable();
        LatencySummary {
            p50: percentile_nearest_rank(&sorted, 50),
            p90: percentile_nearest_rank(&sorted, 90),
            p99: percentile_nearest_rank(&sorted, 99),
            max: sorted.last().copied(),
        }
    }
}

/// Nearest-rank percentile: the smallest element with at least `percent`%
/// of the sample at or below it.
fn percentile_nearest_rank(sorted: &[u64], percent: u64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = (percent * n).div_ceil(100).max(1);
    Some(sorted[(rank - 1) as usize])
}

/// Everything a run reduces to: configuration echo, request accounting,
/// latency shape, message accounting, and the violation tallies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config: RunConfig,
    /// Rounds actually executed.
    pub rounds: u64,
    /// True when the run used its whole round budget.
    pub horizon_reached: bool,
    pub lock_requests_issued: u64,
    pub lock_requests_succeeded: u64,
    pub lock_requests_rejected: u64,
    /// Issued but unresolved when the run ended.
    pub lock_requests_unresolved: u64,
    /// Succeeded, but slower than the `10·F·(Δ²+1)` progress threshold.
    pub slow_requests: u64,
    pub unlock_calls: u64,
    pub unlock_successes: u64,
    pub latency: LatencySummary,
    /// Competition trials per issued request → number of requests.
    pub trials_per_request: BTreeMap<u64, u64>,
    pub violations: ViolationCounts,
    /// Send attempts, including sends dropped because their edge broke.
    pub messages_sent: u64,
    pub messages_delivered: u64,
    /// Sent but never delivered: dropped at send or died with an edge.
    pub messages_lost: u64,
    /// Still in flight when the run ended.
    pub messages_in_transit: u64,
    /// Hex FNV hash of the final world state; equals the trace footer.
    pub final_state_hash: String,
}

impl RunSummary {
    /// Reduces a finished world plus its checker report to the summary.
    pub fn build(world: &World, report: &CheckerReport) -> RunSummary {
        let mut sent = 0u64;
        let mut delivered = 0u64;
        for event in &world.trace {
            match event {
                TraceEvent::Activation { effects, .. } => {
                    sent += effects.sends.len() as u64;
                }
                TraceEvent::Delivery { .. } => delivered += 1,
                _ => {}
            }
        }
        let in_transit: u64 = (0..world.config.nodes)
            .map(|node| world.topo.in_transit_to(node).len() as u64)
            .sum();
        let mut trials_per_request: BTreeMap<u64, u64> = BTreeMap::new();
        for record in &report.records {
            *trials_per_request.entry(record.trials).or_default() += 1;
        }
        RunSummary {
            seed: world.config.seed,
            config: world.config.clone(),
            rounds: world.round,
            horizon_reached: world.round >= world.config.horizon,
            lock_requests_issued: report.lock_calls,
            lock_requests_succeeded: report.lock_successes,
            lock_requests_rejected: report.lock_rejections,
            lock_requests_unresolved: report.unresolved_requests,
            slow_requests: report.slow_requests,
            unlock_calls: report.unlock_calls,
            unlock_successes: report.unlock_successes,
            latency: LatencySummary::from_latencies(&report.latencies()),
            trials_per_request,
            violations: ViolationCounts::tally(&report.violations),
            messages_sent: sent,
            messages_delivered: delivered,
            messages_lost: sent - delivered - in_transit,
            messages_in_transit: in_transit,
            final_state_hash: format!("{:016x}", world.state_hash()),
        }
    }

    /// True when no property was violated.
    pub fn clean(&self) -> bool {
        self.violations.total() == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
