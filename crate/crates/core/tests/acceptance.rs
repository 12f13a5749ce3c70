//! The acceptance campaign: ten standalone criteria checked against
//! randomized simulation runs at desk scale.
//!
//! Each criterion prints one `PASS`/`FAIL` verdict line directly on the
//! process stdout — deliberately bypassing libtest's output capture — so a
//! plain `cargo test --test acceptance` always shows all ten verdicts.
//!
//! Criteria 1–5 and 10 share one campaign of 500 checked lock-cycle runs
//! (mixed sizes, port budgets, and scheduling policies), built once behind a
//! `OnceLock` and executed in parallel. The remaining criteria run their own
//! dedicated workloads.

use std::io::Write as _;
use std::sync::OnceLock;

use lomex_core::checker::WILSON_Z_99;
use lomex_core::protocol::{draw_priority, encode_compact};
use lomex_core::scheduler::TraceEvent;
use lomex_core::{
    matching_violation, run_live, run_population, state_bits, verify_reduction, wilson_lower,
    win_rate_bound, wire_bits, ActivationPolicy, AgentProgram, AppKind, DeliveryPolicy,
    LockTarget, Mode, RunConfig, ViolationCounts, World,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Prints the verdict line on the real stdout, then enforces it.
fn verdict(number: u8, name: &str, pass: bool, detail: String) {
    let line = format!(
        "AC{number:02} {name:<24} {} — {detail}",
        if pass { "PASS" } else { "FAIL" },
    );
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "{line}").expect("stdout is writable");
    }
    assert!(pass, "{line}");
}

// ----------------------------------------------------------------------
// Shared campaign: 500 randomized checked runs + determinism re-runs.
// ----------------------------------------------------------------------

const CAMPAIGN_RUNS: usize = 500;
const CAMPAIGN_HORIZON: u64 = 5_000;

/// What the campaign keeps per run (traces are dropped to bound memory).
struct CampaignRun {
    nodes: usize,
    delta: u8,
    violations: ViolationCounts,
    issued: u64,
    succeeded: u64,
    rejected: u64,
    unresolved: u64,
    slow: u64,
    max_latency: Option<u64>,
    max_edge_occupancy: usize,
    open_trial_wins: u64,
    open_trial_total: u64,
    max_wire_word: u32,
    rerun_identical: bool,
}

/// Run `i` of the campaign: node counts, port budgets, and adversary
/// policies cycle so every combination appears many times.
fn campaign_config(i: usize) -> RunConfig {
    let mut config = RunConfig::new([4, 8, 16][i % 3], [2, 4][(i / 3) % 2]);
    config.seed = 1_000 + i as u64;
    config.horizon = CAMPAIGN_HORIZON;
    config.fairness_bound = 2;
    config.p_add = 0.05;
    config.p_del = 0.05;
    config.activation =
        if i % 2 == 0 { ActivationPolicy::All } else { ActivationPolicy::RandomSubset(0.7) };
    config.delivery =
        if (i / 2) % 2 == 0 { DeliveryPolicy::Random } else { DeliveryPolicy::OldestFirst };
    config
}

fn campaign() -> &'static [CampaignRun] {
    static CAMPAIGN: OnceLock<Vec<CampaignRun>> = OnceLock::new();
    CAMPAIGN.get_or_init(|| {
        (0..CAMPAIGN_RUNS)
            .into_par_iter()
            .map(|i| {
                let config = campaign_config(i);
                let out = run_live(config.clone(), AppKind::LockCycle).expect("campaign run");
                let rerun = run_live(config, AppKind::LockCycle).expect("campaign re-run");
                let rerun_identical =
                    out.trace.to_string_lossless() == rerun.trace.to_string_lossless();
                let (open_trial_wins, open_trial_total) = out.report.open_trial_outcomes();
                let max_wire_word = out
                    .trace
                    .events
                    .iter()
                    .filter_map(|event| match event {
                        TraceEvent::Activation { effects, .. } => {
                            effects.sends.iter().map(|send| send.word).max()
                        }
                        _ => None,
                    })
                    .max()
                    .unwrap_or(0);
                let summary = &out.summary;
                CampaignRun {
                    nodes: summary.config.nodes,
                    delta: summary.config.delta,
                    violations: summary.violations.clone(),
                    issued: summary.lock_requests_issued,
                    succeeded: summary.lock_requests_succeeded,
                    rejected: summary.lock_requests_rejected,
                    unresolved: summary.lock_requests_unresolved,
                    slow: summary.slow_requests,
                    max_latency: summary.latency.max,
                    max_edge_occupancy: out.report.max_edge_channel_occupancy,
                    open_trial_wins,
                    open_trial_total,
                    max_wire_word,
                    rerun_identical,
                }
            })
            .collect()
    })
}

#[test]
fn ac01_mutual_exclusion() {
    let runs = campaign();
    let intersections: u64 = runs.iter().map(|r| r.violations.mutual_exclusion).sum();
    verdict(
        1,
        "mutual exclusion",
        intersections == 0,
        format!(
            "{} runs × {} rounds, n ∈ {{4,8,16}}, Δ ∈ {{2,4}}: {intersections} lock-set \
             intersections",
            runs.len(),
            CAMPAIGN_HORIZON,
        ),
    );
}

#[test]
fn ac02_lockout_freedom() {
    let runs = campaign();
    let issued: u64 = runs.iter().map(|r| r.issued).sum();
    let succeeded: u64 = runs.iter().map(|r| r.succeeded).sum();
    let rejected: u64 = runs.iter().map(|r| r.rejected).sum();
    let unresolved: u64 = runs.iter().map(|r| r.unresolved).sum();
    let slow: u64 = runs.iter().map(|r| r.slow).sum();
    let max_latency = runs.iter().filter_map(|r| r.max_latency).max().unwrap_or(0);
    let pass = issued > 0 && succeeded == issued - rejected && unresolved == 0;
    verdict(
        2,
        "lockout freedom",
        pass,
        format!(
            "{succeeded}/{} issued requests succeeded before horizon ({unresolved} \
             unresolved, {rejected} rejected at call, {slow} slow); max latency \
             {max_latency} rounds",
            issued - rejected,
        ),
    );
}

#[test]
fn ac03_channel_bound() {
    let runs = campaign();
    let overflows: u64 = runs.iter().map(|r| r.violations.channel_overflow).sum();
    let occupancy = runs.iter().map(|r| r.max_edge_occupancy).max().unwrap_or(0);
    verdict(
        3,
        "channel bound",
        overflows == 0 && occupancy <= 2,
        format!(
            "0 edges ever held more than two messages ({overflows} overflow violations, \
             peak occupancy {occupancy})"
        ),
    );
}

#[test]
fn ac04_dependency_acyclicity() {
    let runs = campaign();
    let cycles: u64 = runs.iter().map(|r| r.violations.dependency_cycle).sum();
    verdict(
        4,
        "dependency acyclicity",
        cycles == 0,
        format!("per-round wait-graph cycle check over every run: {cycles} cycles"),
    );
}

#[test]
fn ac05_success_sets() {
    let runs = campaign();
    let anomalies: u64 = runs.iter().map(|r| r.violations.success_anomaly).sum();
    verdict(
        5,
        "success sets",
        anomalies == 0,
        format!(
            "every successful lock claimed exactly the persistent closed neighborhood \
             since issue: {anomalies} anomalies"
        ),
    );
}

#[test]
fn ac06_open_trial_win_rate() {
    // Open-trial outcomes from the Δ = 2 half of the campaign, topped up
    // with dedicated runs if they fall short of the sample floor.
    let mut wins: u64 = campaign()
        .iter()
        .filter(|r| r.delta == 2)
        .map(|r| r.open_trial_wins)
        .sum();
    let mut total: u64 = campaign()
        .iter()
        .filter(|r| r.delta == 2)
        .map(|r| r.open_trial_total)
        .sum();
    let mut extra_seed = 20_000;
    while total < 10_000 {
        let mut config = RunConfig::new(8, 2);
        config.seed = extra_seed;
        config.fairness_bound = 2;
        extra_seed += 1;
        let out = run_live(config, AppKind::LockCycle).expect("top-up run");
        let (w, t) = out.report.open_trial_outcomes();
        wins += w;
        total += t;
    }
    let bound = win_rate_bound(2, 8);
    let empirical = wins as f64 / total as f64;
    let wilson = wilson_lower(wins, total, WILSON_Z_99);

    // Two-competitor symmetric case: the drawing procedure itself, against
    // the exact enumeration over the 64 equally likely priority pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E57);
    let draws = 20_000u32;
    let unique_highest = (0..draws)
        .filter(|_| {
            let mine = draw_priority(&mut rng, 8);
            let other = draw_priority(&mut rng, 8);
            mine > other
        })
        .count();
    let pair_rate = f64::from(unique_highest as u32) / f64::from(draws);
    let oracle = 7.0 / 16.0;

    let pass = wilson >= bound && (pair_rate - oracle).abs() <= 0.02;
    verdict(
        6,
        "open-trial win rate",
        pass,
        format!(
            "{wins}/{total} open trials won (rate {empirical:.4}, Wilson-99% lower \
             {wilson:.4} ≥ bound {bound:.4}); 2-competitor rate {pair_rate:.4} within \
             ±0.02 of {oracle:.4}"
        ),
    );
}

#[test]
fn ac07_async_reduction() {
    let mismatches: usize = (0..100usize)
        .into_par_iter()
        .map(|i| {
            let mut config = RunConfig::new(6, 2);
            config.seed = 9_000 + i as u64;
            config.horizon = 2_000;
            config.fairness_bound = 2;
            config.mode = Mode::Async;
            config.async_max_duration = 5;
            let out = run_live(config, AppKind::LockCycle).expect("async run");
            usize::from(verify_reduction(&out.trace).is_err())
        })
        .sum();
    verdict(
        7,
        "async reduction",
        mismatches == 0,
        format!(
            "100 async runs (spans ≤ 5) reduced to semi-synchronous schedules and \
             replayed: {mismatches} outcome mismatches"
        ),
    );
}

#[test]
fn ac08_population_matching() {
    let results: Vec<(bool, bool)> = (0..100usize)
        .into_par_iter()
        .map(|i| {
            let mut config = RunConfig::new(16, 2);
            config.seed = 30_000 + i as u64;
            config.fairness_bound = 2;
            config.p_add = 0.1;
            let mut initial = vec![0u16; 16];
            initial[0] = 1;
            let (records, states) =
                run_population(AgentProgram::rumor(), config, initial, false)
                    .expect("population run");
            let is_matching = matching_violation(&records).is_none();
            let all_informed = states.iter().all(|&s| s == 1);
            (is_matching, all_informed)
        })
        .collect();
    let matching_failures = results.iter().filter(|(m, _)| !m).count();
    let informed = results.iter().filter(|(_, done)| *done).count();
    verdict(
        8,
        "population matching",
        matching_failures == 0 && informed >= 99,
        format!(
            "16-node rumor demo × 100 seeds: {matching_failures} non-matching rounds, \
             all agents informed in {informed}/100 runs"
        ),
    );
}

#[test]
fn ac09_resource_bounds() {
    // Memory: serialized node-state size must stay within c·Δ bits for one
    // constant c across the whole port-budget range. The per-node state is
    // a constant part plus per-port maps, so c fitted at Δ = 1 dominates.
    let deltas: [u8; 5] = [1, 2, 4, 8, 16];
    let k = 8;
    let c = state_bits(1, k);
    let mut bits_by_delta = Vec::new();
    let mut linear = true;
    for &delta in &deltas {
        let bits = state_bits(delta, k);
        linear &= bits <= c * delta as usize;
        bits_by_delta.push(format!("Δ={delta}:{bits}"));

        // The closed form must match what live states actually serialize
        // to: run a short workload and encode every final node state.
        let mut config = RunConfig::new(4, delta);
        config.seed = 40_000 + u64::from(delta);
        config.horizon = 400;
        config.fairness_bound = 2;
        config.p_add = 0.3;
        let mut world = World::new(config).expect("bounds run");
        for node in 0..4 {
            world.request_lock(node, LockTarget::ClosedNeighborhood);
        }
        while world.round < world.config.horizon {
            world.step_round(None).expect("bounds run steps");
        }
        for state in &world.states {
            let encoded = encode_compact(state, delta, k);
            assert_eq!(encoded.len(), bits.div_ceil(8), "closed form matches encoder");
        }
    }

    // Messages: the wire word never outgrows the Δ-independent width.
    let width = wire_bits(k);
    let max_word = campaign().iter().map(|r| r.max_wire_word).max().unwrap_or(0);
    let word_fits = u64::from(max_word) < (1u64 << width);
    verdict(
        9,
        "resource bounds",
        linear && word_fits,
        format!(
            "state bits ≤ {c}·Δ for Δ ∈ {{1,2,4,8,16}} ({}); wire words span {width} \
             bits at every Δ (max observed {max_word:#x})",
            bits_by_delta.join(", "),
        ),
    );
}

#[test]
fn ac10_determinism() {
    let runs = campaign();
    let divergent = runs.iter().filter(|r| !r.rerun_identical).count();
    verdict(
        10,
        "determinism",
        divergent == 0,
        format!(
            "{} runs re-executed with their seeds: {divergent} trace files differed",
            runs.len(),
        ),
    );
}

// The campaign varies every adversary knob the criteria call for; this
// pins the mix so a refactor cannot quietly narrow the coverage.
#[test]
fn campaign_mix_covers_the_grid() {
    let mut nodes = std::collections::BTreeSet::new();
    let mut deltas = std::collections::BTreeSet::new();
    let mut policies = std::collections::BTreeSet::new();
    for i in 0..CAMPAIGN_RUNS {
        let config = campaign_config(i);
        nodes.insert(config.nodes);
        deltas.insert(config.delta);
        policies.insert(format!("{:?}/{:?}", config.activation, config.delivery));
    }
    assert_eq!(nodes.into_iter().collect::<Vec<_>>(), vec![4, 8, 16]);
    assert_eq!(deltas.into_iter().collect::<Vec<_>>(), vec![2, 4]);
    assert_eq!(policies.len(), 4, "both activation × both delivery policies");
    let campaign = campaign();
    assert_eq!(campaign.len(), CAMPAIGN_RUNS);
    assert!(campaign.iter().all(|r| r.nodes >= 4 && r.delta >= 2));
}
