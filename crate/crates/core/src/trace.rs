//! Trace files: line-delimited records, written by runs, consumed by replay.
//!
//! Layout:
//!
//! ```text
//! #lomex-trace v1
//! {"nodes":4,"delta":2,...}          ← the run's configuration, one JSON object
//! {"kind":"CONNECT",...}             ← one JSON record per trace event
//! {"kind":"ACTIVATION",...}
//! #final 1a2b3c4d5e6f7081            ← hash of the committed final state
//! ```
//!
//! Events appear in commit order, so replaying a file top to bottom
//! reproduces the run; the footer hash lets a replayer verify it arrived at
//! the same final state without access to the original process.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::scheduler::{RoundScript, RunConfig, ScriptedActivation, TraceEvent};
use crate::tvg::Round;

const HEADER: &str = "#lomex-trace v1";
const FOOTER_PREFIX: &str = "#final ";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("missing header line `{HEADER}`")]
    MissingHeader,
    #[error("missing configuration line")]
    MissingConfig,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A parsed trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub config: RunConfig,
    pub events: Vec<TraceEvent>,
    /// Final state hash, when the producing run recorded one.
    pub final_hash: Option<u64>,
}

impl TraceFile {
    /// Serializes the trace to a writer. `final_hash` comes from
    /// [`crate::scheduler::World::state_hash`] at the end of the run.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{HEADER}")?;
        let config = serde_json::to_string(&self.config).expect("config serializes");
        writeln!(out, "{config}")?;
        for event in &self.events {
            let line = serde_json::to_string(event).expect("event serializes");
            writeln!(out, "{line}")?;
        }
        if let Some(hash) = self.final_hash {
            writeln!(out, "{FOOTER_PREFIX}{hash:016x}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)
    }

    /// The whole file as a string (handy for byte-identity checks).
    pub fn to_string_lossless(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace files are UTF-8")
    }

    /// Parses a trace from a reader, reporting the first offending line.
    pub fn read_from<R: BufRead>(input: R) -> Result<TraceFile, ParseError> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(ParseError::MissingHeader)?;
        if header?.trim_end() != HEADER {
            return Err(ParseError::MissingHeader);
        }
        let (_, config_line) = lines.next().ok_or(ParseError::MissingConfig)?;
        let config_line = config_line?;
        let config: RunConfig = serde_json::from_str(&config_line).map_err(|e| {
            ParseError::Malformed { line: 2, reason: format!("bad configuration: {e}") }
        })?;
        let mut events = Vec::new();
        let mut final_hash = None;
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim_end();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(hex) = trimmed.strip_prefix(FOOTER_PREFIX) {
                final_hash = Some(u64::from_str_radix(hex, 16).map_err(|e| {
                    ParseError::Malformed { line: lineno, reason: format!("bad final hash: {e}") }
                })?);
                continue;
            }
            if trimmed.starts_with('#') {
                return Err(ParseError::Malformed {
                    line: lineno,
                    reason: format!("unknown directive `{trimmed}`"),
                });
            }
            let event: TraceEvent = serde_json::from_str(trimmed).map_err(|e| {
                ParseError::Malformed { line: lineno, reason: e.to_string() }
            })?;
            events.push(event);
        }
        Ok(TraceFile { config, events, final_hash })
    }

    pub fn load(path: &Path) -> Result<TraceFile, ParseError> {
        let file = std::fs::File::open(path)?;
        TraceFile::read_from(io::BufReader::new(file))
    }

    /// Converts the recorded events into per-round replay scripts: topology
    /// and API events keyed by their round, each activation keyed by its
    /// span start with its original duration and sequence numbers.
    pub fn scripts(&self) -> std::collections::BTreeMap<Round, RoundScript> {
        scripts_from_events(&self.events)
    }

    /// Renders a short human summary (event counts by kind), used by
    /// diagnostics.
    pub fn describe(&self) -> String {
        let mut connects = 0usize;
        let mut disconnects = 0usize;
        let mut api = 0usize;
        let mut deliveries = 0usize;
        let mut activations = 0usize;
        for event in &self.events {
            match event {
                TraceEvent::Connect { .. } => connects += 1,
                TraceEvent::Disconnect { .. } => disconnects += 1,
                TraceEvent::ApiCall { .. } => api += 1,
                TraceEvent::Delivery { .. } => deliveries += 1,
                TraceEvent::Activation { .. } => activations += 1,
            }
        }
        let mut out = String::new();
        let _ = write!(
            out,
            "{} events: {activations} activations, {deliveries} deliveries, \
             {connects} connects, {disconnects} disconnects, {api} api calls",
            self.events.len()
        );
        out
    }
}

/// Rebuilds per-round adversary scripts from recorded events.
pub fn scripts_from_events(
    events: &[TraceEvent],
) -> std::collections::BTreeMap<Round, RoundScript> {
    let mut scripts: std::collections::BTreeMap<Round, RoundScript> =
        std::collections::BTreeMap::new();
    for event in events {
        let script = scripts.entry(event.round()).or_default();
        match event {
            TraceEvent::Connect { u, v, .. } => script.connects.push((*u, *v)),
            TraceEvent::Disconnect { u, v, .. } => script.disconnects.push((*u, *v)),
            TraceEvent::ApiCall { node, call, .. } => script.api.push((*node, *call)),
            // Deliveries are implied by their activation's `delivered` field.
            TraceEvent::Delivery { .. } => {}
            TraceEvent::Activation { round, span_end, node, action, delivered, effects, .. } => {
                script.activations.push(ScriptedActivation {
                    node: *node,
                    action: *action,
                    delivered: *delivered,
                    duration: span_end - round + 1,
                    send_seqs: effects.sends.iter().map(|s| s.seq).collect(),
                });
            }
        }
    }
    scripts
}
