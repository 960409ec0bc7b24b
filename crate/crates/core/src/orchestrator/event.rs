//! Append-only run event log.
//!
//! One JSON record per line, strictly increasing contiguous ordinals, flushed
//! at every event so a crash loses at most the in-flight event. Timestamps
//! are stored but excluded from the canonical form used for determinism
//! checks and replay comparison.
//!
//! A `beam-selected` event for the prompt tree is the commit marker of its
//! generation: it is written after the generation's reflections and
//! expansions, so resuming truncates to the last such marker and replays
//! from there.

use crate::error::{Error, Result};
use crate::gateway::UsageLedger;
use crate::judging::RealismVerdict;
use crate::metrics::MetricsReport;
use crate::model::{InteractionRecord, PromptId, PromptNode, QueryId, QueryNode};
use crate::prompt_refine::FeedbackBundle;
use crate::query_refine::StrategyStats;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Which search tree a selection event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeKind {
    Prompt,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventBody {
    PromptCreated {
        node: PromptNode,
    },
    QueryCreated {
        node: QueryNode,
    },
    AgentAnswered {
        query: QueryId,
        answer: String,
    },
    Judged {
        record: InteractionRecord,
        realism: Option<RealismVerdict>,
        is_violation: bool,
    },
    Reflected {
        prompt: PromptId,
        bundle: FeedbackBundle,
    },
    BeamSelected {
        tree: TreeKind,
        /// Which loop this selection belongs to: the generation number for
        /// the prompt tree, a `generation:prompt:seed` label for query trees.
        scope: String,
        iteration: u32,
        pool: Vec<String>,
        retained: Vec<String>,
        /// Prompt-tree markers carry the children expanded this generation.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        children: Vec<String>,
        /// Query-tree selections carry the iteration's strategy accounting.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        strategy_stats: Vec<StrategyStats>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        active_strategies: Vec<String>,
        /// What the active set would be if retirement were permanent instead
        /// of per-iteration; logged for inspection only.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        active_if_permanent: Vec<String>,
    },
    PolicyRevised {
        revision: u64,
        appended: Vec<String>,
        policy_text: String,
    },
    MetricsEmitted {
        report: MetricsReport,
    },
    BudgetHalt {
        total_tokens: u64,
        cap: u64,
        last_wave_tokens: u64,
    },
}

impl EventBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EventBody::PromptCreated { .. } => "prompt-created",
            EventBody::QueryCreated { .. } => "query-created",
            EventBody::AgentAnswered { .. } => "agent-answered",
            EventBody::Judged { .. } => "judged",
            EventBody::Reflected { .. } => "reflected",
            EventBody::BeamSelected { .. } => "beam-selected",
            EventBody::PolicyRevised { .. } => "policy-revised",
            EventBody::MetricsEmitted { .. } => "metrics-emitted",
            EventBody::BudgetHalt { .. } => "budget-halt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub ordinal: u64,
    /// Wall-clock milliseconds; excluded from the canonical form.
    pub ts_ms: u64,
    /// Ledger snapshot taken when the event was emitted.
    pub usage: UsageLedger,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Serialize)]
struct CanonicalEvent<'a> {
    ordinal: u64,
    usage: &'a UsageLedger,
    #[serde(flatten)]
    body: &'a EventBody,
}

/// The event rendered without its timestamp.
pub fn canonical_line(event: &RunEvent) -> String {
    serde_json::to_string(&CanonicalEvent {
        ordinal: event.ordinal,
        usage: &event.usage,
        body: &event.body,
    })
    .expect("event serializes")
}

/// Canonical form of a whole log: one canonical line per event.
pub fn canonical_log(events: &[RunEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&canonical_line(event));
        out.push('\n');
    }
    out
}

/// Receives completed events. The orchestrator's sink writes the log file;
/// tests use in-memory sinks.
pub trait EventSink {
    fn emit(&mut self, body: EventBody) -> Result<()>;
}

/// Sink that drops everything; used by unit tests of the refinement loops.
#[derive(Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _body: EventBody) -> Result<()> {
        Ok(())
    }
}

/// Sink that collects bodies in memory.
#[derive(Default)]
pub struct VecSink {
    pub events: Vec<EventBody>,
}

impl EventSink for VecSink {
    fn emit(&mut self, body: EventBody) -> Result<()> {
        self.events.push(body);
        Ok(())
    }
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Appends events to a JSONL file, one flush per event.
pub struct EventLogWriter {
    out: std::io::BufWriter<std::fs::File>,
    next_ordinal: u64,
}

impl EventLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: std::io::BufWriter::new(std::fs::File::create(path)?),
            next_ordinal: 0,
        })
    }

    /// Re-open an existing log for appending after `kept` events; the caller
    /// has already truncated the file to that boundary.
    pub fn append_after(path: &Path, kept: u64) -> Result<Self> {
        Ok(Self {
            out: std::io::BufWriter::new(
                std::fs::OpenOptions::new().append(true).open(path)?,
            ),
            next_ordinal: kept,
        })
    }

    pub fn append(&mut self, usage: UsageLedger, body: EventBody) -> Result<RunEvent> {
        let event = RunEvent {
            ordinal: self.next_ordinal,
            ts_ms: now_ms(),
            usage,
            body,
        };
        serde_json::to_writer(&mut self.out, &event)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.next_ordinal += 1;
        Ok(event)
    }

    pub fn next_ordinal(&self) -> u64 {
        self.next_ordinal
    }
}

/// Read a full log, verifying ordinals are contiguous from zero. A torn final
/// line (crash mid-write) is dropped; a gap is an integrity error naming the
/// expected ordinal.
pub fn read_log(path: &Path) -> Result<Vec<RunEvent>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut events = Vec::new();
    let mut expected = 0u64;
    let mut lines = reader.lines().peekable();
    while let Some(line) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: RunEvent = match serde_json::from_str(&line) {
            Ok(e) => e,
            // Only the final line may be torn; anything else is corruption.
            Err(e) if lines.peek().is_none() => {
                let _ = e;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        if event.ordinal != expected {
            return Err(Error::Integrity {
                expected,
                found: event.ordinal,
            });
        }
        expected += 1;
        events.push(event);
    }
    Ok(events)
}

/// Rewrite the log keeping only the first `keep` events.
pub fn truncate_log(path: &Path, keep: u64) -> Result<()> {
    let events = read_log(path)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for event in events.iter().take(keep as usize) {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
