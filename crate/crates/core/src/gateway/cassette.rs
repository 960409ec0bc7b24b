//! Append-only request/response cassettes for deterministic replay.
//!
//! Each entry stores the canonical key hash of its request, a snapshot of the
//! request itself, the response text, the reported usage, and its ordinal in
//! issue order. Duplicate requests are kept in order and replayed in order,
//! so a recorded two-call session reproduces both calls.

use super::{ChatRequest, TokenUsage};
use crate::error::{Error, Result};
use crate::model::stable_hash_hex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

/// Canonical cassette key: a hash over (backend_id, system, user,
/// temperature). The tag is deliberately excluded so replay does not depend
/// on call-site labels.
pub fn cassette_key(req: &ChatRequest) -> String {
    stable_hash_hex(&[
        &req.backend_id,
        if req.system.is_some() { "sys" } else { "nosys" },
        req.system.as_deref().unwrap_or(""),
        &req.user,
        &req.temperature.to_bits().to_string(),
    ])
}

/// Request fields frozen into a cassette entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSnapshot {
    pub backend_id: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub tag: String,
}

impl From<&ChatRequest> for RequestSnapshot {
    fn from(req: &ChatRequest) -> Self {
        Self {
            backend_id: req.backend_id.clone(),
            system: req.system.clone(),
            user: req.user.clone(),
            temperature: req.temperature,
            tag: req.tag.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub ordinal: u64,
    pub key: String,
    pub request: RequestSnapshot,
    pub response_text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// Writes entries to a JSONL file in ticket order. Tickets are issued before
/// dispatch, so completions may arrive out of order; a reorder buffer holds
/// them until their turn.
pub struct CassetteRecorder {
    out: std::io::BufWriter<std::fs::File>,
    pending: BTreeMap<u64, Option<CassetteEntry>>,
    next_ticket: u64,
    next_ordinal: u64,
}

impl CassetteRecorder {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path)?;
        Ok(Self {
            out: std::io::BufWriter::new(file),
            pending: BTreeMap::new(),
            next_ticket: 0,
            next_ordinal: 0,
        })
    }

    /// Record the outcome of a ticket. `None` marks a failed call so the
    /// ordering window can move past it.
    pub fn record(&mut self, ticket: u64, entry: Option<CassetteEntry>) -> Result<()> {
        self.pending.insert(ticket, entry);
        while let Some(slot) = self.pending.remove(&self.next_ticket) {
            if let Some(mut entry) = slot {
                entry.ordinal = self.next_ordinal;
                self.next_ordinal += 1;
                serde_json::to_writer(&mut self.out, &entry)?;
                self.out.write_all(b"\n")?;
            }
            self.next_ticket += 1;
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Replays a recorded cassette. Entries are grouped by key into FIFO queues,
/// so repeated identical requests come back in recording order. A request
/// with no remaining entry is a strict-mode miss.
pub struct CassetteReplayer {
    queues: std::sync::Mutex<BTreeMap<String, VecDeque<CassetteEntry>>>,
}

impl CassetteReplayer {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str::<CassetteEntry>(&line)?);
        }
        entries.sort_by_key(|e| e.ordinal);
        let mut queues: BTreeMap<String, VecDeque<CassetteEntry>> = BTreeMap::new();
        for entry in entries {
            queues.entry(entry.key.clone()).or_default().push_back(entry);
        }
        Ok(Self {
            queues: std::sync::Mutex::new(queues),
        })
    }

    pub fn take(&self, req: &ChatRequest) -> Result<CassetteEntry> {
        let key = cassette_key(req);
        let mut queues = self.queues.lock().expect("cassette lock");
        match queues.get_mut(&key).and_then(VecDeque::pop_front) {
            Some(entry) => Ok(entry),
            None => Err(Error::CassetteMiss {
                key,
                tag: req.tag.clone(),
            }),
        }
    }

    /// Number of entries not yet consumed.
    pub fn remaining(&self) -> usize {
        self.queues
            .lock()
            .expect("cassette lock")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}
