//! Token and wall-time accounting.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Add;

/// Prompt and completion token counts for one call or one aggregate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

/// Per-tag slice of the ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagUsage {
    pub usage: TokenUsage,
    pub calls: u64,
}

/// Running sums of token usage, call counts, and reported latency, keyed by
/// the free-form tag each call site labels its requests with. The global sum
/// always equals the sum over tags, and every counter is monotone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub per_tag: BTreeMap<String, TagUsage>,
    pub total: TokenUsage,
    pub calls: u64,
    pub wall_time_ms: u64,
}

impl UsageLedger {
    pub fn add(&mut self, tag: &str, prompt_tokens: u64, completion_tokens: u64, latency_ms: u64) {
        let usage = TokenUsage::new(prompt_tokens, completion_tokens);
        let slot = self.per_tag.entry(tag.to_owned()).or_default();
        slot.usage = slot.usage + usage;
        slot.calls += 1;
        self.total = self.total + usage;
        self.calls += 1;
        self.wall_time_ms += latency_ms;
    }

    pub fn total_tokens(&self) -> u64 {
        self.total.total()
    }
}
