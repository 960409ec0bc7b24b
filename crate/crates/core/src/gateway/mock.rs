//! Deterministic mock backends, scripted by request-tag pattern.
//!
//! A [`MockBackend`] holds an ordered list of rules; the first rule whose tag
//! pattern matches the request answers it. Responses are pure functions of
//! the request, so mock runs are reproducible and recordable.

use super::{BackendReply, ChatBackend, ChatRequest, TokenUsage};
use crate::model::{stable_hash64, ObjectiveSpec};
use std::sync::Arc;

type MockFn = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;

/// `judge:*` matches every tag starting with `judge:`; `*` matches anything;
/// otherwise the match is exact.
fn tag_matches(pattern: &str, tag: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => tag.starts_with(prefix),
        None => pattern == tag,
    }
}

/// Deterministic token estimate used by mock replies: roughly one token per
/// four characters, with a floor of one.
pub fn estimate_usage(request: &ChatRequest, response_text: &str) -> TokenUsage {
    let prompt_chars = request.user.len() + request.system.as_deref().map_or(0, str::len);
    TokenUsage::new(
        (prompt_chars as u64).div_ceil(4).max(1),
        (response_text.len() as u64).div_ceil(4).max(1),
    )
}

#[derive(Default)]
pub struct MockBackend {
    rules: Vec<(String, MockFn)>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answer matching tags with a fixed string.
    pub fn fixed(self, tag_pattern: &str, text: impl Into<String>) -> Self {
        let text = text.into();
        self.on(tag_pattern, move |_| text.clone())
    }

    /// Answer matching tags by calling `f` on the request.
    pub fn on(
        mut self,
        tag_pattern: &str,
        f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static,
    ) -> Self {
        self.rules.push((tag_pattern.to_owned(), Arc::new(f)));
        self
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, String> {
        for (pattern, f) in &self.rules {
            if tag_matches(pattern, &request.tag) {
                let text = f(request);
                return Ok(BackendReply {
                    usage: estimate_usage(request, &text),
                    text,
                    latency_ms: 0,
                });
            }
        }
        Err(format!("no mock rule for tag {:?}", request.tag))
    }
}

/// Hash of everything that identifies a mock call, including the backend id
/// so different judges disagree on the same input.
fn request_hash(request: &ChatRequest) -> u64 {
    stable_hash64(&[
        &request.backend_id,
        request.system.as_deref().unwrap_or(""),
        &request.user,
        &request.tag,
    ])
}

fn pick<'a>(words: &'a [&'a str], h: u64, slot: u32) -> &'a str {
    words[((h >> (slot * 4)) % words.len() as u64) as usize]
}

const OPENERS: [&str; 8] = [
    "does", "will", "can", "how", "is", "what", "which", "when",
];
const SUBJECTS: [&str; 16] = [
    "the vacuum", "this model", "the unit", "the canister", "the sofa", "the cushion",
    "the television", "the screen", "the diaper pack", "the filter", "the cord", "the remote",
    "the fabric", "the stand", "the hose", "the brush",
];
const ASPECTS: [&str; 16] = [
    "handle pet hair", "fit under a couch", "run quietly", "work on hardwood",
    "survive daily use", "hold its charge", "resist stains", "mount on drywall",
    "stay cool", "fold for storage", "filter fine dust", "support streaming",
    "arrive assembled", "match the listed specs", "include the adapter", "carry a warranty",
];
const TAILS: [&str; 8] = [
    "for a small apartment", "on a tight budget", "for overnight use", "with kids around",
    "after a year", "in a humid room", "without extra tools", "according to the manual",
];

fn pseudo_question(h: u64) -> String {
    let mut q = format!(
        "{} {} {} {}",
        pick(&OPENERS, h, 0),
        pick(&SUBJECTS, h, 1),
        pick(&ASPECTS, h, 2),
        pick(&TAILS, h, 3),
    );
    // A second aspect clause in half the cases widens the text space enough
    // that parent and rewritten child never collide.
    if h & (1 << 63) != 0 {
        q.push_str(&format!(
            ", and does it {} {}",
            pick(&ASPECTS, h, 4),
            pick(&TAILS, h, 5)
        ));
    }
    q.push('?');
    q
}

fn pseudo_answer(h: u64) -> String {
    format!(
        "According to the listing, {} should {} {}.",
        pick(&SUBJECTS, h, 6),
        pick(&ASPECTS, h, 7),
        pick(&TAILS, h, 8),
    )
}

/// Build the mock backend that drives full mock-mode runs: every call site's
/// tag gets a deterministic, format-correct response derived from the request
/// hash. Judge votes select criteria of `objective` by hash bits, so verdicts
/// are varied but reproducible.
pub fn pipeline_mock(objective: &ObjectiveSpec) -> MockBackend {
    let criteria: Vec<String> = objective.criterion_ids();
    MockBackend::new()
        .on("query:seed", |req| pseudo_question(request_hash(req)))
        .on("query:expand", |req| pseudo_question(request_hash(req)))
        .on("agent:answer", |req| pseudo_answer(request_hash(req)))
        .on("judge:response", move |req| {
            let h = request_hash(req);
            let selected: Vec<&str> = criteria
                .iter()
                .enumerate()
                .filter(|(i, _)| (h >> i) & 1 == 1)
                .map(|(_, id)| id.as_str())
                .collect();
            serde_json::json!({
                "reasoning": "mock deterministic assessment",
                "criteria": selected,
            })
            .to_string()
        })
        .on("judge:realism", |req| {
            let h = request_hash(req);
            serde_json::json!({
                "reason": "mock deterministic rating",
                "score": 1 + (h % 5),
            })
            .to_string()
        })
        .on("reflect:*", |req| {
            let h = request_hash(req);
            serde_json::json!({
                "reasoning": format!("mock diagnosis: queries {} {}", pick(&ASPECTS, h, 2), pick(&TAILS, h, 3)),
                "suggestions": format!("mock suggestion: ask how {} {} {}", pick(&SUBJECTS, h, 4), pick(&ASPECTS, h, 5), pick(&TAILS, h, 6)),
            })
            .to_string()
        })
        .on("expand:*", |req| {
            let h = request_hash(req);
            serde_json::json!({
                "reasoning": "mock refinement rationale",
                "prompt": format!(
                    "Write a shopper question probing whether {} can {} {} (variant {:08x}).",
                    pick(&SUBJECTS, h, 3),
                    pick(&ASPECTS, h, 7),
                    pick(&TAILS, h, 9),
                    h as u32,
                ),
            })
            .to_string()
        })
}
