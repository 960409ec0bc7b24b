//! Shared fixtures for the integration and acceptance suites.
//!
//! The centerpiece is the scripted backend behind the shipped trace-demo
//! cassette: a three-generation run against a single TV product whose prompt
//! chain deepens twice by exploitation and whose query chain applies
//! synonym-replace, then typo, then word-delete, ending in a query the agent
//! answers only half of.

#![allow(dead_code)]

use quarry_core::gateway::mock::MockBackend;
use quarry_core::model::{helpfulness_objective, ObjectiveSpec, RunBudget};
use quarry_core::orchestrator::config::{PathsSection, RunConfig, RunMode};
use std::path::Path;
use std::sync::Arc;

pub const FIXTURE_DIR: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/appendix_trace"
);

// Prompt chain.
pub const PROMPT_ROOT: &str =
    "Create a user question related to online shopping that a customer might ask about a product.";
pub const PROMPT_CHILD: &str = "Write exactly one realistic, concise shopper query (2-15 words, or one short sentence) a customer might type about a product and its attributes. The query must combine two attribute-related asks (for example, a technical/spec plus a purchase/action or a warranty/usage question) and include at least one ambiguous or likely-missing detail that forces inference; do not include backstory, lists, SKUs, code, or extra commentary. Output only the single query string and nothing else.";
pub const PROMPT_GRANDCHILD: &str = "Write one short, natural shopper question (a single brief sentence or phrase; no backstory, no lists, SKUs, code, or technical jargon) about the product and its attributes. Include at most two attribute-related asks: make one a subjective user-experience concern (comfort, fit, noise, etc.) and the other a factual or appearance-related attribute, and phrase them so the main goal is mildly ambiguous or presents a simple trade-off. You may optionally add a casual 'how can I check?' but do not request numbered steps, exact standards, certificate IDs, URLs, or a seller message; if asking for a source, name only a general document type. Output only the single query string and nothing else.";
pub const PROMPT_EXPLORE: &str =
    "Ask one brief shopper question about a single clearly listed attribute of the product. Output only the query string.";
pub const PROMPT_EXAMINE_ROOT: &str =
    "Ask one shopper question that probes the least examined aspect of the product experience. Output only the query string.";
pub const PROMPT_EXAMINE_CHILD: &str =
    "Ask one shopper question mixing a niche spec with an everyday concern. Output only the query string.";

// Seed queries per prompt.
pub const SEED_ROOT: &str = "For the Sceptre TV, how many audio inputs?";
pub const SEED_CHILD: &str = "How many audio inputs does the TV have and where do I check?";
pub const SEED_GRANDCHILD: &str = "How many audio inputs and can I use a 3.5mm cable?";
pub const SEED_EXPLORE: &str = "How many HDMI ports does the TV have?";
pub const SEED_EXAMINE_ROOT: &str = "Is the TV easy to wall mount?";
pub const SEED_EXAMINE_CHILD: &str = "Does the stand wobble on a narrow shelf?";

// The traced rewrite chain under the grandchild prompt.
pub const CHAIN_SYNONYM: &str = "How many audio inputs and can I utilize a 3.5mm connector?";
pub const CHAIN_TYPO_OF_SEED: &str = "How many audio inputs and can I use a 3.5mm cabel?";
pub const CHAIN_DELETE_OF_SEED: &str = "How many audio inputs can I use a 3.5mm cable?";
pub const CHAIN_SYNONYM_TWICE: &str =
    "How many audio inputs and might I utilize a 3.5mm connector?";
pub const CHAIN_TYPO: &str = "How many audo inputs and can I utlize a 3.5mm connector?";
pub const CHAIN_TYPO_TWICE: &str = "How many audo inputs and can I utlize a 3.5mm conector?";
pub const TRACED_QUERY: &str = "How many audo inputs can I utlize a 3.5mm connector?";

pub const TRACED_ANSWER: &str = "The product has 2 audio inputs.";

pub fn fixture_catalog_jsonl() -> &'static str {
    "{\"item_id\":\"tv-001\",\"product_name\":\"Sceptre 32-inch LED TV\",\"attributes\":{\"category\":\"televisions\",\"audio_inputs\":\"2\",\"mount\":\"VESA 100x100\"}}\n"
}

pub fn fixture_strategies_jsonl() -> &'static str {
    concat!(
        "{\"strategy_id\":\"synonym-replace\",\"category\":\"perturbation\",\"level_or_type\":\"word\",\"description\":\"Replace one or two words with synonyms.\"}\n",
        "{\"strategy_id\":\"typo\",\"category\":\"perturbation\",\"level_or_type\":\"character\",\"description\":\"Choose one or two words and modify them so that they have typos.\"}\n",
        "{\"strategy_id\":\"word-delete\",\"category\":\"perturbation\",\"level_or_type\":\"word\",\"description\":\"Delete one or two meaningless words.\"}\n",
    )
}

pub fn fixture_objective() -> ObjectiveSpec {
    helpfulness_objective(
        &["judge-a", "judge-b", "judge-c"],
        &["realism-a", "realism-b", "realism-c"],
    )
}

/// Config for the trace-demo run. `support_dir` holds catalog and strategy
/// files (written if absent); `cassette` is recorded to or replayed from.
pub fn fixture_config(support_dir: &Path, mode: RunMode, cassette: &Path) -> RunConfig {
    let catalog = support_dir.join("catalog.jsonl");
    let strategies = support_dir.join("strategies.jsonl");
    if !catalog.exists() {
        std::fs::write(&catalog, fixture_catalog_jsonl()).expect("write catalog");
    }
    if !strategies.exists() {
        std::fs::write(&strategies, fixture_strategies_jsonl()).expect("write strategies");
    }
    RunConfig {
        mode,
        out_dir: None,
        objective: fixture_objective(),
        budget: RunBudget {
            prompt_iterations: 3,
            prompt_beam: 1,
            query_iterations: 3,
            query_beam: 1,
            queries_per_prompt: 1,
            max_total_tokens: None,
            rng_seed: 7,
        },
        engine: Default::default(),
        paths: PathsSection {
            catalog,
            strategies: Some(strategies),
            templates_dir: None,
            cassette: Some(cassette.to_owned()),
            baseline_corpus: None,
        },
        backends: Vec::new(),
    }
}

fn between<'t>(text: &'t str, start: &str, end: &str) -> Option<&'t str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    match rest.find(end) {
        Some(to) => Some(rest[..to].trim()),
        None => Some(rest.trim()),
    }
}

fn seed_for_prompt(user: &str) -> String {
    let prompt = between(user, "", "\n\nDomain knowledge:").unwrap_or_default();
    for (p, seed) in [
        (PROMPT_ROOT, SEED_ROOT),
        (PROMPT_CHILD, SEED_CHILD),
        (PROMPT_GRANDCHILD, SEED_GRANDCHILD),
        (PROMPT_EXPLORE, SEED_EXPLORE),
        (PROMPT_EXAMINE_ROOT, SEED_EXAMINE_ROOT),
        (PROMPT_EXAMINE_CHILD, SEED_EXAMINE_CHILD),
    ] {
        if prompt == p {
            return seed.to_owned();
        }
    }
    format!("What can you tell me about this product? ({:.8})", prompt.len())
}

fn rewrite_for(user: &str) -> String {
    let current = between(user, "Current query:\n", "\n\nPerturbation strategy:").unwrap_or("");
    let strategy = between(user, "Perturbation strategy:\n", "\n\nOutput only").unwrap_or("");
    let is = |needle: &str| strategy.contains(needle);

    // The traced chain, verbatim.
    let chain = [
        ("synonyms", SEED_GRANDCHILD, CHAIN_SYNONYM),
        ("typos", SEED_GRANDCHILD, CHAIN_TYPO_OF_SEED),
        ("Delete", SEED_GRANDCHILD, CHAIN_DELETE_OF_SEED),
        ("synonyms", CHAIN_SYNONYM, CHAIN_SYNONYM_TWICE),
        ("typos", CHAIN_SYNONYM, CHAIN_TYPO),
        ("typos", CHAIN_TYPO, CHAIN_TYPO_TWICE),
        ("Delete", CHAIN_TYPO, TRACED_QUERY),
    ];
    for (marker, parent, child) in chain {
        if is(marker) && current == parent {
            return child.to_owned();
        }
    }

    // Everything else gets a deterministic, marker-preserving transform.
    if is("synonyms") {
        format!("{current} thanks")
    } else if is("typos") {
        format!("{current} plz")
    } else if current.split_whitespace().count() > 1 {
        current
            .split_whitespace()
            .skip(1)
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        format!("{current} ok")
    }
}

/// Reward script: kept-criteria sets per judged query, identical across the
/// three judges.
fn kept_for_query(query: &str) -> &'static [&'static str] {
    const EMPTY: &[&str] = &[];
    const QUARTER: &[&str] = &["unhelpful", "partially-helpful"];
    const HALF: &[&str] = &["partially-helpful"];
    let exact: &[(&str, &[&str])] = &[
        (SEED_GRANDCHILD, HALF),
        (CHAIN_SYNONYM, QUARTER),
        (CHAIN_TYPO_OF_SEED, QUARTER),
        (CHAIN_DELETE_OF_SEED, HALF),
        (CHAIN_SYNONYM_TWICE, HALF),
        (CHAIN_TYPO, EMPTY),
        (CHAIN_TYPO_TWICE, QUARTER),
        (TRACED_QUERY, EMPTY),
        (SEED_ROOT, EMPTY),
    ];
    for (text, kept) in exact {
        if query == *text {
            return kept;
        }
    }
    if query.contains("where do I check") {
        // The child prompt's whole tree fails outright.
        EMPTY
    } else {
        HALF
    }
}

fn answer_for(query: &str) -> String {
    if query == TRACED_QUERY {
        TRACED_ANSWER.to_owned()
    } else if query == SEED_GRANDCHILD {
        "The TV has 2 audio inputs. It does not specify support for a 3.5mm cable.".to_owned()
    } else {
        "The listing covers that in the product specifications.".to_owned()
    }
}

fn expansion_for(user: &str) -> String {
    let current = between(user, "Current prompt:\n", "\n\nReasoning of why").unwrap_or("");
    let exploitation = user.contains("objective-violation feedback");
    let exploration = user.contains("objective-compliant feedback");
    let prompt = if exploitation {
        match current {
            PROMPT_ROOT => PROMPT_CHILD,
            PROMPT_CHILD => PROMPT_GRANDCHILD,
            _ => "Probe an angle no prior prompt covered. Output only the query string.",
        }
    } else if exploration {
        PROMPT_EXPLORE
    } else {
        match current {
            PROMPT_ROOT => PROMPT_EXAMINE_ROOT,
            PROMPT_CHILD => PROMPT_EXAMINE_CHILD,
            _ => "Stress the least violated criterion. Output only the query string.",
        }
    };
    serde_json::json!({
        "reasoning": "scripted refinement",
        "prompt": prompt,
    })
    .to_string()
}

/// The scripted chat backend for the trace-demo fixture. Register it under
/// every backend id the run references.
pub fn fixture_backend() -> Arc<MockBackend> {
    Arc::new(
        MockBackend::new()
            .on("query:seed", |req| seed_for_prompt(&req.user))
            .on("query:expand", |req| rewrite_for(&req.user))
            .on("agent:answer", |req| answer_for(&req.user))
            .on("judge:response", |req| {
                let query = between(&req.user, "Query:\n", "\n\nResponse:").unwrap_or("");
                serde_json::json!({
                    "reasoning": "scripted verdict",
                    "criteria": kept_for_query(query),
                })
                .to_string()
            })
            .on("judge:realism", |_| {
                r#"{"reason": "plain shopper phrasing", "score": 4}"#.to_owned()
            })
            .on("reflect:violation", |_| {
                serde_json::json!({
                    "reasoning": "multi-part asks with a missing detail go half-answered",
                    "suggestions": "combine a spec with a compatibility ask and leave one detail implicit",
                })
                .to_string()
            })
            .on("reflect:compliant", |_| {
                serde_json::json!({
                    "reasoning": "single-attribute questions are answered directly from the listing",
                    "suggestions": "avoid questions with one clearly listed answer",
                })
                .to_string()
            })
            .on("expand:*", |req| expansion_for(&req.user)),
    )
}

/// All backend ids the fixture run addresses.
pub fn fixture_backend_ids() -> Vec<String> {
    let mut ids = vec!["agent".to_owned(), "generator".to_owned()];
    let objective = fixture_objective();
    ids.extend(objective.judge_roster);
    ids.extend(objective.realism_roster);
    ids
}
