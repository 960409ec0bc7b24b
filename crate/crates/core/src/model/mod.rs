//! Objective definition, domain knowledge, and the shared search-tree data
//! model.
//!
//! Everything here is an immutable value after construction and safe to share
//! across threads; the [`TreeStore`] is the one mutable structure and is
//! owned by a single writer.

mod node;

pub use node::{
    Direction, InteractionRecord, PromptId, PromptNode, PromptStatus, QueryId, QueryNode,
    TreeStore,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

/// Stable 64-bit hash of a list of string parts, length-prefixed so part
/// boundaries cannot collide. Used for node ids, cassette keys, mock
/// responses, and seeded sampling.
pub fn stable_hash64(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Like [`stable_hash64`] but rendered as a fixed-width hex token.
pub fn stable_hash_hex(parts: &[&str]) -> String {
    format!("{:016x}", stable_hash64(parts))
}

/// One weighted rubric criterion of an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub description: String,
    /// Weight in [0,1]. The helpfulness rubric maps its three levels to
    /// 0.0 (unhelpful), 0.5 (partially helpful), and 1.0 (helpful).
    pub weight: f64,
}

fn default_violation_threshold() -> f64 {
    0.5
}

/// A natural-language objective: the criteria an agent answer is judged
/// against, what counts as a realistic query, and which judge backends vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: String,
    pub criteria: Vec<Criterion>,
    /// A judged reward strictly below this threshold is a failure.
    #[serde(default = "default_violation_threshold")]
    pub violation_threshold: f64,
    pub realism_definition: String,
    /// Backend ids of the response judges. Must be odd and at least 3 so
    /// majorities are never tied.
    pub judge_roster: Vec<String>,
    /// Backend ids of the realism judges. May be empty, which disables
    /// realism scoring.
    #[serde(default)]
    pub realism_roster: Vec<String>,
}

impl ObjectiveSpec {
    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn criterion_ids(&self) -> Vec<String> {
        self.criteria.iter().map(|c| c.id.clone()).collect()
    }
}

/// Check every invariant on an [`ObjectiveSpec`], returning it unchanged when
/// all hold and naming the first violated invariant otherwise.
pub fn validate_objective(spec: ObjectiveSpec) -> Result<ObjectiveSpec> {
    if spec.criteria.is_empty() {
        return Err(Error::Validation("criteria empty".into()));
    }
    let mut seen = BTreeSet::new();
    for c in &spec.criteria {
        if c.description.trim().is_empty() {
            return Err(Error::Validation(format!(
                "criterion {:?} has an empty description",
                c.id
            )));
        }
        if !(0.0..=1.0).contains(&c.weight) {
            return Err(Error::Validation(format!(
                "criterion {:?} weight {} outside [0,1]",
                c.id, c.weight
            )));
        }
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Validation(format!("duplicate criterion id {:?}", c.id)));
        }
    }
    if spec.judge_roster.len() < 3 || spec.judge_roster.len() % 2 == 0 {
        return Err(Error::Validation("judge roster must be odd and >= 3".into()));
    }
    for roster in [&spec.judge_roster, &spec.realism_roster] {
        let mut ids = BTreeSet::new();
        for id in roster {
            if !ids.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate roster backend {id:?}")));
            }
        }
    }
    if !(spec.violation_threshold > 0.0 && spec.violation_threshold <= 1.0) {
        return Err(Error::Validation(format!(
            "violation_threshold {} outside (0,1]",
            spec.violation_threshold
        )));
    }
    Ok(spec)
}

/// The built-in helpfulness objective: the three rubric levels as weighted
/// criteria plus a shopper-realism definition.
pub fn helpfulness_objective(judges: &[&str], realism_judges: &[&str]) -> ObjectiveSpec {
    ObjectiveSpec {
        name: "helpfulness".into(),
        criteria: vec![
            Criterion {
                id: "unhelpful".into(),
                description: "The response deviates from the asked aspect, stays vague or \
                              promotional, reports missing details without alternatives, or \
                              otherwise fails to move the user toward their goal."
                    .into(),
                weight: 0.0,
            },
            Criterion {
                id: "partially-helpful".into(),
                description: "The response gives basic or expected information, restates the \
                              question, or addresses only part of what was asked."
                    .into(),
                weight: 0.5,
            },
            Criterion {
                id: "helpful".into(),
                description: "The response directly and completely fulfills the user's goal with \
                              the necessary specifics, covering every asked aspect and offering \
                              workarounds when source details are missing."
                    .into(),
                weight: 1.0,
            },
        ],
        violation_threshold: 0.5,
        realism_definition: "A realistic query reads like something a real shopper would type to \
                             a shopping assistant: short, spontaneous, efficiency-first, without \
                             narration, rigid structure, or machine artifacts."
            .into(),
        judge_roster: judges.iter().map(|s| s.to_string()).collect(),
        realism_roster: realism_judges.iter().map(|s| s.to_string()).collect(),
    }
}

/// One catalog entry: a product (or other knowledge item) with free-form
/// attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainKnowledgeItem {
    pub item_id: String,
    pub name: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl DomainKnowledgeItem {
    /// Items are grouped for round-robin sampling by their `category`
    /// attribute when present.
    pub fn category(&self) -> &str {
        self.attributes
            .get("category")
            .map(String::as_str)
            .unwrap_or("uncategorized")
    }

    /// Compact rendering used inside generation prompts.
    pub fn render(&self) -> String {
        let attrs: Vec<String> = self
            .attributes
            .iter()
            .map(|(k, v)| format!("  {k}: {v}"))
            .collect();
        format!("product_name: {}\nattributes:\n{}", self.name, attrs.join("\n"))
    }
}

/// Raw catalog record: one JSON object per line with keys `item_id`,
/// `product_name`, and `attributes`.
#[derive(Deserialize)]
struct CatalogRecord {
    item_id: String,
    product_name: String,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
}

/// Parse a catalog stream. Preserves attribute text verbatim, reports parse
/// failures with the 1-based record number, and rejects duplicate item ids.
pub fn load_domain_knowledge(source: impl std::io::Read) -> Result<Vec<DomainKnowledgeItem>> {
    let reader = std::io::BufReader::new(source);
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let record = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CatalogRecord =
            serde_json::from_str(&line).map_err(|e| Error::CatalogParse {
                record,
                message: e.to_string(),
            })?;
        if !ids.insert(parsed.item_id.clone()) {
            return Err(Error::DuplicateItem(parsed.item_id));
        }
        items.push(DomainKnowledgeItem {
            item_id: parsed.item_id,
            name: parsed.product_name,
            attributes: parsed.attributes,
        });
    }
    Ok(items)
}

fn default_prompt_iterations() -> u32 {
    4
}
fn default_prompt_beam() -> usize {
    2
}
fn default_query_iterations() -> u32 {
    3
}
fn default_query_beam() -> usize {
    3
}
fn default_queries_per_prompt() -> u32 {
    5
}
fn default_rng_seed() -> u64 {
    42
}

/// Search budget. The defaults mirror the reference configuration: four
/// prompt generations with a beam of two, three query iterations with a beam
/// of three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBudget {
    #[serde(default = "default_prompt_iterations")]
    pub prompt_iterations: u32,
    #[serde(default = "default_prompt_beam")]
    pub prompt_beam: usize,
    #[serde(default = "default_query_iterations")]
    pub query_iterations: u32,
    #[serde(default = "default_query_beam")]
    pub query_beam: usize,
    #[serde(default = "default_queries_per_prompt")]
    pub queries_per_prompt: u32,
    #[serde(default)]
    pub max_total_tokens: Option<u64>,
    #[serde(default = "default_rng_seed")]
    pub rng_seed: u64,
}

impl Default for RunBudget {
    fn default() -> Self {
        Self {
            prompt_iterations: default_prompt_iterations(),
            prompt_beam: default_prompt_beam(),
            query_iterations: default_query_iterations(),
            query_beam: default_query_beam(),
            queries_per_prompt: default_queries_per_prompt(),
            max_total_tokens: None,
            rng_seed: default_rng_seed(),
        }
    }
}

impl RunBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prompt_iterations", self.prompt_iterations as u64),
            ("prompt_beam", self.prompt_beam as u64),
            ("query_iterations", self.query_iterations as u64),
            ("query_beam", self.query_beam as u64),
            ("queries_per_prompt", self.queries_per_prompt as u64),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("budget field {name} must be >= 1")));
            }
        }
        Ok(())
    }
}
