//! Response-quality and realism judging.
//!
//! The response judge ensemble sends one templated request per roster member,
//! keeps the criteria selected by a strict majority of non-abstaining votes,
//! and scores the answer as the mean weight of the kept criteria (an empty
//! set scores 0.0, the strongest failure). The realism ensemble averages one
//! integer 1-5 score per member. Vote merging is order-independent, so the
//! per-judge calls may run in any order or concurrently.

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway};
use crate::model::ObjectiveSpec;
use crate::templates::{TemplateKind, TemplateSet};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// One roster member's selection of satisfied criteria.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVote {
    pub judge_id: String,
    pub selected_criteria: BTreeSet<String>,
    pub rationale: String,
    /// Set when the judge's output stayed unparseable after one re-ask; an
    /// abstaining vote is excluded from the majority base.
    #[serde(default)]
    pub abstained: bool,
}

/// The ensemble's aggregate over one (query, answer) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub kept_criteria: BTreeSet<String>,
    pub reward: f64,
    pub is_violation: bool,
    pub votes: Vec<JudgeVote>,
}

/// The realism ensemble's aggregate over one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismVerdict {
    pub per_judge: BTreeMap<String, u8>,
    pub mean: f64,
}

/// Whether a reward counts as an objective violation: strictly below the
/// threshold.
pub fn is_violation(reward: f64, objective: &ObjectiveSpec) -> bool {
    reward < objective.violation_threshold
}

/// Mean weight of the kept criteria; the empty set scores 0.0.
pub fn reward_of(kept: &BTreeSet<String>, objective: &ObjectiveSpec) -> Result<f64> {
    if kept.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for id in kept {
        let criterion = objective
            .criterion(id)
            .ok_or_else(|| Error::Judging(format!("unknown criterion id {id:?}")))?;
        sum += criterion.weight;
    }
    Ok(sum / kept.len() as f64)
}

/// Criteria selected by a strict majority of the non-abstaining votes.
pub fn majority_kept(votes: &[JudgeVote], objective: &ObjectiveSpec) -> BTreeSet<String> {
    let voting: Vec<&JudgeVote> = votes.iter().filter(|v| !v.abstained).collect();
    let mut kept = BTreeSet::new();
    for criterion in &objective.criteria {
        let count = voting
            .iter()
            .filter(|v| v.selected_criteria.contains(&criterion.id))
            .count();
        if count * 2 > voting.len() {
            kept.insert(criterion.id.clone());
        }
    }
    kept
}

/// Assemble a verdict from already-collected votes.
pub fn verdict_from_votes(votes: Vec<JudgeVote>, objective: &ObjectiveSpec) -> Result<JudgeVerdict> {
    let abstentions = votes.iter().filter(|v| v.abstained).count();
    if abstentions * 2 > votes.len() {
        return Err(Error::Judging(format!(
            "{abstentions} of {} judges abstained",
            votes.len()
        )));
    }
    let kept = majority_kept(&votes, objective);
    let reward = reward_of(&kept, objective)?;
    Ok(JudgeVerdict {
        is_violation: is_violation(reward, objective),
        kept_criteria: kept,
        reward,
        votes,
    })
}

/// Find the first balanced `{...}` block in model output and parse it. Judges
/// often wrap their JSON in prose or code fences.
pub fn extract_json(text: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    let candidate = &text[start..start + offset + 1];
                    return serde_json::from_str(candidate).ok();
                }
            }
            _ => {}
        }
    }
    None
}

fn reason_field(value: &serde_json::Value) -> String {
    value
        .get("reasoning")
        .or_else(|| value.get("reason"))
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_owned()
}

/// Parse a response-judge reply into (rationale, selected criteria ids).
/// Unknown criterion ids are a parse failure, which keeps every stored vote a
/// subset of the objective's criteria.
fn parse_response_vote(
    text: &str,
    objective: &ObjectiveSpec,
) -> std::result::Result<(String, BTreeSet<String>), String> {
    let value = extract_json(text).ok_or("no JSON object in judge output")?;
    let list = value
        .get("criteria")
        .or_else(|| value.get("selected_criteria"))
        .and_then(|v| v.as_array())
        .ok_or("missing criteria list")?;
    let mut selected = BTreeSet::new();
    for item in list {
        let id = item.as_str().ok_or("criteria entries must be strings")?;
        if objective.criterion(id).is_none() {
            return Err(format!("unknown criterion id {id:?}"));
        }
        selected.insert(id.to_owned());
    }
    Ok((reason_field(&value), selected))
}

/// Parse a realism-judge reply into (rationale, integer score in [1,5]).
fn parse_realism_score(text: &str) -> std::result::Result<(String, u8), String> {
    let value = extract_json(text).ok_or("no JSON object in judge output")?;
    let score = value.get("score").ok_or("missing score")?;
    let score = match (score.as_i64(), score.as_f64()) {
        (Some(i), _) => i,
        (None, Some(f)) if f.fract() == 0.0 => f as i64,
        _ => return Err("score is not an integer".into()),
    };
    if !(1..=5).contains(&score) {
        return Err(format!("score {score} outside [1,5]"));
    }
    Ok((reason_field(&value), score as u8))
}

const REASK_SUFFIX: &str =
    "\n\nYour previous reply could not be parsed. Return only the JSON object in the requested output format, with no surrounding text.";

/// The judge ensembles, bound to a gateway and template set.
pub struct Judge<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
}

impl<'a> Judge<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet) -> Self {
        Self { gateway, templates }
    }

    fn criteria_block(objective: &ObjectiveSpec) -> String {
        objective
            .criteria
            .iter()
            .map(|c| format!("{}: {}", c.id, c.description))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// One templated vote per roster member, then strict-majority
    /// aggregation. An unparseable judge gets one structured re-ask before it
    /// abstains; if more than half abstain the verdict is an error.
    pub fn judge_response(
        &self,
        query: &str,
        answer: &str,
        objective: &ObjectiveSpec,
    ) -> Result<JudgeVerdict> {
        let mut vars = BTreeMap::new();
        vars.insert("query", query.to_owned());
        vars.insert("response", answer.to_owned());
        vars.insert("criteria", Self::criteria_block(objective));
        let user = self.templates.render(TemplateKind::JudgeResponse, &vars)?;

        let mut votes = Vec::with_capacity(objective.judge_roster.len());
        for judge_id in &objective.judge_roster {
            let request = ChatRequest::new(judge_id, user.clone()).with_tag("judge:response");
            let first = self.gateway.complete(&request)?;
            let parsed = match parse_response_vote(&first.text, objective) {
                Ok(vote) => Some(vote),
                Err(_) => {
                    let retry = ChatRequest::new(judge_id, format!("{user}{REASK_SUFFIX}"))
                        .with_tag("judge:response");
                    let second = self.gateway.complete(&retry)?;
                    parse_response_vote(&second.text, objective).ok()
                }
            };
            let (rationale, selected, abstained) = match parsed {
                Some((rationale, selected)) => (rationale, selected, false),
                None => ("abstained after one re-ask".to_owned(), BTreeSet::new(), true),
            };
            votes.push(JudgeVote {
                judge_id: judge_id.clone(),
                selected_criteria: selected,
                rationale,
                abstained,
            });
        }
        verdict_from_votes(votes, objective)
    }

    /// One integer score per realism roster member; the verdict mean is
    /// computed exactly. Parse or range failures after one re-ask are hard
    /// errors naming the judge.
    pub fn judge_realism(&self, query: &str, objective: &ObjectiveSpec) -> Result<RealismVerdict> {
        if objective.realism_roster.is_empty() {
            return Err(Error::Judging("realism roster is empty".into()));
        }
        let mut vars = BTreeMap::new();
        vars.insert("query", query.to_owned());
        let user = self.templates.render(TemplateKind::JudgeRealism, &vars)?;

        let mut per_judge = BTreeMap::new();
        let mut sum = 0u64;
        for judge_id in &objective.realism_roster {
            let request = ChatRequest::new(judge_id, user.clone()).with_tag("judge:realism");
            let first = self.gateway.complete(&request)?;
            let score = match parse_realism_score(&first.text) {
                Ok((_, s)) => s,
                Err(_) => {
                    let retry = ChatRequest::new(judge_id, format!("{user}{REASK_SUFFIX}"))
                        .with_tag("judge:realism");
                    let second = self.gateway.complete(&retry)?;
                    parse_realism_score(&second.text).map_err(|err| {
                        Error::Judging(format!("realism judge {judge_id}: {err}"))
                    })?
                    .1
                }
            };
            per_judge.insert(judge_id.clone(), score);
            sum += score as u64;
        }
        Ok(RealismVerdict {
            mean: sum as f64 / per_judge.len() as f64,
            per_judge,
        })
    }
}
