//! Prompt refinement: selection by violation rate, reflection into realism
//! and objective feedback, and expansion along three directions.
//!
//! Exploitation amplifies what already broke the agent (violation feedback),
//! exploration contrasts with what kept it compliant (compliant feedback),
//! and examination targets the least-violated criterion. Realism feedback,
//! when present, is injected into every direction, and its suggestions
//! accumulate into the realism policy carried by all future expansions.

use crate::error::{Error, Result};
use crate::gateway::ChatRequest;
use crate::judging::{extract_json, is_violation};
use crate::model::{Criterion, Direction, InteractionRecord, PromptId, QueryId, TreeStore};
use crate::orchestrator::event::{EventBody, EventSink};
use crate::templates::TemplateKind;
use crate::EngineCtx;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Reflection output explaining why queries looked synthetic and how to fix
/// the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismFeedback {
    pub reasoning: String,
    pub suggestions: String,
    pub source_queries: Vec<QueryId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveFeedbackKind {
    Violation,
    Compliant,
    CriterionSpecific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveFeedback {
    pub kind: ObjectiveFeedbackKind,
    pub reasoning: String,
    pub suggestions: String,
    /// Present exactly when `kind` is criterion-specific.
    pub target_criterion: Option<String>,
}

/// Everything one reflection pass learned about a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub prompt: PromptId,
    pub realism: Option<RealismFeedback>,
    pub violation: Option<ObjectiveFeedback>,
    pub compliant: Option<ObjectiveFeedback>,
    pub criterion: Option<ObjectiveFeedback>,
}

impl FeedbackBundle {
    pub fn slot_for(&self, direction: Direction) -> Option<&ObjectiveFeedback> {
        match direction {
            Direction::Exploitation => self.violation.as_ref(),
            Direction::Exploration => self.compliant.as_ref(),
            Direction::Examination => self.criterion.as_ref(),
            Direction::Root => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.realism.is_none()
            && self.violation.is_none()
            && self.compliant.is_none()
            && self.criterion.is_none()
    }

    /// Names of the populated slots, for the reflected event.
    pub fn present_slots(&self) -> Vec<&'static str> {
        let mut slots = Vec::new();
        if self.realism.is_some() {
            slots.push("realism");
        }
        if self.violation.is_some() {
            slots.push("violation");
        }
        if self.compliant.is_some() {
            slots.push("compliant");
        }
        if self.criterion.is_some() {
            slots.push("criterion");
        }
        slots
    }
}

/// Accumulated realism guidance injected into every expansion template.
/// Suggestions are appended line-deduplicated and capped; the revision count
/// equals the number of reflections that produced realism feedback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RealismPolicy {
    pub policy_text: String,
    pub revision: u64,
    #[serde(default)]
    max_lines: Option<usize>,
}

pub const DEFAULT_POLICY_MAX_LINES: usize = 64;

impl RealismPolicy {
    pub fn with_max_lines(max_lines: usize) -> Self {
        Self {
            max_lines: Some(max_lines),
            ..Self::default()
        }
    }

    /// Fold a reflection's suggestions into the policy. Returns the lines
    /// that were actually new.
    pub fn revise(&mut self, suggestions: &str) -> Vec<String> {
        self.revision += 1;
        let cap = self.max_lines.unwrap_or(DEFAULT_POLICY_MAX_LINES);
        let mut existing: Vec<String> = if self.policy_text.is_empty() {
            Vec::new()
        } else {
            self.policy_text.lines().map(str::to_owned).collect()
        };
        let mut appended = Vec::new();
        for line in suggestions.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if existing.len() >= cap {
                break;
            }
            if existing.iter().any(|e| e == line) {
                continue;
            }
            existing.push(line.to_owned());
            appended.push(line.to_owned());
        }
        self.policy_text = existing.join("\n");
        appended
    }
}

/// Selection score of one prompt: the fraction of its judged queries that
/// violated the objective, with mean reward as tie-break material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub violation_rate: f64,
    pub mean_reward: f64,
    pub judged: u64,
}

/// Aggregate one prompt's records into its selection score.
pub fn score_prompt(
    records: &[InteractionRecord],
    objective: &crate::model::ObjectiveSpec,
) -> Option<PromptScore> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let violations = records
        .iter()
        .filter(|r| is_violation(r.reward, objective))
        .count() as f64;
    let mean_reward = records.iter().map(|r| r.reward).sum::<f64>() / n;
    Some(PromptScore {
        violation_rate: violations / n,
        mean_reward,
        judged: records.len() as u64,
    })
}

/// Retain the `k` prompts with the highest violation rate; ties break toward
/// lower mean reward, then the older ordinal. Every pool member must carry a
/// score.
pub fn select_prompts(
    store: &TreeStore,
    pool: &[PromptId],
    scores: &BTreeMap<PromptId, PromptScore>,
    k: usize,
) -> Result<Vec<PromptId>> {
    let mut scored = Vec::with_capacity(pool.len());
    for id in pool {
        let node = store
            .prompt(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        let score = scores.get(id).ok_or_else(|| Error::Unscored(id.to_string()))?;
        scored.push((score.violation_rate, score.mean_reward, node.ordinal, id.clone()));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("rates are finite")
            .then(a.1.partial_cmp(&b.1).expect("rewards are finite"))
            .then(a.2.cmp(&b.2))
    });
    Ok(scored.into_iter().take(k).map(|(_, _, _, id)| id).collect())
}

/// The criterion with the fewest recorded violations; ties break toward
/// catalog order. Criteria missing from `counts` count as zero.
pub fn pick_underexplored_criterion<'a>(
    counts: &BTreeMap<String, u64>,
    criteria: &'a [Criterion],
) -> &'a Criterion {
    criteria
        .iter()
        .min_by_key(|c| counts.get(&c.id).copied().unwrap_or(0))
        .expect("objective criteria are non-empty")
}

fn render_criteria(criteria: &[&Criterion]) -> String {
    if criteria.is_empty() {
        return "(none)".to_owned();
    }
    criteria
        .iter()
        .map(|c| format!("{}: {}", c.id, c.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_pairs(records: &[&InteractionRecord], store: &TreeStore) -> String {
    records
        .iter()
        .map(|r| {
            let query = store
                .query(&r.query)
                .map(|n| n.text.as_str())
                .unwrap_or("<missing>");
            format!("Query: {query}\nResponse: {}", r.answer)
        })
        .collect::<Vec<_>>()
        .join("\n---\n")
}

fn parse_reason_suggestions(text: &str) -> Option<(String, String)> {
    let value = extract_json(text)?;
    let reasoning = value
        .get("reasoning")
        .or_else(|| value.get("reason"))
        .and_then(|v| v.as_str())?
        .to_owned();
    let suggestions = value.get("suggestions").and_then(|v| v.as_str())?.to_owned();
    Some((reasoning, suggestions))
}

const REASK_SUFFIX: &str =
    "\n\nYour previous reply could not be parsed. Return only the JSON object in the requested output format, with no surrounding text.";

/// Call a reflection template and parse `{reasoning, suggestions}`, with one
/// structured re-ask. `None` means the slot stays empty.
fn reflect_slot(
    ctx: &EngineCtx<'_>,
    tag: &str,
    user: String,
) -> Result<Option<(String, String)>> {
    let first = ctx
        .gateway
        .complete(&ChatRequest::new(&ctx.generator_backend, user.clone()).with_tag(tag))?;
    if let Some(parsed) = parse_reason_suggestions(&first.text) {
        return Ok(Some(parsed));
    }
    let second = ctx
        .gateway
        .complete(&ChatRequest::new(&ctx.generator_backend, format!("{user}{REASK_SUFFIX}")).with_tag(tag))?;
    Ok(parse_reason_suggestions(&second.text))
}

/// Maximum interaction examples rendered into one reflection prompt. Bounded
/// so live contexts stay affordable; the earliest records by query ordinal
/// are kept for determinism.
pub const MAX_REFLECTION_EXAMPLES: usize = 8;

fn cap_records<'a>(
    records: impl Iterator<Item = &'a InteractionRecord>,
    store: &TreeStore,
) -> Vec<&'a InteractionRecord> {
    let mut sorted: Vec<&InteractionRecord> = records.collect();
    sorted.sort_by_key(|r| store.query(&r.query).map(|n| n.ordinal).unwrap_or(u64::MAX));
    sorted.truncate(MAX_REFLECTION_EXAMPLES);
    sorted
}

/// Diagnose one prompt's interaction history into a feedback bundle.
///
/// Realism feedback is produced from queries under the realism cut, violation
/// feedback from failing records, compliant feedback from passing records,
/// and the criterion slot locally from the violation counts. A slot whose
/// reflection output stays malformed after one re-ask is left empty; a bundle
/// with no populated slot at all is an error.
#[allow(clippy::too_many_arguments)]
pub fn reflect(
    ctx: &EngineCtx<'_>,
    store: &TreeStore,
    prompt: &PromptId,
    records: &[InteractionRecord],
    violation_counts: &BTreeMap<String, u64>,
    realism_cut: f64,
) -> Result<FeedbackBundle> {
    if records.is_empty() {
        return Err(Error::Validation("reflect needs at least one record".into()));
    }
    let prompt_text = store
        .prompt(prompt)
        .ok_or_else(|| Error::UnknownNode(prompt.to_string()))?
        .text
        .clone();
    let objective = ctx.objective;

    let mut common: BTreeMap<&str, String> = BTreeMap::new();
    common.insert("agent_type", ctx.agent_description.clone());
    common.insert("domain_knowledge_kind", ctx.domain_description.clone());
    common.insert("current_prompts", prompt_text);

    // Realism slot: queries judged below the cut.
    let unrealistic: Vec<&InteractionRecord> = records
        .iter()
        .filter(|r| {
            store
                .query(&r.query)
                .and_then(|n| n.realism_score)
                .map(|s| s < realism_cut)
                .unwrap_or(false)
        })
        .collect();
    let realism = if unrealistic.is_empty() {
        None
    } else {
        let capped = cap_records(unrealistic.iter().copied(), store);
        let mut vars = common.clone();
        vars.insert(
            "unrealistic_queries",
            capped
                .iter()
                .map(|r| store.query(&r.query).map(|n| n.text.clone()).unwrap_or_default())
                .collect::<Vec<_>>()
                .join("\n"),
        );
        vars.insert("realism_definition", objective.realism_definition.clone());
        let user = ctx.templates.render(TemplateKind::ReflectRealism, &vars)?;
        reflect_slot(ctx, "reflect:realism", user)?.map(|(reasoning, suggestions)| {
            RealismFeedback {
                reasoning,
                suggestions,
                source_queries: capped.iter().map(|r| r.query.clone()).collect(),
            }
        })
    };

    let failing: Vec<&InteractionRecord> = records
        .iter()
        .filter(|r| is_violation(r.reward, objective))
        .collect();
    let passing: Vec<&InteractionRecord> = records
        .iter()
        .filter(|r| !is_violation(r.reward, objective))
        .collect();

    let violated_union: BTreeSet<&str> = failing
        .iter()
        .flat_map(|r| r.violated_criteria.iter().map(String::as_str))
        .collect();
    let violated_refs: Vec<&Criterion> = objective
        .criteria
        .iter()
        .filter(|c| violated_union.contains(c.id.as_str()))
        .collect();

    let violation = if failing.is_empty() {
        None
    } else {
        let mut vars = common.clone();
        vars.insert("violating_responses", render_pairs(&cap_records(failing.iter().copied(), store), store));
        vars.insert("violating_criteria", render_criteria(&violated_refs));
        let user = ctx.templates.render(TemplateKind::ReflectViolation, &vars)?;
        reflect_slot(ctx, "reflect:violation", user)?.map(|(reasoning, suggestions)| {
            ObjectiveFeedback {
                kind: ObjectiveFeedbackKind::Violation,
                reasoning,
                suggestions,
                target_criterion: None,
            }
        })
    };

    let compliant = if passing.is_empty() {
        None
    } else {
        let satisfied_union: BTreeSet<&str> = passing
            .iter()
            .flat_map(|r| {
                objective
                    .criteria
                    .iter()
                    .map(|c| c.id.as_str())
                    .filter(|id| !r.violated_criteria.contains(*id))
            })
            .collect();
        let satisfied_refs: Vec<&Criterion> = objective
            .criteria
            .iter()
            .filter(|c| satisfied_union.contains(c.id.as_str()))
            .collect();
        let mut vars = common.clone();
        vars.insert("compliant_responses", render_pairs(&cap_records(passing.iter().copied(), store), store));
        vars.insert("violating_criteria", render_criteria(&violated_refs));
        vars.insert("compliant_criteria", render_criteria(&satisfied_refs));
        let user = ctx.templates.render(TemplateKind::ReflectCompliant, &vars)?;
        reflect_slot(ctx, "reflect:compliant", user)?.map(|(reasoning, suggestions)| {
            ObjectiveFeedback {
                kind: ObjectiveFeedbackKind::Compliant,
                reasoning,
                suggestions,
                target_criterion: None,
            }
        })
    };

    // The criterion slot needs no model call: it targets the least
    // frequently violated criterion from the running counts.
    let target = pick_underexplored_criterion(violation_counts, &objective.criteria);
    let criterion = Some(ObjectiveFeedback {
        kind: ObjectiveFeedbackKind::CriterionSpecific,
        reasoning: format!(
            "criterion {:?} has the fewest recorded violations ({})",
            target.id,
            violation_counts.get(&target.id).copied().unwrap_or(0)
        ),
        suggestions: format!(
            "generate queries that stress {:?}: {}",
            target.id, target.description
        ),
        target_criterion: Some(target.id.clone()),
    });

    let bundle = FeedbackBundle {
        prompt: prompt.clone(),
        realism,
        violation,
        compliant,
        criterion,
    };
    if bundle.is_empty() {
        return Err(Error::EmptyReflection(prompt.to_string()));
    }
    Ok(bundle)
}

fn feedback_type_name(direction: Direction) -> &'static str {
    match direction {
        Direction::Exploitation => "objective-violation feedback",
        Direction::Exploration => "objective-compliant feedback",
        Direction::Examination => "criterion-specific feedback",
        Direction::Root => "",
    }
}

fn direction_block(direction: Direction, feedback: &ObjectiveFeedback, objective: &crate::model::ObjectiveSpec) -> String {
    match direction {
        Direction::Exploitation => format!(
            "Reasoning of why queries generated by the current prompt successfully elicit agent weaknesses:\n{}\n\nSuggestions for generating queries that elicit agent weaknesses:\n{}",
            feedback.reasoning, feedback.suggestions
        ),
        Direction::Exploration => format!(
            "Reasoning of why queries generated by the current prompt failed to reveal agent weaknesses:\n{}\n\nSuggestions for generating queries that elicit agent weaknesses:\n{}",
            feedback.reasoning, feedback.suggestions
        ),
        Direction::Examination => {
            let id = feedback.target_criterion.as_deref().unwrap_or("");
            let description = objective
                .criterion(id)
                .map(|c| c.description.as_str())
                .unwrap_or("");
            format!("Target criterion to break:\n{id}: {description}")
        }
        Direction::Root => String::new(),
    }
}

/// Expand `parent` along `direction` using the bundle's feedback, returning
/// the new child prompt.
///
/// The direction's feedback slot must be present. Prior prompt texts are
/// injected so the model avoids reuse; a child whose text matches any history
/// entry is retried once and then rejected as a duplicate.
#[allow(clippy::too_many_arguments)]
pub fn expand_prompt(
    ctx: &EngineCtx<'_>,
    store: &mut TreeStore,
    sink: &mut dyn EventSink,
    parent: &PromptId,
    bundle: &FeedbackBundle,
    direction: Direction,
    policy: &RealismPolicy,
    history: &[String],
) -> Result<PromptId> {
    let feedback = bundle.slot_for(direction).ok_or_else(|| Error::MissingFeedback {
        direction: direction.as_str().to_owned(),
        slot: feedback_type_name(direction).to_owned(),
    })?;
    let parent_text = store
        .prompt(parent)
        .ok_or_else(|| Error::UnknownNode(parent.to_string()))?
        .text
        .clone();
    let objective = ctx.objective;

    // Static rubric split for the template's DEFINITIONS section: criteria at
    // or above the threshold weight are the compliant targets.
    let compliant_refs: Vec<&Criterion> = objective
        .criteria
        .iter()
        .filter(|c| c.weight >= objective.violation_threshold)
        .collect();
    let violating_refs: Vec<&Criterion> = objective
        .criteria
        .iter()
        .filter(|c| c.weight < objective.violation_threshold)
        .collect();

    let mut vars: BTreeMap<&str, String> = BTreeMap::new();
    vars.insert("compliant_criteria", render_criteria(&compliant_refs));
    vars.insert("violating_criteria", render_criteria(&violating_refs));
    vars.insert(
        "realism_policy",
        if policy.policy_text.is_empty() {
            "(no policy yet)".to_owned()
        } else {
            policy.policy_text.clone()
        },
    );
    vars.insert("feedback_type", feedback_type_name(direction).to_owned());
    vars.insert("current_prompt", parent_text);
    let (realism_reasoning, realism_suggestions) = match &bundle.realism {
        Some(r) => (r.reasoning.clone(), r.suggestions.clone()),
        None => ("(none)".to_owned(), "(none)".to_owned()),
    };
    vars.insert("realism_reasoning", realism_reasoning);
    vars.insert("realism_suggestions", realism_suggestions);
    vars.insert("direction_feedback", direction_block(direction, feedback, objective));
    vars.insert(
        "prev_prompts",
        if history.is_empty() {
            "(none)".to_owned()
        } else {
            history
                .iter()
                .enumerate()
                .map(|(i, t)| format!("{}. {t}", i + 1))
                .collect::<Vec<_>>()
                .join("\n")
        },
    );
    let user = ctx.templates.render(TemplateKind::ExpandPrompt, &vars)?;
    let tag = format!("expand:{}", direction.as_str());

    let parse = |text: &str| -> Option<String> {
        extract_json(text)
            .and_then(|v| v.get("prompt").and_then(|p| p.as_str()).map(str::to_owned))
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
    };

    let mut request = ChatRequest::new(&ctx.generator_backend, user.clone()).with_tag(&tag);
    let mut text = parse(&ctx.gateway.complete(&request)?.text);
    let duplicate =
        |t: &str, history: &[String]| history.iter().any(|h| h.trim() == t);
    let needs_retry = match &text {
        None => true,
        Some(t) => duplicate(t, history),
    };
    if needs_retry {
        request = ChatRequest::new(&ctx.generator_backend, format!("{user}{REASK_SUFFIX}")).with_tag(&tag);
        text = parse(&ctx.gateway.complete(&request)?.text);
    }
    let text = text.ok_or_else(|| Error::Template {
        template: "expand_prompt".into(),
        message: "model output had no usable prompt field after one re-ask".into(),
    })?;
    if duplicate(&text, history) {
        return Err(Error::DuplicatePrompt {
            direction: direction.as_str().to_owned(),
        });
    }

    let child = store.create_prompt(text, Some(parent), direction)?;
    sink.emit(EventBody::PromptCreated {
        node: store.prompt(&child).expect("just created").clone(),
    })?;
    Ok(child)
}

/// One full prompt-refinement pass over a scored candidate pool: select the
/// beam, reflect on each retained prompt, expand in every direction whose
/// feedback slot is present, and fold realism suggestions into the policy.
pub struct GenerationOutcome {
    pub beam: Vec<PromptId>,
    pub children: Vec<PromptId>,
    pub bundles: Vec<FeedbackBundle>,
}

#[allow(clippy::too_many_arguments)]
pub fn refine_prompts(
    ctx: &EngineCtx<'_>,
    store: &mut TreeStore,
    sink: &mut dyn EventSink,
    pool: &[PromptId],
    scores: &BTreeMap<PromptId, PromptScore>,
    records_by_prompt: &BTreeMap<PromptId, Vec<InteractionRecord>>,
    violation_counts: &BTreeMap<String, u64>,
    policy: &mut RealismPolicy,
    history: &mut Vec<String>,
    beam_size: usize,
    realism_cut: f64,
) -> Result<GenerationOutcome> {
    if pool.is_empty() {
        return Err(Error::Validation("prompt pool is empty".into()));
    }
    let beam = select_prompts(store, pool, scores, beam_size)?;
    for id in pool {
        let retained = beam.contains(id);
        if let Some(node) = store.prompt_mut(id) {
            node.status = if retained {
                crate::model::PromptStatus::Live
            } else {
                crate::model::PromptStatus::Pruned
            };
        }
    }

    let mut children = Vec::new();
    let mut bundles = Vec::new();
    let empty = Vec::new();
    for prompt in &beam {
        let records = records_by_prompt.get(prompt).unwrap_or(&empty);
        let bundle = reflect(ctx, store, prompt, records, violation_counts, realism_cut)?;
        sink.emit(EventBody::Reflected {
            prompt: prompt.clone(),
            bundle: bundle.clone(),
        })?;
        if let Some(realism) = &bundle.realism {
            let appended = policy.revise(&realism.suggestions);
            sink.emit(EventBody::PolicyRevised {
                revision: policy.revision,
                appended,
                policy_text: policy.policy_text.clone(),
            })?;
        }
        let mut spawned = 0usize;
        for direction in Direction::EXPANSIONS {
            if bundle.slot_for(direction).is_none() {
                continue;
            }
            match expand_prompt(ctx, store, sink, prompt, &bundle, direction, policy, history) {
                Ok(child) => {
                    let text = store.prompt(&child).expect("exists").text.clone();
                    history.push(text);
                    children.push(child);
                    spawned += 1;
                }
                // A duplicate or unparseable expansion skips the direction.
                Err(Error::DuplicatePrompt { .. }) | Err(Error::Template { .. }) => continue,
                Err(other) => return Err(other),
            }
        }
        if spawned == 0 {
            if let Some(node) = store.prompt_mut(prompt) {
                node.status = crate::model::PromptStatus::Exhausted;
            }
        }
        bundles.push(bundle);
    }
    Ok(GenerationOutcome {
        beam,
        children,
        bundles,
    })
}
