//! Query refinement: iterated dual selection (beam over queries, beam over
//! strategies) and expansion through perturbation and role-playing rewrites.
//!
//! Each iteration expands every beam query with every active strategy, sends
//! the children to the target agent, judges them, then selects the next query
//! beam and the next active strategy set. Lower reward is better: the beam
//! keeps the queries that pull the agent furthest from its objective.

use crate::error::{Error, Result};
use crate::gateway::ChatRequest;
use crate::judging::{Judge, RealismVerdict};
use crate::model::{InteractionRecord, QueryId, TreeStore};
use crate::orchestrator::event::{EventBody, EventSink, TreeKind};
use crate::templates::TemplateKind;
use crate::EngineCtx;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyCategory {
    Perturbation,
    RolePlaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyLevel {
    Character,
    Word,
    Sentence,
    Persona,
    Scenario,
    Tone,
}

impl StrategyLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyLevel::Character => "character",
            StrategyLevel::Word => "word",
            StrategyLevel::Sentence => "sentence",
            StrategyLevel::Persona => "persona",
            StrategyLevel::Scenario => "scenario",
            StrategyLevel::Tone => "tone",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyStatus {
    Active,
    Retired,
}

fn default_status() -> StrategyStatus {
    StrategyStatus::Active
}

/// One rewrite strategy from the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy_id: String,
    pub category: StrategyCategory,
    pub level_or_type: StrategyLevel,
    pub description: String,
    #[serde(default = "default_status")]
    pub status: StrategyStatus,
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.category {
            StrategyCategory::Perturbation => matches!(
                self.level_or_type,
                StrategyLevel::Character | StrategyLevel::Word | StrategyLevel::Sentence
            ),
            StrategyCategory::RolePlaying => matches!(
                self.level_or_type,
                StrategyLevel::Persona | StrategyLevel::Scenario | StrategyLevel::Tone
            ),
        };
        if !ok {
            return Err(Error::Validation(format!(
                "strategy {:?}: level {:?} does not belong to category {:?}",
                self.strategy_id, self.level_or_type, self.category
            )));
        }
        if self.description.trim().is_empty() {
            return Err(Error::Validation(format!(
                "strategy {:?} has an empty description",
                self.strategy_id
            )));
        }
        Ok(())
    }
}

/// Per-strategy accounting for one iteration. `mean_reward_delta` averages
/// (child reward - parent reward) over the iteration's judged children and is
/// absent when every application degenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy_id: String,
    pub applications: u64,
    pub mean_reward_delta: Option<f64>,
}

fn default_iterations() -> u32 {
    3
}
fn default_beam() -> usize {
    3
}
fn default_min_active() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default)]
    pub strategies: Vec<StrategySpec>,
    #[serde(default = "default_min_active")]
    pub min_active_strategies: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            beam: default_beam(),
            strategies: builtin_strategies(),
            min_active_strategies: default_min_active(),
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.beam == 0 || self.min_active_strategies == 0 {
            return Err(Error::Validation(
                "refinement iterations, beam, and min_active_strategies must be >= 1".into(),
            ));
        }
        if self.strategies.is_empty() {
            return Err(Error::Validation("strategy catalog is empty".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.strategies {
            s.validate()?;
            if !ids.insert(s.strategy_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate strategy id {:?}",
                    s.strategy_id
                )));
            }
        }
        Ok(())
    }
}

/// The compiled-in strategy catalog: nine perturbation instructions across
/// character, word, and sentence levels, plus the three role-playing
/// families with default instantiations.
pub fn builtin_strategies() -> Vec<StrategySpec> {
    load_strategy_catalog(include_str!("../assets/strategies.jsonl").as_bytes())
        .expect("builtin strategy catalog parses")
}

/// Parse a strategy catalog: one JSON record per line.
pub fn load_strategy_catalog(source: impl std::io::Read) -> Result<Vec<StrategySpec>> {
    let reader = std::io::BufReader::new(source);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: StrategySpec = serde_json::from_str(&line).map_err(|e| Error::CatalogParse {
            record: idx + 1,
            message: e.to_string(),
        })?;
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}

/// Rewrite `parent` with `strategy` via the templated model call, producing a
/// judged-later child node. An empty or unchanged rewrite is a degenerate
/// expansion: the strategy application still counts, the child is discarded.
pub fn expand_query(
    ctx: &EngineCtx<'_>,
    store: &mut TreeStore,
    sink: &mut dyn EventSink,
    parent: &QueryId,
    strategy: &StrategySpec,
) -> Result<QueryId> {
    if strategy.status != StrategyStatus::Active {
        return Err(Error::Validation(format!(
            "strategy {:?} is retired",
            strategy.strategy_id
        )));
    }
    let parent_node = store
        .query(parent)
        .ok_or_else(|| Error::UnknownNode(parent.to_string()))?;
    let parent_text = parent_node.text.clone();
    let origin = parent_node.origin_prompt.clone();

    let mut vars = BTreeMap::new();
    let template = match strategy.category {
        StrategyCategory::Perturbation => {
            vars.insert("current_query", parent_text.clone());
            vars.insert("strategy", strategy.description.clone());
            TemplateKind::QueryPerturb
        }
        StrategyCategory::RolePlaying => {
            vars.insert("strategy_type", strategy.level_or_type.as_str().to_owned());
            vars.insert("current_query", parent_text.clone());
            vars.insert("strategy_description", strategy.description.clone());
            TemplateKind::QueryRolePlay
        }
    };
    let user = ctx.templates.render(template, &vars)?;
    let response = ctx
        .gateway
        .complete(&ChatRequest::new(&ctx.generator_backend, user).with_tag("query:expand"))?;
    let rewrite = response.text.trim().to_owned();
    if rewrite.is_empty() {
        return Err(Error::DegenerateExpansion {
            strategy: strategy.strategy_id.clone(),
            reason: "empty rewrite".into(),
        });
    }
    if rewrite == parent_text.trim() {
        return Err(Error::DegenerateExpansion {
            strategy: strategy.strategy_id.clone(),
            reason: "rewrite identical to parent".into(),
        });
    }
    let child = store.create_query(
        rewrite,
        &origin,
        Some(parent),
        Some(strategy.strategy_id.clone()),
    )?;
    sink.emit(EventBody::QueryCreated {
        node: store.query(&child).expect("just created").clone(),
    })?;
    Ok(child)
}

/// Send a query to the target agent, judge the answer (and realism when a
/// roster is configured), store the outcome on the node, and emit the
/// interaction record.
pub fn evaluate_query(
    ctx: &EngineCtx<'_>,
    store: &mut TreeStore,
    sink: &mut dyn EventSink,
    id: &QueryId,
) -> Result<InteractionRecord> {
    let text = store
        .query(id)
        .ok_or_else(|| Error::UnknownNode(id.to_string()))?
        .text
        .clone();
    let answer = ctx
        .gateway
        .complete(&ChatRequest::new(&ctx.agent_backend, text.clone()).with_tag("agent:answer"))?
        .text;
    sink.emit(EventBody::AgentAnswered {
        query: id.clone(),
        answer: answer.clone(),
    })?;

    let judge = Judge::new(ctx.gateway, ctx.templates);
    let verdict = judge.judge_response(&text, &answer, ctx.objective)?;
    let realism: Option<RealismVerdict> = if ctx.objective.realism_roster.is_empty() {
        None
    } else {
        Some(judge.judge_realism(&text, ctx.objective)?)
    };

    // The record tracks the criteria the answer failed to satisfy: the
    // complement of the majority-kept set.
    let violated: BTreeSet<String> = ctx
        .objective
        .criteria
        .iter()
        .map(|c| c.id.clone())
        .filter(|id| !verdict.kept_criteria.contains(id))
        .collect();

    let node = store.query_mut(id).expect("node exists");
    node.answer = Some(answer.clone());
    node.reward = Some(verdict.reward);
    node.violated_criteria = violated.clone();
    node.realism_score = realism.as_ref().map(|r| r.mean);
    let origin = node.origin_prompt.clone();

    let record = InteractionRecord {
        prompt: origin,
        query: id.clone(),
        answer,
        reward: verdict.reward,
        violated_criteria: violated,
        judge_votes: verdict.votes,
    };
    sink.emit(EventBody::Judged {
        record: record.clone(),
        realism,
        is_violation: verdict.is_violation,
    })?;
    Ok(record)
}

/// Keep the `k` judged queries with the smallest reward. Ties break toward
/// the older creation ordinal, then lexicographic node id. Every pool member
/// must be judged.
pub fn select_queries(store: &TreeStore, pool: &[QueryId], k: usize) -> Result<Vec<QueryId>> {
    let mut scored = Vec::with_capacity(pool.len());
    for id in pool {
        let node = store
            .query(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        let reward = node.reward.ok_or_else(|| Error::Unscored(id.to_string()))?;
        scored.push((reward, node.ordinal, id.clone()));
    }
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("rewards are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    Ok(scored.into_iter().take(k).map(|(_, _, id)| id).collect())
}

/// Decide the next iteration's active strategy set from the previous
/// iteration's stats: negative mean reward delta (the strategy pushed rewards
/// down) stays active, everything else is retired for one iteration, and
/// strategies that were not applied stay active. When fewer than
/// `min_active` survive, the best-delta retirees are reactivated to reach the
/// floor.
pub fn select_strategies(
    stats: &[StrategyStats],
    catalog: &[StrategySpec],
    min_active: usize,
) -> BTreeSet<String> {
    let by_id: BTreeMap<&str, &StrategyStats> =
        stats.iter().map(|s| (s.strategy_id.as_str(), s)).collect();
    let mut active = BTreeSet::new();
    let mut retired: Vec<(f64, usize, &str)> = Vec::new();
    for (pos, spec) in catalog.iter().enumerate() {
        match by_id.get(spec.strategy_id.as_str()) {
            None => {
                active.insert(spec.strategy_id.clone());
            }
            Some(stat) => match stat.mean_reward_delta {
                Some(delta) if delta < 0.0 => {
                    active.insert(spec.strategy_id.clone());
                }
                Some(delta) => retired.push((delta, pos, &spec.strategy_id)),
                // Applied but every child degenerated: no evidence either
                // way, keep it active.
                None => {
                    active.insert(spec.strategy_id.clone());
                }
            },
        }
    }
    if active.len() < min_active {
        retired.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        for (_, _, id) in retired {
            if active.len() >= min_active {
                break;
            }
            active.insert(id.to_owned());
        }
    }
    active
}

/// Everything a finished refinement run exposes: every judged node, the final
/// beam, and per-iteration strategy stats.
#[derive(Debug, Default)]
pub struct RefineOutcome {
    pub judged: Vec<QueryId>,
    pub beam: Vec<QueryId>,
    pub records: Vec<InteractionRecord>,
    pub iteration_stats: Vec<Vec<StrategyStats>>,
}

/// Run the full dual-selection / expansion loop over `seeds`.
///
/// Unjudged seeds are answered and judged first. Each iteration expands every
/// beam query with every active strategy, evaluates the children, selects the
/// next beam from the current beam plus the children (seeds are retired from
/// the pool after the first iteration), and re-selects strategies from this
/// iteration's reward deltas.
pub fn refine(
    ctx: &EngineCtx<'_>,
    store: &mut TreeStore,
    sink: &mut dyn EventSink,
    seeds: &[QueryId],
    config: &RefinementConfig,
    scope: &str,
) -> Result<RefineOutcome> {
    if seeds.is_empty() {
        return Ok(RefineOutcome::default());
    }
    config.validate()?;

    let mut outcome = RefineOutcome::default();
    for seed in seeds {
        if store
            .query(seed)
            .ok_or_else(|| Error::UnknownNode(seed.to_string()))?
            .reward
            .is_none()
        {
            let record = evaluate_query(ctx, store, sink, seed)?;
            outcome.records.push(record);
        }
        outcome.judged.push(seed.clone());
    }

    let mut beam = select_queries(store, seeds, config.beam)?;
    sink.emit(EventBody::BeamSelected {
        tree: TreeKind::Query,
        scope: scope.to_owned(),
        iteration: 0,
        pool: seeds.iter().map(|q| q.to_string()).collect(),
        retained: beam.iter().map(|q| q.to_string()).collect(),
        children: Vec::new(),
        strategy_stats: Vec::new(),
        active_strategies: Vec::new(),
        active_if_permanent: Vec::new(),
    })?;

    let mut active: BTreeSet<String> = config
        .strategies
        .iter()
        .filter(|s| s.status == StrategyStatus::Active)
        .map(|s| s.strategy_id.clone())
        .collect();
    let mut ever_retired: BTreeSet<String> = BTreeSet::new();

    for iteration in 1..=config.iterations {
        let mut children = Vec::new();
        let mut applications: BTreeMap<String, u64> = BTreeMap::new();
        let mut deltas: BTreeMap<String, Vec<f64>> = BTreeMap::new();

        for parent in beam.clone() {
            let parent_reward = store
                .query(&parent)
                .expect("beam nodes exist")
                .reward
                .expect("beam nodes judged");
            for strategy in config.strategies.iter().filter(|s| {
                s.status == StrategyStatus::Active && active.contains(&s.strategy_id)
            }) {
                *applications.entry(strategy.strategy_id.clone()).or_default() += 1;
                match expand_query(ctx, store, sink, &parent, strategy) {
                    Ok(child) => {
                        let record = evaluate_query(ctx, store, sink, &child)?;
                        let child_reward = record.reward;
                        outcome.records.push(record);
                        deltas
                            .entry(strategy.strategy_id.clone())
                            .or_default()
                            .push(child_reward - parent_reward);
                        children.push(child);
                    }
                    Err(Error::DegenerateExpansion { .. }) => {}
                    Err(other) => return Err(other),
                }
            }
        }
        outcome.judged.extend(children.iter().cloned());

        // Selection pool: current beam plus this iteration's children, with
        // seed nodes retired once the first iteration has run.
        let mut pool: Vec<QueryId> = Vec::new();
        for id in beam.iter().chain(children.iter()) {
            let is_seed = store.query(id).expect("exists").parent.is_none();
            if iteration >= 2 && is_seed {
                continue;
            }
            pool.push(id.clone());
        }
        if pool.is_empty() {
            // Every survivor was a retired seed and no child emerged; keep
            // the old beam rather than emptying the tree.
            pool = beam.clone();
        }
        let next_beam = select_queries(store, &pool, config.beam)?;

        let stats: Vec<StrategyStats> = config
            .strategies
            .iter()
            .filter_map(|s| {
                let n = *applications.get(&s.strategy_id).unwrap_or(&0);
                if n == 0 {
                    return None;
                }
                let ds = deltas.get(&s.strategy_id);
                Some(StrategyStats {
                    strategy_id: s.strategy_id.clone(),
                    applications: n,
                    mean_reward_delta: ds
                        .filter(|v| !v.is_empty())
                        .map(|v| v.iter().sum::<f64>() / v.len() as f64),
                })
            })
            .collect();

        let next_active = select_strategies(&stats, &config.strategies, config.min_active_strategies);
        for spec in &config.strategies {
            if !next_active.contains(&spec.strategy_id) {
                ever_retired.insert(spec.strategy_id.clone());
            }
        }
        let active_if_permanent: Vec<String> = config
            .strategies
            .iter()
            .filter(|s| {
                next_active.contains(&s.strategy_id) && !ever_retired.contains(&s.strategy_id)
            })
            .map(|s| s.strategy_id.clone())
            .collect();

        sink.emit(EventBody::BeamSelected {
            tree: TreeKind::Query,
            scope: scope.to_owned(),
            iteration,
            pool: pool.iter().map(|q| q.to_string()).collect(),
            retained: next_beam.iter().map(|q| q.to_string()).collect(),
            children: Vec::new(),
            strategy_stats: stats.clone(),
            active_strategies: next_active.iter().cloned().collect(),
            active_if_permanent,
        })?;

        outcome.iteration_stats.push(stats);
        beam = next_beam;
        active = next_active;
    }

    outcome.beam = beam;
    Ok(outcome)
}
