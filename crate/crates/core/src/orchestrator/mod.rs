//! The outer loop: drives generations of query waves and prompt refinement,
//! persists every step to the event log, enforces the token budget, and
//! backs the `run`, `report`, and `trace` commands.
//!
//! # Loop shape
//!
//! Each generation takes the live candidate set (the previous generation's
//! retained beam plus its newly expanded children; initially just the root
//! prompt) and, per live prompt, generates seed queries from sampled catalog
//! items and runs query refinement over each seed. With every candidate
//! scored by its cumulative interaction records, prompt refinement selects
//! the beam, reflects, and expands it. The prompt-tree `beam-selected` event
//! closes the generation; resuming truncates the log to the last such marker
//! and replays forward, which reproduces an uninterrupted run bit for bit in
//! mock mode.
//!
//! # Determinism
//!
//! All run-internal randomness is derived from (rng_seed, structural
//! counters) via stable hashing; there is no sequential RNG state to
//! persist. Mock responses are pure functions of their requests.

pub mod config;
pub mod event;
pub mod trace;

use crate::error::{Error, Result};
use crate::gateway::embed::{Embedder, HashEmbedder};
use crate::gateway::mock::pipeline_mock;
use crate::gateway::{
    CassetteRecorder, CassetteReplayer, ChatBackend, ChatRequest, Gateway, UsageLedger,
};
use crate::metrics::{
    cost_per_query, delta_percent, distinct_n, failure_rate, mean_pairwise_cosine_distance, mtld,
    BaselineDeltas, Corpus, MetricsReport, ReportFormat, MTLD_TTR_THRESHOLD,
    PAIRWISE_SUBSAMPLE_CAP,
};
use crate::model::{
    load_domain_knowledge, stable_hash64, validate_objective, DomainKnowledgeItem, Direction,
    InteractionRecord, PromptId, QueryId, TreeStore,
};
use crate::prompt_refine::{refine_prompts, score_prompt, PromptScore, RealismPolicy};
use crate::query_refine::{builtin_strategies, load_strategy_catalog, refine, RefinementConfig};
use crate::templates::{TemplateKind, TemplateSet};
use crate::EngineCtx;
use config::{BackendKind, RunConfig, RunMode};
use event::{
    canonical_log, read_log, truncate_log, EventBody, EventLogWriter, EventSink, RunEvent,
    TreeKind,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// File names inside a run directory.
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_STEM: &str = "report";

/// What a finished (or budget-halted) run hands back.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub halted_on_budget: bool,
    pub report: MetricsReport,
}

/// Chat backends injected by tests and fixture builders; they replace the
/// mode's default backend for their id.
#[derive(Default)]
pub struct BackendOverrides {
    pub chat: Vec<(String, Arc<dyn ChatBackend>)>,
}

struct LogSink<'a> {
    writer: EventLogWriter,
    gateway: &'a Gateway,
}

impl EventSink for LogSink<'_> {
    fn emit(&mut self, body: EventBody) -> Result<()> {
        self.writer.append(self.gateway.ledger_snapshot(), body)?;
        Ok(())
    }
}

/// Mutable run state; reconstructable from the event log.
#[derive(Default)]
struct RunState {
    store: TreeStore,
    records_by_prompt: BTreeMap<PromptId, Vec<InteractionRecord>>,
    all_records: Vec<InteractionRecord>,
    judged_order: Vec<QueryId>,
    violation_counts: BTreeMap<String, u64>,
    policy: RealismPolicy,
    history: Vec<String>,
    live_set: Vec<PromptId>,
    next_generation: u32,
    seed_counter: u64,
    completed: bool,
    halted: bool,
}

impl RunState {
    fn absorb_record(&mut self, record: InteractionRecord) {
        for criterion in &record.violated_criteria {
            *self.violation_counts.entry(criterion.clone()).or_default() += 1;
        }
        self.judged_order.push(record.query.clone());
        self.records_by_prompt
            .entry(record.prompt.clone())
            .or_default()
            .push(record.clone());
        self.all_records.push(record);
    }

    /// Recompute every prompt's mean-reward score from its records.
    fn refresh_prompt_scores(&mut self) {
        for (prompt, records) in &self.records_by_prompt {
            if records.is_empty() {
                continue;
            }
            let mean = records.iter().map(|r| r.reward).sum::<f64>() / records.len() as f64;
            if let Some(node) = self.store.prompt_mut(prompt) {
                node.score = Some(mean);
            }
        }
    }
}

/// Rebuild run state by replaying a log prefix.
fn restore_state(events: &[RunEvent], policy_max_lines: usize) -> RunState {
    let mut state = RunState {
        policy: RealismPolicy::with_max_lines(policy_max_lines),
        next_generation: 1,
        ..RunState::default()
    };
    for event in events {
        match &event.body {
            EventBody::PromptCreated { node } => {
                if node.parent.is_none() {
                    state.live_set = vec![node.node_id.clone()];
                }
                state.history.push(node.text.clone());
                state.store.restore_prompt(node.clone());
            }
            EventBody::QueryCreated { node } => {
                if node.parent.is_none() {
                    state.seed_counter += 1;
                }
                state.store.restore_query(node.clone());
            }
            EventBody::AgentAnswered { query, answer } => {
                if let Some(node) = state.store.query_mut(query) {
                    node.answer = Some(answer.clone());
                }
            }
            EventBody::Judged { record, realism, .. } => {
                if let Some(node) = state.store.query_mut(&record.query) {
                    node.reward = Some(record.reward);
                    node.violated_criteria = record.violated_criteria.clone();
                    node.realism_score = realism.as_ref().map(|r| r.mean);
                    node.answer = Some(record.answer.clone());
                }
                state.absorb_record(record.clone());
            }
            EventBody::Reflected { .. } => {}
            EventBody::BeamSelected {
                tree: TreeKind::Prompt,
                iteration,
                pool,
                retained,
                children,
                ..
            } => {
                state.next_generation = iteration + 1;
                for id in pool {
                    let id = PromptId(id.clone());
                    let keep = retained.contains(&id.0);
                    if let Some(node) = state.store.prompt_mut(&id) {
                        node.status = if keep {
                            crate::model::PromptStatus::Live
                        } else {
                            crate::model::PromptStatus::Pruned
                        };
                    }
                }
                state.live_set = retained
                    .iter()
                    .chain(children.iter())
                    .map(|s| PromptId(s.clone()))
                    .collect();
            }
            EventBody::BeamSelected { .. } => {}
            EventBody::PolicyRevised {
                revision,
                policy_text,
                ..
            } => {
                state.policy.policy_text = policy_text.clone();
                state.policy.revision = *revision;
            }
            EventBody::MetricsEmitted { .. } => state.completed = true,
            EventBody::BudgetHalt { .. } => state.halted = true,
        }
    }
    state.refresh_prompt_scores();
    state
}

/// Index one past the last prompt-tree beam selection: the resume boundary.
fn last_generation_boundary(events: &[RunEvent]) -> u64 {
    events
        .iter()
        .rev()
        .find(|e| {
            matches!(
                e.body,
                EventBody::BeamSelected {
                    tree: TreeKind::Prompt,
                    ..
                }
            )
        })
        .map(|e| e.ordinal + 1)
        .unwrap_or(0)
}

fn build_gateway(
    config: &RunConfig,
    overrides: Option<BackendOverrides>,
) -> Result<Gateway> {
    let mut builder = Gateway::builder()
        .max_attempts(config.engine.max_attempts)
        .parallelism(config.engine.parallelism);

    match config.mode {
        RunMode::Replay => {
            let cassette = config.paths.cassette.as_ref().expect("validated");
            builder = builder.replay_from(CassetteReplayer::load(cassette)?);
        }
        RunMode::Mock | RunMode::Record | RunMode::Live => {
            let declared: BTreeMap<&str, &config::BackendSpec> = config
                .backends
                .iter()
                .map(|b| (b.backend_id.as_str(), b))
                .collect();
            let mock: Arc<dyn ChatBackend> = Arc::new(pipeline_mock(&config.objective));
            for id in config.referenced_backends() {
                let backend: Arc<dyn ChatBackend> = match declared.get(id.as_str()) {
                    Some(spec) if spec.kind == BackendKind::Http => {
                        Arc::new(crate::gateway::http::HttpChatBackend::new(
                            spec.endpoint.as_deref().expect("validated"),
                            spec.model.as_deref().expect("validated"),
                            spec.env_key.as_deref(),
                        )?)
                    }
                    // Mock-kind declarations and undeclared ids share the
                    // pipeline mock (live mode validated declarations
                    // earlier).
                    _ => mock.clone(),
                };
                builder = builder.chat(id, backend);
            }
            if config.mode == RunMode::Record {
                let cassette = config.paths.cassette.as_ref().expect("validated");
                if let Some(parent) = cassette.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                builder = builder.record_to(CassetteRecorder::create(cassette)?);
            }
        }
    }

    if let Some(overrides) = overrides {
        for (id, backend) in overrides.chat {
            builder = builder.chat(id, backend);
        }
    }

    builder = builder.embedder("hash-embedder", Arc::new(HashEmbedder::default()));
    if matches!(config.mode, RunMode::Live | RunMode::Record) {
        for spec in &config.backends {
            if spec.kind == BackendKind::HttpEmbed {
                builder = builder.embedder(
                    spec.backend_id.clone(),
                    Arc::new(crate::gateway::http::HttpEmbedder::new(
                        spec.endpoint.as_deref().expect("validated"),
                        spec.model.as_deref().expect("validated"),
                        spec.env_key.as_deref(),
                        spec.dimension.expect("validated"),
                    )?),
                );
            }
        }
    }
    Ok(builder.build())
}

struct Runner<'a> {
    ctx: EngineCtx<'a>,
    config: &'a RunConfig,
    refinement: RefinementConfig,
    catalog: Vec<DomainKnowledgeItem>,
    categories: Vec<String>,
    by_category: BTreeMap<String, Vec<usize>>,
    sink: LogSink<'a>,
    state: RunState,
}

impl Runner<'_> {
    /// Round-robin over categories by seed counter; the item within the
    /// category comes from a seeded hash.
    fn sample_item(&self, counter: u64) -> &DomainKnowledgeItem {
        let category = &self.categories[(counter % self.categories.len() as u64) as usize];
        let indexes = &self.by_category[category];
        let pick = stable_hash64(&[
            "catalog",
            &self.config.budget.rng_seed.to_string(),
            &counter.to_string(),
        ]) % indexes.len() as u64;
        &self.catalog[indexes[pick as usize]]
    }

    /// One prompt's wave in one generation: seed queries from sampled catalog
    /// items, each refined through the full query loop.
    fn wave(&mut self, generation: u32, prompt: &PromptId) -> Result<()> {
        let prompt_text = self
            .state
            .store
            .prompt(prompt)
            .ok_or_else(|| Error::UnknownNode(prompt.to_string()))?
            .text
            .clone();
        for seed_index in 0..self.config.budget.queries_per_prompt {
            let item = self.sample_item(self.state.seed_counter).clone();
            self.state.seed_counter += 1;

            let mut vars = BTreeMap::new();
            vars.insert("prompt", prompt_text.clone());
            vars.insert("domain_knowledge", item.render());
            let user = self.ctx.templates.render(TemplateKind::SeedQuery, &vars)?;
            let text = self
                .ctx
                .gateway
                .complete(
                    &ChatRequest::new(&self.ctx.generator_backend, user).with_tag("query:seed"),
                )?
                .text
                .trim()
                .to_owned();
            let text = if text.is_empty() {
                format!("What can you tell me about the {}?", item.name)
            } else {
                text
            };
            let seed = self.state.store.create_query(text, prompt, None, None)?;
            self.sink.emit(EventBody::QueryCreated {
                node: self.state.store.query(&seed).expect("just created").clone(),
            })?;

            let scope = format!("g{generation}:{prompt}:s{seed_index}");
            let outcome = refine(
                &self.ctx,
                &mut self.state.store,
                &mut self.sink,
                &[seed],
                &self.refinement,
                &scope,
            )?;
            for record in outcome.records {
                self.state.absorb_record(record);
            }
        }
        self.state.refresh_prompt_scores();
        Ok(())
    }

    /// Returns true when the budget halted the run.
    fn run_generation(&mut self, generation: u32) -> Result<bool> {
        let live = self.state.live_set.clone();
        for prompt in &live {
            let before = self.ctx.gateway.ledger_snapshot().total_tokens();
            self.wave(generation, prompt)?;
            let total = self.ctx.gateway.ledger_snapshot().total_tokens();
            if let Some(cap) = self.config.budget.max_total_tokens {
                if total > cap {
                    self.sink.emit(EventBody::BudgetHalt {
                        total_tokens: total,
                        cap,
                        last_wave_tokens: total - before,
                    })?;
                    self.state.halted = true;
                    return Ok(true);
                }
            }
        }

        let mut scores: BTreeMap<PromptId, PromptScore> = BTreeMap::new();
        for prompt in &live {
            let records = self
                .state
                .records_by_prompt
                .get(prompt)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let score = score_prompt(records, self.ctx.objective)
                .ok_or_else(|| Error::Unscored(prompt.to_string()))?;
            scores.insert(prompt.clone(), score);
        }

        let outcome = refine_prompts(
            &self.ctx,
            &mut self.state.store,
            &mut self.sink,
            &live,
            &scores,
            &self.state.records_by_prompt,
            &self.state.violation_counts,
            &mut self.state.policy,
            &mut self.state.history,
            self.config.budget.prompt_beam,
            self.config.engine.realism_cut,
        )?;
        self.sink.emit(EventBody::BeamSelected {
            tree: TreeKind::Prompt,
            scope: format!("g{generation}"),
            iteration: generation,
            pool: live.iter().map(|p| p.to_string()).collect(),
            retained: outcome.beam.iter().map(|p| p.to_string()).collect(),
            children: outcome.children.iter().map(|p| p.to_string()).collect(),
            strategy_stats: Vec::new(),
            active_strategies: Vec::new(),
            active_if_permanent: Vec::new(),
        })?;
        self.state.live_set = outcome
            .beam
            .iter()
            .chain(outcome.children.iter())
            .cloned()
            .collect();
        self.state.next_generation = generation + 1;
        Ok(false)
    }
}

fn load_refinement(config: &RunConfig) -> Result<RefinementConfig> {
    let strategies = match &config.paths.strategies {
        Some(path) => load_strategy_catalog(std::fs::File::open(path)?)?,
        None => builtin_strategies(),
    };
    let refinement = RefinementConfig {
        iterations: config.budget.query_iterations,
        beam: config.budget.query_beam,
        strategies,
        min_active_strategies: config.engine.min_active_strategies,
    };
    refinement.validate()?;
    Ok(refinement)
}

fn load_templates(config: &RunConfig) -> Result<TemplateSet> {
    let templates = match &config.paths.templates_dir {
        Some(dir) => TemplateSet::with_overrides(dir)?,
        None => TemplateSet::builtin(),
    };
    templates.validate()?;
    Ok(templates)
}

fn report_embedder(config: &RunConfig) -> Result<Box<dyn Embedder>> {
    if config.engine.embedder == "hash-embedder" {
        return Ok(Box::new(HashEmbedder::default()));
    }
    let spec = config
        .backends
        .iter()
        .find(|b| b.backend_id == config.engine.embedder && b.kind == BackendKind::HttpEmbed)
        .ok_or_else(|| {
            Error::Config(format!(
                "embedder {:?} is not declared as an http-embed backend",
                config.engine.embedder
            ))
        })?;
    Ok(Box::new(crate::gateway::http::HttpEmbedder::new(
        spec.endpoint.as_deref().expect("validated"),
        spec.model.as_deref().expect("validated"),
        spec.env_key.as_deref(),
        spec.dimension.expect("validated"),
    )?))
}

fn load_baseline(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    Ok(Corpus::new(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect(),
    ))
}

fn compute_report(
    state: &RunState,
    ledger: &UsageLedger,
    config: &RunConfig,
    embedder: &dyn Embedder,
    baseline: Option<&Corpus>,
    partial: bool,
    last_ordinal: u64,
) -> MetricsReport {
    let texts: Vec<String> = state
        .judged_order
        .iter()
        .filter_map(|q| state.store.query(q).map(|n| n.text.clone()))
        .collect();
    let corpus = Corpus::new(texts);
    let n = corpus.len() as u64;
    let seed = config.budget.rng_seed;

    let fr = failure_rate(&state.all_records, &config.objective).ok();
    let cossim = if corpus.len() >= 2 {
        mean_pairwise_cosine_distance(&corpus, embedder, PAIRWISE_SUBSAMPLE_CAP, seed).ok()
    } else {
        None
    };
    let distinct = {
        let d: Vec<Option<f64>> = (1..=3).map(|k| distinct_n(&corpus, k).ok()).collect();
        match (d[0], d[1], d[2]) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        }
    };
    let mtld_value = mtld(&corpus, MTLD_TTR_THRESHOLD).ok();
    let realism_scores: Vec<f64> = state
        .judged_order
        .iter()
        .filter_map(|q| state.store.query(q).and_then(|n| n.realism_score))
        .collect();
    let realism_mean = if realism_scores.is_empty() {
        None
    } else {
        Some(realism_scores.iter().sum::<f64>() / realism_scores.len() as f64)
    };
    let cost = if n > 0 {
        cost_per_query(ledger, n).unwrap_or(0.0)
    } else {
        0.0
    };

    let deltas = baseline.and_then(|base| {
        let base_cossim =
            mean_pairwise_cosine_distance(base, embedder, PAIRWISE_SUBSAMPLE_CAP, seed).ok()?;
        let base_distinct: Vec<f64> = (1..=3)
            .map(|k| distinct_n(base, k))
            .collect::<Result<_>>()
            .ok()?;
        let base_mtld = mtld(base, MTLD_TTR_THRESHOLD).ok()?;
        let value_distinct = distinct?;
        let per_n: Vec<f64> = (0..3)
            .map(|i| delta_percent(value_distinct[i], base_distinct[i]))
            .collect::<Result<_>>()
            .ok()?;
        Some(BaselineDeltas {
            one_minus_cossim: delta_percent(cossim?, base_cossim).ok()?,
            distinct_mean: per_n.iter().sum::<f64>() / 3.0,
            mtld: delta_percent(mtld_value?, base_mtld).ok()?,
        })
    });

    MetricsReport {
        objective: config.objective.name.clone(),
        n_queries: n,
        failure_rate: fr,
        one_minus_cossim: cossim,
        distinct,
        mtld: mtld_value,
        realism_mean,
        cost_tokens_per_query: cost,
        cost_ratio_vs_reference: None,
        deltas,
        tokenizer: corpus.tokenizer().to_owned(),
        violation_threshold: config.objective.violation_threshold,
        partial,
        last_ordinal,
    }
}

fn write_report_files(run_dir: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::write(
        run_dir.join(format!("{REPORT_STEM}.txt")),
        report.render(ReportFormat::Table),
    )?;
    std::fs::write(
        run_dir.join(format!("{REPORT_STEM}.csv")),
        report.render(ReportFormat::Csv),
    )?;
    std::fs::write(
        run_dir.join(format!("{REPORT_STEM}.json")),
        report.render(ReportFormat::Struct),
    )?;
    Ok(())
}

/// Execute (or resume) a run into `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    run_with_overrides(config, out_dir, None)
}

pub fn run_with_overrides(
    config: &RunConfig,
    out_dir: &Path,
    overrides: Option<BackendOverrides>,
) -> Result<RunOutcome> {
    config.validate()?;
    let objective = validate_objective(config.objective.clone())?;
    let templates = load_templates(config)?;
    let refinement = load_refinement(config)?;
    let catalog = load_domain_knowledge(std::fs::File::open(&config.paths.catalog)?)?;
    if catalog.is_empty() {
        return Err(Error::Config("catalog has no items".into()));
    }

    std::fs::create_dir_all(out_dir)?;
    let config_snapshot = out_dir.join(CONFIG_FILE);
    if !config_snapshot.exists() {
        let rendered = toml::to_string_pretty(config)
            .map_err(|e| Error::Config(format!("config does not serialize: {e}")))?;
        std::fs::write(&config_snapshot, rendered)?;
    }

    let events_path = out_dir.join(EVENTS_FILE);
    let resuming = events_path.exists()
        && std::fs::metadata(&events_path).map(|m| m.len() > 0).unwrap_or(false);
    if resuming && config.mode == RunMode::Record {
        return Err(Error::Config(
            "resume is not supported in record mode; start a fresh run directory".into(),
        ));
    }

    let gateway = build_gateway(config, overrides)?;
    let baseline = match &config.paths.baseline_corpus {
        Some(path) => Some(load_baseline(path)?),
        None => None,
    };
    let embedder = report_embedder(config)?;

    let state;
    let writer;
    let mut fresh = !resuming;
    if resuming {
        let events = read_log(&events_path)?;
        let full = restore_state(&events, config.engine.policy_max_lines);
        if full.completed {
            // Nothing to resume: recompute the report from the intact log.
            let report = compute_report(
                &full,
                &events.last().map(|e| e.usage.clone()).unwrap_or_default(),
                config,
                embedder.as_ref(),
                baseline.as_ref(),
                false,
                events.last().map(|e| e.ordinal).unwrap_or(0),
            );
            return Ok(RunOutcome {
                run_dir: out_dir.to_owned(),
                halted_on_budget: full.halted,
                report,
            });
        }
        let keep = last_generation_boundary(&events);
        truncate_log(&events_path, keep)?;
        if keep == 0 {
            // No generation ever completed; replay from the very start.
            fresh = true;
            state = RunState {
                policy: RealismPolicy::with_max_lines(config.engine.policy_max_lines),
                next_generation: 1,
                ..RunState::default()
            };
            writer = EventLogWriter::create(&events_path)?;
        } else {
            let kept = &events[..keep as usize];
            state = restore_state(kept, config.engine.policy_max_lines);
            gateway.restore_ledger(kept.last().map(|e| e.usage.clone()).unwrap_or_default());
            writer = EventLogWriter::append_after(&events_path, keep)?;
        }
    } else {
        state = RunState {
            policy: RealismPolicy::with_max_lines(config.engine.policy_max_lines),
            next_generation: 1,
            ..RunState::default()
        };
        writer = EventLogWriter::create(&events_path)?;
    }

    let ctx = EngineCtx {
        gateway: &gateway,
        templates: &templates,
        objective: &objective,
        agent_backend: config.engine.agent_backend.clone(),
        generator_backend: config.engine.generator_backend.clone(),
        agent_description: config.engine.agent_description.clone(),
        domain_description: config.engine.domain_description.clone(),
    };

    let mut categories: Vec<String> = Vec::new();
    let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in catalog.iter().enumerate() {
        let category = item.category().to_owned();
        if !by_category.contains_key(&category) {
            categories.push(category.clone());
        }
        by_category.entry(category).or_default().push(i);
    }

    let mut runner = Runner {
        ctx,
        config,
        refinement,
        catalog,
        categories,
        by_category,
        sink: LogSink {
            writer,
            gateway: &gateway,
        },
        state,
    };

    if fresh {
        let root = runner.state.store.create_prompt(
            config.engine.root_prompt.clone(),
            None,
            Direction::Root,
        )?;
        runner.sink.emit(EventBody::PromptCreated {
            node: runner.state.store.prompt(&root).expect("just created").clone(),
        })?;
        runner.state.history.push(config.engine.root_prompt.clone());
        runner.state.live_set = vec![root];
    }

    let mut halted = runner.state.halted;
    if !halted {
        for generation in runner.state.next_generation..=config.budget.prompt_iterations {
            if runner.run_generation(generation)? {
                halted = true;
                break;
            }
        }
    }

    let ledger = gateway.ledger_snapshot();
    let last_ordinal = runner.sink.writer.next_ordinal();
    let report = compute_report(
        &runner.state,
        &ledger,
        config,
        embedder.as_ref(),
        baseline.as_ref(),
        false,
        last_ordinal,
    );
    runner.sink.emit(EventBody::MetricsEmitted {
        report: report.clone(),
    })?;
    write_report_files(out_dir, &report)?;

    Ok(RunOutcome {
        run_dir: out_dir.to_owned(),
        halted_on_budget: halted,
        report,
    })
}

/// Recompute the report from a run directory's event log. Never reads cached
/// values; a log without a final metrics event is flagged partial.
pub fn report(
    run_dir: &Path,
    baseline_override: Option<&Path>,
    format: ReportFormat,
) -> Result<(MetricsReport, String)> {
    let config = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let events = read_log(&run_dir.join(EVENTS_FILE))?;
    let state = restore_state(&events, config.engine.policy_max_lines);
    let ledger = events.last().map(|e| e.usage.clone()).unwrap_or_default();
    let last_ordinal = events.last().map(|e| e.ordinal).unwrap_or(0);
    let embedder = report_embedder(&config)?;
    let baseline = match baseline_override.or(config.paths.baseline_corpus.as_deref()) {
        Some(path) => Some(load_baseline(path)?),
        None => None,
    };
    let report = compute_report(
        &state,
        &ledger,
        &config,
        embedder.as_ref(),
        baseline.as_ref(),
        !state.completed,
        last_ordinal,
    );
    let rendered = report.render(format);
    Ok((report, rendered))
}

/// Render the lineage of a node recorded in a run directory.
pub fn trace_node(run_dir: &Path, node_id: &str) -> Result<String> {
    let config = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let events = read_log(&run_dir.join(EVENTS_FILE))?;
    let state = restore_state(&events, config.engine.policy_max_lines);
    trace::render_trace(&state.store, node_id)
}

/// The canonical (timestamp-free) form of a run's event log.
pub fn canonical_run_log(run_dir: &Path) -> Result<String> {
    let events = read_log(&run_dir.join(EVENTS_FILE))?;
    Ok(canonical_log(&events))
}
