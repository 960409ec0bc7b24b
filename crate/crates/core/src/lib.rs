//! # quarry
//!
//! A black-box failure-discovery engine for LLM-based agents. Given a
//! natural-language objective (helpfulness, safety, ...) decomposed into
//! weighted criteria, quarry searches for realistic user queries that pull an
//! opaque agent below the objective's bar, by coupling two beam searches in
//! an iterative loop:
//!
//! - **Query refinement** diversifies promising queries with perturbation and
//!   role-playing rewrites, selecting both the queries and the rewrite
//!   strategies that lower the judged reward ([`query_refine`]).
//! - **Prompt refinement** evolves the generator prompts behind those
//!   queries: reflection diagnoses realism and objective signals from the
//!   interaction history, and expansion proposes new prompts along
//!   exploitation, exploration, and examination directions
//!   ([`prompt_refine`]).
//!
//! Rewards come from an LLM-as-a-judge ensemble with strict-majority
//! aggregation ([`judging`]); every model call flows through a [`gateway`]
//! with token accounting and deterministic record/replay; outcomes are
//! measured by the metric suite in [`metrics`] (failure rate, pairwise
//! embedding distance, distinct n-grams, MTLD, realism, cost). The
//! [`orchestrator`] drives the outer loop, persists an append-only event log,
//! and exposes the `quarry` command line.

pub mod error;
pub mod gateway;
pub mod judging;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod prompt_refine;
pub mod query_refine;
pub mod templates;

pub use error::{Error, Result};

/// Shared handles every engine stage needs: the gateway, the template set,
/// the objective, and which backends play the target agent and the generator.
pub struct EngineCtx<'a> {
    pub gateway: &'a gateway::Gateway,
    pub templates: &'a templates::TemplateSet,
    pub objective: &'a model::ObjectiveSpec,
    /// Backend id of the opaque agent under test.
    pub agent_backend: String,
    /// Backend id of the model that generates, rewrites, and reflects.
    pub generator_backend: String,
    /// Short description of the agent, rendered into reflection templates.
    pub agent_description: String,
    /// Short description of the domain knowledge, rendered into reflection
    /// templates.
    pub domain_description: String,
}

impl<'a> EngineCtx<'a> {
    pub fn new(
        gateway: &'a gateway::Gateway,
        templates: &'a templates::TemplateSet,
        objective: &'a model::ObjectiveSpec,
        agent_backend: impl Into<String>,
        generator_backend: impl Into<String>,
    ) -> Self {
        Self {
            gateway,
            templates,
            objective,
            agent_backend: agent_backend.into(),
            generator_backend: generator_backend.into(),
            agent_description: "a QA agent in the e-commerce domain".into(),
            domain_description: "product information with a name and attributes".into(),
        }
    }
}
