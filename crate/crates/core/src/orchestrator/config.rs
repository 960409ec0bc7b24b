//! Run configuration: a single TOML document.
//!
//! Relative paths are resolved against the config file's directory. Secrets
//! are referenced by environment-variable name and read only at backend
//! construction time.

use crate::error::{Error, Result};
use crate::model::{validate_objective, ObjectiveSpec, RunBudget};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Every chat backend is the deterministic pipeline mock.
    Mock,
    /// Real (or mock) backends, with every call appended to a cassette.
    Record,
    /// No backends: responses come from the cassette, strictly.
    Replay,
    /// Real HTTP backends, nothing recorded.
    Live,
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Http,
    HttpEmbed,
}

/// One backend roster entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub env_key: Option<String>,
    /// Embedding dimension, for `http-embed` backends.
    #[serde(default)]
    pub dimension: Option<usize>,
}

fn default_realism_cut() -> f64 {
    3.0
}
fn default_min_active() -> usize {
    2
}
fn default_agent_backend() -> String {
    "agent".into()
}
fn default_generator_backend() -> String {
    "generator".into()
}
fn default_embedder() -> String {
    "hash-embedder".into()
}
fn default_agent_description() -> String {
    "a QA agent in the e-commerce domain".into()
}
fn default_domain_description() -> String {
    "product information with a name and attributes".into()
}
fn default_parallelism() -> usize {
    1
}
fn default_max_attempts() -> u32 {
    3
}
fn default_policy_max_lines() -> usize {
    crate::prompt_refine::DEFAULT_POLICY_MAX_LINES
}

/// The initial generator prompt when the config does not override it.
pub const DEFAULT_ROOT_PROMPT: &str =
    "Create a user question related to online shopping that a customer might ask about a product.";

fn default_root_prompt() -> String {
    DEFAULT_ROOT_PROMPT.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSection {
    #[serde(default = "default_agent_backend")]
    pub agent_backend: String,
    #[serde(default = "default_generator_backend")]
    pub generator_backend: String,
    #[serde(default = "default_root_prompt")]
    pub root_prompt: String,
    /// Queries with mean realism strictly below this feed realism reflection.
    #[serde(default = "default_realism_cut")]
    pub realism_cut: f64,
    #[serde(default = "default_min_active")]
    pub min_active_strategies: usize,
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default = "default_agent_description")]
    pub agent_description: String,
    #[serde(default = "default_domain_description")]
    pub domain_description: String,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_policy_max_lines")]
    pub policy_max_lines: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        toml::from_str("").expect("all engine fields have defaults")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathsSection {
    pub catalog: PathBuf,
    #[serde(default)]
    pub strategies: Option<PathBuf>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    #[serde(default)]
    pub baseline_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub budget: RunBudget,
    #[serde(default)]
    pub engine: EngineSection,
    pub paths: PathsSection,
    #[serde(default)]
    pub backends: Vec<BackendSpec>,
}

impl RunConfig {
    /// Parse a config file and resolve its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.paths.catalog);
        if let Some(p) = &mut self.paths.strategies {
            resolve(p);
        }
        if let Some(p) = &mut self.paths.templates_dir {
            resolve(p);
        }
        if let Some(p) = &mut self.paths.cassette {
            resolve(p);
        }
        if let Some(p) = &mut self.paths.baseline_corpus {
            resolve(p);
        }
        if let Some(p) = &mut self.out_dir {
            resolve(p);
        }
    }

    /// Every backend id the run will address.
    pub fn referenced_backends(&self) -> BTreeSet<String> {
        let mut ids: BTreeSet<String> = BTreeSet::new();
        ids.insert(self.engine.agent_backend.clone());
        ids.insert(self.engine.generator_backend.clone());
        ids.extend(self.objective.judge_roster.iter().cloned());
        ids.extend(self.objective.realism_roster.iter().cloned());
        ids
    }

    /// Pre-flight validation: type invariants plus file existence.
    pub fn validate(&self) -> Result<()> {
        validate_objective(self.objective.clone())?;
        self.budget.validate()?;
        if self.engine.parallelism == 0 || self.engine.max_attempts == 0 {
            return Err(Error::Config(
                "engine.parallelism and engine.max_attempts must be >= 1".into(),
            ));
        }
        if !self.paths.catalog.exists() {
            return Err(Error::Config(format!(
                "catalog file {} does not exist",
                self.paths.catalog.display()
            )));
        }
        for (label, path) in [
            ("strategies", &self.paths.strategies),
            ("templates_dir", &self.paths.templates_dir),
            ("baseline_corpus", &self.paths.baseline_corpus),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "{label} path {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        match self.mode {
            RunMode::Replay => match &self.paths.cassette {
                None => {
                    return Err(Error::Config("replay mode requires paths.cassette".into()))
                }
                Some(p) if !p.exists() => {
                    return Err(Error::Config(format!(
                        "cassette {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            },
            RunMode::Record => {
                if self.paths.cassette.is_none() {
                    return Err(Error::Config("record mode requires paths.cassette".into()));
                }
            }
            RunMode::Live => {
                let declared: BTreeSet<&str> = self
                    .backends
                    .iter()
                    .map(|b| b.backend_id.as_str())
                    .collect();
                for id in self.referenced_backends() {
                    if !declared.contains(id.as_str()) {
                        return Err(Error::Config(format!(
                            "live mode references backend {id:?} but [[backends]] does not declare it"
                        )));
                    }
                }
            }
            RunMode::Mock => {}
        }
        for backend in &self.backends {
            if backend.kind == BackendKind::Http
                && (backend.endpoint.is_none() || backend.model.is_none())
            {
                return Err(Error::Config(format!(
                    "http backend {:?} needs endpoint and model",
                    backend.backend_id
                )));
            }
            if backend.kind == BackendKind::HttpEmbed
                && (backend.endpoint.is_none()
                    || backend.model.is_none()
                    || backend.dimension.is_none())
            {
                return Err(Error::Config(format!(
                    "http-embed backend {:?} needs endpoint, model, and dimension",
                    backend.backend_id
                )));
            }
        }
        Ok(())
    }
}
