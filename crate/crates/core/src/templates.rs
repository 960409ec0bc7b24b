//! Prompt template assets.
//!
//! All generation, reflection, and judging prompts are editable text assets
//! with `{snake_case}` placeholders. The built-in set is compiled in;
//! individual files in a template directory override it by name. Placeholder
//! completeness is validated at startup so a broken override fails fast
//! rather than mid-run.

use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// The template slots the engine renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateKind {
    SeedQuery,
    QueryPerturb,
    QueryRolePlay,
    ReflectRealism,
    ReflectViolation,
    ReflectCompliant,
    ExpandPrompt,
    JudgeResponse,
    JudgeRealism,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 9] = [
        TemplateKind::SeedQuery,
        TemplateKind::QueryPerturb,
        TemplateKind::QueryRolePlay,
        TemplateKind::ReflectRealism,
        TemplateKind::ReflectViolation,
        TemplateKind::ReflectCompliant,
        TemplateKind::ExpandPrompt,
        TemplateKind::JudgeResponse,
        TemplateKind::JudgeRealism,
    ];

    /// File stem used for directory overrides, e.g. `expand_prompt.txt`.
    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::SeedQuery => "seed_query.txt",
            TemplateKind::QueryPerturb => "query_perturb.txt",
            TemplateKind::QueryRolePlay => "query_roleplay.txt",
            TemplateKind::ReflectRealism => "reflect_realism.txt",
            TemplateKind::ReflectViolation => "reflect_violation.txt",
            TemplateKind::ReflectCompliant => "reflect_compliant.txt",
            TemplateKind::ExpandPrompt => "expand_prompt.txt",
            TemplateKind::JudgeResponse => "judge_response.txt",
            TemplateKind::JudgeRealism => "judge_realism.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateKind::SeedQuery => include_str!("../assets/templates/seed_query.txt"),
            TemplateKind::QueryPerturb => include_str!("../assets/templates/query_perturb.txt"),
            TemplateKind::QueryRolePlay => include_str!("../assets/templates/query_roleplay.txt"),
            TemplateKind::ReflectRealism => {
                include_str!("../assets/templates/reflect_realism.txt")
            }
            TemplateKind::ReflectViolation => {
                include_str!("../assets/templates/reflect_violation.txt")
            }
            TemplateKind::ReflectCompliant => {
                include_str!("../assets/templates/reflect_compliant.txt")
            }
            TemplateKind::ExpandPrompt => include_str!("../assets/templates/expand_prompt.txt"),
            TemplateKind::JudgeResponse => include_str!("../assets/templates/judge_response.txt"),
            TemplateKind::JudgeRealism => include_str!("../assets/templates/judge_realism.txt"),
        }
    }

    /// Placeholders that must appear in the template for the engine to work.
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::SeedQuery => &["prompt", "domain_knowledge"],
            TemplateKind::QueryPerturb => &["current_query", "strategy"],
            TemplateKind::QueryRolePlay => {
                &["strategy_type", "current_query", "strategy_description"]
            }
            TemplateKind::ReflectRealism => &[
                "agent_type",
                "domain_knowledge_kind",
                "current_prompts",
                "unrealistic_queries",
                "realism_definition",
            ],
            TemplateKind::ReflectViolation => &[
                "agent_type",
                "domain_knowledge_kind",
                "current_prompts",
                "violating_responses",
                "violating_criteria",
            ],
            TemplateKind::ReflectCompliant => &[
                "agent_type",
                "domain_knowledge_kind",
                "current_prompts",
                "compliant_responses",
                "violating_criteria",
                "compliant_criteria",
            ],
            TemplateKind::ExpandPrompt => &[
                "compliant_criteria",
                "violating_criteria",
                "realism_policy",
                "feedback_type",
                "current_prompt",
                "realism_reasoning",
                "realism_suggestions",
                "direction_feedback",
                "prev_prompts",
            ],
            TemplateKind::JudgeResponse => &["query", "response", "criteria"],
            TemplateKind::JudgeRealism => &["query"],
        }
    }
}

/// Extract every `{snake_case_ident}` placeholder. Braces that do not wrap a
/// bare lowercase identifier (JSON examples, prose) are left alone.
pub fn placeholders(template: &str) -> BTreeSet<String> {
    let bytes = template.as_bytes();
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len()
                && (bytes[j].is_ascii_lowercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_')
            {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                found.insert(template[i + 1..j].to_owned());
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    found
}

/// Substitute placeholders from `vars`. Unknown placeholders left in the
/// template are an error; unused vars are fine.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = template.to_owned();
    for name in placeholders(template) {
        match vars.get(name.as_str()) {
            Some(value) => out = out.replace(&format!("{{{name}}}"), value),
            None => {
                return Err(Error::Template {
                    template: "<render>".into(),
                    message: format!("no value for placeholder {{{name}}}"),
                })
            }
        }
    }
    Ok(out)
}

/// A complete, validated set of templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    map: BTreeMap<TemplateKind, String>,
}

impl TemplateSet {
    /// The compiled-in templates.
    pub fn builtin() -> Self {
        let map = TemplateKind::ALL
            .iter()
            .map(|k| (*k, k.builtin().to_owned()))
            .collect();
        Self { map }
    }

    /// Built-in templates with per-file overrides from `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                set.map.insert(kind, std::fs::read_to_string(&path)?);
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn get(&self, kind: TemplateKind) -> &str {
        self.map.get(&kind).expect("all template kinds present")
    }

    pub fn render(&self, kind: TemplateKind, vars: &BTreeMap<&str, String>) -> Result<String> {
        render(self.get(kind), vars).map_err(|e| match e {
            Error::Template { message, .. } => Error::Template {
                template: kind.file_name().into(),
                message,
            },
            other => other,
        })
    }

    /// Check that every template carries its required placeholders and no
    /// misspelled extras.
    pub fn validate(&self) -> Result<()> {
        for kind in TemplateKind::ALL {
            let text = self.get(kind);
            let found = placeholders(text);
            let required: BTreeSet<String> = kind
                .required_placeholders()
                .iter()
                .map(|s| s.to_string())
                .collect();
            for missing in required.difference(&found) {
                return Err(Error::Template {
                    template: kind.file_name().into(),
                    message: format!("missing required placeholder {{{missing}}}"),
                });
            }
            for extra in found.difference(&required) {
                return Err(Error::Template {
                    template: kind.file_name().into(),
                    message: format!("unknown placeholder {{{extra}}}"),
                });
            }
        }
        Ok(())
    }
}
