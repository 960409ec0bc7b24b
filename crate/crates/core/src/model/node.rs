//! Nodes of the two search trees and the store that owns them.

use super::stable_hash_hex;
use crate::error::{Error, Result};
use crate::judging::JudgeVote;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Identifier of a prompt node: a deterministic hash of (parent id, creation
/// ordinal, text), so replayed runs mint identical ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub String);

/// Identifier of a query node, derived the same way as [`PromptId`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub String);

impl std::fmt::Display for PromptId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for QueryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// How a prompt node came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Root,
    Exploitation,
    Exploration,
    Examination,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Root => "root",
            Direction::Exploitation => "exploitation",
            Direction::Exploration => "exploration",
            Direction::Examination => "examination",
        }
    }

    /// The three expansion directions in their deterministic merge order.
    pub const EXPANSIONS: [Direction; 3] = [
        Direction::Exploitation,
        Direction::Exploration,
        Direction::Examination,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStatus {
    /// Eligible for query generation and selection.
    Live,
    /// Dropped at a selection boundary.
    Pruned,
    /// Expansion was attempted but yielded no children (all directions
    /// skipped or duplicates).
    Exhausted,
}

/// A generator prompt in the prompt-refinement tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptNode {
    pub node_id: PromptId,
    pub text: String,
    pub parent: Option<PromptId>,
    pub depth: u32,
    pub direction: Direction,
    /// Mean reward over the prompt's judged queries, once any exist.
    pub score: Option<f64>,
    pub status: PromptStatus,
    /// Creation ordinal within the run; used for deterministic tie-breaks.
    pub ordinal: u64,
}

/// A user query in the query-refinement tree, plus everything learned about
/// it: the agent's answer, the judged reward, and the realism score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryNode {
    pub node_id: QueryId,
    pub text: String,
    pub origin_prompt: PromptId,
    pub parent: Option<QueryId>,
    pub strategy_id: Option<String>,
    pub answer: Option<String>,
    pub reward: Option<f64>,
    #[serde(default)]
    pub violated_criteria: BTreeSet<String>,
    pub realism_score: Option<f64>,
    pub ordinal: u64,
}

/// One judged (prompt, query, answer, reward) interaction; the unit the
/// reflection stage aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub prompt: PromptId,
    pub query: QueryId,
    pub answer: String,
    pub reward: f64,
    pub violated_criteria: BTreeSet<String>,
    pub judge_votes: Vec<JudgeVote>,
}

/// Owns every node of both trees. Single writer, shared readers.
#[derive(Debug, Default, Clone)]
pub struct TreeStore {
    prompts: BTreeMap<PromptId, PromptNode>,
    queries: BTreeMap<QueryId, QueryNode>,
    next_ordinal: u64,
}

impl TreeStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn take_ordinal(&mut self) -> u64 {
        let o = self.next_ordinal;
        self.next_ordinal += 1;
        o
    }

    /// Mint a prompt node. The root (no parent) has depth 0; children sit one
    /// below their parent.
    pub fn create_prompt(
        &mut self,
        text: String,
        parent: Option<&PromptId>,
        direction: Direction,
    ) -> Result<PromptId> {
        let depth = match parent {
            None => {
                if direction != Direction::Root {
                    return Err(Error::Validation(
                        "parentless prompt must have direction root".into(),
                    ));
                }
                0
            }
            Some(p) => {
                let parent_node = self
                    .prompt(p)
                    .ok_or_else(|| Error::UnknownNode(p.to_string()))?;
                if direction == Direction::Root {
                    return Err(Error::Validation("child prompt cannot be a root".into()));
                }
                parent_node.depth + 1
            }
        };
        let ordinal = self.take_ordinal();
        let id = PromptId(format!(
            "p-{}",
            stable_hash_hex(&[
                parent.map(|p| p.0.as_str()).unwrap_or(""),
                &ordinal.to_string(),
                &text,
            ])
        ));
        self.prompts.insert(
            id.clone(),
            PromptNode {
                node_id: id.clone(),
                text,
                parent: parent.cloned(),
                depth,
                direction,
                score: None,
                status: PromptStatus::Live,
                ordinal,
            },
        );
        Ok(id)
    }

    /// Mint a query node. Refined queries (those with a parent) must carry
    /// the strategy that produced them.
    pub fn create_query(
        &mut self,
        text: String,
        origin_prompt: &PromptId,
        parent: Option<&QueryId>,
        strategy_id: Option<String>,
    ) -> Result<QueryId> {
        if !self.prompts.contains_key(origin_prompt) {
            return Err(Error::UnknownNode(origin_prompt.to_string()));
        }
        if let Some(p) = parent {
            if !self.queries.contains_key(p) {
                return Err(Error::UnknownNode(p.to_string()));
            }
            if strategy_id.is_none() {
                return Err(Error::Validation(
                    "refined query must carry a strategy_id".into(),
                ));
            }
        }
        let ordinal = self.take_ordinal();
        let id = QueryId(format!(
            "q-{}",
            stable_hash_hex(&[
                parent.map(|p| p.0.as_str()).unwrap_or(""),
                &ordinal.to_string(),
                &text,
            ])
        ));
        self.queries.insert(
            id.clone(),
            QueryNode {
                node_id: id.clone(),
                text,
                origin_prompt: origin_prompt.clone(),
                parent: parent.cloned(),
                strategy_id,
                answer: None,
                reward: None,
                violated_criteria: BTreeSet::new(),
                realism_score: None,
                ordinal,
            },
        );
        Ok(id)
    }

    /// Insert a node restored from an event log, keeping ordinals in sync.
    pub fn restore_prompt(&mut self, node: PromptNode) {
        self.next_ordinal = self.next_ordinal.max(node.ordinal + 1);
        self.prompts.insert(node.node_id.clone(), node);
    }

    pub fn restore_query(&mut self, node: QueryNode) {
        self.next_ordinal = self.next_ordinal.max(node.ordinal + 1);
        self.queries.insert(node.node_id.clone(), node);
    }

    pub fn prompt(&self, id: &PromptId) -> Option<&PromptNode> {
        self.prompts.get(id)
    }

    pub fn prompt_mut(&mut self, id: &PromptId) -> Option<&mut PromptNode> {
        self.prompts.get_mut(id)
    }

    pub fn query(&self, id: &QueryId) -> Option<&QueryNode> {
        self.queries.get(id)
    }

    pub fn query_mut(&mut self, id: &QueryId) -> Option<&mut QueryNode> {
        self.queries.get_mut(id)
    }

    pub fn prompts(&self) -> impl Iterator<Item = &PromptNode> {
        self.prompts.values()
    }

    pub fn queries(&self) -> impl Iterator<Item = &QueryNode> {
        self.queries.values()
    }

    pub fn prompt_count(&self) -> usize {
        self.prompts.len()
    }

    pub fn query_count(&self) -> usize {
        self.queries.len()
    }

    /// Ancestor chain of a prompt, root first.
    pub fn prompt_chain(&self, id: &PromptId) -> Result<Vec<&PromptNode>> {
        let mut chain = Vec::new();
        let mut cursor = Some(id.clone());
        while let Some(cur) = cursor {
            let node = self
                .prompt(&cur)
                .ok_or_else(|| Error::UnknownNode(cur.to_string()))?;
            chain.push(node);
            if chain.len() > self.prompts.len() {
                return Err(Error::Validation(format!("prompt lineage cycle at {id}")));
            }
            cursor = node.parent.clone();
        }
        chain.reverse();
        Ok(chain)
    }

    /// Ancestor chain of a query, seed first.
    pub fn query_chain(&self, id: &QueryId) -> Result<Vec<&QueryNode>> {
        let mut chain = Vec::new();
        let mut cursor = Some(id.clone());
        while let Some(cur) = cursor {
            let node = self
                .query(&cur)
                .ok_or_else(|| Error::UnknownNode(cur.to_string()))?;
            chain.push(node);
            if chain.len() > self.queries.len() {
                return Err(Error::Validation(format!("query lineage cycle at {id}")));
            }
            cursor = node.parent.clone();
        }
        chain.reverse();
        Ok(chain)
    }

    /// Verify tree well-formedness by traversal: parent links terminate at a
    /// root, depth equals path length, and every query's origin prompt
    /// resolves.
    pub fn check_well_formed(&self) -> Result<()> {
        for node in self.prompts.values() {
            let chain = self.prompt_chain(&node.node_id)?;
            let root = chain.first().expect("chain is non-empty");
            if root.parent.is_some() || root.depth != 0 || root.direction != Direction::Root {
                return Err(Error::Validation(format!(
                    "lineage of {} does not end at a root",
                    node.node_id
                )));
            }
            if chain.len() as u32 != node.depth + 1 {
                return Err(Error::Validation(format!(
                    "prompt {} depth {} disagrees with path length {}",
                    node.node_id,
                    node.depth,
                    chain.len()
                )));
            }
        }
        for node in self.queries.values() {
            if self.prompt(&node.origin_prompt).is_none() {
                return Err(Error::Validation(format!(
                    "query {} references missing prompt {}",
                    node.node_id, node.origin_prompt
                )));
            }
            self.query_chain(&node.node_id)?;
            if node.parent.is_some() && node.strategy_id.is_none() {
                return Err(Error::Validation(format!(
                    "refined query {} lacks a strategy_id",
                    node.node_id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_tracks_parent_links() {
        let mut store = TreeStore::new();
        let root = store
            .create_prompt("root".into(), None, Direction::Root)
            .unwrap();
        let child = store
            .create_prompt("child".into(), Some(&root), Direction::Exploitation)
            .unwrap();
        let grand = store
            .create_prompt("grand".into(), Some(&child), Direction::Exploration)
            .unwrap();
        assert_eq!(store.prompt(&grand).unwrap().depth, 2);
        let chain = store.prompt_chain(&grand).unwrap();
        assert_eq!(
            chain.iter().map(|n| n.text.as_str()).collect::<Vec<_>>(),
            vec!["root", "child", "grand"]
        );
        store.check_well_formed().unwrap();
    }

    #[test]
    fn ids_are_deterministic_in_parent_ordinal_text() {
        let mut a = TreeStore::new();
        let mut b = TreeStore::new();
        let ra = a.create_prompt("same".into(), None, Direction::Root).unwrap();
        let rb = b.create_prompt("same".into(), None, Direction::Root).unwrap();
        assert_eq!(ra, rb);
        let qa = a.create_query("q".into(), &ra, None, None).unwrap();
        let qb = b.create_query("q".into(), &rb, None, None).unwrap();
        assert_eq!(qa, qb);
    }

    #[test]
    fn refined_query_requires_strategy() {
        let mut store = TreeStore::new();
        let p = store.create_prompt("p".into(), None, Direction::Root).unwrap();
        let seed = store.create_query("seed".into(), &p, None, None).unwrap();
        assert!(store
            .create_query("child".into(), &p, Some(&seed), None)
            .is_err());
        assert!(store
            .create_query("child".into(), &p, Some(&seed), Some("typo".into()))
            .is_ok());
    }

    #[test]
    fn query_requires_existing_prompt() {
        let mut store = TreeStore::new();
        let ghost = PromptId("p-missing".into());
        assert!(store.create_query("q".into(), &ghost, None, None).is_err());
    }
}
