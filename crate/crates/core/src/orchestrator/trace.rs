//! Lineage rendering: the prompt-ancestor chain with directions and scores,
//! then the query-ancestor chain with the strategies that produced each
//! rewrite.

use crate::error::{Error, Result};
use crate::model::{PromptId, QueryId, TreeStore};

fn fmt_score(score: Option<f64>) -> String {
    score.map(|s| format!("{s:.2}")).unwrap_or_else(|| "-".into())
}

fn render_prompt_chain(store: &TreeStore, id: &PromptId, out: &mut String) -> Result<()> {
    out.push_str("Prompt lineage:\n");
    for node in store.prompt_chain(id)? {
        out.push_str(&format!(
            "  [{}] {} | score {}\n      {}\n",
            node.depth,
            node.direction.as_str(),
            fmt_score(node.score),
            node.text
        ));
    }
    Ok(())
}

fn render_query_chain(store: &TreeStore, id: &QueryId, out: &mut String) -> Result<()> {
    out.push_str("Query lineage:\n");
    for (i, node) in store.query_chain(id)?.iter().enumerate() {
        let origin = node.strategy_id.as_deref().unwrap_or("seed");
        out.push_str(&format!(
            "  [{i}] {origin} | reward {}\n      {}\n",
            fmt_score(node.reward),
            node.text
        ));
    }
    Ok(())
}

/// Render the full lineage of a node. Query ids print their origin prompt's
/// chain first, then the rewrite chain down to the node itself.
pub fn render_trace(store: &TreeStore, node_id: &str) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("node: {node_id}\n"));
    if node_id.starts_with("q-") {
        let qid = QueryId(node_id.to_owned());
        let node = store
            .query(&qid)
            .ok_or_else(|| Error::UnknownNode(node_id.to_owned()))?;
        render_prompt_chain(store, &node.origin_prompt, &mut out)?;
        render_query_chain(store, &qid, &mut out)?;
        return Ok(out);
    }
    let pid = PromptId(node_id.to_owned());
    if store.prompt(&pid).is_none() {
        return Err(Error::UnknownNode(node_id.to_owned()));
    }
    render_prompt_chain(store, &pid, &mut out)?;
    Ok(out)
}
