//! Evaluation metric suite: failure rate, lexical and embedding diversity,
//! realism aggregate, token cost, and percent deltas against a reference
//! corpus of real user queries.
//!
//! Every function here is a pure function of its inputs; repeated calls agree
//! bit for bit. Pairwise accumulations use compensated summation so results
//! stay deterministic.

mod report;

pub use report::{BaselineDeltas, MetricsReport, ReportFormat};

use crate::error::{Error, Result};
use crate::gateway::embed::Embedder;
use crate::gateway::UsageLedger;
use crate::judging::is_violation;
use crate::model::{InteractionRecord, ObjectiveSpec};
use std::collections::HashSet;

/// Identifier of the tokenization rule. It travels with every metric value so
/// reports computed under different rules are never compared silently.
pub const TOKENIZER_RULE: &str = "lower-alnum-v1";

/// Default type-token-ratio threshold for [`mtld`].
pub const MTLD_TTR_THRESHOLD: f64 = 0.72;

/// Above this many queries, [`mean_pairwise_cosine_distance`] switches to a
/// seeded subsample instead of the full quadratic pair set.
pub const PAIRWISE_SUBSAMPLE_CAP: usize = 2000;

/// Lowercase the text and split it on runs of non-alphanumeric characters,
/// dropping empty pieces. This is tokenizer rule `lower-alnum-v1`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// A set of query texts together with the tokenizer rule they are measured
/// under.
#[derive(Debug, Clone)]
pub struct Corpus {
    queries: Vec<String>,
    tokenizer: String,
}

impl Corpus {
    pub fn new(queries: Vec<String>) -> Self {
        Self {
            queries,
            tokenizer: TOKENIZER_RULE.to_owned(),
        }
    }

    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    pub fn tokenizer(&self) -> &str {
        &self.tokenizer
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Token lists per query, under the corpus tokenizer.
    pub fn tokenized(&self) -> Vec<Vec<String>> {
        self.queries.iter().map(|q| tokenize(q)).collect()
    }

    /// All tokens concatenated in query order.
    pub fn token_stream(&self) -> Vec<String> {
        self.queries.iter().flat_map(|q| tokenize(q)).collect()
    }
}

/// Fraction of judged interactions whose reward falls below the objective's
/// violation threshold.
pub fn failure_rate(records: &[InteractionRecord], objective: &ObjectiveSpec) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Metrics("failure_rate over empty records".into()));
    }
    let violations = records
        .iter()
        .filter(|r| is_violation(r.reward, objective))
        .count();
    Ok(violations as f64 / records.len() as f64)
}

/// Unique n-grams divided by total n-gram occurrences, pooled across all
/// queries. N-grams never span query boundaries; queries shorter than `n`
/// tokens contribute nothing.
pub fn distinct_n(corpus: &Corpus, n: usize) -> Result<f64> {
    if !(1..=3).contains(&n) {
        return Err(Error::Metrics(format!("distinct_n: n must be 1..=3, got {n}")));
    }
    let mut total = 0usize;
    let mut unique: HashSet<Vec<String>> = HashSet::new();
    for tokens in corpus.tokenized() {
        if tokens.len() < n {
            continue;
        }
        for gram in tokens.windows(n) {
            total += 1;
            unique.insert(gram.to_vec());
        }
    }
    if total == 0 {
        return Err(Error::Metrics(format!(
            "distinct_n: corpus has no {n}-grams"
        )));
    }
    Ok(unique.len() as f64 / total as f64)
}

/// One directional MTLD scan: count full factors each time the running
/// type-token ratio drops to `threshold` or below, add the partial remainder
/// `(1 - ttr) / (1 - threshold)` at stream end, and divide the token count by
/// the factor total. A factor total of zero (the all-unique stream) returns
/// the token count.
fn mtld_directional(stream: &[&str], threshold: f64) -> f64 {
    let mut factors = 0.0f64;
    let mut types: HashSet<&str> = HashSet::new();
    let mut tokens_in_factor = 0usize;
    let mut ttr = 1.0f64;
    for &token in stream {
        tokens_in_factor += 1;
        types.insert(token);
        ttr = types.len() as f64 / tokens_in_factor as f64;
        if ttr <= threshold {
            factors += 1.0;
            types.clear();
            tokens_in_factor = 0;
            ttr = 1.0;
        }
    }
    if tokens_in_factor > 0 {
        factors += (1.0 - ttr) / (1.0 - threshold);
    }
    if factors == 0.0 {
        stream.len() as f64
    } else {
        stream.len() as f64 / factors
    }
}

/// Measure of textual lexical diversity over the corpus token stream:
/// the mean of a forward and a reverse directional scan.
pub fn mtld(corpus: &Corpus, ttr_threshold: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&ttr_threshold) {
        return Err(Error::Metrics(format!(
            "mtld: threshold must be in [0,1), got {ttr_threshold}"
        )));
    }
    let stream = corpus.token_stream();
    if stream.is_empty() {
        return Err(Error::Metrics("mtld over empty token stream".into()));
    }
    let forward: Vec<&str> = stream.iter().map(String::as_str).collect();
    let reverse: Vec<&str> = forward.iter().rev().copied().collect();
    let fwd = mtld_directional(&forward, ttr_threshold);
    let rev = mtld_directional(&reverse, ttr_threshold);
    Ok((fwd + rev) / 2.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Kahan compensated summation keeps the accumulation deterministic and
    // stable regardless of vector length.
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = x * y - c;
        let t = sum + term;
        c = (t - sum) - term;
        sum = t;
    }
    sum
}

/// One minus the mean cosine similarity over all unordered query pairs.
/// Embeddings come back unit-norm from the gateway, so cosine similarity is a
/// plain dot product. Corpora larger than `subsample_cap` are reduced to a
/// deterministic seeded subsample first.
pub fn mean_pairwise_cosine_distance(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    subsample_cap: usize,
    seed: u64,
) -> Result<f64> {
    if corpus.len() < 2 {
        return Err(Error::Metrics(
            "mean_pairwise_cosine_distance needs at least 2 queries".into(),
        ));
    }
    let queries: Vec<String> = if corpus.len() > subsample_cap {
        subsample(corpus.queries(), subsample_cap, seed)
    } else {
        corpus.queries().to_vec()
    };
    let vectors = embedder.embed(&queries)?;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut pairs = 0u64;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            let term = dot(&vectors[i], &vectors[j]) - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
            pairs += 1;
        }
    }
    Ok(1.0 - sum / pairs as f64)
}

/// Deterministic subsample: ranks queries by a seeded hash of (seed, index)
/// and keeps the first `cap` in that order, preserving original order among
/// the kept.
fn subsample(queries: &[String], cap: usize, seed: u64) -> Vec<String> {
    let mut ranked: Vec<(u64, usize)> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| (crate::model::stable_hash64(&[&seed.to_string(), &i.to_string(), q]), i))
        .collect();
    ranked.sort_unstable();
    let mut keep: Vec<usize> = ranked.into_iter().take(cap).map(|(_, i)| i).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| queries[i].clone()).collect()
}

/// Total tokens (prompt plus completion) across every LLM call, divided by
/// the number of generated queries.
pub fn cost_per_query(ledger: &UsageLedger, n_final_queries: u64) -> Result<f64> {
    if n_final_queries == 0 {
        return Err(Error::Metrics("cost_per_query with zero queries".into()));
    }
    let total = ledger.total.prompt_tokens + ledger.total.completion_tokens;
    Ok(total as f64 / n_final_queries as f64)
}

/// Signed percent change of `value` relative to `baseline`.
pub fn delta_percent(value: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Metrics("delta_percent with zero baseline".into()));
    }
    Ok((value - baseline) / baseline * 100.0)
}

/// Render a delta to two decimals with an explicit sign, e.g. `+3.94`.
pub fn format_delta(delta: f64) -> String {
    format!("{delta:+.2}")
}

/// Ratio of a method's token cost to a reference cost.
pub fn cost_ratio(method_tokens: f64, reference_tokens: f64) -> Result<f64> {
    if reference_tokens <= 0.0 {
        return Err(Error::Metrics("cost_ratio with zero reference".into()));
    }
    Ok(method_tokens / reference_tokens)
}

/// Render a cost ratio in the `x1.3` style used in reports.
pub fn format_ratio(ratio: f64) -> String {
    format!("x{ratio:.1}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::embed::HashEmbedder;

    fn corpus(queries: &[&str]) -> Corpus {
        Corpus::new(queries.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(
            tokenize("How many audo inputs, and a 3.5mm connector?"),
            vec!["how", "many", "audo", "inputs", "and", "a", "3", "5mm", "connector"]
        );
        assert!(tokenize("  --- ").is_empty());
    }

    #[test]
    fn distinct_unigrams_pool_across_queries() {
        let c = corpus(&["the cat", "the dog"]);
        assert_eq!(distinct_n(&c, 1).unwrap(), 0.75);
    }

    #[test]
    fn distinct_bigrams_do_not_cross_query_boundaries() {
        let c = corpus(&["the cat", "the dog"]);
        assert_eq!(distinct_n(&c, 2).unwrap(), 1.0);
    }

    #[test]
    fn distinct_single_token_query() {
        let c = corpus(&["hello"]);
        assert_eq!(distinct_n(&c, 1).unwrap(), 1.0);
        assert!(distinct_n(&c, 2).is_err());
    }

    #[test]
    fn mtld_repeated_token_hits_factor_every_two_tokens() {
        let c = corpus(&["a a a a a a a a a a"]);
        let v = mtld(&c, MTLD_TTR_THRESHOLD).unwrap();
        assert!((v - 2.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn mtld_all_unique_uses_token_count_guard() {
        let c = corpus(&["one two three four five six seven eight"]);
        let v = mtld(&c, MTLD_TTR_THRESHOLD).unwrap();
        assert!((v - 8.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn mtld_empty_stream_is_an_error() {
        let c = corpus(&["??"]);
        assert!(mtld(&c, MTLD_TTR_THRESHOLD).is_err());
    }

    #[test]
    fn cosine_distance_identical_queries_is_zero() {
        let c = corpus(&["same text", "same text"]);
        let e = HashEmbedder::new(64);
        let v = mean_pairwise_cosine_distance(&c, &e, PAIRWISE_SUBSAMPLE_CAP, 0).unwrap();
        assert!(v.abs() < 1e-12, "got {v}");
    }

    #[test]
    fn cosine_distance_three_pairs_hand_mean() {
        // Scripted embeddings with pairwise cosines {1.0, 0.5, 0.5}:
        // the mean over the three unordered pairs is 2/3, so the distance is
        // 1 - 2/3 = 0.333...
        struct Fixed;
        impl Embedder for Fixed {
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
                Ok(texts
                    .iter()
                    .map(|t| match t.as_str() {
                        "a" | "b" => vec![1.0, 0.0],
                        _ => vec![0.5, 3.0f64.sqrt() / 2.0],
                    })
                    .collect())
            }
            fn dimension(&self) -> usize {
                2
            }
        }
        let c = corpus(&["a", "b", "c"]);
        let v = mean_pairwise_cosine_distance(&c, &Fixed, PAIRWISE_SUBSAMPLE_CAP, 0).unwrap();
        assert!((v - (1.0 - 2.0 / 3.0)).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn cosine_distance_orthogonal_queries_is_one() {
        struct Axes;
        impl Embedder for Axes {
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
                Ok(texts
                    .iter()
                    .map(|t| if t == "a" { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
                    .collect())
            }
            fn dimension(&self) -> usize {
                2
            }
        }
        let c = corpus(&["a", "b"]);
        let v = mean_pairwise_cosine_distance(&c, &Axes, PAIRWISE_SUBSAMPLE_CAP, 0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn failure_rate_counts_strict_violations() {
        use crate::model::{helpfulness_objective, InteractionRecord, PromptId, QueryId};
        let objective = helpfulness_objective(&["j1", "j2", "j3"], &[]);
        let record = |i: usize, reward: f64| InteractionRecord {
            prompt: PromptId("p-0".into()),
            query: QueryId(format!("q-{i}")),
            answer: String::new(),
            reward,
            violated_criteria: Default::default(),
            judge_votes: Vec::new(),
        };
        let none: Vec<InteractionRecord> = (0..10).map(|i| record(i, 0.75)).collect();
        assert_eq!(failure_rate(&none, &objective).unwrap(), 0.0);
        let three: Vec<InteractionRecord> = (0..10)
            .map(|i| record(i, if i < 3 { 0.25 } else { 0.5 }))
            .collect();
        assert_eq!(failure_rate(&three, &objective).unwrap(), 0.30);
        let all: Vec<InteractionRecord> = (0..4).map(|i| record(i, 0.0)).collect();
        assert_eq!(failure_rate(&all, &objective).unwrap(), 1.0);
        assert!(failure_rate(&[], &objective).is_err());
    }

    #[test]
    fn cosine_distance_needs_two_queries() {
        let c = corpus(&["only one"]);
        let e = HashEmbedder::new(64);
        assert!(mean_pairwise_cosine_distance(&c, &e, PAIRWISE_SUBSAMPLE_CAP, 0).is_err());
    }

    #[test]
    fn delta_percent_matches_reference_figures() {
        assert_eq!(format_delta(delta_percent(92.40, 88.90).unwrap()), "+3.94");
        assert_eq!(format_delta(delta_percent(0.55, 0.53).unwrap()), "+3.77");
        assert_eq!(format_delta(delta_percent(50.33, 88.90).unwrap()), "-43.39");
        assert!(delta_percent(1.0, 0.0).is_err());
    }

    #[test]
    fn delta_of_baseline_against_itself_is_zero() {
        for b in [0.01, 1.0, 88.90, -3.5] {
            assert_eq!(delta_percent(b, b).unwrap(), 0.0);
        }
    }

    #[test]
    fn cost_ratio_rendering() {
        assert_eq!(format_ratio(cost_ratio(18612.0, 14073.0).unwrap()), "x1.3");
        assert_eq!(format_ratio(cost_ratio(39072.0, 14073.0).unwrap()), "x2.8");
        assert_eq!(format_ratio(cost_ratio(14073.0, 14073.0).unwrap()), "x1.0");
        assert!(cost_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn cost_per_query_fixture() {
        let mut ledger = UsageLedger::default();
        ledger.add("judge:response", 10000, 4073, 0);
        assert_eq!(cost_per_query(&ledger, 1).unwrap(), 14073.0);
        assert_eq!(cost_per_query(&UsageLedger::default(), 3).unwrap(), 0.0);
        let mut l2 = UsageLedger::default();
        l2.add("x", 200, 100, 0);
        assert_eq!(cost_per_query(&l2, 3).unwrap(), 100.0);
        assert!(cost_per_query(&ledger, 0).is_err());
    }
}
