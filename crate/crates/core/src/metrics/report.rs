//! Assembled metric report with plain-text table, CSV, and JSON renderings.

use super::{format_delta, format_ratio};
use serde::{Deserialize, Serialize};

/// Percent deltas against the reference corpus. Only the text-derived metrics
/// have a baseline; the distinct delta is the mean of the three per-n deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDeltas {
    pub one_minus_cossim: f64,
    pub distinct_mean: f64,
    pub mtld: f64,
}

/// Output format selector for [`MetricsReport::render`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Struct,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "struct" => Ok(Self::Struct),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// The full metric suite for one run.
///
/// Optional fields are absent when the run did not produce the inputs the
/// metric needs (fewer than two queries, no realism roster, and so on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objective: String,
    pub n_queries: u64,
    pub failure_rate: Option<f64>,
    pub one_minus_cossim: Option<f64>,
    pub distinct: Option<[f64; 3]>,
    pub mtld: Option<f64>,
    pub realism_mean: Option<f64>,
    pub cost_tokens_per_query: f64,
    pub cost_ratio_vs_reference: Option<f64>,
    pub deltas: Option<BaselineDeltas>,
    /// Tokenizer rule every lexical figure was computed under.
    pub tokenizer: String,
    /// Violation threshold the failure rate was computed against.
    pub violation_threshold: f64,
    /// Set when the report was computed from an incomplete event log.
    pub partial: bool,
    pub last_ordinal: u64,
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "-".to_owned())
}

impl MetricsReport {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.render_table(),
            ReportFormat::Csv => self.render_csv(),
            ReportFormat::Struct => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "objective: {}   queries: {}   tokenizer: {}   threshold: {}{}\n",
            self.objective,
            self.n_queries,
            self.tokenizer,
            self.violation_threshold,
            if self.partial {
                format!("   PARTIAL (last ordinal {})", self.last_ordinal)
            } else {
                String::new()
            }
        ));
        let failure = opt(self.failure_rate, |v| format!("{:.2}%", v * 100.0));
        let cost = match self.cost_ratio_vs_reference {
            Some(r) => format_ratio(r),
            None => format!("{:.0}", self.cost_tokens_per_query),
        };
        let realism = opt(self.realism_mean, |v| format!("{v:.2}"));
        let cossim = opt(self.one_minus_cossim, |v| format!("{v:.2}"));
        let cossim_d = self
            .deltas
            .as_ref()
            .map(|d| format_delta(d.one_minus_cossim))
            .unwrap_or_else(|| "-".into());
        let distinct = self
            .distinct
            .map(|d| format!("{:.2}/{:.2}/{:.2}", d[0], d[1], d[2]))
            .unwrap_or_else(|| "-".into());
        let distinct_d = self
            .deltas
            .as_ref()
            .map(|d| format_delta(d.distinct_mean))
            .unwrap_or_else(|| "-".into());
        let mtld = opt(self.mtld, |v| format!("{v:.2}"));
        let mtld_d = self
            .deltas
            .as_ref()
            .map(|d| format_delta(d.mtld))
            .unwrap_or_else(|| "-".into());

        let header = [
            "UHR", "Cost", "Realism", "1-CosSim", "d%", "Distinct@1/2/3", "d%*", "MTLD", "d%",
        ];
        let row = [
            failure.as_str(),
            cost.as_str(),
            realism.as_str(),
            cossim.as_str(),
            cossim_d.as_str(),
            distinct.as_str(),
            distinct_d.as_str(),
            mtld.as_str(),
            mtld_d.as_str(),
        ];
        let widths: Vec<usize> = header
            .iter()
            .zip(row.iter())
            .map(|(h, r)| h.len().max(r.len()))
            .collect();
        let line = |cells: &[&str]| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&line(&row));
        out.push('\n');
        out.push_str("d%* is the mean delta across the three distinct orders\n");
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "objective,n_queries,failure_rate,cost_tokens_per_query,realism_mean,\
             one_minus_cossim,one_minus_cossim_delta_pct,distinct1,distinct2,distinct3,\
             distinct_mean_delta_pct,mtld,mtld_delta_pct,tokenizer,partial,last_ordinal\n",
        );
        let num = |v: Option<f64>| opt(v, |x| format!("{x}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.objective,
            self.n_queries,
            num(self.failure_rate),
            self.cost_tokens_per_query,
            num(self.realism_mean),
            num(self.one_minus_cossim),
            num(self.deltas.as_ref().map(|d| d.one_minus_cossim)),
            num(self.distinct.map(|d| d[0])),
            num(self.distinct.map(|d| d[1])),
            num(self.distinct.map(|d| d[2])),
            num(self.deltas.as_ref().map(|d| d.distinct_mean)),
            num(self.mtld),
            num(self.deltas.as_ref().map(|d| d.mtld)),
            self.tokenizer,
            self.partial,
            self.last_ordinal,
        ));
        out
    }
}
