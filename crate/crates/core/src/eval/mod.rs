//! Downstream evaluation: k-means++ communities scored by signed quality,
//! link sign prediction, embedding agreement, and repeated experiments.

mod experiment;
mod kmeans;
mod linksign;
mod quality;
mod similarity;

pub use experiment::{
    cluster_metric, gain, render_comparison, run_experiment, ComparisonRow, Experiment, ExperimentConfig,
    ExperimentReport, MetricSummary, Protocol, RunOutcome, TimingReport,
};
pub use kmeans::{kmeanspp, ClusterAssignment};
pub use linksign::{
    auc, class_scores, edge_features, evaluate_link_sign, f1, f1_from, logreg_fit, ClassScores, LinkSignReport,
    LogisticRegression,
};
pub use quality::{cluster_quality, edge_counts, ClusterQuality, EdgeCounts};
pub use similarity::{avg_cosine_similarity, CosineSimilarity};

use crate::graphstore::GraphError;
use crate::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot form {k} clusters from {n} points")]
    ClusterCount { k: usize, n: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
    #[error("shape mismatch: {lhs:?} vs {rhs:?}")]
    Shape { lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{0} contain only one class")]
    SingleClass(&'static str),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("every row has zero norm on one side")]
    NoComparableRows,
    #[error("report has no metric {0:?}")]
    MissingMetric(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Left-aligned first column, right-aligned remaining columns.
pub fn render_aligned(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
