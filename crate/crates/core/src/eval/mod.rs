//! Tile-level metrics, paired significance tests and report tables.

mod metrics;
mod report;
mod ttest;

pub use metrics::{auc, exact_match_accuracy, f1_score, parse_failures, Confusion, PredictionRecord, PredictionSet};
pub use report::{
    build_report, FamilyRun, Metric, MetricsReport, PairwiseTest, Report, SeedMetrics, Summary, PER_SEED_CSV,
    REPORT_TXT, SIGNIFICANCE_LEVEL, SUMMARY_CSV, TTESTS_CSV,
};
pub use ttest::{paired_t_test, student_t_two_sided, Degeneracy, TTest};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction set is empty")]
    Empty,
    #[error("tile {tile_id} has invalid score {score}")]
    BadScore { tile_id: String, score: f64 },
    #[error("AUC is undefined with {positives} positive and {negatives} negative tiles")]
    SingleClass { positives: usize, negatives: usize },
    #[error("paired test needs two equal-length samples of at least 2, got {left} and {right}")]
    Pairing { left: usize, right: usize },
    #[error("family {family} has seeds {got:?}, expected {expected:?}")]
    SeedMismatch {
        family: String,
        expected: Vec<u64>,
        got: Vec<u64>,
    },
    #[error("family {0} appears twice")]
    DuplicateFamily(String),
    #[error("no runs to report")]
    NoRuns,
    #[error("{0}")]
    Io(String),
}
