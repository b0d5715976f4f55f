//! Automatic metrics, bootstrap intervals and human-judgment bookkeeping.

pub mod bleu;
pub mod bootstrap;
pub mod judgments;
pub mod report;

pub use bleu::{bleu4, bleu_tokens, corpus_bleu4, BleuStats};
pub use bootstrap::{bootstrap_ci, Interval, StatsError};
pub use judgments::{
    annotation_agreement, format_percent, likert_aggregate, pairwise_winrates, records_from_csv, records_from_json,
    Agreement, Criterion, Judgment, JudgmentError, JudgmentRecord, LikertRow, WinCell, Winner,
};
pub use report::{
    evaluate_nup, predict_next_utterances, ColumnSummary, EvalConfig, HttpScorer, ItemScores, MetricReport,
    ReferenceSets, ReportError, ScorerError, SemanticScorer,
};
