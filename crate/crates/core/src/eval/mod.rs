//! Retrieval scoring: top-k rates, rank-weighted variants, confusion
//! matrices, the match-quality rubric and two-proportion chi-squared tests.

mod chi2;
mod metrics;
mod report;
mod rubric;
mod run;

pub use chi2::{chi_squared_2x2, chi_squared_df1_sf, ChiSquaredResult};
pub use metrics::{
    axis_classes, confusion_matrix, has_axis, labels_match, metric_variants, per_class_top_k,
    primary_class, query_classes, top_k_counts, top_k_score, ConfusionMatrix, LabelAxis, MatchMode,
    MetricVariants, CURVE_MAX_K,
};
pub use report::{
    evaluate, rubric_mean, sweep, sweep_tsv, EvalOptions, EvalReport, NamedTest, SweepEntry,
    SweepGrid, SweepPoint,
};
pub use rubric::rubric_score;
pub use run::{
    embed_queries, engine_run, engine_run_embedded, random_run, RetrievalRun, RunConfig,
    RunOptions, RunQuery,
};
