//! Threshold-free and thresholded detection metrics, bootstrap intervals and
//! permutation tests.

mod curve;
mod report;
mod resample;
mod stats;

pub use curve::{
    ap_from_groups, auprc, best_f1, auroc, auroc_from_groups, pr_curve, thresholded_metrics, Confusion, PrPoint, Ranking,
    ScoredSet, Thresholded,
};
pub use report::{metric_roster, read_scores, scored_set, write_scores, MetricsReport, ReportOptions, ScoreRow};
pub use resample::{bootstrap_ci, permutation_pvalue, permutation_pvalue_mean, quantile_sorted, BootstrapCi, Metric, PermutationTest};
pub use stats::{
    expected_null_ap, fractional_ranks, linear_fit, mean_pct_delta, mean_ratio, pct_delta_over_base, se_from_ci,
    seed_summary, spearman_rank_corr, t_test_greater, Correlation, LinearFit, SeedSummary,
};
