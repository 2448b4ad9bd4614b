//! Statistical kernel used for human-review validation and scenario
//! comparison.

mod hitl;
mod ordered_logit;
mod ranks;
mod spearman;
mod wilcoxon;

pub use hitl::{
    analyze_hitl, analyze_hitl_with_reference, cell_means, read_hitl, write_table2, CellGrid, CellStat, Cohort,
    CohortCorrelation, GapRow, HitlAnalysis, RatingObservation, GAP_CAVEAT, HITL_COLUMNS,
};
pub use ordered_logit::{ordered_logit_fit, OrderedLogitFit, OrderedLogitProblem, GRADIENT_TOLERANCE, MAX_ITERATIONS};
pub use ranks::{average_ranks, tie_group_sizes};
pub use spearman::{spearman, EXACT_SPEARMAN_MAX_N};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, EXACT_WILCOXON_MAX_N};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("input is constant; correlation undefined")]
    Constant,
    #[error("non-finite input value")]
    NonFinite,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("covariate must be 0 or 1, got {0}")]
    BadCovariate(u8),
    #[error("both covariate groups must be present")]
    MissingGroup,
    #[error("only one outcome category observed")]
    SingleCategory,
    #[error("complete separation between groups: likelihood is unbounded, fit does not converge")]
    Separation,
    #[error("{0}")]
    Input(String),
}
