//! Occupational automation exposure: taxonomy loading, ensemble score
//! fusion, the tech/risk mapping matrix, bottleneck aggregation, the human
//! review statistics, and report generation.

pub mod aggregate;
pub mod ensemble;
pub mod fixture;
pub mod matrix;
pub mod plot;
pub mod prng;
pub mod protocol;
pub mod rational;
pub mod report;
pub mod stats;
pub mod taxonomy;

pub use aggregate::{compute_all, AggregateError, OaiRecord, OaiTable, ScoredDwa, TaskContribution};
pub use ensemble::{
    assign_stratum, fuse_all, fuse_scores, stratified_sample, EnsembleError, FusedRow, FusedScore, ScoreRecord,
    StrataSample, Stratum,
};
pub use matrix::{preset, MappingMatrix, MatrixError, ScenarioId};
pub use protocol::{build_prompt, parse_response, ChatMessage, ChatRequest, ParsedScore, ProtocolError, SYSTEM_PROMPT};
pub use rational::Rational;
pub use report::{
    categorize, rank_occupations, scenario_compare, summary, write_report, ExposureCategory, FileManifest, Formats,
    ReportError, ReportInput, ScenarioComparison, Summary,
};
pub use taxonomy::{load_taxonomy, Dwa, Occupation, Task, Taxonomy, TaxonomyError, TaxonomyPaths};
