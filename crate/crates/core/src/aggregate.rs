//! Upward aggregation: DWA index -> task index (bottleneck minimum) ->
//! occupation index (importance-weighted sum). All arithmetic is exact.

use crate::ensemble::{FusedRow, FusedScore};
use crate::matrix::{MappingMatrix, ScenarioId};
use crate::rational::Rational;
use crate::taxonomy::{Occupation, Task, Taxonomy};
use num_traits::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};

/// Anything carrying a DWA's fused integer scores.
pub trait ScoredDwa {
    fn dwa_id(&self) -> &str;
    fn tech_level(&self) -> u8;
    fn risk_score(&self) -> u8;
}

impl ScoredDwa for FusedScore {
    fn dwa_id(&self) -> &str {
        &self.dwa_id
    }
    fn tech_level(&self) -> u8 {
        self.tech_level
    }
    fn risk_score(&self) -> u8 {
        self.risk_score
    }
}

impl ScoredDwa for FusedRow {
    fn dwa_id(&self) -> &str {
        &self.dwa_id
    }
    fn tech_level(&self) -> u8 {
        self.tech_level
    }
    fn risk_score(&self) -> u8 {
        self.risk_score
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskIndexRecord {
    pub task_id: String,
    pub ai_task: Rational,
    /// Smallest DWA id among those attaining the minimum.
    pub argmin_dwa_id: String,
    pub n_dwas: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskContribution {
    pub task_id: String,
    pub weight: Rational,
    pub ai_task: Rational,
    pub argmin_dwa_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiRecord {
    pub soc_code: String,
    pub title: String,
    pub oai: Rational,
    pub task_breakdown: Vec<TaskContribution>,
}

/// Per-occupation indices for one scenario, sorted by SOC code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiTable {
    pub scenario: ScenarioId,
    pub records: Vec<OaiRecord>,
    /// DWA-level indices used, for audit.
    pub dwa_indices: BTreeMap<String, Rational>,
    /// Input label -> SHA-256 digest, filled in by callers that read files.
    pub provenance: BTreeMap<String, String>,
}

impl OaiTable {
    pub fn get(&self, soc_code: &str) -> Option<&OaiRecord> {
        self.records.binary_search_by(|r| r.soc_code.as_str().cmp(soc_code)).ok().map(|i| &self.records[i])
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("{} DWA(s) have no fused score: {}", .0.len(), .0.join(", "))]
    UnscoredDwas(Vec<String>),
    #[error("task {0:?} has no DWAs")]
    EmptyTask(String),
    #[error("task {task_id:?}: DWA {dwa_id:?} has no automation index")]
    MissingIndex { task_id: String, dwa_id: String },
    #[error("occupation {0:?} has zero cumulative importance")]
    ZeroImportance(String),
    #[error("occupation {soc_code:?}: weights/indices do not cover its tasks exactly")]
    CoverageMismatch { soc_code: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("DWA {dwa_id:?}: {message}")]
    BadScore { dwa_id: String, message: String },
}

/// Bottleneck aggregation: the task index is its weakest DWA's index.
pub fn task_index(task: &Task, dwa_ai: &BTreeMap<String, Rational>) -> Result<TaskIndexRecord, AggregateError> {
    let mut best: Option<(&Rational, &String)> = None;
    // dwa_ids is ordered, so the first strict minimum is the smallest id.
    for dwa_id in &task.dwa_ids {
        let value = dwa_ai
            .get(dwa_id)
            .ok_or_else(|| AggregateError::MissingIndex { task_id: task.task_id.clone(), dwa_id: dwa_id.clone() })?;
        if best.is_none() || best.is_some_and(|(b, _)| value < b) {
            best = Some((value, dwa_id));
        }
    }
    let (ai_task, argmin) = best.ok_or_else(|| AggregateError::EmptyTask(task.task_id.clone()))?;
    Ok(TaskIndexRecord {
        task_id: task.task_id.clone(),
        ai_task: ai_task.clone(),
        argmin_dwa_id: argmin.clone(),
        n_dwas: task.dwa_ids.len(),
    })
}

/// Importance shares of each of the occupation's tasks; they sum to exactly 1.
pub fn task_weights(
    occupation: &Occupation,
    tasks: &BTreeMap<String, Task>,
) -> Result<BTreeMap<String, Rational>, AggregateError> {
    let mut importances = BTreeMap::new();
    for id in &occupation.task_ids {
        let task = tasks.get(id).ok_or_else(|| AggregateError::UnknownTask(id.clone()))?;
        importances.insert(id.clone(), task.importance.clone());
    }
    let total: Rational = importances.values().sum();
    if total.is_zero() {
        return Err(AggregateError::ZeroImportance(occupation.soc_code.clone()));
    }
    Ok(importances.into_iter().map(|(id, imp)| (id, imp / &total)).collect())
}

pub fn occupation_index(
    occupation: &Occupation,
    weights: &BTreeMap<String, Rational>,
    task_indices: &BTreeMap<String, TaskIndexRecord>,
) -> Result<OaiRecord, AggregateError> {
    let covered = |keys: BTreeSet<&String>| keys == occupation.task_ids.iter().collect();
    if !covered(weights.keys().collect()) || !covered(task_indices.keys().collect()) {
        return Err(AggregateError::CoverageMismatch { soc_code: occupation.soc_code.clone() });
    }
    let mut oai = Rational::zero();
    let mut breakdown = Vec::with_capacity(weights.len());
    for (task_id, weight) in weights {
        let idx = &task_indices[task_id];
        oai += weight * &idx.ai_task;
        breakdown.push(TaskContribution {
            task_id: task_id.clone(),
            weight: weight.clone(),
            ai_task: idx.ai_task.clone(),
            argmin_dwa_id: idx.argmin_dwa_id.clone(),
        });
    }
    debug_assert!(weights.values().sum::<Rational>().is_one());
    Ok(OaiRecord {
        soc_code: occupation.soc_code.clone(),
        title: occupation.title.clone(),
        oai,
        task_breakdown: breakdown,
    })
}

/// DWA index for every scored DWA the taxonomy references.
pub fn dwa_indices<S: ScoredDwa>(
    taxonomy: &Taxonomy,
    fused: &[S],
    matrix: &MappingMatrix,
) -> Result<BTreeMap<String, Rational>, AggregateError> {
    let by_id: BTreeMap<&str, &S> = fused.iter().map(|f| (f.dwa_id(), f)).collect();
    let referenced = taxonomy.referenced_dwa_ids();
    let missing: Vec<String> =
        referenced.iter().filter(|id| !by_id.contains_key(**id)).map(|id| id.to_string()).collect();
    if !missing.is_empty() {
        return Err(AggregateError::UnscoredDwas(missing));
    }
    let mut out = BTreeMap::new();
    for id in referenced {
        let score = by_id[id];
        let value = matrix
            .automation_index(score.tech_level().into(), score.risk_score().into())
            .map_err(|e| AggregateError::BadScore { dwa_id: id.to_string(), message: e.to_string() })?;
        out.insert(id.to_string(), value.clone());
    }
    Ok(out)
}

/// Full pipeline for one matrix. Scores for DWAs outside the taxonomy are ignored.
pub fn compute_all<S: ScoredDwa>(
    taxonomy: &Taxonomy,
    fused: &[S],
    matrix: &MappingMatrix,
) -> Result<OaiTable, AggregateError> {
    let dwa_ai = dwa_indices(taxonomy, fused, matrix)?;
    let mut records = Vec::with_capacity(taxonomy.occupations().len());
    for occupation in taxonomy.occupations().values() {
        let weights = task_weights(occupation, taxonomy.tasks())?;
        let mut task_indices = BTreeMap::new();
        for task_id in &occupation.task_ids {
            let task = taxonomy.task(task_id).ok_or_else(|| AggregateError::UnknownTask(task_id.clone()))?;
            task_indices.insert(task_id.clone(), task_index(task, &dwa_ai)?);
        }
        records.push(occupation_index(occupation, &weights, &task_indices)?);
    }
    Ok(OaiTable { scenario: matrix.scenario().clone(), records, dwa_indices: dwa_ai, provenance: BTreeMap::new() })
}
