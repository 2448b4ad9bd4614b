//! The tech/risk mapping matrix: a 4x5 lookup from (tech level, risk score)
//! to a DWA automation index, plus the three scenario presets.

use crate::rational::{parse_decimal, ratio, to_decimal_string, Rational};
use num_traits::Zero;
use serde::Serialize;
use std::fmt;
use std::path::Path;

pub const TECH_LEVELS: usize = 4;
pub const RISK_LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    Baseline,
    Aggressive,
    Conservative,
    Custom(String),
}

impl ScenarioId {
    pub const PRESETS: [ScenarioId; 3] = [ScenarioId::Baseline, ScenarioId::Aggressive, ScenarioId::Conservative];

    pub fn label(&self) -> &str {
        match self {
            ScenarioId::Baseline => "baseline",
            ScenarioId::Aggressive => "aggressive",
            ScenarioId::Conservative => "conservative",
            ScenarioId::Custom(name) => name,
        }
    }

    /// Parses a preset label; anything else is not a preset.
    pub fn preset_from_label(label: &str) -> Option<ScenarioId> {
        ScenarioId::PRESETS.into_iter().find(|s| s.label() == label)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingMatrix {
    scenario: ScenarioId,
    /// `cells[tech][risk - 1]`.
    cells: [[Rational; RISK_LEVELS]; TECH_LEVELS],
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("tech level {0} out of range 0..=3")]
    TechOutOfRange(i64),
    #[error("risk score {0} out of range 1..=5")]
    RiskOutOfRange(i64),
    #[error("cell (T={tech}, R={risk}) = {value} is outside [0, 1]")]
    CellOutOfRange { tech: usize, risk: usize, value: String },
    #[error("missing cell (T={tech}, R={risk})")]
    MissingCell { tech: usize, risk: usize },
    #[error("malformed matrix config: {0}")]
    Malformed(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// A monotonicity violation between two adjacent cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonotonicityWarning {
    pub lower: (usize, usize),
    pub higher: (usize, usize),
    pub message: String,
}

impl fmt::Display for MonotonicityWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn tenths(v: i64) -> Rational {
    ratio(v, 10)
}

fn baseline_cells() -> [[Rational; RISK_LEVELS]; TECH_LEVELS] {
    // Rows T = 0..3, columns R = 1..5, in tenths.
    const TABLE: [[i64; RISK_LEVELS]; TECH_LEVELS] =
        [[0, 0, 0, 0, 0], [3, 3, 3, 0, 0], [7, 7, 5, 3, 0], [10, 10, 7, 3, 0]];
    TABLE.map(|row| row.map(tenths))
}

impl MappingMatrix {
    pub fn new(scenario: ScenarioId, cells: [[Rational; RISK_LEVELS]; TECH_LEVELS]) -> Result<Self, MatrixError> {
        for (tech, row) in cells.iter().enumerate() {
            for (r, value) in row.iter().enumerate() {
                if !crate::rational::is_unit_interval(value) {
                    return Err(MatrixError::CellOutOfRange { tech, risk: r + 1, value: to_decimal_string(value, 6) });
                }
            }
        }
        Ok(MappingMatrix { scenario, cells })
    }

    /// Every cell set to `value`; handy for bounding checks.
    pub fn constant(name: &str, value: Rational) -> Result<Self, MatrixError> {
        let cells = std::array::from_fn(|_| std::array::from_fn(|_| value.clone()));
        MappingMatrix::new(ScenarioId::Custom(name.to_string()), cells)
    }

    pub fn scenario(&self) -> &ScenarioId {
        &self.scenario
    }

    pub fn with_scenario(mut self, scenario: ScenarioId) -> Self {
        self.scenario = scenario;
        self
    }

    pub fn cells(&self) -> &[[Rational; RISK_LEVELS]; TECH_LEVELS] {
        &self.cells
    }

    /// Exact cell lookup for integer tech 0..=3 and risk 1..=5.
    pub fn automation_index(&self, tech: i64, risk: i64) -> Result<&Rational, MatrixError> {
        if !(0..TECH_LEVELS as i64).contains(&tech) {
            return Err(MatrixError::TechOutOfRange(tech));
        }
        if !(1..=RISK_LEVELS as i64).contains(&risk) {
            return Err(MatrixError::RiskOutOfRange(risk));
        }
        Ok(&self.cells[tech as usize][(risk - 1) as usize])
    }

    /// True when every cell of `self` is >= the matching cell of `other`.
    pub fn dominates(&self, other: &MappingMatrix) -> bool {
        self.cells.iter().flatten().zip(other.cells.iter().flatten()).all(|(a, b)| a >= b)
    }

    /// Cells that decrease with tech level or increase with risk.
    pub fn monotonicity_violations(&self) -> Vec<MonotonicityWarning> {
        let mut out = Vec::new();
        for tech in 0..TECH_LEVELS {
            for r in 0..RISK_LEVELS - 1 {
                let (a, b) = (&self.cells[tech][r], &self.cells[tech][r + 1]);
                if b > a {
                    out.push(MonotonicityWarning {
                        lower: (tech, r + 1),
                        higher: (tech, r + 2),
                        message: format!(
                            "cell (T={tech}, R={}) = {} < (T={tech}, R={}) = {}: index rises with risk",
                            r + 1,
                            to_decimal_string(a, 4),
                            r + 2,
                            to_decimal_string(b, 4)
                        ),
                    });
                }
            }
        }
        for r in 0..RISK_LEVELS {
            for tech in 0..TECH_LEVELS - 1 {
                let (a, b) = (&self.cells[tech][r], &self.cells[tech + 1][r]);
                if b < a {
                    out.push(MonotonicityWarning {
                        lower: (tech, r + 1),
                        higher: (tech + 1, r + 1),
                        message: format!(
                            "cell (T={}, R={}) = {} < (T={tech}, R={}) = {}: index falls with tech level",
                            tech + 1,
                            r + 1,
                            to_decimal_string(b, 4),
                            r + 1,
                            to_decimal_string(a, 4)
                        ),
                    });
                }
            }
        }
        out
    }

    /// JSON config form: `{"name": ..., "cells": [[R1..R5] for T=0..3]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let cells: Vec<Vec<serde_json::Value>> = self
            .cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| {
                        let text = to_decimal_string(c, 12);
                        let text = text.trim_end_matches('0').trim_end_matches('.');
                        serde_json::Value::Number(text.parse().expect("decimal"))
                    })
                    .collect()
            })
            .collect();
        serde_json::json!({ "name": self.scenario.label(), "cells": cells })
    }
}

/// One of the three immutable scenario presets. Returns `None` for custom ids.
pub fn preset(scenario: &ScenarioId) -> Option<MappingMatrix> {
    let mut cells = baseline_cells();
    match scenario {
        ScenarioId::Baseline => {}
        ScenarioId::Aggressive => {
            cells[3][2] = tenths(10);
            cells[3][3] = tenths(7);
        }
        ScenarioId::Conservative => {
            for row in cells.iter_mut().skip(1) {
                row[3] = Rational::zero();
                row[4] = Rational::zero();
            }
        }
        ScenarioId::Custom(_) => return None,
    }
    Some(MappingMatrix { scenario: scenario.clone(), cells })
}

/// A matrix loaded from config, with non-fatal monotonicity findings.
#[derive(Debug, Clone)]
pub struct LoadedMatrix {
    pub matrix: MappingMatrix,
    pub warnings: Vec<MonotonicityWarning>,
}

#[allow(clippy::needless_range_loop)]
pub fn parse_matrix_json(text: &str) -> Result<LoadedMatrix, MatrixError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| MatrixError::Malformed(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| MatrixError::Malformed("expected a JSON object".into()))?;
    let name = obj
        .get("name")
        .and_then(|n| n.as_str())
        .ok_or_else(|| MatrixError::Malformed("missing string field \"name\"".into()))?;
    let rows = obj
        .get("cells")
        .and_then(|c| c.as_array())
        .ok_or_else(|| MatrixError::Malformed("missing array field \"cells\"".into()))?;
    if rows.len() > TECH_LEVELS {
        return Err(MatrixError::Malformed(format!("expected {TECH_LEVELS} rows, found {}", rows.len())));
    }
    let mut cells: [[Rational; RISK_LEVELS]; TECH_LEVELS] = Default::default();
    for tech in 0..TECH_LEVELS {
        let row = match rows.get(tech) {
            Some(serde_json::Value::Array(row)) => row,
            Some(_) => return Err(MatrixError::Malformed(format!("row T={tech} is not an array"))),
            None => return Err(MatrixError::MissingCell { tech, risk: 1 }),
        };
        if row.len() > RISK_LEVELS {
            return Err(MatrixError::Malformed(format!("row T={tech} has {} cells", row.len())));
        }
        for r in 0..RISK_LEVELS {
            let cell = match row.get(r) {
                Some(v) if !v.is_null() => v,
                _ => return Err(MatrixError::MissingCell { tech, risk: r + 1 }),
            };
            let number = cell
                .as_number()
                .ok_or_else(|| MatrixError::Malformed(format!("cell (T={tech}, R={}) is not a number", r + 1)))?;
            let value = parse_decimal(&number.to_string()).map_err(|e| MatrixError::Malformed(e.to_string()))?;
            cells[tech][r] = value;
        }
    }
    let scenario = ScenarioId::preset_from_label(name)
        .filter(|id| preset(id).is_some_and(|p| p.cells == cells))
        .unwrap_or_else(|| ScenarioId::Custom(name.to_string()));
    let matrix = MappingMatrix::new(scenario, cells)?;
    let warnings = matrix.monotonicity_violations();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LoadedMatrix { matrix, warnings })
}

pub fn load_matrix(path: &Path) -> Result<LoadedMatrix, MatrixError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MatrixError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_matrix_json(&text)
}
