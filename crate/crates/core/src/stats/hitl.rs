//! Human-review ratings: the strata x cohort mean grid and the inference
//! battery comparing human experts against the model ensemble.

use super::{ordered_logit_fit, spearman, wilcoxon_signed_rank, OrderedLogitFit, StatsError, TestResult};
use crate::ensemble::{FusedRow, Stratum};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

pub const HITL_COLUMNS: [&str; 5] = ["dwa_id", "evaluator_id", "cohort", "tech_rating", "risk_rating"];

/// Printed next to every descriptive cohort-minus-model difference.
pub const GAP_CAVEAT: &str = "Descriptive only: model and human ratings are not on an equivalent measurement \
scale, so differences of cell means are not a test statistic. See the ordered logit and Wilcoxon results.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    AiModel,
    TechExpert,
    MgmtExpert,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::AiModel, Cohort::TechExpert, Cohort::MgmtExpert];

    pub fn label(self) -> &'static str {
        match self {
            Cohort::AiModel => "ai",
            Cohort::TechExpert => "tech",
            Cohort::MgmtExpert => "mgmt",
        }
    }

    pub fn is_human(self) -> bool {
        self != Cohort::AiModel
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cohort::ALL.into_iter().find(|c| c.label() == s).ok_or_else(|| format!("unknown cohort {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RatingObservation {
    pub dwa_id: String,
    pub evaluator_id: String,
    pub cohort: Cohort,
    pub risk_rating: u8,
    pub tech_rating: Option<u8>,
    pub stratum: Stratum,
}

/// Reads `hitl.csv` and joins each row's stratum from the fused scores.
pub fn read_hitl<R: Read>(reader: R, fused: &[FusedRow]) -> Result<Vec<RatingObservation>, StatsError> {
    let strata: BTreeMap<&str, Stratum> = fused.iter().map(|f| (f.dwa_id.as_str(), f.stratum)).collect();
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| StatsError::Input(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != HITL_COLUMNS {
        return Err(StatsError::Input(format!("line 1: expected header {}", HITL_COLUMNS.join(","))));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| StatsError::Input(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |m: String| StatsError::Input(format!("line {line}: {m}"));
        let dwa_id = rec[0].trim().to_string();
        let evaluator_id = rec[1].trim().to_string();
        let cohort: Cohort = rec[2].trim().parse().map_err(err)?;
        let tech_rating = match rec[3].trim() {
            "" => None,
            t => Some(t.parse::<u8>().ok().filter(|v| *v <= 3).ok_or_else(|| err(format!("bad tech_rating {t:?}")))?),
        };
        let risk_rating = rec[4]
            .trim()
            .parse::<u8>()
            .ok()
            .filter(|v| (1..=5).contains(v))
            .ok_or_else(|| err(format!("bad risk_rating {:?}", &rec[4])))?;
        let stratum =
            *strata.get(dwa_id.as_str()).ok_or_else(|| err(format!("DWA {dwa_id:?} not present in fused scores")))?;
        if !seen.insert((dwa_id.clone(), evaluator_id.clone())) {
            return Err(err(format!("duplicate rating of {dwa_id:?} by {evaluator_id:?}")));
        }
        out.push(RatingObservation { dwa_id, evaluator_id, cohort, risk_rating, tech_rating, stratum });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStat {
    pub mean: f64,
    pub count: usize,
}

/// Mean risk rating per (stratum, cohort). Empty cells are absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellGrid {
    pub cells: BTreeMap<(Stratum, Cohort), CellStat>,
    /// Distinct DWAs per stratum.
    pub dwas_per_stratum: BTreeMap<Stratum, usize>,
}

impl CellGrid {
    pub fn get(&self, stratum: Stratum, cohort: Cohort) -> Option<&CellStat> {
        self.cells.get(&(stratum, cohort))
    }
}

pub fn cell_means(obs: &[RatingObservation]) -> CellGrid {
    let mut sums: BTreeMap<(Stratum, Cohort), (u64, usize)> = BTreeMap::new();
    let mut dwas: BTreeMap<Stratum, BTreeSet<&str>> = BTreeMap::new();
    for o in obs {
        let e = sums.entry((o.stratum, o.cohort)).or_default();
        e.0 += u64::from(o.risk_rating);
        e.1 += 1;
        dwas.entry(o.stratum).or_default().insert(&o.dwa_id);
    }
    CellGrid {
        cells: sums
            .into_iter()
            .map(|(k, (sum, count))| (k, CellStat { mean: sum as f64 / count as f64, count }))
            .collect(),
        dwas_per_stratum: dwas.into_iter().map(|(s, d)| (s, d.len())).collect(),
    }
}

/// `table2.csv`: one row per stratum, cohort means to two decimals, blank when absent.
pub fn write_table2<W: Write>(writer: W, grid: &CellGrid) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stratum", "n_dwas", "ai", "tech", "mgmt", "n_ai", "n_tech", "n_mgmt"])?;
    for stratum in Stratum::ALL {
        let mut row = vec![stratum.to_string(), grid.dwas_per_stratum.get(&stratum).copied().unwrap_or(0).to_string()];
        for cohort in Cohort::ALL {
            row.push(grid.get(stratum, cohort).map(|c| format!("{:.2}", c.mean)).unwrap_or_default());
        }
        for cohort in Cohort::ALL {
            row.push(grid.get(stratum, cohort).map(|c| c.count).unwrap_or(0).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortCorrelation {
    /// `risk` or `tech`.
    pub dimension: String,
    /// `tech`, `mgmt` or `human` (both expert cohorts pooled).
    pub cohort: String,
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub stratum: Stratum,
    pub cohort: Cohort,
    /// Cohort cell mean minus model cell mean.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitlAnalysis {
    pub n_observations: usize,
    pub n_dwas: usize,
    /// Pairs are (mean human risk, mean model risk) per DWA; W+ counts human > model.
    pub wilcoxon: Option<TestResult>,
    /// Risk rating on an evaluator dummy (0 = model, 1 = human expert).
    pub ordered_logit: Option<OrderedLogitFit>,
    pub spearman: Vec<CohortCorrelation>,
    pub descriptive_gaps: Vec<GapRow>,
    pub caveat: &'static str,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub table2: CellGrid,
}

fn per_dwa_means<F>(
    obs: &[RatingObservation],
    keep: F,
    rating: fn(&RatingObservation) -> Option<u8>,
) -> BTreeMap<&str, f64>
where
    F: Fn(Cohort) -> bool,
{
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for o in obs.iter().filter(|o| keep(o.cohort)) {
        if let Some(v) = rating(o) {
            let e = acc.entry(o.dwa_id.as_str()).or_default();
            e.0 += f64::from(v);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn paired<'a>(a: &BTreeMap<&'a str, f64>, b: &BTreeMap<&'a str, f64>) -> Vec<(f64, f64)> {
    a.iter().filter_map(|(k, va)| b.get(k).map(|vb| (*va, *vb))).collect()
}

/// Runs the full human-versus-model battery. Tests whose preconditions
/// fail are left empty and explained in `warnings`.
pub fn analyze_hitl(obs: &[RatingObservation]) -> HitlAnalysis {
    analyze(obs, None)
}

/// Like [`analyze_hitl`], but when the ratings contain no model rows the
/// fused ensemble scores stand in as the model side of the rank
/// correlations. Wilcoxon and the ordered logit still need per-model
/// ratings and are skipped in that case.
pub fn analyze_hitl_with_reference(obs: &[RatingObservation], reference: &[FusedRow]) -> HitlAnalysis {
    analyze(obs, Some(reference))
}

#[allow(clippy::type_complexity)]
fn analyze(obs: &[RatingObservation], reference: Option<&[FusedRow]>) -> HitlAnalysis {
    let mut warnings = Vec::new();
    let table2 = cell_means(obs);
    let cohorts: BTreeSet<Cohort> = obs.iter().map(|o| o.cohort).collect();
    let risk = |o: &RatingObservation| Some(o.risk_rating);
    let tech = |o: &RatingObservation| o.tech_rating;

    let ai_risk = per_dwa_means(obs, |c| c == Cohort::AiModel, risk);
    let human_risk = per_dwa_means(obs, Cohort::is_human, risk);

    let wilcoxon = if cohorts.len() < 2 || !cohorts.contains(&Cohort::AiModel) {
        warnings.push("wilcoxon skipped: needs both model and human ratings".to_string());
        None
    } else {
        match wilcoxon_signed_rank(&paired(&human_risk, &ai_risk)) {
            Ok(r) => Some(r),
            Err(e) => {
                warnings.push(format!("wilcoxon skipped: {e}"));
                None
            }
        }
    };

    let matched: BTreeSet<&str> = ai_risk.keys().filter(|k| human_risk.contains_key(*k)).copied().collect();
    let ordered_logit = if matched.is_empty() {
        warnings.push("ordered logit skipped: needs both model and human ratings on the same DWAs".to_string());
        None
    } else {
        let data: Vec<(u32, u8)> = obs
            .iter()
            .filter(|o| matched.contains(o.dwa_id.as_str()))
            .map(|o| (u32::from(o.risk_rating), u8::from(o.cohort.is_human())))
            .collect();
        match ordered_logit_fit(&data) {
            Ok(fit) => {
                warnings.extend(fit.warnings.iter().cloned());
                Some(fit)
            }
            Err(e) => {
                warnings.push(format!("ordered logit skipped: {e}"));
                None
            }
        }
    };

    let mut correlations = Vec::new();
    let groups: [(&str, fn(Cohort) -> bool); 3] =
        [("tech", |c| c == Cohort::TechExpert), ("mgmt", |c| c == Cohort::MgmtExpert), ("human", Cohort::is_human)];
    let dims: [(&str, fn(&RatingObservation) -> Option<u8>); 2] = [("risk", risk), ("tech", tech)];
    let fallback = reference.filter(|_| ai_risk.is_empty());
    if fallback.is_some() {
        warnings.push("no model rows in ratings; rank correlations use the fused ensemble scores".to_string());
    }
    for (dim, rating) in dims {
        let ai: BTreeMap<&str, f64> = match fallback {
            Some(rows) => rows
                .iter()
                .map(|f| {
                    let v = if dim == "risk" { f.risk_score } else { f.tech_level };
                    (f.dwa_id.as_str(), f64::from(v))
                })
                .collect(),
            None => per_dwa_means(obs, |c| c == Cohort::AiModel, rating),
        };
        for (label, keep) in groups {
            let other = per_dwa_means(obs, keep, rating);
            if other.is_empty() || ai.is_empty() {
                continue;
            }
            let pairs = paired(&ai, &other);
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            match spearman(&x, &y) {
                Ok(r) => correlations.push(CohortCorrelation {
                    dimension: dim.into(),
                    cohort: label.into(),
                    rho: r.statistic,
                    p_value: r.p_value,
                    n: r.n_effective,
                }),
                Err(e) => warnings.push(format!("spearman {dim}/{label} skipped: {e}")),
            }
        }
    }
    if correlations.is_empty() {
        warnings.push("no model/human cohort pair available for rank correlation".to_string());
    }

    let mut gaps = Vec::new();
    for stratum in Stratum::ALL {
        if let Some(ai) = table2.get(stratum, Cohort::AiModel) {
            for cohort in [Cohort::TechExpert, Cohort::MgmtExpert] {
                if let Some(h) = table2.get(stratum, cohort) {
                    gaps.push(GapRow { stratum, cohort, difference: h.mean - ai.mean });
                }
            }
        }
    }

    HitlAnalysis {
        n_observations: obs.len(),
        n_dwas: obs.iter().map(|o| o.dwa_id.as_str()).collect::<BTreeSet<_>>().len(),
        wilcoxon,
        ordered_logit,
        spearman: correlations,
        descriptive_gaps: gaps,
        caveat: GAP_CAVEAT,
        warnings,
        table2,
    }
}
