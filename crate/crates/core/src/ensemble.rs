//! Consensus fusion of per-model DWA scores, disagreement strata and
//! stratified sampling for human review.

use crate::prng::SplitMix64;
use crate::rational::{from_int, ratio, round_half_away, to_decimal_string, Rational};
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

pub const TECH_RANGE: std::ops::RangeInclusive<u8> = 0..=3;
pub const RISK_RANGE: std::ops::RangeInclusive<u8> = 1..=5;

pub const SCORE_COLUMNS: [&str; 5] = ["dwa_id", "model_id", "tech_level", "risk_score", "reasoning"];
pub const FUSED_COLUMNS: [&str; 8] =
    ["dwa_id", "n_models", "mean_tech", "mean_risk", "tech_level", "risk_score", "risk_variance", "stratum"];

/// One model's rating of one DWA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub dwa_id: String,
    pub model_id: String,
    pub tech_level: u8,
    pub risk_score: u8,
    #[serde(default)]
    pub reasoning: String,
}

/// Inter-model risk disagreement band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stratum {
    Consensus,
    SlightFriction,
    SevereDivergence,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Consensus, Stratum::SlightFriction, Stratum::SevereDivergence];

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Consensus => "consensus",
            Stratum::SlightFriction => "slight_friction",
            Stratum::SevereDivergence => "severe_divergence",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stratum {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stratum::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| format!("unknown stratum {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedScore {
    pub dwa_id: String,
    pub n_models: usize,
    pub mean_tech: Rational,
    pub mean_risk: Rational,
    pub tech_level: u8,
    pub risk_score: u8,
    /// Sample variance of the risk scores (divisor n - 1; zero for one model).
    pub risk_variance: Rational,
    /// Recorded for audit, not used for stratification.
    pub tech_variance: Rational,
    pub stratum: Stratum,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("no score records to fuse")]
    Empty,
    #[error("mixed DWA ids in one fusion group: {0:?} and {1:?}")]
    MixedDwa(String, String),
    #[error("model {model_id:?} scored DWA {dwa_id:?} more than once")]
    DuplicateModel { dwa_id: String, model_id: String },
    #[error("{field} value {value} out of range for DWA {dwa_id:?}")]
    OutOfRange { dwa_id: String, field: &'static str, value: i64 },
    #[error("negative variance {0}")]
    NegativeVariance(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for EnsembleError {
    fn from(e: csv::Error) -> Self {
        EnsembleError::Csv(e.to_string())
    }
}

fn validate_record(r: &ScoreRecord) -> Result<(), EnsembleError> {
    if !TECH_RANGE.contains(&r.tech_level) {
        return Err(EnsembleError::OutOfRange {
            dwa_id: r.dwa_id.clone(),
            field: "tech_level",
            value: r.tech_level.into(),
        });
    }
    if !RISK_RANGE.contains(&r.risk_score) {
        return Err(EnsembleError::OutOfRange {
            dwa_id: r.dwa_id.clone(),
            field: "risk_score",
            value: r.risk_score.into(),
        });
    }
    Ok(())
}

fn mean_and_sample_variance(values: &[u8]) -> (Rational, Rational) {
    let n = values.len() as i64;
    let sum: i64 = values.iter().map(|&v| i64::from(v)).sum();
    let mean = ratio(sum, n);
    if n < 2 {
        return (mean, Rational::zero());
    }
    let ss: Rational = values
        .iter()
        .map(|&v| {
            let d = from_int(v.into()) - &mean;
            &d * &d
        })
        .sum();
    (mean, ss / from_int(n - 1))
}

/// Fuses all model ratings of a single DWA into rounded consensus scores.
pub fn fuse_scores(records: &[ScoreRecord]) -> Result<FusedScore, EnsembleError> {
    let first = records.first().ok_or(EnsembleError::Empty)?;
    let mut models = BTreeSet::new();
    for r in records {
        if r.dwa_id != first.dwa_id {
            return Err(EnsembleError::MixedDwa(first.dwa_id.clone(), r.dwa_id.clone()));
        }
        if !models.insert(r.model_id.as_str()) {
            return Err(EnsembleError::DuplicateModel { dwa_id: r.dwa_id.clone(), model_id: r.model_id.clone() });
        }
        validate_record(r)?;
    }
    let techs: Vec<u8> = records.iter().map(|r| r.tech_level).collect();
    let risks: Vec<u8> = records.iter().map(|r| r.risk_score).collect();
    let (mean_tech, tech_variance) = mean_and_sample_variance(&techs);
    let (mean_risk, risk_variance) = mean_and_sample_variance(&risks);
    // Means of in-range integers round back into range.
    let tech_level = round_half_away(&mean_tech).to_u8().expect("tech in range");
    let risk_score = round_half_away(&mean_risk).to_u8().expect("risk in range");
    let stratum = assign_stratum(&risk_variance)?;
    Ok(FusedScore {
        dwa_id: first.dwa_id.clone(),
        n_models: records.len(),
        mean_tech,
        mean_risk,
        tech_level,
        risk_score,
        risk_variance,
        tech_variance,
        stratum,
    })
}

/// Maps a risk sample variance onto its stratum: 0, (0, 1/3), and >= 1/3.
pub fn assign_stratum(risk_variance: &Rational) -> Result<Stratum, EnsembleError> {
    if risk_variance.is_negative() {
        return Err(EnsembleError::NegativeVariance(risk_variance.to_string()));
    }
    Ok(if risk_variance.is_zero() {
        Stratum::Consensus
    } else if *risk_variance < ratio(1, 3) {
        Stratum::SlightFriction
    } else {
        Stratum::SevereDivergence
    })
}

/// Groups records by DWA and fuses each group. Output is sorted by DWA id.
pub fn fuse_all(records: &[ScoreRecord]) -> Result<Vec<FusedScore>, EnsembleError> {
    let mut groups: BTreeMap<&str, Vec<ScoreRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.dwa_id.as_str()).or_default().push(r.clone());
    }
    groups.values().map(|g| fuse_scores(g)).collect()
}

/// Reads `scores.csv`. Range and uniqueness violations are reported with line numbers.
pub fn read_scores<R: Read>(reader: R) -> Result<Vec<ScoreRecord>, EnsembleError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != SCORE_COLUMNS {
        return Err(EnsembleError::Row { line: 1, message: format!("expected header {}", SCORE_COLUMNS.join(",")) });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row_err = |message: String| EnsembleError::Row { line, message };
        if rec.len() != SCORE_COLUMNS.len() {
            return Err(row_err(format!("expected {} columns, found {}", SCORE_COLUMNS.len(), rec.len())));
        }
        let parse = |idx: usize| -> Result<u8, EnsembleError> {
            rec[idx]
                .trim()
                .parse::<u8>()
                .map_err(|_| row_err(format!("{} is not a small integer: {:?}", SCORE_COLUMNS[idx], &rec[idx])))
        };
        let record = ScoreRecord {
            dwa_id: rec[0].trim().to_string(),
            model_id: rec[1].trim().to_string(),
            tech_level: parse(2)?,
            risk_score: parse(3)?,
            reasoning: rec[4].to_string(),
        };
        if record.dwa_id.is_empty() || record.model_id.is_empty() {
            return Err(row_err("empty dwa_id or model_id".into()));
        }
        validate_record(&record).map_err(|e| row_err(e.to_string()))?;
        if !seen.insert((record.dwa_id.clone(), record.model_id.clone())) {
            return Err(row_err(format!("duplicate (dwa_id, model_id) = ({}, {})", record.dwa_id, record.model_id)));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_scores<W: Write>(writer: W, records: &[ScoreRecord]) -> Result<(), EnsembleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCORE_COLUMNS)?;
    for r in records {
        w.write_record([
            r.dwa_id.as_str(),
            r.model_id.as_str(),
            &r.tech_level.to_string(),
            &r.risk_score.to_string(),
            r.reasoning.as_str(),
        ])?;
    }
    w.flush().map_err(|e| EnsembleError::Csv(e.to_string()))
}

/// Writes `fused.csv`; rationals are rendered to six decimals.
pub fn write_fused<W: Write>(writer: W, fused: &[FusedScore]) -> Result<(), EnsembleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FUSED_COLUMNS)?;
    for f in fused {
        w.write_record([
            f.dwa_id.clone(),
            f.n_models.to_string(),
            to_decimal_string(&f.mean_tech, 6),
            to_decimal_string(&f.mean_risk, 6),
            f.tech_level.to_string(),
            f.risk_score.to_string(),
            to_decimal_string(&f.risk_variance, 6),
            f.stratum.to_string(),
        ])?;
    }
    w.flush().map_err(|e| EnsembleError::Csv(e.to_string()))
}

/// The subset of `fused.csv` needed downstream of fusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedRow {
    pub dwa_id: String,
    pub tech_level: u8,
    pub risk_score: u8,
    pub stratum: Stratum,
}

impl From<&FusedScore> for FusedRow {
    fn from(f: &FusedScore) -> Self {
        FusedRow { dwa_id: f.dwa_id.clone(), tech_level: f.tech_level, risk_score: f.risk_score, stratum: f.stratum }
    }
}

pub fn read_fused<R: Read>(reader: R) -> Result<Vec<FusedRow>, EnsembleError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != FUSED_COLUMNS {
        return Err(EnsembleError::Row { line: 1, message: format!("expected header {}", FUSED_COLUMNS.join(",")) });
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row_err = |message: String| EnsembleError::Row { line, message };
        let tech_level: u8 = rec[4].parse().map_err(|_| row_err(format!("bad tech_level {:?}", &rec[4])))?;
        let risk_score: u8 = rec[5].parse().map_err(|_| row_err(format!("bad risk_score {:?}", &rec[5])))?;
        if !TECH_RANGE.contains(&tech_level) || !RISK_RANGE.contains(&risk_score) {
            return Err(row_err("score out of range".into()));
        }
        let stratum = rec[7].parse().map_err(row_err)?;
        if !seen.insert(rec[0].to_string()) {
            return Err(row_err(format!("duplicate dwa_id {:?}", &rec[0])));
        }
        out.push(FusedRow { dwa_id: rec[0].to_string(), tech_level, risk_score, stratum });
    }
    Ok(out)
}

/// Result of a stratified draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrataSample {
    pub seed: u64,
    pub requested: BTreeMap<Stratum, usize>,
    pub drawn: BTreeMap<Stratum, Vec<String>>,
    /// Strata whose request exceeded the population and were clamped.
    pub clamped: Vec<Stratum>,
}

impl StrataSample {
    pub fn total(&self) -> usize {
        self.drawn.values().map(Vec::len).sum()
    }
}

/// Draws `counts[s]` DWAs uniformly without replacement from each stratum.
///
/// Within a stratum ids are sorted bytewise, then a partial Fisher-Yates
/// shuffle driven by [`SplitMix64`] picks the sample. Strata are visited in
/// the fixed order consensus, slight friction, severe divergence, all from one
/// generator stream.
pub fn stratified_sample<'a, I>(fused: I, counts: &BTreeMap<Stratum, usize>, seed: u64) -> StrataSample
where
    I: IntoIterator<Item = (&'a str, Stratum)>,
{
    let mut pools: BTreeMap<Stratum, Vec<&str>> = Stratum::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for (id, stratum) in fused {
        pools.get_mut(&stratum).expect("all strata present").push(id);
    }
    let mut rng = SplitMix64::new(seed);
    let mut drawn = BTreeMap::new();
    let mut clamped = Vec::new();
    for stratum in Stratum::ALL {
        let pool = pools.get_mut(&stratum).expect("all strata present");
        pool.sort_unstable();
        pool.dedup();
        let want = counts.get(&stratum).copied().unwrap_or(0);
        if want > pool.len() {
            log::warn!("requested {want} from {stratum} but only {} available", pool.len());
            clamped.push(stratum);
        }
        let k = want.min(pool.len());
        for i in 0..k {
            let j = i + rng.below((pool.len() - i) as u64) as usize;
            pool.swap(i, j);
        }
        drawn.insert(stratum, pool[..k].iter().map(|s| s.to_string()).collect());
    }
    StrataSample {
        seed,
        requested: Stratum::ALL.iter().map(|&s| (s, counts.get(&s).copied().unwrap_or(0))).collect(),
        drawn,
        clamped,
    }
}
