//! Rankings, exposure categories, summaries, scenario comparisons, and the
//! on-disk report.

use crate::aggregate::{OaiRecord, OaiTable};
use crate::matrix::{MappingMatrix, ScenarioId};
use crate::plot;
use crate::protocol::sha256_hex;
use crate::rational::{is_unit_interval, parse_decimal, ratio, to_decimal_string, to_f64, Rational};
use crate::stats::{spearman, write_table2, HitlAnalysis, StatsError};
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

/// Number of largest rank changes kept per comparison in `sensitivity.json`.
pub const TOP_MOVERS: usize = 10;

fn preview(codes: &[String]) -> String {
    let mut s = codes.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if codes.len() > 10 {
        s.push_str(", ...");
    }
    s
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("OAI table is empty")]
    EmptyTable,
    #[error("OAI {0} is outside [0, 1]")]
    OutOfRange(String),
    #[error(
        "occupation sets differ: {} only in {a} [{}], {} only in {b} [{}]",
        only_a.len(), preview(only_a), only_b.len(), preview(only_b)
    )]
    OccupationMismatch { a: String, b: String, only_a: Vec<String>, only_b: Vec<String> },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("oai table: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureCategory {
    Low,
    Medium,
    High,
}

impl ExposureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ExposureCategory::Low => "low",
            ExposureCategory::Medium => "medium",
            ExposureCategory::High => "high",
        }
    }
}

impl fmt::Display for ExposureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// High at 0.60 and above, Medium from 0.30, Low below. Lower bounds are inclusive.
pub fn categorize(oai: &Rational) -> Result<ExposureCategory, ReportError> {
    if !is_unit_interval(oai) {
        return Err(ReportError::OutOfRange(oai.to_string()));
    }
    Ok(if *oai >= ratio(3, 5) {
        ExposureCategory::High
    } else if *oai >= ratio(3, 10) {
        ExposureCategory::Medium
    } else {
        ExposureCategory::Low
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedOccupation {
    /// 1-based position in the ordering.
    pub rank: usize,
    /// Tied OAIs share the mean of their positions.
    pub average_rank: Rational,
    pub soc_code: String,
    pub title: String,
    pub oai: Rational,
}

/// Descending by OAI, ties by ascending SOC code.
pub fn rank_occupations(table: &OaiTable) -> Vec<RankedOccupation> {
    let mut order: Vec<_> = table.records.iter().collect();
    order.sort_by(|a, b| b.oai.cmp(&a.oai).then_with(|| a.soc_code.cmp(&b.soc_code)));
    let mut out = Vec::with_capacity(order.len());
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && order[end].oai == order[start].oai {
            end += 1;
        }
        // Positions start+1 ..= end.
        let avg = Rational::new(((start + 1 + end) as i64).into(), 2.into());
        for (i, r) in order[start..end].iter().enumerate() {
            out.push(RankedOccupation {
                rank: start + i + 1,
                average_rank: avg.clone(),
                soc_code: r.soc_code.clone(),
                title: r.title.clone(),
                oai: r.oai.clone(),
            });
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CategoryCounts {
    pub high: usize,
    pub medium: usize,
    pub low: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryShares {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// 10th through 90th percentiles, linear interpolation between order statistics.
    pub deciles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub n: usize,
    pub counts: CategoryCounts,
    pub shares: CategoryShares,
    pub distribution: Distribution,
}

/// Rounds to four places for display; comparisons never use these values.
fn display4(q: &Rational) -> f64 {
    to_decimal_string(q, 4).parse().expect("decimal string")
}

/// Type-7 quantile of sorted values, computed exactly.
fn quantile(sorted: &[&Rational], p: &Rational) -> Rational {
    let h = p * Rational::from_integer(((sorted.len() - 1) as i64).into());
    let lo = h.floor();
    let frac = &h - &lo;
    let i = lo.to_integer().to_usize().expect("index");
    if frac.is_zero() || i + 1 >= sorted.len() {
        return sorted[i].clone();
    }
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

pub fn summary(table: &OaiTable) -> Result<Summary, ReportError> {
    if table.records.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let mut counts = CategoryCounts::default();
    for r in &table.records {
        match categorize(&r.oai)? {
            ExposureCategory::High => counts.high += 1,
            ExposureCategory::Medium => counts.medium += 1,
            ExposureCategory::Low => counts.low += 1,
        }
    }
    let n = table.records.len();
    let share = |c: usize| display4(&ratio(c as i64, n as i64));
    let mut sorted: Vec<&Rational> = table.records.iter().map(|r| &r.oai).collect();
    sorted.sort();
    // Summing exact values with unrelated denominators grows without bound;
    // the mean is only shown to 4 places, so sum at 1e-12 resolution instead.
    let scale = num_bigint::BigInt::from(10u64.pow(12));
    let total: num_bigint::BigInt =
        sorted.iter().map(|q| crate::rational::round_half_away(&(*q * Rational::from_integer(scale.clone())))).sum();
    let mean = Rational::new(total, scale * num_bigint::BigInt::from(n));
    let deciles = (1..=9).map(|k| display4(&quantile(&sorted, &ratio(k, 10)))).collect();
    Ok(Summary {
        scenario: table.scenario.label().to_string(),
        n,
        shares: CategoryShares { high: share(counts.high), medium: share(counts.medium), low: share(counts.low) },
        counts,
        distribution: Distribution {
            min: display4(sorted[0]),
            max: display4(sorted[n - 1]),
            mean: display4(&mean),
            deciles,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankMove {
    pub soc_code: String,
    pub rank_a: f64,
    pub rank_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioComparison {
    pub a: String,
    pub b: String,
    pub rho: f64,
    pub p: f64,
    pub n: usize,
    /// Every occupation, largest absolute rank change first.
    #[serde(skip)]
    pub movers: Vec<RankMove>,
    pub top_movers: Vec<RankMove>,
}

/// Spearman correlation of the two tables' average OAI ranks.
pub fn scenario_compare(a: &OaiTable, b: &OaiTable) -> Result<ScenarioComparison, ReportError> {
    let codes_a: BTreeSet<&str> = a.records.iter().map(|r| r.soc_code.as_str()).collect();
    let codes_b: BTreeSet<&str> = b.records.iter().map(|r| r.soc_code.as_str()).collect();
    if codes_a != codes_b {
        return Err(ReportError::OccupationMismatch {
            a: a.scenario.label().to_string(),
            b: b.scenario.label().to_string(),
            only_a: codes_a.difference(&codes_b).map(|s| s.to_string()).collect(),
            only_b: codes_b.difference(&codes_a).map(|s| s.to_string()).collect(),
        });
    }
    let ranks = |t: &OaiTable| {
        rank_occupations(t)
            .into_iter()
            .map(|r| (r.soc_code, to_f64(&r.average_rank)))
            .collect::<std::collections::BTreeMap<_, _>>()
    };
    let ra = ranks(a);
    let rb = ranks(b);
    // Both maps iterate in SOC order, so the vectors line up.
    let xa: Vec<f64> = ra.values().copied().collect();
    let xb: Vec<f64> = rb.values().copied().collect();
    let test = spearman(&xa, &xb)?;
    let mut movers: Vec<RankMove> =
        ra.iter().map(|(code, &rank_a)| RankMove { soc_code: code.clone(), rank_a, rank_b: rb[code] }).collect();
    movers.sort_by(|x, y| {
        let dx = (x.rank_a - x.rank_b).abs();
        let dy = (y.rank_a - y.rank_b).abs();
        dy.total_cmp(&dx).then_with(|| x.soc_code.cmp(&y.soc_code))
    });
    let top_movers = movers.iter().filter(|m| m.rank_a != m.rank_b).take(TOP_MOVERS).cloned().collect();
    Ok(ScenarioComparison {
        a: a.scenario.label().to_string(),
        b: b.scenario.label().to_string(),
        rho: test.statistic,
        p: test.p_value,
        n: test.n_effective,
        movers,
        top_movers,
    })
}

/// `soc_code,title,oai,scenario` in rank order, OAI to four decimals.
pub fn oai_csv(table: &OaiTable) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["soc_code", "title", "oai", "scenario"]).expect("in-memory write");
    for r in rank_occupations(table) {
        w.write_record([&r.soc_code, &r.title, &to_decimal_string(&r.oai, 4), table.scenario.label()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// Reads a table written by [`oai_csv`]. Values carry only four decimals, so
/// the result is suitable for ranking and comparison, not recomputation.
pub fn read_oai_csv<R: std::io::Read>(reader: R) -> Result<OaiTable, ReportError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| ReportError::Parse(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["soc_code", "title", "oai", "scenario"] {
        return Err(ReportError::Parse("line 1: expected header soc_code,title,oai,scenario".into()));
    }
    let mut scenario: Option<String> = None;
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ReportError::Parse(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let oai = parse_decimal(&rec[2]).map_err(|e| ReportError::Parse(format!("line {line}: {e}")))?;
        match &scenario {
            None => scenario = Some(rec[3].to_string()),
            Some(s) if s != &rec[3] => {
                return Err(ReportError::Parse(format!("line {line}: mixed scenarios {s:?} and {:?}", &rec[3])))
            }
            Some(_) => {}
        }
        records.push(OaiRecord {
            soc_code: rec[0].to_string(),
            title: rec[1].to_string(),
            oai,
            task_breakdown: Vec::new(),
        });
    }
    records.sort_by(|a, b| a.soc_code.cmp(&b.soc_code));
    if let Some(pair) = records.windows(2).find(|w| w[0].soc_code == w[1].soc_code) {
        return Err(ReportError::Parse(format!("duplicate soc_code {:?}", pair[0].soc_code)));
    }
    let label = scenario.ok_or(ReportError::EmptyTable)?;
    Ok(OaiTable {
        scenario: ScenarioId::preset_from_label(&label).unwrap_or(ScenarioId::Custom(label)),
        records,
        dwa_indices: Default::default(),
        provenance: Default::default(),
    })
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub plots: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Formats { plots: true }
    }
}

impl Formats {
    pub fn csv_only() -> Self {
        Formats { plots: false }
    }
}

/// What goes into one report directory. The first table is the primary
/// scenario and gets the unsuffixed `oai.csv` / `summary.json`.
#[derive(Debug, Default)]
pub struct ReportInput<'a> {
    pub tables: Vec<&'a OaiTable>,
    pub comparisons: Vec<ScenarioComparison>,
    /// Matrix drawn in the heatmap.
    pub matrix: Option<&'a MappingMatrix>,
    pub hitl: Option<&'a HitlAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FileManifest {
    pub files: Vec<FileEntry>,
    /// Outputs deliberately not written, with the reason.
    pub omitted: Vec<String>,
}

/// File name and contents.
pub type RenderedFile = (String, Vec<u8>);

/// Renders every output in memory, in a fixed order.
pub fn render_report(
    input: &ReportInput<'_>,
    formats: Formats,
) -> Result<(Vec<RenderedFile>, Vec<String>), ReportError> {
    let mut files: Vec<RenderedFile> = Vec::new();
    let mut omitted = Vec::new();
    for (i, table) in input.tables.iter().enumerate() {
        let suffix = if i == 0 { String::new() } else { format!("_{}", table.scenario.label()) };
        files.push((format!("oai{suffix}.csv"), oai_csv(table)));
        files.push((format!("summary{suffix}.json"), json_bytes(&summary(table)?)));
    }
    if input.comparisons.is_empty() {
        if input.tables.len() > 1 {
            omitted.push("sensitivity.json: no scenario comparisons requested".to_string());
        }
    } else {
        files.push(("sensitivity.json".to_string(), json_bytes(&input.comparisons)));
    }
    if let Some(hitl) = input.hitl {
        let mut buf = Vec::new();
        write_table2(&mut buf, &hitl.table2)
            .map_err(|e| ReportError::Io { path: "table2.csv".into(), source: std::io::Error::other(e) })?;
        files.push(("table2.csv".to_string(), buf));
        files.push(("tests.json".to_string(), json_bytes(hitl)));
    }
    if formats.plots {
        if let Some(table) = input.tables.first() {
            let values: Vec<f64> = table.records.iter().map(|r| to_f64(&r.oai)).collect();
            files
                .push(("oai_density.svg".to_string(), plot::density_svg(&values, table.scenario.label()).into_bytes()));
        }
        if let Some(matrix) = input.matrix {
            files.push(("matrix_heatmap.svg".to_string(), plot::heatmap_svg(matrix).into_bytes()));
        }
        if let Some(hitl) = input.hitl {
            files.push(("hitl_gap.svg".to_string(), plot::gap_svg(&hitl.table2).into_bytes()));
        }
    } else {
        omitted.push("plots: csv-only output requested".to_string());
    }
    Ok((files, omitted))
}

/// Writes the report into `out_dir`. See [`write_files`].
pub fn write_report(input: &ReportInput<'_>, out_dir: &Path, formats: Formats) -> Result<FileManifest, ReportError> {
    let (files, omitted) = render_report(input, formats)?;
    Ok(FileManifest { files: write_files(&files, out_dir)?, omitted })
}

/// Writes `files` into `out_dir`. They are staged in a temporary directory
/// inside `out_dir` and moved into place only after all of them were
/// written, so a failure leaves no partial output behind.
pub fn write_files(files: &[RenderedFile], out_dir: &Path) -> Result<Vec<FileEntry>, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(out_dir).map_err(io(out_dir))?;
    let mut entries = Vec::new();
    for (name, bytes) in files {
        let path = staging.path().join(name);
        fs::write(&path, bytes).map_err(io(&path))?;
        entries.push(FileEntry { name: name.clone(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
    }
    for (name, _) in files {
        let target = out_dir.join(name);
        fs::rename(staging.path().join(name), &target).map_err(io(&target))?;
    }
    Ok(entries)
}
