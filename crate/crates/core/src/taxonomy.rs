//! Occupational hierarchy: occupations own tasks, tasks reference detailed
//! work activities (DWAs).
//!
//! The loader never drops a row silently. Every row read is either loaded or
//! rejected with a [`RowIssue`] carrying its file and line, and any rejection
//! fails the load as a whole.

use crate::rational::{parse_decimal, Rational};
use num_traits::Signed;
use num_traits::Zero;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

pub const DWA_COLUMNS: [&str; 2] = ["dwa_id", "title"];
pub const TASK_COLUMNS: [&str; 4] = ["task_id", "occupation_code", "title", "importance"];
pub const OCCUPATION_COLUMNS: [&str; 2] = ["soc_code", "title"];
pub const TASK_DWA_COLUMNS: [&str; 2] = ["task_id", "dwa_id"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dwa {
    pub dwa_id: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub task_id: String,
    pub occupation_code: String,
    pub title: String,
    /// Raw importance as supplied; normalization happens at aggregation time.
    pub importance: Rational,
    pub dwa_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupation {
    pub soc_code: String,
    pub title: String,
    pub task_ids: BTreeSet<String>,
}

/// Immutable, fully cross-linked taxonomy. Maps are ordered so iteration is
/// independent of input row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    dwas: BTreeMap<String, Dwa>,
    tasks: BTreeMap<String, Task>,
    occupations: BTreeMap<String, Occupation>,
}

/// Which input file a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFile {
    Dwas,
    Tasks,
    Occupations,
    TaskDwa,
}

impl SourceFile {
    pub fn default_name(self) -> &'static str {
        match self {
            SourceFile::Dwas => "dwas.csv",
            SourceFile::Tasks => "tasks.csv",
            SourceFile::Occupations => "occupations.csv",
            SourceFile::TaskDwa => "task_dwa.csv",
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            SourceFile::Dwas => &DWA_COLUMNS,
            SourceFile::Tasks => &TASK_COLUMNS,
            SourceFile::Occupations => &OCCUPATION_COLUMNS,
            SourceFile::TaskDwa => &TASK_DWA_COLUMNS,
        }
    }
}

impl fmt::Display for SourceFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.default_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    BadHeader { expected: String, found: String },
    Malformed { message: String },
    ColumnCount { expected: usize, found: usize },
    EmptyField { column: String },
    DuplicateId { id: String },
    DanglingReference { target: String, id: String },
    InvalidImportance { value: String },
    NonPositiveImportance { value: String },
    TaskHasNoDwas { task_id: String },
    OccupationHasNoTasks { soc_code: String },
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssueKind::BadHeader { expected, found } => {
                write!(f, "header mismatch: expected {expected:?}, found {found:?}")
            }
            IssueKind::Malformed { message } => write!(f, "malformed row: {message}"),
            IssueKind::ColumnCount { expected, found } => {
                write!(f, "malformed row: expected {expected} columns, found {found}")
            }
            IssueKind::EmptyField { column } => write!(f, "empty value in column {column}"),
            IssueKind::DuplicateId { id } => write!(f, "duplicate id {id:?}"),
            IssueKind::DanglingReference { target, id } => {
                write!(f, "dangling reference to unknown {target} {id:?}")
            }
            IssueKind::InvalidImportance { value } => write!(f, "importance {value:?} is not a number"),
            IssueKind::NonPositiveImportance { value } => {
                write!(f, "importance {value} must be strictly positive")
            }
            IssueKind::TaskHasNoDwas { task_id } => write!(f, "task has no DWAs: {task_id:?}"),
            IssueKind::OccupationHasNoTasks { soc_code } => {
                write!(f, "occupation has no tasks: {soc_code:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowIssue {
    pub file: SourceFile,
    /// 1-based physical line number (the header is line 1).
    pub line: u64,
    #[serde(flatten)]
    pub kind: IssueKind,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FileStats {
    pub rows_in: usize,
    pub rows_loaded: usize,
    pub rows_rejected: usize,
}

/// Row accounting for one load attempt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub files: BTreeMap<SourceFile, FileStats>,
    pub issues: Vec<RowIssue>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid row(s); first: {}", .0.issues.len(), .0.issues.first().map(|i| i.to_string()).unwrap_or_default())]
    Invalid(LoadReport),
}

/// Paths of the four taxonomy CSV files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyPaths {
    pub dwas: PathBuf,
    pub tasks: PathBuf,
    pub occupations: PathBuf,
    pub task_dwa: PathBuf,
}

impl TaxonomyPaths {
    /// The conventional file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        TaxonomyPaths {
            dwas: dir.join(SourceFile::Dwas.default_name()),
            tasks: dir.join(SourceFile::Tasks.default_name()),
            occupations: dir.join(SourceFile::Occupations.default_name()),
            task_dwa: dir.join(SourceFile::TaskDwa.default_name()),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.dwas, &self.tasks, &self.occupations, &self.task_dwa]
    }
}

/// Loads and validates a taxonomy from the four CSV files.
pub fn load_taxonomy(paths: &TaxonomyPaths) -> Result<Taxonomy, TaxonomyError> {
    let open = |p: &Path| File::open(p).map_err(|source| TaxonomyError::Io { path: p.to_path_buf(), source });
    let dwas = open(&paths.dwas)?;
    let tasks = open(&paths.tasks)?;
    let occupations = open(&paths.occupations)?;
    let task_dwa = open(&paths.task_dwa)?;
    load_taxonomy_from_readers(dwas, tasks, occupations, task_dwa).map(|(t, _)| t)
}

/// Reader-based loader; also returns the row accounting on success.
pub fn load_taxonomy_from_readers<A: Read, B: Read, C: Read, D: Read>(
    dwas: A,
    tasks: B,
    occupations: C,
    task_dwa: D,
) -> Result<(Taxonomy, LoadReport), TaxonomyError> {
    let mut ctx = LoadContext::default();

    let dwa_rows = ctx.read_rows(SourceFile::Dwas, dwas);
    let task_rows = ctx.read_rows(SourceFile::Tasks, tasks);
    let occ_rows = ctx.read_rows(SourceFile::Occupations, occupations);
    let edge_rows = ctx.read_rows(SourceFile::TaskDwa, task_dwa);

    let mut dwa_map: BTreeMap<String, Dwa> = BTreeMap::new();
    for row in dwa_rows {
        if dwa_map.contains_key(&row.fields[0]) {
            ctx.reject(SourceFile::Dwas, row.line, IssueKind::DuplicateId { id: row.fields[0].clone() });
            continue;
        }
        let [dwa_id, title]: [String; 2] = row.fields.try_into().expect("column count checked");
        dwa_map.insert(dwa_id.clone(), Dwa { dwa_id, title });
    }

    let mut occ_lines: BTreeMap<String, u64> = BTreeMap::new();
    let mut occ_map: BTreeMap<String, Occupation> = BTreeMap::new();
    for row in occ_rows {
        if occ_map.contains_key(&row.fields[0]) {
            ctx.reject(SourceFile::Occupations, row.line, IssueKind::DuplicateId { id: row.fields[0].clone() });
            continue;
        }
        let [soc_code, title]: [String; 2] = row.fields.try_into().expect("column count checked");
        occ_lines.insert(soc_code.clone(), row.line);
        occ_map.insert(soc_code.clone(), Occupation { soc_code, title, task_ids: BTreeSet::new() });
    }

    let mut task_lines: BTreeMap<String, u64> = BTreeMap::new();
    let mut task_map: BTreeMap<String, Task> = BTreeMap::new();
    for row in task_rows {
        let [task_id, occupation_code, title, importance_text]: [String; 4] =
            row.fields.try_into().expect("column count checked");
        if task_map.contains_key(&task_id) {
            ctx.reject(SourceFile::Tasks, row.line, IssueKind::DuplicateId { id: task_id });
            continue;
        }
        let importance = match parse_decimal(&importance_text) {
            Ok(v) => v,
            Err(_) => {
                ctx.reject(SourceFile::Tasks, row.line, IssueKind::InvalidImportance { value: importance_text });
                continue;
            }
        };
        if importance.is_zero() || importance.is_negative() {
            ctx.reject(SourceFile::Tasks, row.line, IssueKind::NonPositiveImportance { value: importance_text });
            continue;
        }
        if !occ_map.contains_key(&occupation_code) {
            ctx.reject(
                SourceFile::Tasks,
                row.line,
                IssueKind::DanglingReference { target: "occupation".into(), id: occupation_code },
            );
            continue;
        }
        task_lines.insert(task_id.clone(), row.line);
        task_map
            .insert(task_id.clone(), Task { task_id, occupation_code, title, importance, dwa_ids: BTreeSet::new() });
    }

    for row in edge_rows {
        let [task_id, dwa_id]: [String; 2] = row.fields.try_into().expect("column count checked");
        let mut ok = true;
        if !task_map.contains_key(&task_id) {
            ctx.reject(
                SourceFile::TaskDwa,
                row.line,
                IssueKind::DanglingReference { target: "task".into(), id: task_id.clone() },
            );
            ok = false;
        }
        if !dwa_map.contains_key(&dwa_id) {
            ctx.reject(
                SourceFile::TaskDwa,
                row.line,
                IssueKind::DanglingReference { target: "DWA".into(), id: dwa_id.clone() },
            );
            ok = false;
        }
        if ok {
            // Duplicate edges collapse into the set.
            task_map.get_mut(&task_id).expect("checked").dwa_ids.insert(dwa_id);
        }
    }

    let empty_tasks: Vec<String> =
        task_map.values().filter(|t| t.dwa_ids.is_empty()).map(|t| t.task_id.clone()).collect();
    for task_id in empty_tasks {
        let line = task_lines[&task_id];
        ctx.reject(SourceFile::Tasks, line, IssueKind::TaskHasNoDwas { task_id: task_id.clone() });
        task_map.remove(&task_id);
    }

    for task in task_map.values() {
        occ_map.get_mut(&task.occupation_code).expect("occupation checked").task_ids.insert(task.task_id.clone());
    }
    for occ in occ_map.values().filter(|o| o.task_ids.is_empty()) {
        ctx.reject(
            SourceFile::Occupations,
            occ_lines[&occ.soc_code],
            IssueKind::OccupationHasNoTasks { soc_code: occ.soc_code.clone() },
        );
    }

    let report = ctx.finish();
    if !report.is_clean() {
        return Err(TaxonomyError::Invalid(report));
    }
    Ok((Taxonomy { dwas: dwa_map, tasks: task_map, occupations: occ_map }, report))
}

/// Reads only `dwas.csv`, for scoring runs that do not need the hierarchy.
pub fn load_dwas<R: Read>(reader: R) -> Result<Vec<Dwa>, TaxonomyError> {
    let mut ctx = LoadContext::default();
    let rows = ctx.read_rows(SourceFile::Dwas, reader);
    let mut out: BTreeMap<String, Dwa> = BTreeMap::new();
    for row in rows {
        if out.contains_key(&row.fields[0]) {
            ctx.reject(SourceFile::Dwas, row.line, IssueKind::DuplicateId { id: row.fields[0].clone() });
            continue;
        }
        let [dwa_id, title]: [String; 2] = row.fields.try_into().expect("column count checked");
        out.insert(dwa_id.clone(), Dwa { dwa_id, title });
    }
    let report = ctx.finish();
    if !report.is_clean() {
        return Err(TaxonomyError::Invalid(report));
    }
    Ok(out.into_values().collect())
}

struct Row {
    line: u64,
    fields: Vec<String>,
}

#[derive(Default)]
struct LoadContext {
    rows_in: BTreeMap<SourceFile, usize>,
    rejected: BTreeMap<SourceFile, BTreeSet<u64>>,
    issues: Vec<RowIssue>,
}

impl LoadContext {
    fn reject(&mut self, file: SourceFile, line: u64, kind: IssueKind) {
        self.rejected.entry(file).or_default().insert(line);
        self.issues.push(RowIssue { file, line, kind });
    }

    /// Reads every data row, rejecting ones with the wrong shape or empty fields.
    fn read_rows<R: Read>(&mut self, file: SourceFile, reader: R) -> Vec<Row> {
        let columns = file.columns();
        self.rows_in.entry(file).or_insert(0);
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut out = Vec::new();
        let mut records = rdr.records();
        match records.next() {
            None => {
                self.reject(file, 1, IssueKind::BadHeader { expected: columns.join(","), found: String::new() });
                return out;
            }
            Some(Err(e)) => {
                self.reject(file, 1, IssueKind::Malformed { message: e.to_string() });
                return out;
            }
            Some(Ok(header)) => {
                let found: Vec<&str> = header.iter().map(|h| h.trim_start_matches('\u{feff}')).collect();
                if found != columns {
                    self.reject(file, 1, IssueKind::BadHeader { expected: columns.join(","), found: found.join(",") });
                    return out;
                }
            }
        }
        for result in records {
            *self.rows_in.get_mut(&file).expect("initialized") += 1;
            let record = match result {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    self.reject(file, line, IssueKind::Malformed { message: e.to_string() });
                    continue;
                }
            };
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != columns.len() {
                self.reject(file, line, IssueKind::ColumnCount { expected: columns.len(), found: record.len() });
                continue;
            }
            let fields: Vec<String> = record.iter().map(|f| f.trim().to_string()).collect();
            if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
                self.reject(file, line, IssueKind::EmptyField { column: columns[pos].to_string() });
                continue;
            }
            out.push(Row { line, fields });
        }
        out
    }

    fn finish(self) -> LoadReport {
        let mut files = BTreeMap::new();
        for (file, rows_in) in &self.rows_in {
            let rejected = self.rejected.get(file).map_or(0, |s| s.iter().filter(|&&l| l > 1).count());
            files.insert(
                *file,
                FileStats { rows_in: *rows_in, rows_loaded: rows_in - rejected, rows_rejected: rejected },
            );
        }
        let mut issues = self.issues;
        issues.sort_by_key(|i| (i.file, i.line));
        LoadReport { files, issues }
    }
}

impl Taxonomy {
    /// Builds a taxonomy from in-memory parts, enforcing the same invariants
    /// as the loader. Issues carry line 0 since there is no source file.
    pub fn from_parts(
        dwas: Vec<Dwa>,
        tasks: Vec<Task>,
        occupations: Vec<(String, String)>,
    ) -> Result<Taxonomy, TaxonomyError> {
        let mut ctx = LoadContext::default();
        let mut dwa_map = BTreeMap::new();
        for d in dwas {
            if d.dwa_id.is_empty() || d.title.is_empty() {
                ctx.reject(SourceFile::Dwas, 0, IssueKind::EmptyField { column: "dwa_id/title".into() });
            } else if dwa_map.contains_key(&d.dwa_id) {
                ctx.reject(SourceFile::Dwas, 0, IssueKind::DuplicateId { id: d.dwa_id });
            } else {
                dwa_map.insert(d.dwa_id.clone(), d);
            }
        }
        let mut occ_map = BTreeMap::new();
        for (soc_code, title) in occupations {
            if occ_map.contains_key(&soc_code) {
                ctx.reject(SourceFile::Occupations, 0, IssueKind::DuplicateId { id: soc_code });
            } else {
                occ_map.insert(soc_code.clone(), Occupation { soc_code, title, task_ids: BTreeSet::new() });
            }
        }
        let mut task_map = BTreeMap::new();
        for t in tasks {
            if task_map.contains_key(&t.task_id) {
                ctx.reject(SourceFile::Tasks, 0, IssueKind::DuplicateId { id: t.task_id });
                continue;
            }
            if t.importance.is_zero() || t.importance.is_negative() {
                ctx.reject(SourceFile::Tasks, 0, IssueKind::NonPositiveImportance { value: t.importance.to_string() });
                continue;
            }
            if t.dwa_ids.is_empty() {
                ctx.reject(SourceFile::Tasks, 0, IssueKind::TaskHasNoDwas { task_id: t.task_id });
                continue;
            }
            if let Some(missing) = t.dwa_ids.iter().find(|d| !dwa_map.contains_key(*d)) {
                ctx.reject(
                    SourceFile::TaskDwa,
                    0,
                    IssueKind::DanglingReference { target: "DWA".into(), id: missing.clone() },
                );
                continue;
            }
            match occ_map.get_mut(&t.occupation_code) {
                Some(occ) => {
                    occ.task_ids.insert(t.task_id.clone());
                    task_map.insert(t.task_id.clone(), t);
                }
                None => ctx.reject(
                    SourceFile::Tasks,
                    0,
                    IssueKind::DanglingReference { target: "occupation".into(), id: t.occupation_code },
                ),
            }
        }
        for occ in occ_map.values().filter(|o| o.task_ids.is_empty()) {
            ctx.reject(SourceFile::Occupations, 0, IssueKind::OccupationHasNoTasks { soc_code: occ.soc_code.clone() });
        }
        if !ctx.issues.is_empty() {
            return Err(TaxonomyError::Invalid(ctx.finish()));
        }
        Ok(Taxonomy { dwas: dwa_map, tasks: task_map, occupations: occ_map })
    }

    pub fn dwas(&self) -> &BTreeMap<String, Dwa> {
        &self.dwas
    }

    pub fn tasks(&self) -> &BTreeMap<String, Task> {
        &self.tasks
    }

    pub fn occupations(&self) -> &BTreeMap<String, Occupation> {
        &self.occupations
    }

    pub fn dwa(&self, id: &str) -> Option<&Dwa> {
        self.dwas.get(id)
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn occupation(&self, soc_code: &str) -> Option<&Occupation> {
        self.occupations.get(soc_code)
    }

    /// DWAs referenced by at least one task.
    pub fn referenced_dwa_ids(&self) -> BTreeSet<&str> {
        self.tasks.values().flat_map(|t| t.dwa_ids.iter().map(String::as_str)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaxonomySummary {
    pub occupations: usize,
    pub tasks: usize,
    pub dwas: usize,
    pub min_dwas_per_task: usize,
    pub max_dwas_per_task: usize,
    pub min_tasks_per_occupation: usize,
    pub max_tasks_per_occupation: usize,
}

pub fn taxonomy_report(t: &Taxonomy) -> TaxonomySummary {
    let per_task = t.tasks.values().map(|x| x.dwa_ids.len());
    let per_occ = t.occupations.values().map(|x| x.task_ids.len());
    TaxonomySummary {
        occupations: t.occupations.len(),
        tasks: t.tasks.len(),
        dwas: t.dwas.len(),
        min_dwas_per_task: per_task.clone().min().unwrap_or(0),
        max_dwas_per_task: per_task.max().unwrap_or(0),
        min_tasks_per_occupation: per_occ.clone().min().unwrap_or(0),
        max_tasks_per_occupation: per_occ.max().unwrap_or(0),
    }
}
