//! The bundled synthetic dataset: five occupations, twelve tasks, twenty
//! DWAs scored by four models, plus a small human-review file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub const DWAS_CSV: &str = include_str!("../fixtures/dwas.csv");
pub const TASKS_CSV: &str = include_str!("../fixtures/tasks.csv");
pub const OCCUPATIONS_CSV: &str = include_str!("../fixtures/occupations.csv");
pub const TASK_DWA_CSV: &str = include_str!("../fixtures/task_dwa.csv");
pub const SCORES_CSV: &str = include_str!("../fixtures/scores.csv");
pub const HITL_CSV: &str = include_str!("../fixtures/hitl.csv");

pub const FILES: [(&str, &str); 6] = [
    ("dwas.csv", DWAS_CSV),
    ("tasks.csv", TASKS_CSV),
    ("occupations.csv", OCCUPATIONS_CSV),
    ("task_dwa.csv", TASK_DWA_CSV),
    ("scores.csv", SCORES_CSV),
    ("hitl.csv", HITL_CSV),
];

/// Writes every fixture file into `dir`, creating it if needed.
pub fn materialize(dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    FILES
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}

/// The fixture taxonomy, loaded from the embedded files.
pub fn taxonomy() -> crate::taxonomy::Taxonomy {
    let (taxonomy, _) = crate::taxonomy::load_taxonomy_from_readers(
        DWAS_CSV.as_bytes(),
        TASKS_CSV.as_bytes(),
        OCCUPATIONS_CSV.as_bytes(),
        TASK_DWA_CSV.as_bytes(),
    )
    .expect("bundled fixture is valid");
    taxonomy
}

/// The fixture's four-model scores.
pub fn scores() -> Vec<crate::ensemble::ScoreRecord> {
    crate::ensemble::read_scores(SCORES_CSV.as_bytes()).expect("bundled fixture is valid")
}
