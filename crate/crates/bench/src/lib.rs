//! Synthetic inputs shaped like the full occupational taxonomy, for benchmarks.

use oai_core::ensemble::fuse_all;
use oai_core::taxonomy::load_taxonomy_from_readers;
use oai_core::{FusedScore, ScoreRecord, Taxonomy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

/// Input files as CSV text.
pub struct Dataset {
    pub dwas: String,
    pub tasks: String,
    pub occupations: String,
    pub task_dwa: String,
    pub scores: Vec<ScoreRecord>,
}

/// Random taxonomy with 5 to 30 tasks per occupation, 1 to 4 DWAs per task
/// and four models scoring every DWA.
pub fn dataset(occupations: usize, dwas: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = String::from("dwa_id,title\n");
    for i in 0..dwas {
        let _ = writeln!(d, "DW{i:05},Activity {i}");
    }
    let mut o = String::from("soc_code,title\n");
    let mut t = String::from("task_id,occupation_code,title,importance\n");
    let mut e = String::from("task_id,dwa_id\n");
    let mut n_tasks = 0;
    for occ in 0..occupations {
        let code = format!("{:02}-{:04}.00", 11 + occ % 43, occ);
        let _ = writeln!(o, "{code},Occupation {occ}");
        for _ in 0..rng.gen_range(5..=30) {
            let id = format!("TK{n_tasks:06}");
            let importance = rng.gen_range(100..=500) as f64 / 100.0;
            let _ = writeln!(t, "{id},{code},Task {n_tasks},{importance:.2}");
            for _ in 0..rng.gen_range(1..=4) {
                let _ = writeln!(e, "{id},DW{:05}", rng.gen_range(0..dwas));
            }
            n_tasks += 1;
        }
    }
    let mut scores = Vec::with_capacity(dwas * 4);
    for i in 0..dwas {
        for model in ["m1", "m2", "m3", "m4"] {
            scores.push(ScoreRecord {
                dwa_id: format!("DW{i:05}"),
                model_id: model.into(),
                tech_level: rng.gen_range(0..=3),
                risk_score: rng.gen_range(1..=5),
                reasoning: String::new(),
            });
        }
    }
    Dataset { dwas: d, tasks: t, occupations: o, task_dwa: e, scores }
}

impl Dataset {
    pub fn taxonomy(&self) -> Taxonomy {
        load_taxonomy_from_readers(
            self.dwas.as_bytes(),
            self.tasks.as_bytes(),
            self.occupations.as_bytes(),
            self.task_dwa.as_bytes(),
        )
        .expect("generated taxonomy is valid")
        .0
    }

    pub fn fused(&self) -> Vec<FusedScore> {
        fuse_all(&self.scores).expect("generated scores are valid")
    }
}

/// `n` paired observations with a shared latent component.
pub fn paired(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: u8 = rng.gen_range(1..=5);
            (z as f64, (z as i32 + rng.gen_range(-1..=1)).clamp(1, 5) as f64)
        })
        .collect()
}
