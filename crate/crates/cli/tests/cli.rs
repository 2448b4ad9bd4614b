//! Drives the `oai` binary end to end on the bundled fixture.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const GOLDEN_OAI_CSV: &str = "soc_code,title,oai,scenario
43-9021.00,Data Entry Keyers,0.8846,baseline
15-2051.00,Data Scientists,0.7557,baseline
27-3041.00,Editors,0.5800,baseline
29-1141.00,Registered Nurses,0.1884,baseline
47-2181.00,Roofers,0.0831,baseline
";

fn oai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oai")).args(args).env_remove("OAI_OUT_DIR").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Materializes the fixture into a fresh directory.
fn fixture() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    let o = oai(&["--fixture", p(&fx)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (tmp, fx)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fixture_flag_writes_all_inputs() {
    let (_tmp, fx) = fixture();
    for name in ["dwas.csv", "tasks.csv", "occupations.csv", "task_dwa.csv", "scores.csv", "hitl.csv"] {
        assert!(fx.join(name).is_file(), "{name}");
    }
}

#[test]
fn validate_accepts_fixture() {
    let (tmp, fx) = fixture();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&out.join("validation.json"));
    assert_eq!(v["valid"], true);
    assert_eq!(v["summary"]["dwas"], 20);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "validate");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
}

#[test]
fn validate_reports_dangling_reference_with_line() {
    let (tmp, fx) = fixture();
    let mut edges = fs::read_to_string(fx.join("task_dwa.csv")).unwrap();
    edges.push_str("T01,D99\n");
    let line = edges.lines().count();
    fs::write(fx.join("task_dwa.csv"), edges).unwrap();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "validate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("D99"), "{err}");
    assert!(err.contains(&format!("task_dwa.csv:{line}:")), "{err}");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn validate_missing_file_is_input_error() {
    let (tmp, fx) = fixture();
    fs::remove_file(fx.join("tasks.csv")).unwrap();
    let o = oai(&["--data", p(&fx), "--out", p(&tmp.path().join("out")), "validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tasks.csv"));
}

#[test]
fn compute_baseline_matches_golden() {
    let (tmp, fx) = fixture();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "compute", "--scenario", "baseline"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("oai.csv")).unwrap(), GOLDEN_OAI_CSV);
    let s = json(&out.join("summary.json"));
    assert_eq!(
        (s["counts"]["high"].as_u64(), s["counts"]["medium"].as_u64(), s["counts"]["low"].as_u64()),
        (Some(2), Some(1), Some(2))
    );
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["scenarios"], serde_json::json!(["baseline"]));
    let names: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["oai.csv", "summary.json", "oai_density.svg", "matrix_heatmap.svg"]);
}

#[test]
fn compute_is_byte_identical_across_runs() {
    let (tmp, fx) = fixture();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = oai(&["--data", p(&fx), "--out", p(&out), "sensitivity"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
            .collect();
        files.sort();
        files
    };
    let a = run("a");
    assert_eq!(a.len(), 10);
    assert_eq!(a, run("b"));
}

#[test]
fn zero_matrix_puts_everything_in_low() {
    let (tmp, fx) = fixture();
    let matrix = tmp.path().join("zero.json");
    fs::write(&matrix, r#"{"name": "zero", "cells": [[0,0,0,0,0],[0,0,0,0,0],[0,0,0,0,0],[0,0,0,0,0]]}"#).unwrap();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "--csv-only", "compute", "--matrix", p(&matrix)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["counts"]["low"], 5);
    assert_eq!(s["scenario"], "zero");
    assert!(!out.join("oai_density.svg").exists());
    let m = json(&out.join("manifest.json"));
    assert!(m["omitted"][0].as_str().unwrap().contains("csv-only"));
    assert!(m["inputs"].as_array().unwrap().iter().any(|i| i["role"] == "matrix"));
}

#[test]
fn malformed_matrix_is_input_error() {
    let (tmp, fx) = fixture();
    let matrix = tmp.path().join("bad.json");
    fs::write(&matrix, r#"{"name": "bad", "cells": [[0,0,0,0,0],[0,0,0,0,0],[0,0,0,0,2],[0,0,0,0,0]]}"#).unwrap();
    let o = oai(&["--data", p(&fx), "--out", p(&tmp.path().join("out")), "compute", "--matrix", p(&matrix)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("R=5"));
}

#[test]
fn unscored_dwas_fail_precondition_and_are_listed() {
    let (tmp, fx) = fixture();
    let scores = fs::read_to_string(fx.join("scores.csv")).unwrap();
    let kept: String =
        scores.split_inclusive('\n').filter(|l| !l.starts_with("D07,") && !l.starts_with("D19,")).collect();
    fs::write(fx.join("scores.csv"), kept).unwrap();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "compute"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("D07") && err.contains("D19"), "{err}");
    assert!(!out.join("oai.csv").exists());
}

#[test]
fn sensitivity_reports_two_comparisons() {
    let (tmp, fx) = fixture();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "sensitivity"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = json(&out.join("sensitivity.json"));
    let pairs: Vec<(&str, &str, f64)> = s
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["a"].as_str().unwrap(), c["b"].as_str().unwrap(), c["rho"].as_f64().unwrap()))
        .collect();
    assert_eq!(pairs, [("baseline", "aggressive", 1.0), ("baseline", "conservative", 1.0)]);
    assert_eq!(fs::read_to_string(out.join("oai.csv")).unwrap(), GOLDEN_OAI_CSV);
    assert!(fs::read_to_string(out.join("oai_conservative.csv")).unwrap().contains("Editors,0.4000,conservative"));
}

#[test]
fn compare_with_itself_and_with_a_different_taxonomy() {
    let (tmp, fx) = fixture();
    let base = tmp.path().join("base");
    assert!(oai(&["--data", p(&fx), "--out", p(&base), "compute"]).status.success());
    let table = base.join("oai.csv");

    let same = tmp.path().join("same");
    let o = oai(&["--out", p(&same), "compare", p(&table), p(&table)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&same.join("sensitivity.json"))[0]["rho"], 1.0);

    let text = fs::read_to_string(&table).unwrap();
    let other = tmp.path().join("other.csv");
    fs::write(&other, text.replace("47-2181.00", "47-2181.01")).unwrap();
    let o = oai(&["--out", p(&tmp.path().join("x")), "compare", p(&table), p(&other)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("47-2181.01"));
}

#[test]
fn fuse_then_sample_is_reproducible() {
    let (tmp, fx) = fixture();
    let fused_dir = tmp.path().join("fused");
    let o = oai(&["--data", p(&fx), "--out", p(&fused_dir), "fuse"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fused = fused_dir.join("fused.csv");
    assert_eq!(fs::read_to_string(&fused).unwrap().lines().count(), 21);

    let draw = |name: &str| {
        let out = tmp.path().join(name);
        let o = oai(&["--out", p(&out), "sample", "--fused", p(&fused), "--counts", "3,2,4", "--seed", "42"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (fs::read_to_string(out.join("sample.csv")).unwrap(), json(&out.join("manifest.json")))
    };
    let (a, manifest) = draw("s1");
    assert_eq!(a, draw("s2").0);
    let ids: Vec<&str> = a.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(ids, ["D14", "D08", "D01", "D12", "D19", "D11", "D07", "D20", "D10"]);
    assert_eq!(manifest["seed"], 42);
}

#[test]
fn oversized_sample_request_is_clamped_with_warning() {
    let (tmp, fx) = fixture();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "sample", "--counts", "49,17,34", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sample.csv")).unwrap().lines().count(), 21);
    assert_eq!(json(&out.join("manifest.json"))["warnings"].as_array().unwrap().len(), 3);
}

#[test]
fn hitl_writes_table_and_tests() {
    let (tmp, fx) = fixture();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "hitl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("table2.csv")).unwrap(),
        "stratum,n_dwas,ai,tech,mgmt,n_ai,n_tech,n_mgmt\n\
         consensus,3,2.33,3.17,2.78,12,6,9\n\
         slight_friction,3,2.08,2.33,2.89,12,6,9\n\
         severe_divergence,3,3.25,4.00,4.11,12,6,9\n"
    );
    let t = json(&out.join("tests.json"));
    assert_eq!(t["wilcoxon"]["statistic"], 45.0);
    assert!((t["ordered_logit"]["beta"].as_f64().unwrap() - 1.070226267198).abs() < 1e-6);
    assert_eq!(t["spearman"].as_array().unwrap().len(), 6);
    assert!(out.join("hitl_gap.svg").is_file());
}

#[test]
fn hitl_with_one_human_cohort_only_reports_correlations() {
    let (tmp, fx) = fixture();
    let text = fs::read_to_string(fx.join("hitl.csv")).unwrap();
    let kept: String = text.split_inclusive('\n').filter(|l| !l.contains(",ai,") && !l.contains(",mgmt,")).collect();
    fs::write(fx.join("hitl.csv"), kept).unwrap();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "hitl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = json(&out.join("tests.json"));
    assert!(t["wilcoxon"].is_null());
    assert!(t["ordered_logit"].is_null());
    let cohorts: Vec<&str> = t["spearman"].as_array().unwrap().iter().map(|c| c["cohort"].as_str().unwrap()).collect();
    assert_eq!(cohorts, ["tech", "human", "tech", "human"]);
    assert!(!t["warnings"].as_array().unwrap().is_empty());
    assert!(!json(&out.join("manifest.json"))["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn hitl_unknown_dwa_is_input_error() {
    let (tmp, fx) = fixture();
    let mut text = fs::read_to_string(fx.join("hitl.csv")).unwrap();
    text.push_str("D77,tech-01,tech,1,3\n");
    fs::write(fx.join("hitl.csv"), text).unwrap();
    let o = oai(&["--data", p(&fx), "--out", p(&tmp.path().join("out")), "hitl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("D77"));
}

#[test]
fn unwritable_output_is_io_error() {
    let (tmp, fx) = fixture();
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let o = oai(&["--data", p(&fx), "--out", p(&blocker.join("out")), "compute"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn output_dir_from_environment() {
    let (tmp, fx) = fixture();
    let out = tmp.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_oai"))
        .args(["--data", p(&fx), "compute"])
        .env("OAI_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("oai.csv").is_file());
}

#[test]
fn score_rejects_bad_endpoint_config() {
    let (tmp, fx) = fixture();
    let endpoints = tmp.path().join("endpoints.json");
    fs::write(&endpoints, r#"[{"base_url": "http://127.0.0.1:1/v1", "model_id": "m", "temprature": 0}]"#).unwrap();
    let o = oai(&["--data", p(&fx), "--out", p(&tmp.path().join("out")), "score", "--endpoints", p(&endpoints)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn score_with_no_reachable_endpoint_fails_precondition() {
    let (tmp, fx) = fixture();
    let endpoints = tmp.path().join("endpoints.json");
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    fs::write(
        &endpoints,
        format!(r#"[{{"base_url": "http://{addr}/v1", "model_id": "m", "max_retries": 0, "timeout": 2}}]"#),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "score", "--endpoints", p(&endpoints)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("failures.csv")).unwrap().lines().count(), 21);
}

/// Answers every request with a fixed valid rating.
fn serve(listener: TcpListener, n: usize) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        for stream in listener.incoming().take(n) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let content = r#"{"tech_level": 2, "risk_score": 3, "reasoning": "routine, checked downstream"}"#;
            let text = serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] })
                .to_string();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
        }
    })
}

#[test]
fn score_against_local_server_then_fuse() {
    let (tmp, fx) = fixture();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = serve(listener, 20);
    let endpoints = tmp.path().join("endpoints.json");
    fs::write(&endpoints, format!(r#"[{{"base_url": "http://{addr}/v1", "model_id": "local"}}]"#)).unwrap();
    let out = tmp.path().join("scored");
    let o = oai(&["--data", p(&fx), "--out", p(&out), "score", "--endpoints", p(&endpoints), "--concurrency", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    server.join().unwrap();
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 21);
    assert!(scores.contains("D01,local,2,3,\"routine, checked downstream\""));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["outputs"][0]["name"], "scores.csv");

    let fused = tmp.path().join("fused");
    let o = oai(&["--out", p(&fused), "fuse", "--scores", p(&out.join("scores.csv"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fs::read_to_string(fused.join("fused.csv"))
        .unwrap()
        .contains("D20,1,2.000000,3.000000,2,3,0.000000,consensus"));
}
