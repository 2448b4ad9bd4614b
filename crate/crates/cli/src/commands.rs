use crate::{
    resolve, Cli, CliError, Command, CompareArgs, ComputeArgs, FusedArgs, HitlArgs, SampleArgs, ScoreArgs,
    SensitivityArgs, TaxonomyArgs,
};
use oai_client::{ClientError, EndpointConfig, HttpTransport, ScoreOptions};
use oai_core::aggregate::AggregateError;
use oai_core::ensemble::{self, EnsembleError, FusedRow, Stratum};
use oai_core::matrix::{self, MappingMatrix, MatrixError, ScenarioId};
use oai_core::protocol::sha256_hex;
use oai_core::report::{self, FileEntry, Formats, RenderedFile, ReportError, ReportInput};
use oai_core::stats::{analyze_hitl_with_reference, read_hitl, StatsError};
use oai_core::taxonomy::{self, load_taxonomy_from_readers, Taxonomy, TaxonomyError};
use oai_core::{compute_all, fixture, OaiTable};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize)]
struct InputDigest {
    role: &'static str,
    path: String,
    sha256: String,
}

/// Written next to every run's outputs. Holds no timestamps or output
/// paths so that identical runs produce identical manifests.
#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    scenarios: Vec<String>,
    seed: Option<u64>,
    outputs: Vec<FileEntry>,
    omitted: Vec<String>,
    warnings: Vec<String>,
}

/// Accumulates what one run read and produced.
struct Run {
    command: &'static str,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    scenarios: Vec<String>,
    seed: Option<u64>,
    warnings: Vec<String>,
}

impl Run {
    fn new(cli: &Cli, command: &Command) -> Self {
        Run {
            command: command.name(),
            config: serde_json::to_value(cli).expect("serializable config"),
            inputs: Vec::new(),
            scenarios: Vec::new(),
            seed: None,
            warnings: Vec::new(),
        }
    }

    /// Reads an input file whole and records its digest.
    fn read(&mut self, role: &'static str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(InputDigest { role, path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    fn manifest(self, outputs: Vec<FileEntry>, omitted: Vec<String>) -> RenderedFile {
        let manifest = RunManifest {
            tool: "oai",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            scenarios: self.scenarios,
            seed: self.seed,
            outputs,
            omitted,
            warnings: self.warnings,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
        bytes.push(b'\n');
        (MANIFEST_FILE.to_string(), bytes)
    }

    /// Writes `files` plus the manifest atomically into `out`.
    fn finish(self, out: &Path, mut files: Vec<RenderedFile>, omitted: Vec<String>) -> Result<Vec<String>> {
        let outputs = files
            .iter()
            .map(|(name, bytes)| FileEntry { name: name.clone(), bytes: bytes.len(), sha256: sha256_hex(bytes) })
            .collect();
        files.push(self.manifest(outputs, omitted));
        report::write_files(&files, out).map_err(report_err)?;
        Ok(files.into_iter().map(|(name, _)| name).collect())
    }

    /// Manifest only, for outputs already written by someone else.
    fn finish_existing(self, out: &Path, outputs: Vec<FileEntry>) -> Result<Vec<String>> {
        let manifest = self.manifest(outputs, Vec::new());
        report::write_files(std::slice::from_ref(&manifest), out).map_err(report_err)?;
        Ok(vec![manifest.0])
    }
}

fn taxonomy_err(e: TaxonomyError) -> CliError {
    match e {
        TaxonomyError::Invalid(report) => CliError::Input(
            std::iter::once(format!("taxonomy has {} invalid row(s)", report.issues.len()))
                .chain(report.issues.iter().map(|i| format!("  {i}")))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        TaxonomyError::Io { .. } => CliError::Input(e.to_string()),
    }
}

fn ensemble_err(path: &Path) -> impl Fn(EnsembleError) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn matrix_err(e: MatrixError) -> CliError {
    CliError::Input(e.to_string())
}

fn aggregate_err(e: AggregateError) -> CliError {
    CliError::Precondition(e.to_string())
}

fn report_err(e: ReportError) -> CliError {
    match e {
        ReportError::Io { .. } => CliError::Io(e.to_string()),
        ReportError::Parse(_) => CliError::Input(e.to_string()),
        _ => CliError::Precondition(e.to_string()),
    }
}

fn stats_err(path: &Path) -> impl Fn(StatsError) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Runs the parsed command line and returns the names of the files written.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    if let Some(dir) = &cli.fixture {
        let written = fixture::materialize(dir)
            .map_err(|e| CliError::Io(format!("cannot write fixture into {}: {e}", dir.display())))?;
        log::info!("fixture written to {}", dir.display());
        if cli.command.is_none() {
            return Ok(written.iter().map(|p| p.display().to_string()).collect());
        }
    }
    let Some(command) = &cli.command else {
        return Err(CliError::Input("no subcommand given; see --help".into()));
    };
    let run = Run::new(cli, command);
    let dir = cli.input_dir();
    let formats = if cli.csv_only { Formats::csv_only() } else { Formats::default() };
    match command {
        Command::Validate(args) => validate(run, &dir, args, &cli.out),
        Command::Fuse(args) => fuse(run, &dir, args, &cli.out),
        Command::Compute(args) => compute(run, &dir, args, formats, &cli.out),
        Command::Sensitivity(args) => sensitivity(run, &dir, args, formats, &cli.out),
        Command::Compare(args) => compare(run, args, &cli.out),
        Command::Sample(args) => sample(run, &dir, args, &cli.out),
        Command::Hitl(args) => hitl(run, &dir, args, formats, &cli.out),
        Command::Score(args) => score(run, &dir, args, &cli.out),
    }
}

fn load_taxonomy(run: &mut Run, dir: &Path, args: &TaxonomyArgs) -> Result<(Taxonomy, taxonomy::LoadReport)> {
    let dwas = run.read("dwas", &resolve(&args.dwas, dir, "dwas.csv"))?;
    let tasks = run.read("tasks", &resolve(&args.tasks, dir, "tasks.csv"))?;
    let occupations = run.read("occupations", &resolve(&args.occupations, dir, "occupations.csv"))?;
    let task_dwa = run.read("task_dwa", &resolve(&args.task_dwa, dir, "task_dwa.csv"))?;
    load_taxonomy_from_readers(&dwas[..], &tasks[..], &occupations[..], &task_dwa[..]).map_err(taxonomy_err)
}

/// Reads fused.csv if given, otherwise fuses scores.csv in memory.
fn load_fused(run: &mut Run, dir: &Path, args: &FusedArgs) -> Result<Vec<FusedRow>> {
    if let Some(path) = &args.fused {
        let bytes = run.read("fused", path)?;
        return ensemble::read_fused(&bytes[..]).map_err(ensemble_err(path));
    }
    let path = resolve(&args.scores.scores, dir, "scores.csv");
    let bytes = run.read("scores", &path)?;
    let records = ensemble::read_scores(&bytes[..]).map_err(ensemble_err(&path))?;
    let fused = ensemble::fuse_all(&records).map_err(ensemble_err(&path))?;
    Ok(fused.iter().map(FusedRow::from).collect())
}

#[derive(Serialize)]
struct Validation {
    valid: bool,
    summary: taxonomy::TaxonomySummary,
    report: taxonomy::LoadReport,
}

fn validate(mut run: Run, dir: &Path, args: &TaxonomyArgs, out: &Path) -> Result<Vec<String>> {
    let (tax, load) = load_taxonomy(&mut run, dir, args)?;
    let summary = taxonomy::taxonomy_report(&tax);
    println!("valid: {} occupations, {} tasks, {} DWAs", summary.occupations, summary.tasks, summary.dwas);
    let mut body = serde_json::to_vec_pretty(&Validation { valid: true, summary, report: load }).expect("serializable");
    body.push(b'\n');
    run.finish(out, vec![("validation.json".into(), body)], Vec::new())
}

fn fuse(mut run: Run, dir: &Path, args: &crate::ScoresArgs, out: &Path) -> Result<Vec<String>> {
    let path = resolve(&args.scores, dir, "scores.csv");
    let bytes = run.read("scores", &path)?;
    let records = ensemble::read_scores(&bytes[..]).map_err(ensemble_err(&path))?;
    let fused = ensemble::fuse_all(&records).map_err(ensemble_err(&path))?;
    let mut counts: BTreeMap<Stratum, usize> = BTreeMap::new();
    for f in &fused {
        *counts.entry(f.stratum).or_default() += 1;
    }
    let mut buf = Vec::new();
    ensemble::write_fused(&mut buf, &fused).map_err(|e| CliError::Io(e.to_string()))?;
    println!(
        "fused {} DWAs: {}",
        fused.len(),
        Stratum::ALL.iter().map(|s| format!("{s}={}", counts.get(s).unwrap_or(&0))).collect::<Vec<_>>().join(", ")
    );
    run.finish(out, vec![("fused.csv".into(), buf)], Vec::new())
}

fn table_for(tax: &Taxonomy, fused: &[FusedRow], matrix: &MappingMatrix) -> Result<OaiTable> {
    compute_all(tax, fused, matrix).map_err(aggregate_err)
}

fn compute(mut run: Run, dir: &Path, args: &ComputeArgs, formats: Formats, out: &Path) -> Result<Vec<String>> {
    let (tax, _) = load_taxonomy(&mut run, dir, &args.taxonomy)?;
    let fused = load_fused(&mut run, dir, &args.fused)?;
    let matrix = match &args.matrix {
        Some(path) => {
            let text = run.read("matrix", path)?;
            let text =
                String::from_utf8(text).map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))?;
            let loaded = matrix::parse_matrix_json(&text).map_err(matrix_err)?;
            for w in &loaded.warnings {
                run.warn(format!("matrix: {w}"));
            }
            loaded.matrix
        }
        None => {
            let id: ScenarioId = args.scenario.unwrap_or(crate::ScenarioArg::Baseline).into();
            matrix::preset(&id).expect("preset scenario")
        }
    };
    let table = table_for(&tax, &fused, &matrix)?;
    run.scenarios.push(table.scenario.label().to_string());
    let input = ReportInput { tables: vec![&table], matrix: Some(&matrix), ..Default::default() };
    let (files, omitted) = report::render_report(&input, formats).map_err(report_err)?;
    let s = report::summary(&table).map_err(report_err)?;
    println!(
        "{} occupations under {}: high {}, medium {}, low {}",
        s.n, s.scenario, s.counts.high, s.counts.medium, s.counts.low
    );
    run.finish(out, files, omitted)
}

fn sensitivity(mut run: Run, dir: &Path, args: &SensitivityArgs, formats: Formats, out: &Path) -> Result<Vec<String>> {
    let (tax, _) = load_taxonomy(&mut run, dir, &args.taxonomy)?;
    let fused = load_fused(&mut run, dir, &args.fused)?;
    let matrices: Vec<MappingMatrix> =
        ScenarioId::PRESETS.iter().map(|id| matrix::preset(id).expect("preset scenario")).collect();
    let tables = matrices.iter().map(|m| table_for(&tax, &fused, m)).collect::<Result<Vec<_>>>()?;
    let comparisons = tables[1..]
        .iter()
        .map(|t| report::scenario_compare(&tables[0], t))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(report_err)?;
    for c in &comparisons {
        println!("{} vs {}: rho = {:.4} (p = {:.3e}, n = {})", c.a, c.b, c.rho, c.p, c.n);
    }
    run.scenarios = tables.iter().map(|t| t.scenario.label().to_string()).collect();
    let input = ReportInput { tables: tables.iter().collect(), comparisons, matrix: Some(&matrices[0]), hitl: None };
    let (files, omitted) = report::render_report(&input, formats).map_err(report_err)?;
    run.finish(out, files, omitted)
}

fn compare(mut run: Run, args: &CompareArgs, out: &Path) -> Result<Vec<String>> {
    let mut read = |role, path: &PathBuf| -> Result<OaiTable> {
        let bytes = run.read(role, path)?;
        report::read_oai_csv(&bytes[..]).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    };
    let a = read("a", &args.a)?;
    let b = read("b", &args.b)?;
    let c = report::scenario_compare(&a, &b).map_err(report_err)?;
    println!("{} vs {}: rho = {:.4} (p = {:.3e}, n = {})", c.a, c.b, c.rho, c.p, c.n);
    run.scenarios = vec![a.scenario.label().to_string(), b.scenario.label().to_string()];
    let input = ReportInput { comparisons: vec![c], ..Default::default() };
    let (files, omitted) = report::render_report(&input, Formats::csv_only()).map_err(report_err)?;
    run.finish(out, files, omitted)
}

fn sample(mut run: Run, dir: &Path, args: &SampleArgs, out: &Path) -> Result<Vec<String>> {
    let fused = load_fused(&mut run, dir, &args.fused)?;
    let counts: BTreeMap<Stratum, usize> = Stratum::ALL.into_iter().zip(args.counts).collect();
    let drawn = ensemble::stratified_sample(fused.iter().map(|f| (f.dwa_id.as_str(), f.stratum)), &counts, args.seed);
    for s in &drawn.clamped {
        run.warn(format!("{s}: requested {} but only {} available", counts[s], drawn.drawn[s].len()));
    }
    run.seed = Some(args.seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["stratum", "draw", "dwa_id"]).map_err(csv_err)?;
    for stratum in Stratum::ALL {
        for (i, id) in drawn.drawn[&stratum].iter().enumerate() {
            w.write_record([stratum.as_str(), &(i + 1).to_string(), id]).map_err(csv_err)?;
        }
    }
    let buf = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    println!("drew {} DWAs with seed {}", drawn.total(), args.seed);
    run.finish(out, vec![("sample.csv".into(), buf)], Vec::new())
}

fn hitl(mut run: Run, dir: &Path, args: &HitlArgs, formats: Formats, out: &Path) -> Result<Vec<String>> {
    let fused = load_fused(&mut run, dir, &args.fused)?;
    let path = resolve(&args.hitl, dir, "hitl.csv");
    let bytes = run.read("hitl", &path)?;
    let obs = read_hitl(&bytes[..], &fused).map_err(stats_err(&path))?;
    let analysis = analyze_hitl_with_reference(&obs, &fused);
    for w in &analysis.warnings {
        run.warn(w.clone());
    }
    if let Some(w) = &analysis.wilcoxon {
        println!("wilcoxon: W+ = {}, n = {}, p = {:.4}", w.statistic, w.n_effective, w.p_value);
    }
    if let Some(fit) = &analysis.ordered_logit {
        println!("ordered logit: beta = {:.4} (se {:.4}), p = {:.4}", fit.beta, fit.std_err_beta, fit.p_value);
    }
    let input = ReportInput { hitl: Some(&analysis), ..Default::default() };
    let (files, omitted) = report::render_report(&input, formats).map_err(report_err)?;
    run.finish(out, files, omitted)
}

fn client_err(e: ClientError) -> CliError {
    match e {
        ClientError::Config(_) | ClientError::Existing { .. } => CliError::Input(e.to_string()),
        ClientError::AllFailed(_) => CliError::Precondition(e.to_string()),
        ClientError::Io { .. } => CliError::Io(e.to_string()),
    }
}

#[derive(Serialize)]
struct EndpointEcho<'a> {
    model_id: &'a str,
    base_url: &'a str,
    temperature: f64,
    max_retries: u32,
}

fn score(mut run: Run, dir: &Path, args: &ScoreArgs, out: &Path) -> Result<Vec<String>> {
    let dwa_path = resolve(&args.dwas, dir, "dwas.csv");
    let bytes = run.read("dwas", &dwa_path)?;
    let dwas = taxonomy::load_dwas(&bytes[..]).map_err(taxonomy_err)?;
    run.read("endpoints", &args.endpoints)?;
    let endpoints: Vec<EndpointConfig> = oai_client::load_endpoints(&args.endpoints).map_err(|e| match e {
        ClientError::Io { .. } => CliError::Input(e.to_string()),
        other => client_err(other),
    })?;
    let echo: Vec<EndpointEcho> = endpoints
        .iter()
        .map(|e| EndpointEcho {
            model_id: &e.model_id,
            base_url: &e.base_url,
            temperature: e.temperature,
            max_retries: e.max_retries,
        })
        .collect();
    if let serde_json::Value::Object(map) = &mut run.config {
        map.insert("endpoints_resolved".into(), serde_json::to_value(&echo).expect("serializable"));
    }
    let opts = ScoreOptions { concurrency: args.concurrency, out_dir: out.to_path_buf() };
    let summary = oai_client::score_corpus(&dwas, &endpoints, &HttpTransport::new(), &opts).map_err(client_err)?;
    println!(
        "scored {} of {} ({} already present, {} failed, {} attempts)",
        summary.scored,
        summary.requested,
        summary.skipped,
        summary.failures.len(),
        summary.attempts
    );
    for f in &summary.failures {
        run.warn(format!("{} / {}: {}", f.dwa_id, f.model_id, f.last_error));
    }
    // The client wrote its own files; the manifest records their digests.
    let mut produced = Vec::new();
    for name in [oai_client::SCORES_FILE, oai_client::RAW_FILE, oai_client::FAILURES_FILE] {
        let path = out.join(name);
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            produced.push(FileEntry { name: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(&bytes) });
        }
    }
    let mut names: Vec<String> = produced.iter().map(|f| f.name.clone()).collect();
    names.extend(run.finish_existing(out, produced)?);
    Ok(names)
}
