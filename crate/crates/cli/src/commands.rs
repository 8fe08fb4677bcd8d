use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::anyhow;
use clap::Args;
use serde::Serialize;
use stonediag_core::agents::{Roster, StructuredAnalysis};
use stonediag_core::eval::{
    aggregate, emit_per_image_csv, emit_report, load_corpus, match_findings, per_image_summary,
    GroundTruthCase, PredictionSet, ReportFormat, SystemReport,
};
use stonediag_core::gateway::{
    self, format_cost, totals_of, Backend, LedgerTotals, LiveBackend, LiveConfig, MockBackend,
    UsageEntry, UsageLedger,
};
use stonediag_core::orchestrator::{
    run_baseline, CaseInput, CaseRun, Orchestrator, RetrievalParams, RunConfig, RunFailure,
};
use stonediag_core::rag::{self, load_store, save_store, EmbeddedChunk, VectorStore};
use stonediag_core::taxonomy::{PatternTaxonomy, Term};
use tracing::info;

use crate::config::{BackendMode, MainConfig};
use crate::GlobalArgs;

pub const MOCK_TIMESTAMP: &str = "00000000T000000Z";

/// Exit 2 for bad input or configuration, 3 when a run or a reply fails.
pub enum Failure {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Run(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Run(e) => e,
        }
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn run(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Run(e.into())
}

type Outcome = Result<(), Failure>;

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// Image to diagnose (PNG or JPEG).
    #[arg(required_unless_present = "corpus", conflicts_with = "corpus")]
    pub image: Option<PathBuf>,
    /// Case id; defaults to the image file stem.
    #[arg(long, requires = "image")]
    pub case_id: Option<String>,
    /// Replace the default case prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Run every case of a ground-truth corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

struct Setup {
    config: MainConfig,
    taxonomy: PatternTaxonomy,
}

fn setup(global: &GlobalArgs) -> Result<Setup, Failure> {
    let mut config = MainConfig::load(&global.config).map_err(input)?;
    if let Some(path) = &global.agents {
        config.roster = path.clone();
    }
    if let Some(path) = &global.kb {
        config.knowledge_base = Some(path.clone());
    }
    if let Some(path) = &global.mock_transcript {
        config.backend.mode = BackendMode::Mock;
        config.backend.transcript = Some(path.clone());
    }
    if let Some(out) = &global.out {
        config.output_dir = out.clone();
    }
    if let Some(k) = global.k {
        config.retrieval.k = k;
    }
    if let Some(order) = &global.order {
        config.run.discussion_order = Some(order.clone());
    }
    if let Some(n) = global.concurrency {
        config.run.concurrency = n;
    }
    config.validate().map_err(input)?;
    let taxonomy = PatternTaxonomy::load(&config.taxonomy).map_err(input)?;
    Ok(Setup { config, taxonomy })
}

impl Setup {
    fn is_mock(&self) -> bool {
        self.config.backend.mode == BackendMode::Mock
    }

    fn timestamp(&self) -> String {
        if self.is_mock() {
            MOCK_TIMESTAMP.to_string()
        } else {
            chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
        }
    }

    fn backend(&self) -> Result<Box<dyn Backend>, Failure> {
        let b = &self.config.backend;
        match b.mode {
            BackendMode::Mock => {
                let path = b
                    .transcript
                    .as_ref()
                    .expect("validated: mock has a transcript");
                Ok(Box::new(
                    MockBackend::from_transcript_file(path, b.embedding_dimension)
                        .map_err(input)?,
                ))
            }
            BackendMode::Live => {
                let endpoint = b
                    .endpoint
                    .as_ref()
                    .expect("validated: live has an endpoint");
                let live = LiveConfig::new(endpoint, &b.embedding_model_id)
                    .with_key_from_env(&b.api_key_env)
                    .map_err(input)?;
                Ok(Box::new(LiveBackend::new(live).map_err(run)?))
            }
        }
    }

    fn roster(&self) -> Result<Roster, Failure> {
        Roster::load(&self.config.roster).map_err(input)
    }

    fn run_config(&self) -> RunConfig {
        let c = &self.config;
        RunConfig {
            model_id: c.backend.model_id.clone(),
            retrieval: RetrievalParams {
                enabled: c.retrieval.enabled,
                k: c.retrieval.k,
            },
            specialist_temperature: c.run.specialist_temperature,
            coordinator_temperature: c.run.coordinator_temperature,
            effort: c.backend.effort,
            max_output_tokens: c.backend.max_output_tokens,
            discussion_order: c.run.discussion_order.clone(),
            ..RunConfig::default()
        }
    }

    fn store(&self) -> Result<Option<VectorStore>, Failure> {
        if !self.config.retrieval.enabled {
            return Ok(None);
        }
        match &self.config.knowledge_base {
            None => Ok(None),
            Some(path) => load_store(path).map(Some).map_err(|e| {
                input(anyhow!(
                    "cannot load knowledge base {}: {e}",
                    path.display()
                ))
            }),
        }
    }

    /// Cases named on the command line, images already read.
    fn cases(&self, args: &CaseArgs) -> Result<Vec<CaseInput>, Failure> {
        let listed: Vec<(String, PathBuf)> = match (&args.corpus, &args.image) {
            (Some(corpus), _) => load_corpus(corpus, &self.taxonomy)
                .map_err(input)?
                .into_iter()
                .map(|c| (c.case_id, c.image))
                .collect(),
            (None, Some(image)) => {
                let id = match &args.case_id {
                    Some(id) => id.clone(),
                    None => image
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .ok_or_else(|| {
                            input(anyhow!("cannot derive a case id from {}", image.display()))
                        })?,
                };
                vec![(id, image.clone())]
            }
            (None, None) => return Err(input(anyhow!("give an image or --corpus"))),
        };
        listed
            .into_iter()
            .map(|(id, image)| CaseInput::load(id, image, args.prompt.clone()).map_err(input))
            .collect()
    }
}

#[derive(Serialize)]
struct UsageReport<'a> {
    entries: &'a [UsageEntry],
    totals: LedgerTotals,
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

fn write_case_extras(
    dir: &Path,
    predictions: &PredictionSet,
    usage: &[UsageEntry],
    ledger: &UsageLedger,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("predictions.json"), predictions)?;
    write_json(
        &dir.join("usage.json"),
        &UsageReport {
            entries: usage,
            totals: totals_of(usage, &ledger.price_table()),
        },
    )
}

fn term_label(term: &Term) -> String {
    match term {
        Term::Canonical(id) => id.clone(),
        Term::Unknown(raw) => format!("?{raw}"),
    }
}

fn print_totals(label: &str, totals: &LedgerTotals) {
    println!(
        "{label}: {} prompt + {} completion tokens, {}",
        totals.prompt_tokens,
        totals.completion_tokens,
        format_cost(totals.cost)
    );
}

/// Runs `job` over `items` on up to `limit` threads; results keep input order.
fn run_pool<T: Sync, R: Send>(items: &[T], limit: usize, job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..limit.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(index) else { break };
                let result = job(item);
                results.lock().expect("result slots")[index] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

pub fn kb_ingest(global: &GlobalArgs, documents: &[PathBuf]) -> Outcome {
    let setup = setup(global)?;
    let destination = setup.config.knowledge_base.clone().ok_or_else(|| {
        input(anyhow!(
            "no knowledge base path: set knowledge_base or pass --kb"
        ))
    })?;
    let backend = setup.backend()?;
    let retrieval = &setup.config.retrieval;

    let mut chunks = Vec::new();
    for path in documents {
        let text = std::fs::read_to_string(path)
            .map_err(|e| input(anyhow!("cannot read {}: {e}", path.display())))?;
        let source = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        chunks.extend(
            rag::chunk_document(
                &source,
                &text,
                retrieval.target_tokens,
                retrieval.overlap_tokens,
            )
            .map_err(input)?,
        );
    }

    let mut embedded = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let vector = gateway::embed_text(backend.as_ref(), &chunk.text)
            .map_err(|e| run(anyhow!("embedding {} failed: {e}", chunk.chunk_id)))?;
        embedded.push(EmbeddedChunk { chunk, vector });
    }
    let dimension = embedded
        .first()
        .map(|e| e.vector.len())
        .unwrap_or(setup.config.backend.embedding_dimension);
    let created_at = if setup.is_mock() {
        0
    } else {
        chrono::Utc::now().timestamp()
    };
    let mut store = VectorStore::new(dimension, backend.embedding_model_id(), created_at);
    let tokens: usize = embedded.iter().map(|e| e.chunk.approx_tokens).sum();
    let count = embedded.len();
    for entry in embedded {
        store.upsert(entry).map_err(run)?;
    }
    if let Some(parent) = destination.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| input(anyhow!("cannot create {}: {e}", parent.display())))?;
    }
    save_store(&store, &destination)
        .map_err(|e| input(anyhow!("cannot write {}: {e}", destination.display())))?;
    println!(
        "{count} chunks from {} documents, about {tokens} tokens, written to {}",
        documents.len(),
        destination.display()
    );
    Ok(())
}

#[allow(clippy::result_large_err)]
pub fn diagnose(global: &GlobalArgs, args: &CaseArgs) -> Outcome {
    let setup = setup(global)?;
    let cases = setup.cases(args)?;
    let roster = setup.roster()?;
    let store = setup.store()?;
    let backend = setup.backend()?;
    let ledger = UsageLedger::new(setup.config.backend.price_table);
    let orchestrator = Orchestrator::new(
        backend.as_ref(),
        &roster,
        &setup.taxonomy,
        store.as_ref(),
        &ledger,
        setup.run_config(),
    )
    .map_err(input)?;
    let stamp = setup.timestamp();
    let out = &setup.config.output_dir;

    let results: Vec<(PathBuf, Result<CaseRun, RunFailure>)> =
        run_pool(&cases, setup.config.run.concurrency, |case| {
            let dir = out.join(format!("{}-{stamp}", case.case_id));
            info!(case_id = %case.case_id, dir = %dir.display(), "running case");
            let result = orchestrator.run_case_to_dir(case, &dir).and_then(|run| {
                let predictions = PredictionSet {
                    case_id: case.case_id.clone(),
                    system: "agentic".into(),
                    findings: run.diagnosis.findings.clone(),
                };
                match write_case_extras(&dir, &predictions, &run.usage, &ledger) {
                    Ok(()) => Ok(run),
                    Err(io) => Err(RunFailure {
                        error: io.into(),
                        log: run.log,
                    }),
                }
            });
            (dir, result)
        });

    let mut failed = Vec::new();
    for (dir, result) in &results {
        match result {
            Ok(run) => {
                let d = &run.diagnosis;
                println!(
                    "{}: {} findings, confidence {}",
                    d.case_id,
                    d.findings.len(),
                    d.confidence.as_str()
                );
                for (index, finding) in d.findings.iter().enumerate() {
                    let source = match d.provenance.get(&index) {
                        Some(agents) => agents.iter().cloned().collect::<Vec<_>>().join(", "),
                        None => roster.coordinator().id.clone(),
                    };
                    println!(
                        "  - {} | {} [{source}]",
                        term_label(&finding.pattern),
                        finding.location
                    );
                }
                print_totals("  usage", &totals_of(&run.usage, &ledger.price_table()));
                println!("  artifacts: {}", dir.display());
            }
            Err(failure) => {
                eprintln!(
                    "{}: {} (partial log in {})",
                    failure.log.case_id,
                    failure.error,
                    dir.display()
                );
                failed.push(failure.log.case_id.clone());
            }
        }
    }
    if results.len() > 1 {
        print_totals("total", &ledger.totals());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(run(anyhow!("run failed for {}", failed.join(", "))))
    }
}

pub fn baseline(global: &GlobalArgs, args: &CaseArgs) -> Outcome {
    let setup = setup(global)?;
    let cases = setup.cases(args)?;
    let backend = setup.backend()?;
    let ledger = UsageLedger::new(setup.config.backend.price_table);
    let config = setup.run_config();
    let stamp = setup.timestamp();
    let out = setup.config.output_dir.join("baseline");

    let results: Vec<(PathBuf, anyhow::Result<StructuredAnalysis>)> =
        run_pool(&cases, setup.config.run.concurrency, |case| {
            let dir = out.join(format!("{}-{stamp}", case.case_id));
            let result = run_baseline(backend.as_ref(), &setup.taxonomy, &ledger, &config, case)
                .map_err(anyhow::Error::from)
                .and_then(|analysis| {
                    let predictions = PredictionSet {
                        case_id: case.case_id.clone(),
                        system: "baseline".into(),
                        findings: analysis.findings.clone(),
                    };
                    write_case_extras(&dir, &predictions, &ledger.slice(&case.case_id), &ledger)?;
                    write_json(&dir.join("analysis.json"), &analysis)?;
                    Ok(analysis)
                });
            (dir, result)
        });

    let mut failed = Vec::new();
    for (case, (dir, result)) in cases.iter().zip(&results) {
        match result {
            Ok(analysis) => {
                println!("{}: {} findings", case.case_id, analysis.findings.len());
                for finding in &analysis.findings {
                    println!(
                        "  - {} | {}",
                        term_label(&finding.pattern),
                        finding.location
                    );
                }
                println!("  artifacts: {}", dir.display());
            }
            Err(e) => {
                eprintln!("{}: {e:#}", case.case_id);
                failed.push(case.case_id.clone());
            }
        }
    }
    print_totals("total", &ledger.totals());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(run(anyhow!("baseline failed for {}", failed.join(", "))))
    }
}

/// `<dir>/<case_id>.json`, else the last `<dir>/<case_id>-*/predictions.json`
/// in name order.
fn find_predictions(dir: &Path, case_id: &str) -> Option<PathBuf> {
    let flat = dir.join(format!("{case_id}.json"));
    if flat.is_file() {
        return Some(flat);
    }
    let prefix = format!("{case_id}-");
    let mut runs: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(Result::ok)
        .filter(|e| e.file_name().to_string_lossy().starts_with(&prefix))
        .map(|e| e.path().join("predictions.json"))
        .filter(|p| p.is_file())
        .collect();
    runs.sort();
    runs.pop()
}

fn load_predictions(
    system: &str,
    dir: &Path,
    corpus: &[GroundTruthCase],
) -> Result<Vec<PredictionSet>, Failure> {
    let mut missing = Vec::new();
    let mut sets = Vec::new();
    for case in corpus {
        let Some(path) = find_predictions(dir, &case.case_id) else {
            missing.push(case.case_id.as_str());
            continue;
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| input(anyhow!("cannot read {}: {e}", path.display())))?;
        let set: PredictionSet = serde_json::from_str(&text)
            .map_err(|e| input(anyhow!("malformed predictions {}: {e}", path.display())))?;
        if set.case_id != case.case_id {
            return Err(input(anyhow!(
                "{} holds predictions for {}, expected {}",
                path.display(),
                set.case_id,
                case.case_id
            )));
        }
        sets.push(set);
    }
    if !missing.is_empty() {
        return Err(input(anyhow!(
            "system {system}: no predictions for {}",
            missing.join(", ")
        )));
    }
    Ok(sets)
}

pub fn eval(global: &GlobalArgs, corpus_path: &Path, predictions: &[String]) -> Outcome {
    let setup = setup(global)?;
    let corpus = load_corpus(corpus_path, &setup.taxonomy).map_err(input)?;
    let mut reports = Vec::new();
    for spec in predictions {
        let (system, dir) = spec
            .split_once('=')
            .filter(|(name, dir)| !name.is_empty() && !dir.is_empty())
            .ok_or_else(|| {
                input(anyhow!(
                    "--predictions expects name=directory, got {spec:?}"
                ))
            })?;
        let sets = load_predictions(system, Path::new(dir), &corpus)?;
        let outcomes = corpus
            .iter()
            .zip(&sets)
            .map(|(truth, set)| match_findings(&set.findings, truth, &setup.taxonomy))
            .collect::<Result<Vec<_>, _>>()
            .map_err(input)?;
        reports.push(SystemReport {
            system: system.to_string(),
            aggregate: aggregate(&outcomes).map_err(input)?,
            per_image: per_image_summary(&outcomes),
        });
    }

    let table = emit_report(&reports, ReportFormat::TableText);
    let out = &setup.config.output_dir;
    let write = |name: &str, text: &str| {
        std::fs::write(out.join(name), text)
            .map_err(|e| input(anyhow!("cannot write {}: {e}", out.join(name).display())))
    };
    std::fs::create_dir_all(out)
        .map_err(|e| input(anyhow!("cannot create {}: {e}", out.display())))?;
    write("report.txt", &table)?;
    write(
        "report.csv",
        &emit_report(&reports, ReportFormat::DelimitedValues),
    )?;
    write("per_image.csv", &emit_per_image_csv(&reports))?;
    print!("{table}");
    Ok(())
}
