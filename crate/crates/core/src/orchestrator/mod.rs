//! Per-case workflow: specialists analyse the image in parallel, comment on
//! each other's analyses one at a time, and the coordinator writes the final
//! diagnosis. Every reply lands in a [`DiscussionLog`].

mod log;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::agents::{
    parse_commentary, parse_consensus_reply, parse_structured_analysis, render_baseline_prompt,
    render_consensus_prompt, render_discussion_prompt, render_individual_prompt, AgentError,
    AgentIdentity, Commentary, Confidence, Finding, Roster, StructuredAnalysis,
    DEFAULT_CASE_PROMPT,
};
use crate::gateway::{
    self, Backend, CallPhase, ChatRequest, Effort, GatewayError, MediaType, Message, Part,
    RequestTag, Role, Usage, UsageEntry, UsageLedger,
};
use crate::rag::{self, DocumentChunk, VectorStore};
use crate::taxonomy::{PatternTaxonomy, Term};

pub use log::{DiscussionLog, EntryContent, LogEntry, LogStatus, Phase};

#[derive(Debug, Error)]
pub enum AgentFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Output(#[from] AgentError),
    #[error("retrieval failed: {0}")]
    Retrieval(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{phase} phase failed for agent {agent_id}: {cause}")]
    PhaseFailure {
        phase: Phase,
        agent_id: String,
        #[source]
        cause: AgentFailure,
    },
    #[error("baseline request failed: {0}")]
    Baseline(#[source] AgentFailure),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("invalid case input: {0}")]
    Input(String),
    #[error("cannot persist run artifacts: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseInput {
    pub case_id: String,
    pub image_path: PathBuf,
    pub media_type: MediaType,
    image_base64: String,
    pub case_prompt: String,
}

impl CaseInput {
    /// Reads the image and checks its format. `case_prompt` defaults to
    /// [`DEFAULT_CASE_PROMPT`].
    pub fn load(
        case_id: impl Into<String>,
        image_path: impl Into<PathBuf>,
        case_prompt: Option<String>,
    ) -> Result<Self, RunError> {
        let case_id = case_id.into();
        let image_path = image_path.into();
        if case_id.is_empty() || case_id.chars().any(|c| c.is_whitespace() || c == '/') {
            return Err(RunError::Input(format!(
                "case id {case_id:?} is not a token"
            )));
        }
        let bytes = std::fs::read(&image_path).map_err(|e| {
            RunError::Input(format!("cannot read image {}: {e}", image_path.display()))
        })?;
        let media_type = MediaType::sniff(&bytes).ok_or_else(|| {
            RunError::Input(format!("{} is neither PNG nor JPEG", image_path.display()))
        })?;
        Ok(Self {
            case_id,
            image_path,
            media_type,
            image_base64: base64::engine::general_purpose::STANDARD.encode(&bytes),
            case_prompt: case_prompt.unwrap_or_else(|| DEFAULT_CASE_PROMPT.to_string()),
        })
    }

    fn image_part(&self) -> Part {
        Part::Image {
            media_type: self.media_type,
            data_base64: self.image_base64.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalDiagnosis {
    pub case_id: String,
    pub description: String,
    pub findings: Vec<Finding>,
    pub confidence: Confidence,
    /// Finding index to the specialists whose phase-1 findings carry the
    /// same canonical pattern.
    pub provenance: BTreeMap<usize, BTreeSet<String>>,
    /// Indices of findings no specialist reported.
    pub coordinator_added: Vec<usize>,
    pub divergences_resolved: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub enabled: bool,
    pub k: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            enabled: true,
            k: rag::DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_id: String,
    pub retrieval: RetrievalParams,
    pub specialist_temperature: f64,
    pub coordinator_temperature: f64,
    pub effort: Option<Effort>,
    pub max_output_tokens: Option<u32>,
    /// Repair retries after a malformed reply.
    pub repair_retries: u32,
    /// Phase-2 speaking order; `None` means roster order.
    pub discussion_order: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_id: "o4-mini".into(),
            retrieval: RetrievalParams::default(),
            specialist_temperature: 0.2,
            coordinator_temperature: 0.0,
            effort: Some(Effort::High),
            max_output_tokens: None,
            repair_retries: 1,
            discussion_order: None,
        }
    }
}

/// Outcome of a successful case run.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRun {
    pub diagnosis: FinalDiagnosis,
    pub log: DiscussionLog,
    pub usage: Vec<UsageEntry>,
}

/// A failed run with whatever log prefix was produced, already marked
/// incomplete.
#[derive(Debug)]
pub struct RunFailure {
    pub error: RunError,
    pub log: DiscussionLog,
}

/// Sends requests, retries malformed replies once with the parse error
/// appended, and records usage.
struct Caller<'a> {
    backend: &'a dyn Backend,
    ledger: &'a UsageLedger,
    config: &'a RunConfig,
}

struct Answer<T> {
    value: T,
    raw: String,
    usage: Usage,
    started_at_ms: u64,
    finished_at_ms: u64,
}

impl Caller<'_> {
    fn now_ms(&self) -> u64 {
        if self.backend.is_deterministic() {
            return 0;
        }
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn ask<T>(
        &self,
        case_id: &str,
        agent_id: &str,
        phase: CallPhase,
        mut messages: Vec<Message>,
        temperature: f64,
        parse: impl Fn(&str) -> Result<T, AgentError>,
    ) -> Result<Answer<T>, AgentFailure> {
        let started_at_ms = self.now_ms();
        let mut usage = Usage::default();
        let mut attempt = 0;
        loop {
            let request = ChatRequest {
                model_id: self.config.model_id.clone(),
                messages: messages.clone(),
                temperature,
                effort: self.config.effort,
                max_output_tokens: self.config.max_output_tokens,
                tag: Some(RequestTag {
                    case_id: case_id.to_string(),
                    agent_id: agent_id.to_string(),
                    phase,
                    attempt,
                }),
            };
            let response = gateway::complete(self.backend, &request)?;
            self.ledger.record(case_id, agent_id, phase, response.usage);
            usage += response.usage;
            match parse(&response.text) {
                Ok(value) => {
                    return Ok(Answer {
                        value,
                        raw: response.text,
                        usage,
                        started_at_ms,
                        finished_at_ms: self.now_ms(),
                    })
                }
                Err(err @ AgentError::MalformedOutput(_))
                    if attempt < self.config.repair_retries =>
                {
                    debug!(case_id, agent_id, %phase, error = %err, "repairing malformed reply");
                    messages.push(Message::text(Role::Assistant, response.text));
                    messages.push(Message::text(
                        Role::User,
                        format!(
                            "Your reply could not be parsed: {err}. Reply again and end it with the \
                             required fenced block exactly as specified."
                        ),
                    ));
                    attempt += 1;
                }
                Err(err) => return Err(err.into()),
            }
        }
    }
}

pub struct Orchestrator<'a> {
    backend: &'a dyn Backend,
    roster: &'a Roster,
    taxonomy: &'a PatternTaxonomy,
    store: Option<&'a VectorStore>,
    ledger: &'a UsageLedger,
    config: RunConfig,
    discussion_order: Vec<String>,
}

impl<'a> Orchestrator<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        roster: &'a Roster,
        taxonomy: &'a PatternTaxonomy,
        store: Option<&'a VectorStore>,
        ledger: &'a UsageLedger,
        config: RunConfig,
    ) -> Result<Self, RunError> {
        roster
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        let specialists: Vec<String> = roster.specialists().map(|a| a.id.clone()).collect();
        let discussion_order = match &config.discussion_order {
            None => specialists.clone(),
            Some(order) => {
                let given: HashSet<&String> = order.iter().collect();
                if order.len() != specialists.len()
                    || given.len() != order.len()
                    || !specialists.iter().all(|s| given.contains(s))
                {
                    return Err(RunError::Config(format!(
                        "discussion order {order:?} is not a permutation of the specialists {specialists:?}"
                    )));
                }
                order.clone()
            }
        };
        if config.retrieval.enabled && config.retrieval.k == 0 {
            return Err(RunError::Config("retrieval k must be at least 1".into()));
        }
        if let (true, Some(store)) = (config.retrieval.enabled, store) {
            if store.metadata().embedding_model_id != backend.embedding_model_id() {
                return Err(RunError::Config(format!(
                    "knowledge base was embedded with {} but the backend embeds with {}",
                    store.metadata().embedding_model_id,
                    backend.embedding_model_id()
                )));
            }
        }
        Ok(Self {
            backend,
            roster,
            taxonomy,
            store,
            ledger,
            config,
            discussion_order,
        })
    }

    pub fn discussion_order(&self) -> &[String] {
        &self.discussion_order
    }

    fn caller(&self) -> Caller<'_> {
        Caller {
            backend: self.backend,
            ledger: self.ledger,
            config: &self.config,
        }
    }

    fn retrieve(
        &self,
        identity: &AgentIdentity,
        case_prompt: &str,
    ) -> Result<Vec<DocumentChunk>, AgentFailure> {
        let store = match (self.config.retrieval.enabled, self.store) {
            (true, Some(store)) if !store.is_empty() => store,
            _ => return Ok(Vec::new()),
        };
        let query = rag::build_query_text(identity, case_prompt);
        let vector = gateway::embed_text(self.backend, &query)?;
        let hits = store
            .query(&vector, self.config.retrieval.k)
            .map_err(|e| AgentFailure::Retrieval(e.to_string()))?;
        Ok(hits.into_iter().map(|h| h.entry.chunk.clone()).collect())
    }

    fn individual(
        &self,
        case: &CaseInput,
        identity: &AgentIdentity,
    ) -> Result<Answer<StructuredAnalysis>, AgentFailure> {
        let grounding = self.retrieve(identity, &case.case_prompt)?;
        let prompt = render_individual_prompt(
            identity,
            &self.roster.protocol,
            &grounding,
            &case.case_prompt,
        )?;
        let messages = vec![Message {
            role: Role::User,
            parts: vec![Part::Text(prompt), case.image_part()],
        }];
        self.caller().ask(
            &case.case_id,
            &identity.id,
            CallPhase::Individual,
            messages,
            self.config.specialist_temperature,
            |raw| parse_structured_analysis(raw, self.taxonomy, &identity.id),
        )
    }

    /// Phase 1. Requests run concurrently, one thread per specialist; entries
    /// are appended in roster order whatever the completion order.
    pub fn run_individual_phase(
        &self,
        case: &CaseInput,
        log: &mut DiscussionLog,
    ) -> Result<Vec<StructuredAnalysis>, RunError> {
        let specialists: Vec<&AgentIdentity> = self.roster.specialists().collect();
        let results: Vec<Result<Answer<StructuredAnalysis>, AgentFailure>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = specialists
                    .iter()
                    .map(|identity| scope.spawn(move || self.individual(case, identity)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("agent thread panicked"))
                    .collect()
            });

        let mut analyses = Vec::with_capacity(results.len());
        let mut failure = None;
        for (identity, result) in specialists.iter().zip(results) {
            match result {
                Ok(answer) => {
                    log.push(
                        Phase::Individual,
                        &identity.id,
                        EntryContent::Analysis(answer.value.clone()),
                        answer.raw,
                        answer.usage,
                        answer.started_at_ms,
                        answer.finished_at_ms,
                    );
                    analyses.push(answer.value);
                }
                Err(cause) if failure.is_none() => {
                    failure = Some(RunError::PhaseFailure {
                        phase: Phase::Individual,
                        agent_id: identity.id.clone(),
                        cause,
                    });
                }
                Err(_) => {}
            }
        }
        match failure {
            Some(err) => Err(err),
            None => Ok(analyses),
        }
    }

    /// Phase 2. Specialists speak one after another in the configured order;
    /// each sees only the phase-1 analyses.
    pub fn run_discussion_phase(
        &self,
        case: &CaseInput,
        analyses: &[StructuredAnalysis],
        log: &mut DiscussionLog,
    ) -> Result<Vec<Vec<Commentary>>, RunError> {
        if self.discussion_order.len() < 2 {
            info!(case_id = %case.case_id, "single specialist, skipping discussion");
            return Ok(Vec::new());
        }
        let mut all = Vec::with_capacity(self.discussion_order.len());
        for agent_id in &self.discussion_order {
            let identity = self
                .roster
                .get(agent_id)
                .expect("discussion order validated against roster");
            let fail = |cause: AgentFailure| RunError::PhaseFailure {
                phase: Phase::Discussion,
                agent_id: agent_id.clone(),
                cause,
            };
            let prompt = render_discussion_prompt(identity, self.roster, analyses)
                .map_err(|e| fail(e.into()))?;
            let answer = self
                .caller()
                .ask(
                    &case.case_id,
                    agent_id,
                    CallPhase::Discussion,
                    vec![Message::text(Role::User, prompt)],
                    self.config.specialist_temperature,
                    |raw| parse_commentary(raw, agent_id, self.roster),
                )
                .map_err(fail)?;
            log.push(
                Phase::Discussion,
                agent_id,
                EntryContent::Commentary(answer.value.clone()),
                answer.raw,
                answer.usage,
                answer.started_at_ms,
                answer.finished_at_ms,
            );
            all.push(answer.value);
        }
        Ok(all)
    }

    /// Phase 3. The coordinator reads the whole log and writes the diagnosis.
    pub fn run_consensus_phase(
        &self,
        case: &CaseInput,
        log: &mut DiscussionLog,
    ) -> Result<FinalDiagnosis, RunError> {
        let coordinator = self.roster.coordinator();
        let fail = |cause: AgentFailure| RunError::PhaseFailure {
            phase: Phase::Consensus,
            agent_id: coordinator.id.clone(),
            cause,
        };
        let prompt = render_consensus_prompt(coordinator, log).map_err(|e| fail(e.into()))?;
        let answer = self
            .caller()
            .ask(
                &case.case_id,
                &coordinator.id,
                CallPhase::Consensus,
                vec![Message::text(Role::User, prompt)],
                self.config.coordinator_temperature,
                |raw| parse_consensus_reply(raw, self.taxonomy),
            )
            .map_err(fail)?;

        let reply = answer.value;
        let (provenance, coordinator_added) = compute_provenance(&reply.findings, log);
        let diagnosis = FinalDiagnosis {
            case_id: case.case_id.clone(),
            description: reply.description,
            findings: reply.findings,
            confidence: reply.confidence,
            provenance,
            coordinator_added,
            divergences_resolved: reply.divergences_resolved,
        };
        log.push(
            Phase::Consensus,
            &coordinator.id,
            EntryContent::Diagnosis(diagnosis.clone()),
            answer.raw,
            answer.usage,
            answer.started_at_ms,
            answer.finished_at_ms,
        );
        Ok(diagnosis)
    }

    /// Runs all three phases. On failure the returned log holds every entry
    /// produced so far and is marked incomplete; no diagnosis is emitted.
    #[allow(clippy::result_large_err)]
    pub fn run_case(&self, case: &CaseInput) -> Result<CaseRun, RunFailure> {
        let mut log = DiscussionLog::new(&case.case_id);
        let result = self
            .run_individual_phase(case, &mut log)
            .and_then(|analyses| {
                self.run_discussion_phase(case, &analyses, &mut log)?;
                self.run_consensus_phase(case, &mut log)
            });
        match result {
            Ok(diagnosis) => {
                log.status = LogStatus::Complete;
                // Phase-1 calls finish in any order; report them in roster order.
                let rank = |id: &str| self.roster.agents.iter().position(|a| a.id == id);
                let mut usage = self.ledger.slice(&case.case_id);
                usage.sort_by_key(|e| match e.phase {
                    CallPhase::Individual => (0, rank(&e.agent_id)),
                    _ => (1, None),
                });
                Ok(CaseRun {
                    diagnosis,
                    log,
                    usage,
                })
            }
            Err(error) => {
                log.mark_incomplete(&error.to_string());
                Err(RunFailure { error, log })
            }
        }
    }

    /// [`run_case`](Self::run_case), writing `log.jsonl` (always) and
    /// `diagnosis.json` (on success) into `dir`.
    #[allow(clippy::result_large_err)]
    pub fn run_case_to_dir(&self, case: &CaseInput, dir: &Path) -> Result<CaseRun, RunFailure> {
        let outcome = self.run_case(case);
        let log = match &outcome {
            Ok(run) => &run.log,
            Err(failure) => &failure.log,
        };
        if let Err(io) = write_run_artifacts(dir, log, outcome.as_ref().ok().map(|r| &r.diagnosis))
        {
            let log = log.clone();
            return Err(RunFailure {
                error: RunError::Io(io),
                log,
            });
        }
        outcome
    }
}

/// Matches each final finding against the phase-1 findings in `log` by
/// canonical id.
pub fn compute_provenance(
    findings: &[Finding],
    log: &DiscussionLog,
) -> (BTreeMap<usize, BTreeSet<String>>, Vec<usize>) {
    let mut provenance = BTreeMap::new();
    let mut added = Vec::new();
    for (index, finding) in findings.iter().enumerate() {
        let supporters: BTreeSet<String> = match &finding.pattern {
            Term::Canonical(_) => log
                .entries
                .iter()
                .filter_map(|e| match (&e.phase, &e.content) {
                    (Phase::Individual, EntryContent::Analysis(a)) => Some(a),
                    _ => None,
                })
                .filter(|a| a.findings.iter().any(|f| f.pattern == finding.pattern))
                .map(|a| a.agent_id.clone())
                .collect(),
            Term::Unknown(_) => BTreeSet::new(),
        };
        if supporters.is_empty() {
            added.push(index);
        } else {
            provenance.insert(index, supporters);
        }
    }
    (provenance, added)
}

pub fn write_run_artifacts(
    dir: &Path,
    log: &DiscussionLog,
    diagnosis: Option<&FinalDiagnosis>,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("log.jsonl"), log.to_jsonl())?;
    if let Some(diagnosis) = diagnosis {
        let mut text = serde_json::to_string_pretty(diagnosis).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(dir.join("diagnosis.json"), text)?;
    }
    Ok(())
}

/// The comparison arm: one request with the case prompt and image, no
/// agents and no retrieval. The reply is parsed like an individual analysis.
pub fn run_baseline(
    backend: &dyn Backend,
    taxonomy: &PatternTaxonomy,
    ledger: &UsageLedger,
    config: &RunConfig,
    case: &CaseInput,
) -> Result<StructuredAnalysis, RunError> {
    const AGENT: &str = "baseline";
    let caller = Caller {
        backend,
        ledger,
        config,
    };
    let messages = vec![Message {
        role: Role::User,
        parts: vec![
            Part::Text(render_baseline_prompt(&case.case_prompt)),
            case.image_part(),
        ],
    }];
    caller
        .ask(
            &case.case_id,
            AGENT,
            CallPhase::Baseline,
            messages,
            config.specialist_temperature,
            |raw| parse_structured_analysis(raw, taxonomy, AGENT),
        )
        .map(|answer| answer.value)
        .map_err(RunError::Baseline)
}
