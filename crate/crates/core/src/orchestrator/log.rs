use std::fmt;

use serde::{Deserialize, Serialize};

use super::FinalDiagnosis;
use crate::agents::{Commentary, StructuredAnalysis};
use crate::gateway::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Individual,
    Discussion,
    Consensus,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Individual => "individual",
            Phase::Discussion => "discussion",
            Phase::Consensus => "consensus",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
pub enum EntryContent {
    Analysis(StructuredAnalysis),
    Commentary(Vec<Commentary>),
    Diagnosis(FinalDiagnosis),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub phase: Phase,
    pub agent_id: String,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub usage: Usage,
    pub content: EntryContent,
    /// The reply exactly as the model sent it.
    pub raw_reply: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogStatus {
    InProgress,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    case_id: String,
    status: LogStatus,
    failure: Option<String>,
}

/// Ordered record of one case run. Sequence numbers start at 1 and phases
/// never go backwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscussionLog {
    pub case_id: String,
    pub status: LogStatus,
    pub failure: Option<String>,
    pub entries: Vec<LogEntry>,
}

impl DiscussionLog {
    pub fn new(case_id: &str) -> Self {
        Self {
            case_id: case_id.to_string(),
            status: LogStatus::InProgress,
            failure: None,
            entries: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        phase: Phase,
        agent_id: &str,
        content: EntryContent,
        raw_reply: String,
        usage: Usage,
        started_at_ms: u64,
        finished_at_ms: u64,
    ) {
        if let Some(last) = self.entries.last() {
            assert!(
                last.phase <= phase,
                "log phase went backwards: {} after {}",
                phase,
                last.phase
            );
        }
        self.entries.push(LogEntry {
            seq: self.entries.len() as u64 + 1,
            phase,
            agent_id: agent_id.to_string(),
            started_at_ms,
            finished_at_ms,
            usage,
            content,
            raw_reply,
        });
    }

    pub fn mark_incomplete(&mut self, reason: &str) {
        self.status = LogStatus::Incomplete;
        self.failure = Some(reason.to_string());
    }

    pub fn is_complete(&self) -> bool {
        self.status == LogStatus::Complete
    }

    pub fn phase_sequence(&self) -> Vec<Phase> {
        self.entries.iter().map(|e| e.phase).collect()
    }

    pub fn total_usage(&self) -> Usage {
        let mut total = Usage::default();
        for entry in &self.entries {
            total += entry.usage;
        }
        total
    }

    /// Header line, then one line per entry.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            case_id: self.case_id.clone(),
            status: self.status,
            failure: self.failure.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("log header serializes");
        out.push('\n');
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(source: &str) -> Result<Self, String> {
        let mut lines = source.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(lines.next().ok_or("empty log")?)
            .map_err(|e| format!("header: {e}"))?;
        let entries = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("entry {}: {e}", i + 1)))
            .collect::<Result<Vec<LogEntry>, _>>()?;
        Ok(Self {
            case_id: header.case_id,
            status: header.status,
            failure: header.failure,
            entries,
        })
    }
}
