//! Agent identity cards, the shared reasoning protocol, prompt assembly for
//! each workflow phase and parsing of agent replies.

mod parse;
mod prompt;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Term;

pub use parse::{
    parse_commentary, parse_consensus_reply, parse_structured_analysis, render_analysis_block,
    render_analysis_reply, render_commentary_reply, render_consensus_reply, ConsensusReply,
};
pub use prompt::{
    render_baseline_prompt, render_consensus_prompt, render_discussion_prompt,
    render_individual_prompt, sections, DEFAULT_CASE_PROMPT, NO_GROUNDING_MARKER,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    /// A caller passed an agent or inputs that the requested phase cannot accept.
    #[error("misuse: {0}")]
    Misuse(String),
    /// The reply did not contain a well-formed output block.
    #[error("malformed output: {0}")]
    MalformedOutput(String),
    #[error("phase order: {0}")]
    PhaseOrder(String),
    #[error("invalid roster: {0}")]
    InvalidRoster(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIdentity {
    pub id: String,
    pub role_name: String,
    #[serde(default)]
    pub competence_areas: Vec<String>,
    #[serde(default)]
    pub personality_traits: Vec<String>,
    #[serde(default)]
    pub specialization_directive: String,
    #[serde(default)]
    pub is_coordinator: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolStage {
    pub name: String,
    pub instruction: String,
    pub required_outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseProtocol {
    pub stages: Vec<ProtocolStage>,
}

impl BaseProtocol {
    /// Stage names of the standard protocol, in their fixed order.
    pub const STANDARD_STAGES: [&'static str; 4] = [
        "ContextualAnalysis",
        "SystematicObservation",
        "CompatibilityAssessment",
        "DiagnosticSynthesis",
    ];

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.stages.is_empty() {
            return Err(AgentError::InvalidRoster("protocol has no stages".into()));
        }
        let mut seen = HashSet::new();
        for stage in &self.stages {
            if !seen.insert(stage.name.as_str()) {
                return Err(AgentError::InvalidRoster(format!(
                    "duplicate protocol stage {}",
                    stage.name
                )));
            }
            if stage.required_outputs.is_empty() {
                return Err(AgentError::InvalidRoster(format!(
                    "protocol stage {} declares no required outputs",
                    stage.name
                )));
            }
        }
        Ok(())
    }

    pub fn is_standard(&self) -> bool {
        self.stages
            .iter()
            .map(|s| s.name.as_str())
            .eq(Self::STANDARD_STAGES.iter().copied())
    }
}

/// A validated team: specialists plus exactly one coordinator, and the
/// protocol every specialist follows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub protocol: BaseProtocol,
    pub agents: Vec<AgentIdentity>,
}

impl Roster {
    pub fn new(protocol: BaseProtocol, agents: Vec<AgentIdentity>) -> Result<Self, AgentError> {
        let roster = Self { protocol, agents };
        roster.validate()?;
        Ok(roster)
    }

    pub fn parse(source: &str) -> Result<Self, AgentError> {
        let roster: Roster =
            toml::from_str(source).map_err(|e| AgentError::InvalidRoster(e.to_string()))?;
        roster.validate()?;
        Ok(roster)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AgentError::InvalidRoster(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.protocol.validate()?;
        let mut ids = HashSet::new();
        for agent in &self.agents {
            if agent.id.trim().is_empty() || agent.id.chars().any(char::is_whitespace) {
                return Err(AgentError::InvalidRoster(format!(
                    "agent id {:?} must be a non-empty token",
                    agent.id
                )));
            }
            if !ids.insert(agent.id.as_str()) {
                return Err(AgentError::InvalidRoster(format!(
                    "duplicate agent id {}",
                    agent.id
                )));
            }
        }
        let coordinators = self.agents.iter().filter(|a| a.is_coordinator).count();
        if coordinators != 1 {
            return Err(AgentError::InvalidRoster(format!(
                "expected exactly one coordinator, found {coordinators}"
            )));
        }
        if self.specialists().next().is_none() {
            return Err(AgentError::InvalidRoster(
                "roster has no specialists".into(),
            ));
        }
        Ok(())
    }

    pub fn coordinator(&self) -> &AgentIdentity {
        self.agents
            .iter()
            .find(|a| a.is_coordinator)
            .expect("validated roster has a coordinator")
    }

    /// Specialists in roster-declared order.
    pub fn specialists(&self) -> impl Iterator<Item = &AgentIdentity> {
        self.agents.iter().filter(|a| !a.is_coordinator)
    }

    pub fn get(&self, id: &str) -> Option<&AgentIdentity> {
        self.agents.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub pattern: Term,
    pub location: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseContext {
    pub element_type: String,
    pub exposure: Vec<Term>,
    pub lithology_hypothesis: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_label: String,
    pub phenomena: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredAnalysis {
    pub agent_id: String,
    pub context: CaseContext,
    pub zones: Vec<Zone>,
    pub findings: Vec<Finding>,
    pub synthesis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commentary {
    pub agent_id: String,
    pub target_agent_id: String,
    pub concordances: Vec<String>,
    pub discordances: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::High => "high",
            Confidence::Medium => "medium",
            Confidence::Low => "low",
        }
    }

    /// Case-insensitive parse of `high`, `medium` or `low`.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "high" => Some(Confidence::High),
            "medium" => Some(Confidence::Medium),
            "low" => Some(Confidence::Low),
            _ => None,
        }
    }
}
