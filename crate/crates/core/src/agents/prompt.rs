use std::fmt::Write as _;

use super::parse::render_analysis_reply;
use super::{AgentError, AgentIdentity, BaseProtocol, Roster, StructuredAnalysis};
use crate::orchestrator::{DiscussionLog, Phase};
use crate::rag::DocumentChunk;

/// Case prompt used when the caller supplies none. Identical text goes to the
/// agent team and to the single-model baseline.
pub const DEFAULT_CASE_PROMPT: &str = "I would like you to analyze this image. I would like the output to be very concise and include the following points:

A. A brief description of the element and its context and, if feasible, the identification of the most likely lithological type.
B. Identification, in bullet form, of the deterioration patterns you can identify.

For better identification, indicate in each bullet where the respective pattern is present. At this stage, it is not necessary to present a discussion of the results or comments on the genesis of the patterns.";

pub const NO_GROUNDING_MARKER: &str =
    "[no grounding documents] Retrieval returned nothing for this case; rely on the protocol and say so where it matters.";

/// Section delimiters. Each appears on its own line, exactly once per prompt.
pub mod sections {
    pub const IDENTITY: &str = "### IDENTITY CARD";
    pub const PROTOCOL: &str = "### BASE PROTOCOL";
    pub const GROUNDING: &str = "### GROUNDING DOCUMENTS";
    pub const CASE: &str = "### CASE";
    pub const PEER_ANALYSES: &str = "### PEER ANALYSES";
    pub const DISCUSSION_LOG: &str = "### DISCUSSION LOG";
    pub const TASK: &str = "### TASK";
    pub const OUTPUT: &str = "### OUTPUT FORMAT";
}

const ANALYSIS_CONTRACT: &str = "Reason in prose first. End the reply with exactly one fenced block in this form:
```analysis
ELEMENT: <type of architectural element>
EXPOSURE: <exposure factor>; <exposure factor>   (or: none)
LITHOLOGY: <most likely lithology, or: unknown>
ZONE: <zone label> | <phenomenon>; <phenomenon>
FINDING: <deterioration pattern> | <where it is present> | <short rationale>
```
Repeat ZONE and FINDING lines as needed. Name patterns with the canonical terms of the grounding documents, never with generic wording.";

const COMMENTARY_CONTRACT: &str =
    "End the reply with exactly one fenced block in this form, one PEER group per colleague:
```commentary
PEER: <colleague agent id>
AGREE: <point of concordance>
DISAGREE: <point of discordance>
```
Repeat AGREE and DISAGREE lines as needed.";

const DIAGNOSIS_CONTRACT: &str = "End the reply with exactly one fenced block in this form:
```diagnosis
DESCRIPTION: <brief description of the element, its context and lithology>
CONFIDENCE: <high | medium | low>
FINDING: <deterioration pattern> | <where it is present> | <short rationale>
RESOLVED: <divergence between specialists and how it was settled>
```
Repeat FINDING and RESOLVED lines as needed.";

fn identity_card(out: &mut String, identity: &AgentIdentity) {
    let _ = writeln!(out, "{}", sections::IDENTITY);
    let _ = writeln!(out, "Agent: {}", identity.id);
    let _ = writeln!(out, "Role: {}", identity.role_name);
    if !identity.competence_areas.is_empty() {
        out.push_str("Areas of competence:\n");
        for area in &identity.competence_areas {
            let _ = writeln!(out, "- {area}");
        }
    }
    if !identity.personality_traits.is_empty() {
        out.push_str("Personality traits:\n");
        for trait_ in &identity.personality_traits {
            let _ = writeln!(out, "- {trait_}");
        }
    }
    if !identity.specialization_directive.is_empty() {
        let _ = writeln!(out, "Directive: {}", identity.specialization_directive);
    }
    let _ = writeln!(
        out,
        "Reason only within the competence of the {} and do not speak for other specialists.",
        identity.role_name
    );
    out.push('\n');
}

/// Phase 1 prompt: identity card, protocol stages in order, grounding
/// passages, the case prompt and the output contract.
pub fn render_individual_prompt(
    identity: &AgentIdentity,
    protocol: &BaseProtocol,
    retrieved: &[DocumentChunk],
    case_prompt: &str,
) -> Result<String, AgentError> {
    if identity.is_coordinator {
        return Err(AgentError::Misuse(format!(
            "coordinator {} does not take part in the individual phase",
            identity.id
        )));
    }
    let mut out = String::new();
    identity_card(&mut out, identity);

    let _ = writeln!(out, "{}", sections::PROTOCOL);
    out.push_str(
        "Work through every stage below in order, from the general context to the particular \
         detail and from observation to interpretation. Do not state a diagnosis before the \
         final stage.\n",
    );
    for (index, stage) in protocol.stages.iter().enumerate() {
        let _ = writeln!(out, "#### Stage {}: {}", index + 1, stage.name);
        let _ = writeln!(out, "{}", stage.instruction);
        let _ = writeln!(
            out,
            "Required outputs: {}",
            stage.required_outputs.join(", ")
        );
    }
    out.push('\n');

    let _ = writeln!(out, "{}", sections::GROUNDING);
    if retrieved.is_empty() {
        let _ = writeln!(out, "{NO_GROUNDING_MARKER}");
    } else {
        out.push_str(
            "Classify what you see using the definitions and criteria in these passages.\n",
        );
        for chunk in retrieved {
            let _ = writeln!(out, "[source: {}]", chunk.chunk_id);
            let _ = writeln!(out, "{}", chunk.text);
        }
    }
    out.push('\n');

    let _ = writeln!(out, "{}", sections::CASE);
    let _ = writeln!(out, "{case_prompt}");
    out.push('\n');

    let _ = writeln!(out, "{}", sections::OUTPUT);
    let _ = writeln!(out, "{ANALYSIS_CONTRACT}");
    Ok(out)
}

/// Phase 2 prompt: the reader's card and every peer analysis except its own.
pub fn render_discussion_prompt(
    identity: &AgentIdentity,
    roster: &Roster,
    analyses: &[StructuredAnalysis],
) -> Result<String, AgentError> {
    if identity.is_coordinator {
        return Err(AgentError::Misuse(format!(
            "coordinator {} does not take part in the discussion phase",
            identity.id
        )));
    }
    for specialist in roster.specialists() {
        if !analyses.iter().any(|a| a.agent_id == specialist.id) {
            return Err(AgentError::Misuse(format!(
                "missing individual analysis for {}",
                specialist.id
            )));
        }
    }
    let peers: Vec<&StructuredAnalysis> = analyses
        .iter()
        .filter(|a| a.agent_id != identity.id)
        .collect();
    if peers.is_empty() {
        return Err(AgentError::Misuse(format!(
            "{} has no peers to comment on",
            identity.id
        )));
    }

    let mut out = String::new();
    identity_card(&mut out, identity);

    let _ = writeln!(out, "{}", sections::PEER_ANALYSES);
    for peer in peers {
        let role = roster
            .get(&peer.agent_id)
            .map(|a| a.role_name.as_str())
            .unwrap_or(peer.agent_id.as_str());
        let _ = writeln!(out, "#### {} ({})", role, peer.agent_id);
        let _ = writeln!(out, "{}", render_analysis_reply(peer));
    }
    out.push('\n');

    let _ = writeln!(out, "{}", sections::TASK);
    let _ = writeln!(
        out,
        "Comment on each colleague's analysis from the standpoint of your own specialization \
         as {}. Point out where you concur and where you disagree, and why. Do not rewrite \
         your own analysis and do not negotiate a final answer.",
        identity.role_name
    );
    out.push('\n');

    let _ = writeln!(out, "{}", sections::OUTPUT);
    let _ = writeln!(out, "{COMMENTARY_CONTRACT}");
    Ok(out)
}

/// Phase 3 prompt: the coordinator card and every log entry verbatim, in log
/// order.
pub fn render_consensus_prompt(
    coordinator: &AgentIdentity,
    log: &DiscussionLog,
) -> Result<String, AgentError> {
    if !coordinator.is_coordinator {
        return Err(AgentError::Misuse(format!(
            "{} is not the coordinator",
            coordinator.id
        )));
    }
    let individual = log
        .entries
        .iter()
        .filter(|e| e.phase == Phase::Individual)
        .count();
    let discussion = log
        .entries
        .iter()
        .filter(|e| e.phase == Phase::Discussion)
        .count();
    if individual == 0 {
        return Err(AgentError::PhaseOrder(
            "log has no individual analyses".into(),
        ));
    }
    // A single specialist has nobody to discuss with, so phase 2 is empty.
    if individual > 1 && discussion != individual {
        return Err(AgentError::PhaseOrder(format!(
            "discussion phase incomplete: {discussion} of {individual} commentaries"
        )));
    }
    if log.entries.iter().any(|e| e.phase == Phase::Consensus) {
        return Err(AgentError::PhaseOrder(
            "log already holds a consensus entry".into(),
        ));
    }

    let mut out = String::new();
    identity_card(&mut out, coordinator);

    let _ = writeln!(out, "{}", sections::DISCUSSION_LOG);
    for entry in &log.entries {
        let _ = writeln!(
            out,
            "#### [{}] {} | {}",
            entry.seq,
            entry.phase.as_str(),
            entry.agent_id
        );
        let _ = writeln!(out, "{}", entry.raw_reply);
    }
    out.push('\n');

    let _ = writeln!(out, "{}", sections::TASK);
    out.push_str(
        "Integrate the specialists' analyses and commentaries into one final diagnosis. Where \
         specialists disagree, settle the point by explicit logical argument and record it. \
         State a confidence level of high, medium or low that reflects how consistent the \
         evidence in the log is.\n\n",
    );

    let _ = writeln!(out, "{}", sections::OUTPUT);
    let _ = writeln!(out, "{DIAGNOSIS_CONTRACT}");
    Ok(out)
}

/// Single-shot prompt for the baseline arm: the case prompt and the analysis
/// output contract, with no identity, protocol or grounding.
pub fn render_baseline_prompt(case_prompt: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", sections::CASE);
    let _ = writeln!(out, "{case_prompt}");
    out.push('\n');
    let _ = writeln!(out, "{}", sections::OUTPUT);
    let _ = writeln!(out, "{ANALYSIS_CONTRACT}");
    out
}
