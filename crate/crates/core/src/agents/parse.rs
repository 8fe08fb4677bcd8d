//! Fenced output blocks: rendering and parsing.
//!
//! Every reply ends with a fenced block (```` ```analysis ````,
//! ```` ```commentary ```` or ```` ```diagnosis ````) holding one `KEY: value`
//! record per line. Prose outside the block is kept but never parsed.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::{
    AgentError, CaseContext, Commentary, Confidence, Finding, Roster, StructuredAnalysis, Zone,
};
use crate::taxonomy::{PatternTaxonomy, Term};

const FENCE: &str = "```";

struct Block<'a> {
    lines: Vec<(usize, &'a str)>,
    outside: String,
}

/// Locates the last block opened with ```` ```tag ```` and returns its lines
/// together with the surrounding prose.
fn extract_block<'a>(raw: &'a str, tag: &str) -> Result<Block<'a>, AgentError> {
    let lines: Vec<&str> = raw.lines().collect();
    let opener = format!("{FENCE}{tag}");
    let start = lines
        .iter()
        .rposition(|l| l.trim().eq_ignore_ascii_case(&opener))
        .ok_or_else(|| AgentError::MalformedOutput(format!("no {opener} block in reply")))?;
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim() == FENCE)
        .map(|offset| start + 1 + offset)
        .ok_or_else(|| AgentError::MalformedOutput(format!("{opener} block is not closed")))?;

    let before = lines[..start].join("\n");
    let after = lines[end + 1..].join("\n");
    let outside = [before.trim(), after.trim()]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n");

    let inner = lines[start + 1..end]
        .iter()
        .enumerate()
        .map(|(i, l)| (start + 2 + i, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    Ok(Block {
        lines: inner,
        outside,
    })
}

fn split_record(line_no: usize, line: &str) -> Result<(String, &str), AgentError> {
    let (key, value) = line.split_once(':').ok_or_else(|| {
        AgentError::MalformedOutput(format!("line {line_no}: expected KEY: value, got {line:?}"))
    })?;
    Ok((key.trim().to_ascii_uppercase(), value.trim()))
}

fn parse_finding(
    line_no: usize,
    value: &str,
    taxonomy: &PatternTaxonomy,
) -> Result<Finding, AgentError> {
    let mut cells = value.splitn(3, '|').map(str::trim);
    let pattern = cells.next().unwrap_or_default();
    let location = cells.next().unwrap_or_default();
    let rationale = cells.next().unwrap_or_default();
    if pattern.is_empty() {
        return Err(AgentError::MalformedOutput(format!(
            "line {line_no}: finding has no pattern"
        )));
    }
    if location.is_empty() {
        return Err(AgentError::MalformedOutput(format!(
            "line {line_no}: finding {pattern:?} has no location"
        )));
    }
    Ok(Finding {
        pattern: taxonomy.normalize_label(pattern),
        location: location.to_string(),
        rationale: rationale.to_string(),
    })
}

fn term_text(term: &Term) -> &str {
    match term {
        Term::Canonical(id) => id,
        Term::Unknown(raw) => raw,
    }
}

fn write_finding(out: &mut String, finding: &Finding) {
    let _ = writeln!(
        out,
        "FINDING: {} | {} | {}",
        term_text(&finding.pattern),
        finding.location,
        finding.rationale
    );
}

/// Parses an individual-phase (or baseline) reply.
pub fn parse_structured_analysis(
    raw: &str,
    taxonomy: &PatternTaxonomy,
    agent_id: &str,
) -> Result<StructuredAnalysis, AgentError> {
    let block = extract_block(raw, "analysis")?;
    let mut element_type = String::new();
    let mut exposure = Vec::new();
    let mut lithology = Term::Unknown("unknown".into());
    let mut zones = Vec::new();
    let mut findings = Vec::new();

    for (line_no, line) in block.lines {
        let (key, value) = split_record(line_no, line)?;
        match key.as_str() {
            "ELEMENT" => element_type = value.to_string(),
            "EXPOSURE" => {
                exposure = if value.is_empty() || value.eq_ignore_ascii_case("none") {
                    Vec::new()
                } else {
                    value
                        .split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| taxonomy.normalize_exposure(s))
                        .collect()
                };
            }
            "LITHOLOGY" => lithology = taxonomy.normalize_lithology(value),
            "ZONE" => {
                let (label, phenomena) = value.split_once('|').unwrap_or((value, ""));
                let label = label.trim();
                if label.is_empty() {
                    return Err(AgentError::MalformedOutput(format!(
                        "line {line_no}: zone has no label"
                    )));
                }
                zones.push(Zone {
                    zone_label: label.to_string(),
                    phenomena: phenomena
                        .split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect(),
                });
            }
            "FINDING" => findings.push(parse_finding(line_no, value, taxonomy)?),
            other => {
                return Err(AgentError::MalformedOutput(format!(
                    "line {line_no}: unexpected key {other:?} in analysis block"
                )))
            }
        }
    }

    Ok(StructuredAnalysis {
        agent_id: agent_id.to_string(),
        context: CaseContext {
            element_type,
            exposure,
            lithology_hypothesis: lithology,
        },
        zones,
        findings,
        synthesis: block.outside,
    })
}

pub fn render_analysis_block(analysis: &StructuredAnalysis) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FENCE}analysis");
    let _ = writeln!(out, "ELEMENT: {}", analysis.context.element_type);
    let exposure = if analysis.context.exposure.is_empty() {
        "none".to_string()
    } else {
        analysis
            .context
            .exposure
            .iter()
            .map(term_text)
            .collect::<Vec<_>>()
            .join("; ")
    };
    let _ = writeln!(out, "EXPOSURE: {exposure}");
    let _ = writeln!(
        out,
        "LITHOLOGY: {}",
        term_text(&analysis.context.lithology_hypothesis)
    );
    for zone in &analysis.zones {
        let _ = writeln!(
            out,
            "ZONE: {} | {}",
            zone.zone_label,
            zone.phenomena.join("; ")
        );
    }
    for finding in &analysis.findings {
        write_finding(&mut out, finding);
    }
    out.push_str(FENCE);
    out
}

/// Prose synthesis followed by the analysis block, as an agent would reply.
pub fn render_analysis_reply(analysis: &StructuredAnalysis) -> String {
    if analysis.synthesis.is_empty() {
        render_analysis_block(analysis)
    } else {
        format!(
            "{}\n\n{}",
            analysis.synthesis,
            render_analysis_block(analysis)
        )
    }
}

/// Parses a discussion-phase reply into one commentary per addressed peer.
pub fn parse_commentary(
    raw: &str,
    agent_id: &str,
    roster: &Roster,
) -> Result<Vec<Commentary>, AgentError> {
    let block = extract_block(raw, "commentary")?;
    let mut out: Vec<Commentary> = Vec::new();
    let mut seen = HashSet::new();

    for (line_no, line) in block.lines {
        let (key, value) = split_record(line_no, line)?;
        match key.as_str() {
            "PEER" => {
                let target = roster.get(value).ok_or_else(|| {
                    AgentError::MalformedOutput(format!(
                        "line {line_no}: unknown agent id {value:?}"
                    ))
                })?;
                if target.id == agent_id || target.is_coordinator {
                    return Err(AgentError::MalformedOutput(format!(
                        "line {line_no}: {value} is not a peer of {agent_id}"
                    )));
                }
                if !seen.insert(target.id.clone()) {
                    return Err(AgentError::MalformedOutput(format!(
                        "line {line_no}: peer {value} addressed twice"
                    )));
                }
                out.push(Commentary {
                    agent_id: agent_id.to_string(),
                    target_agent_id: target.id.clone(),
                    concordances: Vec::new(),
                    discordances: Vec::new(),
                });
            }
            "AGREE" | "DISAGREE" => {
                let current = out.last_mut().ok_or_else(|| {
                    AgentError::MalformedOutput(format!(
                        "line {line_no}: {key} before any PEER line"
                    ))
                })?;
                if key == "AGREE" {
                    current.concordances.push(value.to_string());
                } else {
                    current.discordances.push(value.to_string());
                }
            }
            other => {
                return Err(AgentError::MalformedOutput(format!(
                    "line {line_no}: unexpected key {other:?} in commentary block"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(AgentError::MalformedOutput(
            "commentary block addresses no peers".into(),
        ));
    }
    Ok(out)
}

pub fn render_commentary_reply(prose: &str, commentaries: &[Commentary]) -> String {
    let mut out = String::new();
    if !prose.is_empty() {
        out.push_str(prose);
        out.push_str("\n\n");
    }
    let _ = writeln!(out, "{FENCE}commentary");
    for c in commentaries {
        let _ = writeln!(out, "PEER: {}", c.target_agent_id);
        for text in &c.concordances {
            let _ = writeln!(out, "AGREE: {text}");
        }
        for text in &c.discordances {
            let _ = writeln!(out, "DISAGREE: {text}");
        }
    }
    out.push_str(FENCE);
    out
}

/// The coordinator's parsed reply, before provenance is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusReply {
    pub description: String,
    pub confidence: Confidence,
    pub findings: Vec<Finding>,
    pub divergences_resolved: Vec<String>,
}

pub fn parse_consensus_reply(
    raw: &str,
    taxonomy: &PatternTaxonomy,
) -> Result<ConsensusReply, AgentError> {
    let block = extract_block(raw, "diagnosis")?;
    let mut description: Vec<&str> = Vec::new();
    let mut confidence = None;
    let mut findings = Vec::new();
    let mut resolved = Vec::new();

    for (line_no, line) in block.lines {
        let (key, value) = split_record(line_no, line)?;
        match key.as_str() {
            "DESCRIPTION" => description.push(value),
            "CONFIDENCE" => {
                confidence = Some(Confidence::parse(value).ok_or_else(|| {
                    AgentError::MalformedOutput(format!(
                        "line {line_no}: confidence must be high, medium or low, got {value:?}"
                    ))
                })?);
            }
            "FINDING" => findings.push(parse_finding(line_no, value, taxonomy)?),
            "RESOLVED" => resolved.push(value.to_string()),
            other => {
                return Err(AgentError::MalformedOutput(format!(
                    "line {line_no}: unexpected key {other:?} in diagnosis block"
                )))
            }
        }
    }
    let confidence = confidence.ok_or_else(|| {
        AgentError::MalformedOutput("diagnosis block has no CONFIDENCE line".into())
    })?;
    Ok(ConsensusReply {
        description: description.join(" "),
        confidence,
        findings,
        divergences_resolved: resolved,
    })
}

pub fn render_consensus_reply(prose: &str, reply: &ConsensusReply) -> String {
    let mut out = String::new();
    if !prose.is_empty() {
        out.push_str(prose);
        out.push_str("\n\n");
    }
    let _ = writeln!(out, "{FENCE}diagnosis");
    if !reply.description.is_empty() {
        let _ = writeln!(out, "DESCRIPTION: {}", reply.description);
    }
    let _ = writeln!(out, "CONFIDENCE: {}", reply.confidence.as_str());
    for finding in &reply.findings {
        write_finding(&mut out, finding);
    }
    for text in &reply.divergences_resolved {
        let _ = writeln!(out, "RESOLVED: {text}");
    }
    out.push_str(FENCE);
    out
}
