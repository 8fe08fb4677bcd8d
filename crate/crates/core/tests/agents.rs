use std::path::PathBuf;

use proptest::prelude::*;
use stonediag_core::agents::{
    parse_commentary, parse_consensus_reply, parse_structured_analysis, render_analysis_reply,
    render_baseline_prompt, render_commentary_reply, render_consensus_prompt,
    render_consensus_reply, render_discussion_prompt, render_individual_prompt, sections,
    AgentError, CaseContext, Commentary, Confidence, ConsensusReply, Finding, Roster,
    StructuredAnalysis, Zone, DEFAULT_CASE_PROMPT, NO_GROUNDING_MARKER,
};
use stonediag_core::gateway::Usage;
use stonediag_core::orchestrator::{DiscussionLog, EntryContent, Phase};
use stonediag_core::rag::DocumentChunk;
use stonediag_core::taxonomy::{PatternTaxonomy, Term};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn taxonomy() -> PatternTaxonomy {
    PatternTaxonomy::load(&data("taxonomy.jsonl")).unwrap()
}

fn roster() -> Roster {
    Roster::load(&data("roster.toml")).unwrap()
}

/// Byte offset of `needle`, asserting it occurs exactly once.
fn unique_offset(haystack: &str, needle: &str) -> usize {
    let hits: Vec<usize> = haystack.match_indices(needle).map(|(i, _)| i).collect();
    assert_eq!(hits.len(), 1, "{needle:?} occurs {} times", hits.len());
    hits[0]
}

fn line_offset(haystack: &str, line: &str) -> usize {
    let hits: Vec<usize> = haystack
        .match_indices(line)
        .map(|(i, _)| i)
        .filter(|&i| {
            (i == 0 || haystack.as_bytes()[i - 1] == b'\n')
                && haystack[i + line.len()..].starts_with('\n')
        })
        .collect();
    assert_eq!(hits.len(), 1, "line {line:?} occurs {} times", hits.len());
    hits[0]
}

fn chunk(source: &str, ordinal: usize, text: &str) -> DocumentChunk {
    DocumentChunk {
        chunk_id: format!("{source}#{ordinal:05}"),
        source_id: source.into(),
        text: text.into(),
        approx_tokens: 4,
    }
}

fn analysis(agent: &str, patterns: &[&str]) -> StructuredAnalysis {
    StructuredAnalysis {
        agent_id: agent.into(),
        context: CaseContext {
            element_type: "pilaster".into(),
            exposure: vec![Term::Canonical("RAIN".into())],
            lithology_hypothesis: Term::Canonical("MARBLE".into()),
        },
        zones: vec![],
        findings: patterns
            .iter()
            .map(|p| Finding {
                pattern: Term::Canonical(p.to_string()),
                location: "base".into(),
                rationale: String::new(),
            })
            .collect(),
        synthesis: format!("{agent} wrote this"),
    }
}

#[test]
fn individual_prompt_sections_in_order() {
    let roster = roster();
    let lithologist = roster.get("lithologist").unwrap();
    let retrieved = vec![
        chunk("b.txt", 3, "second passage"),
        chunk("a.txt", 0, "first passage"),
    ];
    let prompt = render_individual_prompt(
        lithologist,
        &roster.protocol,
        &retrieved,
        DEFAULT_CASE_PROMPT,
    )
    .unwrap();

    let order = [
        sections::IDENTITY,
        sections::PROTOCOL,
        sections::GROUNDING,
        sections::CASE,
        sections::OUTPUT,
    ];
    let offsets: Vec<usize> = order.iter().map(|s| line_offset(&prompt, s)).collect();
    assert!(offsets.windows(2).all(|w| w[0] < w[1]), "{offsets:?}");
    assert!(!prompt.contains(sections::PEER_ANALYSES));
    assert!(!prompt.contains(sections::DISCUSSION_LOG));

    let stages: Vec<usize> = roster
        .protocol
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| unique_offset(&prompt, &format!("#### Stage {}: {}\n", i + 1, s.name)))
        .collect();
    assert!(stages.windows(2).all(|w| w[0] < w[1]));
    assert!(offsets[1] < stages[0] && stages[3] < offsets[2]);

    // Grounding keeps retrieval order, not source order.
    let first = unique_offset(&prompt, "[source: b.txt#00003]");
    let second = unique_offset(&prompt, "[source: a.txt#00000]");
    assert!(offsets[2] < first && first < second && second < offsets[3]);
    assert!(!prompt.contains(NO_GROUNDING_MARKER));

    assert!(prompt.contains(DEFAULT_CASE_PROMPT));
    assert!(prompt.contains("Role: Lithologist"));
}

#[test]
fn individual_prompt_without_grounding_carries_marker() {
    let roster = roster();
    let agent = roster.get("pathologist").unwrap();
    let prompt = render_individual_prompt(agent, &roster.protocol, &[], "Look at this.").unwrap();
    let marker = unique_offset(&prompt, NO_GROUNDING_MARKER);
    assert!(line_offset(&prompt, sections::GROUNDING) < marker);
    assert!(marker < line_offset(&prompt, sections::CASE));
}

#[test]
fn coordinator_never_gets_specialist_prompts() {
    let roster = roster();
    let coordinator = roster.coordinator();
    assert!(matches!(
        render_individual_prompt(coordinator, &roster.protocol, &[], "x"),
        Err(AgentError::Misuse(_))
    ));
    let analyses: Vec<_> = roster.specialists().map(|a| analysis(&a.id, &[])).collect();
    assert!(matches!(
        render_discussion_prompt(coordinator, &roster, &analyses),
        Err(AgentError::Misuse(_))
    ));
}

#[test]
fn discussion_prompt_shows_every_peer_but_not_self() {
    let roster = roster();
    let analyses: Vec<_> = roster
        .specialists()
        .map(|a| analysis(&a.id, &["CRACK"]))
        .collect();
    for reader in roster.specialists() {
        let prompt = render_discussion_prompt(reader, &roster, &analyses).unwrap();
        for other in roster.specialists() {
            let text = format!("{} wrote this", other.id);
            if other.id == reader.id {
                assert!(
                    !prompt.contains(&text),
                    "{} sees its own analysis",
                    reader.id
                );
            } else {
                unique_offset(&prompt, &text);
            }
        }
        let peers = line_offset(&prompt, sections::PEER_ANALYSES);
        assert!(line_offset(&prompt, sections::IDENTITY) < peers);
        assert!(peers < line_offset(&prompt, sections::TASK));
        assert!(line_offset(&prompt, sections::TASK) < line_offset(&prompt, sections::OUTPUT));
    }

    let partial = &analyses[..2];
    let reader = roster.get("lithologist").unwrap();
    assert!(matches!(
        render_discussion_prompt(reader, &roster, partial),
        Err(AgentError::Misuse(_))
    ));
}

fn push(log: &mut DiscussionLog, phase: Phase, agent: &str, raw: &str) {
    log.push(
        phase,
        agent,
        EntryContent::Text(raw.into()),
        raw.into(),
        Usage::default(),
        0,
        0,
    );
}

#[test]
fn consensus_prompt_replays_the_log_in_order() {
    let roster = roster();
    let mut log = DiscussionLog::new("c1");
    let specialists: Vec<String> = roster.specialists().map(|a| a.id.clone()).collect();
    for id in &specialists {
        push(
            &mut log,
            Phase::Individual,
            id,
            &format!("analysis by {id}"),
        );
    }
    // Incomplete discussion phase.
    push(
        &mut log,
        Phase::Discussion,
        &specialists[0],
        "first comment",
    );
    assert!(matches!(
        render_consensus_prompt(roster.coordinator(), &log),
        Err(AgentError::PhaseOrder(_))
    ));
    for id in &specialists[1..] {
        push(&mut log, Phase::Discussion, id, &format!("comment by {id}"));
    }

    let prompt = render_consensus_prompt(roster.coordinator(), &log).unwrap();
    let positions: Vec<usize> = log
        .entries
        .iter()
        .map(|e| {
            unique_offset(
                &prompt,
                &format!(
                    "#### [{}] {} | {}\n{}\n",
                    e.seq, e.phase, e.agent_id, e.raw_reply
                ),
            )
        })
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    assert!(line_offset(&prompt, sections::DISCUSSION_LOG) < positions[0]);
    assert!(positions[positions.len() - 1] < line_offset(&prompt, sections::TASK));

    let specialist = roster.get(&specialists[0]).unwrap();
    assert!(matches!(
        render_consensus_prompt(specialist, &log),
        Err(AgentError::Misuse(_))
    ));
}

#[test]
fn baseline_prompt_has_no_agent_sections() {
    let prompt = render_baseline_prompt(DEFAULT_CASE_PROMPT);
    assert!(line_offset(&prompt, sections::CASE) < line_offset(&prompt, sections::OUTPUT));
    assert!(!prompt.contains(sections::IDENTITY));
    assert!(!prompt.contains(sections::GROUNDING));
    assert!(prompt.contains(DEFAULT_CASE_PROMPT));
}

#[test]
fn malformed_replies_are_rejected() {
    let t = taxonomy();
    let r = roster();
    let malformed = |res: Result<StructuredAnalysis, AgentError>| {
        matches!(res, Err(AgentError::MalformedOutput(_)))
    };
    assert!(malformed(parse_structured_analysis(
        "no block at all",
        &t,
        "a"
    )));
    assert!(malformed(parse_structured_analysis(
        "```analysis\nELEMENT: wall\n",
        &t,
        "a"
    )));
    assert!(malformed(parse_structured_analysis(
        "```analysis\nFINDING: crack\n```",
        &t,
        "a"
    )));
    assert!(malformed(parse_structured_analysis(
        "```analysis\nCOLOUR: grey\n```",
        &t,
        "a"
    )));
    for bad in [
        "```commentary\nAGREE: yes\n```",
        "```commentary\nPEER: lithologist\n```",
        "```commentary\nPEER: coordinator\n```",
        "```commentary\nPEER: nobody\n```",
        "```commentary\nPEER: pathologist\nPEER: pathologist\n```",
        "```commentary\n```",
    ] {
        assert!(
            matches!(
                parse_commentary(bad, "lithologist", &r),
                Err(AgentError::MalformedOutput(_))
            ),
            "{bad}"
        );
    }
    assert!(parse_consensus_reply("```diagnosis\nDESCRIPTION: x\n```", &t).is_err());
    assert!(parse_consensus_reply("```diagnosis\nCONFIDENCE: certain\n```", &t).is_err());
}

#[test]
fn last_block_wins_and_prose_is_kept() {
    let t = taxonomy();
    let raw = "Draft:\n```analysis\nFINDING: crack | top |\n```\nRevised:\n```analysis\nFINDING: pitting | base | holes\n```\nDone.";
    let parsed = parse_structured_analysis(raw, &t, "a").unwrap();
    assert_eq!(parsed.findings.len(), 1);
    assert_eq!(
        parsed.findings[0].pattern,
        Term::Canonical("PITTING".into())
    );
    assert!(parsed.synthesis.starts_with("Draft:"));
    assert!(parsed.synthesis.ends_with("Done."));
    assert_eq!(
        parsed.context.lithology_hypothesis,
        Term::Unknown("unknown".into())
    );
}

fn text() -> impl Strategy<Value = String> {
    "[a-z][a-z ,.()]{0,24}[a-z.]"
}

fn term(pool: &'static [&'static str]) -> impl Strategy<Value = Term> {
    prop_oneof![
        prop::sample::select(pool).prop_map(|s| Term::Canonical(s.to_string())),
        "[a-z]{3,10}".prop_map(|w| Term::Unknown(format!("unlisted {w}"))),
    ]
}

const PATTERNS: &[&str] = &["CRACK", "BLACK_CRUST", "SCALING", "LICHEN", "MISSING_PART"];
const EXPOSURES: &[&str] = &["RAIN", "WIND", "RISING_DAMP"];
const LITHOLOGIES: &[&str] = &["LIMESTONE", "GRANITE", "TUFF"];

fn finding() -> impl Strategy<Value = Finding> {
    (
        term(PATTERNS),
        text(),
        prop_oneof![Just(String::new()), text()],
    )
        .prop_map(|(pattern, location, rationale)| Finding {
            pattern,
            location,
            rationale,
        })
}

fn structured_analysis() -> impl Strategy<Value = StructuredAnalysis> {
    (
        text(),
        prop::collection::vec(term(EXPOSURES), 0..3),
        term(LITHOLOGIES),
        prop::collection::vec(
            ("[a-z]{1,8}", prop::collection::vec("[a-z]{1,8}", 0..3)),
            0..3,
        ),
        prop::collection::vec(finding(), 0..6),
        prop_oneof![Just(String::new()), text()],
    )
        .prop_map(
            |(element, exposure, lithology, zones, findings, synthesis)| StructuredAnalysis {
                agent_id: "pathologist".into(),
                context: CaseContext {
                    element_type: element,
                    exposure,
                    lithology_hypothesis: lithology,
                },
                zones: zones
                    .into_iter()
                    .map(|(zone_label, phenomena)| Zone {
                        zone_label,
                        phenomena,
                    })
                    .collect(),
                findings,
                synthesis,
            },
        )
}

proptest! {
    #[test]
    fn analysis_render_parse_round_trip(a in structured_analysis()) {
        let t = taxonomy();
        let raw = render_analysis_reply(&a);
        prop_assert_eq!(parse_structured_analysis(&raw, &t, "pathologist").unwrap(), a);
    }

    #[test]
    fn commentary_render_parse_round_trip(
        peers in prop::sample::subsequence(vec!["pathologist", "environmental", "conservator"], 1..=3),
        notes in prop::collection::vec(
            (prop::collection::vec(text(), 0..3), prop::collection::vec(text(), 0..3)), 3),
        prose in prop_oneof![Just(String::new()), text()],
    ) {
        let r = roster();
        let commentaries: Vec<Commentary> = peers
            .iter()
            .zip(notes)
            .map(|(peer, (agree, disagree))| Commentary {
                agent_id: "lithologist".into(),
                target_agent_id: peer.to_string(),
                concordances: agree,
                discordances: disagree,
            })
            .collect();
        let raw = render_commentary_reply(&prose, &commentaries);
        prop_assert_eq!(parse_commentary(&raw, "lithologist", &r).unwrap(), commentaries);
    }

    #[test]
    fn consensus_render_parse_round_trip(
        description in prop_oneof![Just(String::new()), text()],
        confidence in prop::sample::select(vec![Confidence::High, Confidence::Medium, Confidence::Low]),
        findings in prop::collection::vec(finding(), 0..6),
        resolved in prop::collection::vec(text(), 0..3),
        prose in prop_oneof![Just(String::new()), text()],
    ) {
        let t = taxonomy();
        let reply = ConsensusReply { description, confidence, findings, divergences_resolved: resolved };
        let raw = render_consensus_reply(&prose, &reply);
        prop_assert_eq!(parse_consensus_reply(&raw, &t).unwrap(), reply);
    }
}
