#!/usr/bin/env python3
"""Regenerates the fixture images, corpus and mock transcript.

Run from the repository root: python3 data/fixtures/make_fixtures.py
"""
import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

ROOT = Path(__file__).resolve().parent
SPECIALISTS = ["lithologist", "pathologist", "environmental", "conservator"]


def block(tag, lines):
    return "```" + tag + "\n" + "\n".join(lines) + "\n```"


def image(path, seed, size, base, fmt):
    rng = random.Random(seed)
    img = Image.new("RGB", size, base)
    draw = ImageDraw.Draw(img)
    for _ in range(120):
        x, y = rng.randrange(size[0]), rng.randrange(size[1])
        r = rng.randrange(1, 6)
        shade = rng.randrange(-60, 40)
        colour = tuple(max(0, min(255, c + shade)) for c in base)
        draw.ellipse([x - r, y - r, x + r, y + r], fill=colour)
    if fmt == "JPEG":
        img.save(path, fmt, quality=85)
    else:
        img.save(path, fmt, optimize=False)


CASES = [
    {
        "case_id": "case01",
        "image": "images/case01.png",
        "fmt": "PNG",
        "base": (196, 188, 170),
        "element": "cornice of a church facade",
        "exposure": "rain; pollution",
        "lithology": "limestone",
        "expected": ["BLACK_CRUST", "GRANULAR_DISINTEGRATION", "SCALING", "BIOCOLONIZATION"],
        "notes": "Sheltered undersides blackened; exposed mouldings sanding and flaking; dark growth at the joints.",
        "individual": {
            "lithologist": [
                ("black crust", "underside of the cornice", "compact dark layer bonded to a carbonate substrate"),
                ("sanding", "upper moulding", "loose grains at the surface"),
            ],
            "pathologist": [
                ("BLACK_CRUST", "sheltered underside", "thick dark deposit following the surface relief"),
                ("flaking", "exposed moulding", "thin detached plates"),
                ("granular disintegration", "upper moulding", "rounded arrises, grain loss"),
            ],
            "environmental": [
                ("deposit", "cornice top", "loose dark material where runoff is absent"),
                ("scaling", "exposed moulding", "detachment on the rain-washed face"),
            ],
            "conservator": [
                ("Black crust", "underside of the cornice", "crust to be reduced before consolidation"),
                ("granular disintegration", "upper moulding", "surface cohesion lost"),
            ],
        },
        "final": [
            ("BLACK_CRUST", "sheltered underside of the cornice", "agreed by three specialists"),
            ("GRANULAR_DISINTEGRATION", "upper moulding", "grain loss on rain-washed surfaces"),
            ("SCALING", "exposed moulding", "detached plates"),
            ("DEPOSIT", "cornice top", "loose dark material"),
        ],
        "resolved": ["deposit versus black crust on the top surface: kept as deposit, no bonding visible"],
        "confidence": "high",
        "baseline": [
            ("soiling", "whole cornice", "darkened surface"),
            ("dark stain", "under the cornice", "dark area"),
            ("scaling", "moulding", "thin layers detaching"),
        ],
    },
    {
        "case_id": "case02",
        "image": "images/case02.png",
        "fmt": "PNG",
        "base": (170, 140, 110),
        "element": "base of a retaining wall",
        "exposure": "rising damp; rain",
        "lithology": "sandstone",
        "expected": ["EFFLORESCENCE", "MOIST_AREA", "DIFFERENTIAL_EROSION", "BIOCOLONIZATION", "GRAFFITI"],
        "notes": "Damp band with salts at the foot of the wall; softer beds recessed; green growth; painted tag.",
        "repair": "pathologist",
        "individual": {
            "lithologist": [
                ("moist area", "lower courses", "darker band of uniform height"),
                ("efflorescence", "top of the damp band", "white powdery salts"),
            ],
            "pathologist": [
                ("EFFLORESCENCE", "top of the damp band", "salt crystals at the evaporation front"),
                ("diffuse dark biocolonization", "lower courses", "green and dark growth in the damp zone"),
            ],
            "environmental": [
                ("moist area", "lower courses", "capillary rise from the ground"),
                ("biocolonization", "joints", "growth favoured by moisture"),
            ],
            "conservator": [
                ("graffiti", "centre of the wall", "spray paint"),
                ("efflorescence", "lower courses", "salts to be removed dry"),
            ],
        },
        "final": [
            ("EFFLORESCENCE", "top of the damp band", "salt crystals"),
            ("MOIST_AREA", "lower courses", "capillary rise"),
            ("BIOCOLONIZATION", "joints and lower courses", "growth in the damp zone"),
            ("GRAFFITI", "centre of the wall", "spray paint"),
            ("CRACK", "upper course", "hairline opening noticed while reviewing the analyses"),
        ],
        "resolved": [],
        "confidence": "medium",
        "baseline": [
            ("graffiti", "centre", "paint"),
            ("stain", "lower part", "discoloured band"),
        ],
    },
    {
        "case_id": "case03",
        "image": "images/case03.jpg",
        "fmt": "JPEG",
        "base": (150, 150, 140),
        "element": "column base in a cloister",
        "exposure": "wind",
        "lithology": "tuff",
        "expected": ["ALVEOLIZATION", "EXFOLIATION", "LICHEN", "MISSING_PART"],
        "notes": "Honeycomb cavities on the windward side; peeling layers; lichen thalli; torus partly lost.",
        "individual": {
            "lithologist": [
                ("alveolization", "windward face", "cavities in a soft porous stone"),
                ("pitting", "plinth", "small punctiform holes"),
            ],
            "pathologist": [
                ("ALVEOLIZATION", "windward face", "interconnected cavities"),
                ("exfoliation", "torus", "layers parallel to the surface"),
                ("lichen", "plinth top", "foliose thalli"),
            ],
            "environmental": [
                ("alveolization", "windward face", "wind-driven salt weathering"),
                ("lichen", "plinth top", "sunlit moist surface"),
            ],
            "conservator": [
                ("missing part", "torus", "portion of moulding lost"),
                ("exfoliation", "torus", "layers lifting"),
            ],
        },
        "final": [
            ("ALVEOLIZATION", "windward face", "cavities"),
            ("EXFOLIATION", "torus", "layers lifting"),
            ("LICHEN", "plinth top", "thalli"),
            ("MISSING_PART", "torus", "lost portion"),
            ("PITTING", "plinth", "punctiform holes"),
        ],
        "resolved": ["pitting kept although only one specialist reported it"],
        "confidence": "high",
        "baseline": [
            ("biocolonization", "plinth", "growth"),
            ("missing part", "torus", "lost portion"),
            ("chipping", "edge of the plinth", "small losses"),
        ],
    },
]

INDIVIDUAL_TOKENS = (2400, 1500)
DISCUSSION_TOKENS = (3600, 1000)
CONSENSUS_TOKENS = (9000, 750)
BASELINE_TOKENS = (1200, 400)


def analysis_reply(case, agent, findings):
    lines = [
        f"ELEMENT: {case['element']}",
        f"EXPOSURE: {case['exposure']}",
        f"LITHOLOGY: {case['lithology']}",
        f"ZONE: main | {'; '.join(f[0] for f in findings)}",
    ]
    lines += [f"FINDING: {p} | {loc} | {why}" for p, loc, why in findings]
    prose = f"Analysis by {agent} of {case['case_id']}: {case['element']}."
    return prose + "\n\n" + block("analysis", lines)


def commentary_reply(case, agent):
    lines = []
    for peer in SPECIALISTS:
        if peer == agent:
            continue
        lines.append(f"PEER: {peer}")
        lines.append(f"AGREE: the reading of the {case['element']} is consistent")
        if (SPECIALISTS.index(agent) + SPECIALISTS.index(peer)) % 2:
            lines.append("DISAGREE: the extent of one pattern is overstated")
    return f"Comments from {agent}." + "\n\n" + block("commentary", lines)


def consensus_reply(case):
    lines = [
        f"DESCRIPTION: {case['element'][0].upper() + case['element'][1:]}, probably {case['lithology']}.",
        f"CONFIDENCE: {case['confidence']}",
    ]
    lines += [f"FINDING: {p} | {loc} | {why}" for p, loc, why in case["final"]]
    lines += [f"RESOLVED: {r}" for r in case["resolved"]]
    return "Final synthesis of the team." + "\n\n" + block("diagnosis", lines)


def record(case_id, agent, phase, text, tokens, attempt=0):
    r = {"case_id": case_id, "agent_id": agent, "phase": phase}
    if attempt:
        r["attempt"] = attempt
    r.update(reply_text=text, prompt_tokens=tokens[0], completion_tokens=tokens[1])
    return r


def main():
    (ROOT / "images").mkdir(exist_ok=True)
    corpus, transcript = [], []
    for seed, case in enumerate(CASES):
        image(ROOT / case["image"], seed, (96, 72), case["base"], case["fmt"])
        corpus.append({k: case[k] for k in ("case_id", "image", "expected", "notes")})
        cid = case["case_id"]
        for agent in SPECIALISTS:
            reply = analysis_reply(case, agent, case["individual"][agent])
            if case.get("repair") == agent:
                transcript.append(record(cid, agent, "individual", "I see salts and damp; the findings are listed above.", INDIVIDUAL_TOKENS))
                transcript.append(record(cid, agent, "individual", reply, INDIVIDUAL_TOKENS, attempt=1))
            else:
                transcript.append(record(cid, agent, "individual", reply, INDIVIDUAL_TOKENS))
        for agent in SPECIALISTS:
            transcript.append(record(cid, agent, "discussion", commentary_reply(case, agent), DISCUSSION_TOKENS))
        transcript.append(record(cid, "coordinator", "consensus", consensus_reply(case), CONSENSUS_TOKENS))
        transcript.append(record(cid, "baseline", "baseline", analysis_reply(case, "baseline", case["baseline"]), BASELINE_TOKENS))

    with open(ROOT / "corpus.jsonl", "w") as f:
        for c in corpus:
            f.write(json.dumps(c) + "\n")
    with open(ROOT / "transcript.jsonl", "w") as f:
        for r in transcript:
            f.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()
