"""Self-contained offline run: synthetic transcripts, scripted agents, two-rater truth."""

from __future__ import annotations

import json
import random
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..agents import request_tag
from ..instruments import DualAxisRating, InstrumentId, grid_reconcile, load_instrument
from .config import RunConfig, write_json
from .evaluation import cmd_evaluate
from .rating import RATINGS_SUFFIX, cmd_rate
from .reporting import cmd_report

TOPICS = {
    1: "feeling sad or down",
    2: "feeling guilty or blaming yourself",
    3: "thoughts that life is not worth living",
    4: "trouble falling asleep",
    5: "waking up during the night",
    6: "waking up too early in the morning",
    7: "getting things done at work or at home",
    10: "worrying or feeling tense",
    11: "physical signs of anxiety like a racing heart",
    12: "your appetite",
    13: "tiredness or low energy",
    14: "interest in sex",
    15: "worrying about your physical health",
    16: "losing weight without trying",
    17: "whether you think you are unwell",
}
FREQ_PHRASES = ("", "now and then", "much of the time", "almost all the time")
INTENSITY_PHRASES = ("", "mild", "noticeable", "quite severe", "overwhelming")

# (frequency, intensity) per item for each synthetic interview.
PLANS: dict[str, dict[int, tuple[int, int]]] = {
    "demo01": {1: (2, 2), 2: (1, 2), 3: (0, 0), 4: (3, 2), 5: (2, 1), 6: (0, 0), 7: (2, 3),
               10: (2, 2), 11: (1, 1), 12: (2, 1), 13: (3, 2), 14: (0, 0), 15: (1, 1), 16: (0, 0), 17: (0, 0)},
    "demo02": {1: (3, 3), 2: (2, 3), 3: (1, 2), 4: (2, 2), 5: (3, 2), 6: (2, 2), 7: (3, 4),
               10: (3, 3), 11: (2, 2), 12: (2, 2), 13: (3, 2), 14: (2, 1), 15: (2, 2), 16: (2, 1), 17: (1, 1)},
    "demo03": {1: (1, 1), 2: (0, 0), 3: (0, 0), 4: (1, 1), 5: (0, 0), 6: (0, 0), 7: (1, 2),
               10: (1, 2), 11: (0, 0), 12: (0, 0), 13: (1, 1), 14: (0, 0), 15: (0, 0), 16: (0, 0), 17: (0, 0)},
}
# demo02 follows an interleaved, non-sequential interview order.
INTERLEAVED = {"demo02"}
# This tag first answers with prose only, exercising the repair retry.
REPAIR_TAG = "demo02/hamd/7"


@dataclass
class DemoResult:
    root: Path
    ratings_files: list[Path]
    evaluation_path: Path
    table_files: list[Path]
    expected_totals: dict[str, int]
    observed_totals: dict[str, float]


def _answer(item: int, freq: int, intensity: int) -> str:
    if freq == 0 or intensity == 0:
        return "No, that hasn't really been an issue for me."
    return (
        f"Yes, {TOPICS[item]} has been a problem {FREQ_PHRASES[freq]}, "
        f"and honestly it feels {INTENSITY_PHRASES[intensity]}."
    )


def build_transcript(interview_id: str, plan: dict[int, tuple[int, int]], seed: int) -> dict[str, Any]:
    order = sorted(plan)
    if interview_id in INTERLEAVED:
        random.Random(seed).shuffle(order)
    clin, pat = "SPEAKER_00", "SPEAKER_01"
    if interview_id == "demo03":  # diarizer numbered the patient first
        clin, pat = pat, clin
    turns = [(clin, "Hello, thanks for coming in. How have you been feeling over the past week?"),
             (pat, "It's been a mixed week, to be honest.")]
    for item in order:
        turns.append((clin, f"Over the past week, have you had any difficulty with {TOPICS[item]}?"))
        turns.append((pat, _answer(item, *plan[item])))
    turns.append((clin, "Thank you. Is there anything else you would like to tell me?"))
    turns.append((pat, "No, I think that covers it."))
    utterances, clock = [], 0.0
    for n, (speaker, text) in enumerate(turns):
        dur = round(1.5 + 0.05 * len(text), 2)
        utterances.append({"id": f"u{n:03d}", "speaker": speaker, "start": round(clock, 2),
                           "end": round(clock + dur, 2), "text": text})
        clock += dur + 0.4
    return {"interview_id": interview_id, "dataset": "synthetic", "utterances": utterances}


def build_mock_script(transcripts: dict[str, dict[str, Any]]) -> tuple[dict[str, Any], dict[str, int]]:
    """Scripted agent responses plus the total score each interview's script encodes."""
    instrument = load_instrument(InstrumentId.HAMD17S)
    script: dict[str, Any] = {}
    totals: dict[str, int] = {}
    for iid, doc in transcripts.items():
        plan = PLANS[iid]
        by_text = {u["text"]: u["id"] for u in doc["utterances"]}
        totals[iid] = 0
        for item in instrument.items:
            freq, intensity = plan[item.item_id]
            score = grid_reconcile(item, DualAxisRating(freq, intensity))
            totals[iid] += score
            evidence = []
            if score > 0:
                text = _answer(item.item_id, freq, intensity)
                evidence.append({"utterance_id": by_text[text], "quote": f"has been a problem {FREQ_PHRASES[freq]}"})
            block = {
                "evidence": evidence,
                "justification": f"Patient describes {TOPICS[item.item_id]} "
                + (f"{FREQ_PHRASES[freq]} at {INTENSITY_PHRASES[intensity]} intensity." if score else "as absent."),
                "frequency": freq,
                "intensity": intensity,
                "score": score,
            }
            reply = (
                "Stage 1: relevant dialog located.\nStage 2: see justification.\n"
                f"Stage 3: mapped to the grid.\n```json\n{json.dumps(block)}\n```\n"
            )
            tag = request_tag(iid, InstrumentId.HAMD17S, item.item_id)
            if tag == REPAIR_TAG:
                script[tag] = ["The patient seems to struggle with work; I would rate this fairly high.", reply]
            else:
                script[tag] = reply
    return script, totals


def build_truth(seed: int) -> dict[str, dict[str, dict[str, float]]]:
    """Two synthetic raters per interview, each within one point of the scripted score."""
    rng = random.Random(seed)
    instrument = load_instrument(InstrumentId.HAMD17S)
    truth: dict[str, dict[str, dict[str, float]]] = {}
    for iid in sorted(PLANS):
        raters = {}
        for rater in ("rater_a", "rater_b"):
            scores = {}
            for item in instrument.items:
                base = grid_reconcile(item, DualAxisRating(*PLANS[iid][item.item_id]))
                scores[str(item.item_id)] = float(min(item.max_score, max(0, base + rng.choice((-1, 0, 0, 1)))))
            raters[rater] = scores
        truth[iid] = raters
    return truth


def cmd_mock_demo(root: str | Path | None = None, parallelism_cap: int = 4, seed: int = 7) -> DemoResult:
    """Run rate -> evaluate -> report entirely offline and check the results."""
    base = Path(root) if root is not None else Path(tempfile.mkdtemp(prefix="hamrater-demo-"))
    tdir = base / "transcripts"
    tdir.mkdir(parents=True, exist_ok=True)
    transcripts = {iid: build_transcript(iid, PLANS[iid], seed) for iid in sorted(PLANS)}
    for iid, doc in transcripts.items():
        write_json(tdir / f"{iid}.json", doc)
    script, expected = build_mock_script(transcripts)
    write_json(base / "mock_script.json", script)
    write_json(base / "truth.json", build_truth(seed))
    write_json(base / "expected_totals.json", expected)

    raw_config = {
        "instrument": "HAMD17S",
        "backend": {"kind": "ScriptedMock", "script_path": "mock_script.json"},
        "model_name": "scripted-mock",
        "retry_budget": 1,
        "parallelism_cap": parallelism_cap,
        "output_dir": "ratings",
        "seed": seed,
    }
    write_json(base / "config.json", raw_config)
    config = RunConfig.load(base / "config.json")
    outcome = cmd_rate(config, tdir, base / "ratings")
    if outcome.exit_code != 0:
        raise RuntimeError(f"demo rating failed: {outcome.manifest['failures']}")

    observed = {}
    for f in outcome.written:
        doc = json.loads(f.read_text(encoding="utf-8"))
        observed[doc["interview_id"]] = doc["total"]
    if observed != expected:
        raise RuntimeError(f"demo totals {observed} differ from scripted totals {expected}")

    eval_path = cmd_evaluate(base / "ratings", base / "truth.json", base / "evaluation")
    cmd_report(eval_path, "md", base / "tables")
    tables = sorted((base / "tables").glob("*.md"))
    if len(tables) != 2:
        raise RuntimeError("demo did not render both tables")
    return DemoResult(
        root=base,
        ratings_files=sorted(base.joinpath("ratings").glob(f"*{RATINGS_SUFFIX}")),
        evaluation_path=eval_path,
        table_files=tables,
        expected_totals=expected,
        observed_totals=observed,
    )
