"""Per-item rating agents: prompt construction, response parsing and scorecard assembly."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Mapping, Protocol

from .backend import ATTEMPT_SEP, CompletionRequest, CompletionResponse
from .instruments import (
    FREQUENCY_LEVELS,
    MAX_FREQUENCY,
    DualAxisRating,
    InstrumentId,
    InstrumentSpec,
    ItemSpec,
    RatingMode,
    default_grid_table,
    grid_reconcile,
    total_score,
)
from .transcript import Transcript, normalize_ws, render_for_prompt

log = logging.getLogger(__name__)

PROMPT_VERSION = "item-agent/1"
DEFAULT_RETRY_BUDGET = 2
DEFAULT_PARALLELISM = 4

PARSE_REASONS = (
    "no-structured-block",
    "missing-field",
    "out-of-range",
    "unknown-utterance-id",
    "quote-mismatch",
    "mode-mismatch",
)

SCALE_NAMES = {
    InstrumentId.HAMD17S: "Hamilton Depression Rating Scale (HAM-D 17, text-evaluable items)",
    InstrumentId.HAMD17S_EXT: "Hamilton Depression Rating Scale (HAM-D 17, text-evaluable items, extended conventions)",
    InstrumentId.HAMA14S: "Hamilton Anxiety Rating Scale (HAM-A 14, text-evaluable items)",
}

STAGE_HEADINGS = (
    "Stage 1 - Contextual identification",
    "Stage 2 - Qualitative justification",
    "Stage 3 - Quantitative mapping",
)

_ROLE_TEXT = (
    "You are a dedicated clinical rater for exactly one item of the {scale}: "
    "item {item_id}, {name}. Rate this item only. Ignore evidence that bears "
    "solely on other items.\n\nItem focus: {description}\n"
)
_STAGE1 = (
    "{h}: Scan the complete diarized interview transcript for every passage "
    "relevant to {name}. Relevant dialog may occur anywhere in the interview "
    "and in any order; do not assume a fixed question sequence.\n"
)
_STAGE2 = (
    "{h}: Write a short justification that summarizes the relevant material, "
    "citing specific evidence from the patient's speech. Every citation names "
    "the utterance id shown in square brackets and quotes words copied "
    "verbatim from that utterance.\n"
)
_STAGE3_GRID = (
    "{h}: Rate the symptom on two separate dimensions before giving the final "
    "integer.\n  Frequency (0-{fmax}): {freq}.\n  Intensity (0-{imax}), using "
    "the anchors below.\nThe final item score combines both: a symptom that is "
    "absent on either dimension scores 0, and an occasional symptom is rated "
    "one point below its intensity (minimum 1).\n"
)
_STAGE3_SEVERITY = (
    "{h}: Map the evidence directly to a single severity integer from 0 to "
    "{imax} using the anchors below.\n"
)
_FORMAT_GRID = (
    "End your response with exactly one fenced block of this form:\n"
    "```json\n"
    '{{"evidence": [{{"utterance_id": "<id>", "quote": "<verbatim words>"}}], '
    '"justification": "<text>", "frequency": <0-{fmax}>, "intensity": <0-{imax}>, '
    '"score": <0-{imax}>}}\n'
    "```\n"
    "Use an empty evidence list only when the symptom is absent and the score is 0.\n"
)
_FORMAT_SEVERITY = (
    "End your response with exactly one fenced block of this form:\n"
    "```json\n"
    '{{"evidence": [{{"utterance_id": "<id>", "quote": "<verbatim words>"}}], '
    '"justification": "<text>", "severity": <0-{imax}>, "score": <0-{imax}>}}\n'
    "```\n"
    "Use an empty evidence list only when the symptom is absent and the score is 0.\n"
)
_REPAIR = (
    "\n\nYour previous response was rejected ({reason}: {detail}). Respond again, "
    "ending with exactly one fenced ```json block in the required format. "
    "Cite only utterance ids present in the transcript and quote their words verbatim."
)

_FENCE_RE = re.compile(r"```(?:json|JSON)?[ \t]*\n?(.*?)```", re.DOTALL)


class AgentParseError(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        assert reason in PARSE_REASONS, reason
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ItemRatingFailure(RuntimeError):
    """An item agent did not produce a valid rating within its retry budget."""

    def __init__(self, item_id: int, reason: str, attempts: int, detail: str = ""):
        self.item_id = item_id
        self.reason = reason
        self.attempts = attempts
        super().__init__(f"item {item_id}: {reason} after {attempts} attempt(s) {detail}".rstrip())


class InterviewRatingFailure(RuntimeError):
    def __init__(self, interview_id: str, failures: Mapping[int, str]):
        self.interview_id = interview_id
        self.failures = dict(failures)
        items = ", ".join(f"item {i} ({r})" for i, r in sorted(self.failures.items()))
        super().__init__(f"{interview_id}: rating failed for {items}")


class Backend(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResponse: ...


@dataclass(frozen=True)
class EvidenceCitation:
    utterance_id: str
    quote: str


@dataclass(frozen=True)
class ItemRating:
    item_id: int
    evidence: tuple[EvidenceCitation, ...]
    justification: str
    score: int
    dual_axis: DualAxisRating | None = None
    severity: int | None = None
    model_name: str = ""
    attempts_used: int = 1
    reported_score: int | None = None

    @property
    def score_discrepancy(self) -> bool:
        return self.reported_score is not None and self.reported_score != self.score

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "evidence": [{"utterance_id": e.utterance_id, "quote": e.quote} for e in self.evidence],
            "justification": self.justification,
            "frequency": self.dual_axis.frequency if self.dual_axis else None,
            "intensity": self.dual_axis.intensity if self.dual_axis else None,
            "severity": self.severity,
            "score": self.score,
            "reported_score": self.reported_score,
            "score_discrepancy": self.score_discrepancy,
            "model_name": self.model_name,
            "attempts_used": self.attempts_used,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ItemRating:
        axis = None
        if d.get("frequency") is not None:
            axis = DualAxisRating(int(d["frequency"]), int(d["intensity"]))
        return cls(
            item_id=int(d["item_id"]),
            evidence=tuple(EvidenceCitation(e["utterance_id"], e["quote"]) for e in d.get("evidence", [])),
            justification=d.get("justification", ""),
            score=d["score"],
            dual_axis=axis,
            severity=d.get("severity"),
            model_name=d.get("model_name", ""),
            attempts_used=int(d.get("attempts_used", 1)),
            reported_score=d.get("reported_score"),
        )


@dataclass
class InterviewRating:
    interview_id: str
    instrument_id: InstrumentId
    item_ratings: dict[int, ItemRating]
    total: float | None
    pipeline_config_digest: str
    model_name: str = ""
    dataset_tag: str | None = None
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    failures: dict[int, str] = field(default_factory=dict)

    def item_scores(self) -> dict[int, float]:
        return {i: r.score for i, r in self.item_ratings.items()}

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "interview_id": self.interview_id,
            "instrument": self.instrument_id.value,
            "model": self.model_name,
            "dataset": self.dataset_tag,
            "items": [self.item_ratings[i].to_dict() for i in sorted(self.item_ratings)],
            "total": self.total,
            "config_digest": self.pipeline_config_digest,
            "created_at": self.created_at,
        }
        if self.failures:
            doc["failures"] = {str(i): r for i, r in sorted(self.failures.items())}
        return doc

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> InterviewRating:
        items = {int(d["item_id"]): ItemRating.from_dict(d) for d in doc["items"]}
        return cls(
            interview_id=doc["interview_id"],
            instrument_id=InstrumentId(doc["instrument"]),
            item_ratings=items,
            total=doc.get("total"),
            pipeline_config_digest=doc.get("config_digest", ""),
            model_name=doc.get("model", ""),
            dataset_tag=doc.get("dataset"),
            created_at=doc.get("created_at", ""),
            failures={int(k): v for k, v in doc.get("failures", {}).items()},
        )


def request_tag(interview_id: str, variant: InstrumentId, item_id: int, attempt: int = 1) -> str:
    tag = f"{interview_id}/{variant.short_tag}/{item_id}"
    return tag if attempt == 1 else f"{tag}{ATTEMPT_SEP}{attempt}"


def build_system_text(item: ItemSpec, variant: InstrumentId) -> str:
    variant = InstrumentId(variant)
    grid = item.rating_mode is RatingMode.DUAL_AXIS_GRID
    h1, h2, h3 = STAGE_HEADINGS
    fields = dict(
        scale=SCALE_NAMES[variant],
        item_id=item.item_id,
        name=item.name,
        description=item.description or item.name,
        fmax=MAX_FREQUENCY,
        imax=item.max_score,
        freq="; ".join(f"{i} = {lvl}" for i, lvl in enumerate(FREQUENCY_LEVELS)),
    )
    parts = [
        _ROLE_TEXT.format(**fields),
        "Work through the following three stages in order.\n",
        _STAGE1.format(h=h1, **fields),
        _STAGE2.format(h=h2, **fields),
        (_STAGE3_GRID if grid else _STAGE3_SEVERITY).format(h=h3, **fields),
        ("Intensity anchors:\n" if grid else "Severity anchors:\n")
        + "".join(f"  {score}: {text}\n" for score, text in enumerate(item.anchor_texts)),
    ]
    if variant is InstrumentId.HAMD17S_EXT:
        if not item.convention:
            raise ValueError(f"extended variant: no convention for item {item.item_id}")
        parts.append(f"Rating convention for this item: {item.convention}\n")
    parts.append((_FORMAT_GRID if grid else _FORMAT_SEVERITY).format(**fields))
    return "\n".join(parts)


def build_prompt(item: ItemSpec, t: Transcript, variant: InstrumentId | str) -> tuple[str, str]:
    """Return ``(system_text, user_text)`` for one item agent.

    The user text is the whole rendered transcript, never a slice of it.
    """
    system_text = build_system_text(item, InstrumentId(variant))
    user_text = (
        f"Interview {t.interview_id} transcript (one utterance per line):\n\n" + render_for_prompt(t)
    )
    return system_text, user_text


def _extract_block(raw: str) -> dict[str, Any]:
    for body in reversed(_FENCE_RE.findall(raw)):
        try:
            obj = json.loads(body)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    stripped = raw.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
    raise AgentParseError("no-structured-block", "no fenced JSON object found")


def _int_field(block: Mapping[str, Any], key: str, lo: int, hi: int) -> int:
    if key not in block or block[key] is None:
        raise AgentParseError("missing-field", key)
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise AgentParseError("out-of-range", f"{key}={value!r} is not an integer")
    value = int(value)
    if not lo <= value <= hi:
        raise AgentParseError("out-of-range", f"{key}={value} outside {lo}..{hi}")
    return value


def parse_agent_response(item: ItemSpec, t: Transcript, raw: str, model_name: str = "") -> ItemRating:
    """Validate one agent response against the item and transcript.

    Raises :class:`AgentParseError` with one of :data:`PARSE_REASONS`. For
    grid items the final score is recomputed from the two axes; a disagreeing
    self-reported score is kept in ``reported_score`` but not used.
    """
    block = _extract_block(raw)
    grid = item.rating_mode is RatingMode.DUAL_AXIS_GRID
    has_axes = "frequency" in block or "intensity" in block
    if grid and "severity" in block and not has_axes:
        raise AgentParseError("mode-mismatch", "severity given for a frequency/intensity item")
    if not grid and has_axes:
        raise AgentParseError("mode-mismatch", "frequency/intensity given for a severity item")

    evidence_raw = block.get("evidence")
    if not isinstance(evidence_raw, list):
        raise AgentParseError("missing-field", "evidence")
    justification = block.get("justification")
    if not isinstance(justification, str) or not justification.strip():
        raise AgentParseError("missing-field", "justification")

    if grid:
        axis = DualAxisRating(
            _int_field(block, "frequency", 0, MAX_FREQUENCY),
            _int_field(block, "intensity", 0, item.max_score),
        )
        severity = None
        score = grid_reconcile(item, axis)
    else:
        axis = None
        severity = _int_field(block, "severity", 0, item.max_score)
        score = severity
    reported = _int_field(block, "score", 0, item.max_score)

    evidence = []
    for i, e in enumerate(evidence_raw):
        if not isinstance(e, Mapping):
            raise AgentParseError("missing-field", f"evidence[{i}] is not an object")
        uid, quote = e.get("utterance_id"), e.get("quote")
        if not isinstance(uid, str) or not uid:
            raise AgentParseError("missing-field", f"evidence[{i}].utterance_id")
        if not isinstance(quote, str) or not quote.strip():
            raise AgentParseError("missing-field", f"evidence[{i}].quote")
        utt = t.utterance(uid)
        if utt is None:
            raise AgentParseError("unknown-utterance-id", uid)
        if normalize_ws(quote) not in normalize_ws(utt.text):
            raise AgentParseError("quote-mismatch", f"{uid}: {quote[:60]!r}")
        evidence.append(EvidenceCitation(uid, quote))

    if score > 0 and not evidence:
        raise AgentParseError("missing-field", "evidence required for nonzero score")
    if reported != score:
        log.info("item %d: self-reported score %d replaced by %d", item.item_id, reported, score)

    return ItemRating(
        item_id=item.item_id,
        evidence=tuple(evidence),
        justification=justification.strip(),
        score=score,
        dual_axis=axis,
        severity=severity,
        model_name=model_name,
        reported_score=reported,
    )


@dataclass(frozen=True)
class AgentSettings:
    model_name: str = "mock"
    temperature: float = 0.0
    max_output_tokens: int = 2048


def rate_item(
    backend: Backend,
    item: ItemSpec,
    t: Transcript,
    variant: InstrumentId | str,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    settings: AgentSettings = AgentSettings(),
) -> ItemRating:
    """Rate one item, re-asking with a repair note up to ``retry_budget`` times."""
    if retry_budget < 0:
        raise ValueError("retry_budget must be >= 0")
    variant = InstrumentId(variant)
    system_text, user_text = build_prompt(item, t, variant)
    failure: AgentParseError | None = None
    for attempt in range(1, retry_budget + 2):
        text = user_text
        if failure is not None:
            text += _REPAIR.format(reason=failure.reason, detail=failure.detail)
        req = CompletionRequest(
            system_text=system_text,
            user_text=text,
            model_name=settings.model_name,
            request_tag=request_tag(t.interview_id, variant, item.item_id, attempt),
            temperature=settings.temperature,
            max_output_tokens=settings.max_output_tokens,
        )
        resp = backend.complete(req)
        try:
            rating = parse_agent_response(item, t, resp.raw_text, settings.model_name)
        except AgentParseError as exc:
            log.debug("%s rejected: %s", req.request_tag, exc)
            failure = exc
            continue
        return ItemRating(**{**rating.__dict__, "attempts_used": attempt})
    assert failure is not None
    raise ItemRatingFailure(item.item_id, failure.reason, retry_budget + 1, failure.detail)


def pipeline_config_digest(instrument: InstrumentSpec, model_name: str) -> str:
    """Hash of everything that can change a score: prompts, roster, conventions, grid, model."""
    payload = {
        "prompt_version": PROMPT_VERSION,
        "system_prompts": {it.item_id: build_system_text(it, instrument.instrument_id) for it in instrument.items},
        "roster": instrument.roster_document(),
        "grid": {
            it.item_id: [list(r) for r in (it.grid_table or default_grid_table(it.max_score))]
            for it in instrument.items
            if it.rating_mode is RatingMode.DUAL_AXIS_GRID
        },
        "model": model_name,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def rate_interview(
    backend: Backend,
    instrument: InstrumentSpec,
    t: Transcript,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    parallelism_cap: int = DEFAULT_PARALLELISM,
    settings: AgentSettings = AgentSettings(),
    allow_partial: bool = False,
    created_at: str | None = None,
) -> InterviewRating:
    """Run one independent agent per active item and assemble the scorecard.

    At most ``parallelism_cap`` items are in flight. Any item failure fails
    the interview unless ``allow_partial``, in which case the failed items
    are recorded in ``failures`` and ``total`` is ``None``.
    """
    if parallelism_cap < 1:
        raise ValueError("parallelism_cap must be >= 1")

    def run(item: ItemSpec) -> ItemRating | ItemRatingFailure:
        try:
            return rate_item(backend, item, t, instrument.instrument_id, retry_budget, settings)
        except ItemRatingFailure as exc:
            return exc

    with ThreadPoolExecutor(max_workers=parallelism_cap) as pool:
        outcomes = list(pool.map(run, instrument.items))

    ratings: dict[int, ItemRating] = {}
    failures: dict[int, str] = {}
    for item, out in zip(instrument.items, outcomes):
        if isinstance(out, ItemRatingFailure):
            failures[item.item_id] = out.reason
        else:
            ratings[item.item_id] = out
    if failures and not allow_partial:
        raise InterviewRatingFailure(t.interview_id, failures)

    total = None if failures else total_score(instrument, {i: r.score for i, r in ratings.items()})
    extra = {"created_at": created_at} if created_at else {}
    return InterviewRating(
        interview_id=t.interview_id,
        instrument_id=instrument.instrument_id,
        item_ratings=ratings,
        total=total,
        pipeline_config_digest=pipeline_config_digest(instrument, settings.model_name),
        model_name=settings.model_name,
        dataset_tag=t.dataset_tag,
        failures=failures,
        **extra,
    )
