"""Diarized interview transcripts: parsing, role attribution and prompt rendering."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

INTERROGATIVE_WORDS = frozenset(
    "what how have has do does did are is were was would could can".split()
)
DEFAULT_ROLE_WINDOW = 10

ROLE_TIE_WARNING = "role-tie: interrogative scores equal, first speaker assigned Clinician"

_WORD_RE = re.compile(r"[a-z']+")
_WS_RE = re.compile(r"\s+")


class TranscriptError(ValueError):
    """Raised for malformed transcript documents or invalid role operations."""


class SpeakerRole(str, enum.Enum):
    CLINICIAN = "Clinician"
    PATIENT = "Patient"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    speaker: str
    start_s: float
    end_s: float
    text: str


@dataclass(frozen=True)
class Transcript:
    interview_id: str
    utterances: tuple[Utterance, ...]
    dataset_tag: str | None = None
    role_map: Mapping[str, SpeakerRole] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    @property
    def speakers(self) -> list[str]:
        """Raw speaker labels in order of first appearance."""
        seen: dict[str, None] = {}
        for u in self.utterances:
            seen.setdefault(u.speaker, None)
        return list(seen)

    def role_of(self, speaker: str) -> SpeakerRole:
        return self.role_map.get(speaker, SpeakerRole.UNKNOWN)

    def utterance(self, utterance_id: str) -> Utterance | None:
        return self._index().get(utterance_id)

    def _index(self) -> dict[str, Utterance]:
        # frozen dataclass: cache through object.__setattr__
        idx = self.__dict__.get("_by_id")
        if idx is None:
            idx = {u.utterance_id: u for u in self.utterances}
            object.__setattr__(self, "_by_id", idx)
        return idx


def _require(doc: Mapping[str, Any], key: str, kind: type | tuple[type, ...], where: str) -> Any:
    if key not in doc:
        raise TranscriptError(f"{where}: missing field '{key}'")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TranscriptError(f"{where}: field '{key}' has wrong type {type(value).__name__}")
    return value


def parse_transcript(document: Mapping[str, Any] | str) -> Transcript:
    """Build a validated :class:`Transcript` from a transcript document.

    ``document`` is either the decoded JSON object or its JSON text.
    Utterances given out of time order are stably re-sorted by start time.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise TranscriptError(f"document is not valid JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise TranscriptError("document: top level must be an object")

    interview_id = _require(document, "interview_id", str, "document")
    dataset = document.get("dataset")
    if dataset is not None and not isinstance(dataset, str):
        raise TranscriptError("document: field 'dataset' must be a string")
    raw = _require(document, "utterances", list, "document")
    if not raw:
        raise TranscriptError("document: utterance list is empty")

    utterances = []
    seen: set[str] = set()
    for i, entry in enumerate(raw):
        where = f"utterances[{i}]"
        if not isinstance(entry, Mapping):
            raise TranscriptError(f"{where}: must be an object")
        uid = _require(entry, "id", str, where)
        where = f"utterances[{i}] (id={uid!r})"
        speaker = _require(entry, "speaker", str, where)
        start = float(_require(entry, "start", (int, float), where))
        end = float(_require(entry, "end", (int, float), where))
        text = _require(entry, "text", str, where)
        if uid in seen:
            raise TranscriptError(f"{where}: duplicate utterance id")
        seen.add(uid)
        if start < 0 or end < 0:
            raise TranscriptError(f"{where}: negative timestamp")
        if end < start:
            raise TranscriptError(f"{where}: timestamp inversion (end {end} < start {start})")
        if not text.strip():
            raise TranscriptError(f"{where}: empty text")
        utterances.append(Utterance(uid, speaker, start, end, text))

    utterances.sort(key=lambda u: u.start_s)

    role_map: dict[str, SpeakerRole] = {}
    roles = document.get("roles")
    if roles is not None:
        if not isinstance(roles, Mapping):
            raise TranscriptError("document: field 'roles' must be an object")
        try:
            role_map = {str(k): SpeakerRole(v) for k, v in roles.items()}
        except ValueError as exc:
            raise TranscriptError(f"document: {exc}") from exc
    warnings = tuple(document.get("warnings", ()))

    return Transcript(
        interview_id=interview_id,
        utterances=tuple(utterances),
        dataset_tag=dataset,
        role_map=role_map,
        warnings=warnings,
    )


def load_transcript(path: str | Path) -> Transcript:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise TranscriptError(f"{path}: unreadable: {exc}") from exc
    try:
        return parse_transcript(text)
    except TranscriptError as exc:
        raise TranscriptError(f"{path}: {exc}") from exc


def to_document(t: Transcript) -> dict[str, Any]:
    """Serialize back to the transcript file schema (roles included when resolved)."""
    doc: dict[str, Any] = {"interview_id": t.interview_id}
    if t.dataset_tag is not None:
        doc["dataset"] = t.dataset_tag
    doc["utterances"] = [
        {"id": u.utterance_id, "speaker": u.speaker, "start": u.start_s, "end": u.end_s, "text": u.text}
        for u in t.utterances
    ]
    if t.role_map:
        doc["roles"] = {k: v.value for k, v in sorted(t.role_map.items())}
    if t.warnings:
        doc["warnings"] = list(t.warnings)
    return doc


def load_probe_lexicon(path: str | Path | None = None) -> list[str]:
    """Read a JSON list of probe phrases; the packaged Hamilton probe stems by default."""
    if path is None:
        text = resources.files("hamrater").joinpath("data/probe_lexicon.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    phrases = json.loads(text)
    if not isinstance(phrases, list) or not all(isinstance(p, str) for p in phrases):
        raise TranscriptError("probe lexicon must be a JSON list of strings")
    return phrases


def is_interrogative(text: str) -> bool:
    stripped = text.strip()
    if stripped.endswith("?"):
        return True
    m = _WORD_RE.search(stripped.lower())
    return bool(m) and m.group(0) in INTERROGATIVE_WORDS


def interrogative_score(texts: Sequence[str], probe_lexicon: Iterable[str]) -> Fraction:
    """Fraction of interrogative utterances plus fraction containing a probe phrase."""
    if not texts:
        return Fraction(0)
    probes = [p.lower() for p in probe_lexicon if p.strip()]
    n = len(texts)
    questions = sum(is_interrogative(t) for t in texts)
    probed = sum(any(p in t.lower() for p in probes) for t in texts)
    return Fraction(questions, n) + Fraction(probed, n)


def attribute_roles(
    t: Transcript,
    probe_lexicon: Iterable[str],
    window: int = DEFAULT_ROLE_WINDOW,
) -> Transcript:
    """Map the two raw speaker labels to Clinician and Patient.

    The speaker whose first ``window`` utterances score higher on
    :func:`interrogative_score` becomes the clinician. On a tie the speaker of
    the chronologically first utterance is chosen and a warning is attached.
    """
    if window < 1:
        raise TranscriptError("window must be >= 1")
    speakers = t.speakers
    if len(speakers) != 2:
        raise TranscriptError(
            f"{t.interview_id}: role attribution needs exactly two speakers, found {len(speakers)}"
        )
    probes = list(probe_lexicon)
    scores = {}
    for s in speakers:
        texts = [u.text for u in t.utterances if u.speaker == s][:window]
        scores[s] = interrogative_score(texts, probes)

    first, second = speakers  # order of first appearance = chronological
    warnings = tuple(w for w in t.warnings if w != ROLE_TIE_WARNING)
    if scores[first] == scores[second]:
        clinician = first
        warnings += (ROLE_TIE_WARNING,)
    else:
        clinician = max(speakers, key=scores.__getitem__)
    patient = second if clinician == first else first
    return replace(
        t,
        role_map={clinician: SpeakerRole.CLINICIAN, patient: SpeakerRole.PATIENT},
        warnings=warnings,
    )


def render_for_prompt(t: Transcript) -> str:
    """Render every utterance as ``[id] ROLE (start-end s): text``, one per line."""
    if not any(r is not SpeakerRole.UNKNOWN for r in t.role_map.values()):
        raise TranscriptError(f"{t.interview_id}: speaker roles are unresolved")
    lines = []
    for u in t.utterances:
        role = t.role_of(u.speaker).value.upper()
        text = _WS_RE.sub(" ", u.text).strip()
        lines.append(f"[{u.utterance_id}] {role} ({u.start_s:.2f}-{u.end_s:.2f} s): {text}")
    return "\n".join(lines) + "\n"


def normalize_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip().lower()
