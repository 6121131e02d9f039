"""Batch rating of a directory of transcripts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..agents import InterviewRatingFailure, pipeline_config_digest, rate_interview
from ..backend import BackendError, make_backend
from ..instruments import InstrumentId, load_conventions, load_instrument
from ..transcript import TranscriptError, attribute_roles, load_probe_lexicon, load_transcript
from .config import RunConfig, timestamp_now, write_json

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RATINGS_SUFFIX = ".ratings.json"


class RateError(RuntimeError):
    pass


@dataclass
class RateOutcome:
    out_dir: Path
    manifest: dict[str, Any]
    written: list[Path] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if self.manifest["failures"] else 0


def cmd_rate(
    config: RunConfig | str | Path,
    transcripts_dir: str | Path,
    out_dir: str | Path | None = None,
) -> RateOutcome:
    """Rate every ``*.json`` transcript in a directory.

    Failures in one interview are recorded in the manifest and do not stop
    the batch.
    """
    cfg = config if isinstance(config, RunConfig) else RunConfig.load(config)
    tdir = Path(transcripts_dir)
    if not tdir.is_dir():
        raise RateError(f"{tdir}: not a directory")
    files = sorted(tdir.glob("*.json"))
    if not files:
        raise RateError(f"{tdir}: no transcript documents found")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    conventions = None
    if cfg.instrument_id is InstrumentId.HAMD17S_EXT:
        conventions = load_conventions(cfg.conventions_path)
    instrument = load_instrument(cfg.instrument_id, conventions)
    lexicon = load_probe_lexicon(cfg.probe_lexicon_path)
    backend = make_backend(cfg.backend)
    digest = pipeline_config_digest(instrument, cfg.model_name)

    successes: list[dict[str, Any]] = []
    failures: list[dict[str, Any]] = []
    written: list[Path] = []
    for path in files:
        try:
            t = attribute_roles(load_transcript(path), lexicon, cfg.role_window)
        except TranscriptError as exc:
            log.error("%s", exc)
            failures.append({"file": path.name, "stage": "parse", "error": str(exc)})
            continue
        try:
            rating = rate_interview(
                backend,
                instrument,
                t,
                retry_budget=cfg.retry_budget,
                parallelism_cap=cfg.parallelism_cap,
                settings=cfg.agent_settings,
                allow_partial=cfg.allow_partial,
                created_at=timestamp_now(),
            )
        except (InterviewRatingFailure, BackendError) as exc:
            log.error("%s", exc)
            entry = {"file": path.name, "interview_id": t.interview_id, "stage": "rating", "error": str(exc)}
            if isinstance(exc, InterviewRatingFailure):
                entry["items"] = {str(i): r for i, r in sorted(exc.failures.items())}
            failures.append(entry)
            continue
        target = out / f"{t.interview_id}{RATINGS_SUFFIX}"
        write_json(target, rating.to_document())
        written.append(target)
        successes.append(
            {
                "file": path.name,
                "interview_id": t.interview_id,
                "total": rating.total,
                "ratings_file": target.name,
                "role_warnings": list(t.warnings),
                "partial_items": sorted(rating.failures),
            }
        )

    manifest = {
        "config_digest": digest,
        "instrument": cfg.instrument_id.value,
        "model": cfg.model_name,
        "created_at": timestamp_now(),
        "counts": {"transcripts": len(files), "rated": len(successes), "failed": len(failures)},
        "successes": successes,
        "failures": failures,
    }
    write_json(out / MANIFEST_NAME, manifest)
    return RateOutcome(out, manifest, written)
