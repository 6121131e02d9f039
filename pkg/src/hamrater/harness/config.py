"""Run configuration loaded from a JSON file."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from ..agents import DEFAULT_PARALLELISM, DEFAULT_RETRY_BUDGET, AgentSettings
from ..backend import BackendConfig
from ..instruments import InstrumentId
from ..transcript import DEFAULT_ROLE_WINDOW


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    instrument_id: InstrumentId
    backend: BackendConfig
    model_name: str = "mock"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    conventions_path: str | None = None
    retry_budget: int = DEFAULT_RETRY_BUDGET
    parallelism_cap: int = DEFAULT_PARALLELISM
    probe_lexicon_path: str | None = None
    role_window: int = DEFAULT_ROLE_WINDOW
    output_dir: str = "ratings"
    seed: int = 0
    allow_partial: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "instrument_id", InstrumentId(self.instrument_id))
        if self.instrument_id is InstrumentId.HAMD17S_EXT and not self.conventions_path:
            raise ConfigError("HAMD17S_EXT requires conventions_path (a file, or \"builtin\")")
        if self.retry_budget < 0 or self.parallelism_cap < 1 or self.role_window < 1:
            raise ConfigError("retry_budget >= 0, parallelism_cap >= 1 and role_window >= 1 are required")

    @property
    def agent_settings(self) -> AgentSettings:
        return AgentSettings(self.model_name, self.temperature, self.max_output_tokens)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
        d = dict(d)
        if "instrument" not in d:
            raise ConfigError("config: missing 'instrument'")
        if "backend" not in d:
            raise ConfigError("config: missing 'backend'")
        base = base_dir or Path.cwd()

        def resolve(p: str | None) -> str | None:
            if p is None or p == "builtin":
                return p
            return str((base / p).resolve()) if not Path(p).is_absolute() else p

        backend = dict(d.pop("backend"))
        backend["script_path"] = resolve(backend.get("script_path"))
        try:
            backend_cfg = BackendConfig.from_dict(backend)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config: backend: {exc}") from exc
        known = set(cls.__dataclass_fields__) - {"instrument_id", "backend"}
        unknown = set(d) - known - {"instrument"}
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        kwargs = {k: d[k] for k in known if k in d}
        kwargs.setdefault("output_dir", cls.__dataclass_fields__["output_dir"].default)
        for key in ("conventions_path", "probe_lexicon_path", "output_dir"):
            if key in kwargs:
                kwargs[key] = resolve(kwargs[key])
        try:
            return cls(instrument_id=d["instrument"], backend=backend_cfg, **kwargs)
        except ValueError as exc:
            raise ConfigError(f"config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: unreadable config: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def to_dict(self) -> dict[str, Any]:
        return {
            "instrument": self.instrument_id.value,
            "backend": self.backend.to_dict(),
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "conventions_path": self.conventions_path,
            "retry_budget": self.retry_budget,
            "parallelism_cap": self.parallelism_cap,
            "probe_lexicon_path": self.probe_lexicon_path,
            "role_window": self.role_window,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "allow_partial": self.allow_partial,
        }


def timestamp_now() -> str:
    """UTC timestamp, pinned by ``SOURCE_DATE_EPOCH`` when that is set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.isoformat(timespec="seconds")


def write_json(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=False) + "\n", encoding="utf-8")
