"""Hamilton scale rosters, GRID frequency/intensity reconciliation and score arithmetic."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

FREQUENCY_LEVELS = (
    "absent",
    "occasional",
    "much of the time",
    "almost all of the time",
)
MAX_FREQUENCY = len(FREQUENCY_LEVELS) - 1


class InstrumentError(ValueError):
    pass


class InstrumentId(str, enum.Enum):
    HAMD17S = "HAMD17S"
    HAMD17S_EXT = "HAMD17S_EXT"
    HAMA14S = "HAMA14S"

    @property
    def short_tag(self) -> str:
        return {"HAMD17S": "hamd", "HAMD17S_EXT": "hamd_ext", "HAMA14S": "hama"}[self.value]

    @property
    def is_depression(self) -> bool:
        return self is not InstrumentId.HAMA14S


class RatingMode(str, enum.Enum):
    DUAL_AXIS_GRID = "DualAxisGrid"
    SEVERITY_ANCHOR = "SeverityAnchor"


@dataclass(frozen=True)
class ItemSpec:
    item_id: int
    name: str
    max_score: int
    rating_mode: RatingMode
    anchor_texts: tuple[str, ...]
    description: str = ""
    convention: str | None = None
    # Optional per-item override: grid_table[frequency][intensity] -> score.
    grid_table: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.max_score not in (2, 4):
            raise InstrumentError(f"item {self.item_id}: max_score must be 2 or 4")
        if len(self.anchor_texts) != self.max_score + 1:
            raise InstrumentError(
                f"item {self.item_id}: expected {self.max_score + 1} anchors, got {len(self.anchor_texts)}"
            )
        if self.grid_table is not None:
            if self.rating_mode is not RatingMode.DUAL_AXIS_GRID:
                raise InstrumentError(f"item {self.item_id}: grid table on a non-grid item")
            if len(self.grid_table) != MAX_FREQUENCY + 1 or any(
                len(row) != self.max_score + 1 for row in self.grid_table
            ):
                raise InstrumentError(f"item {self.item_id}: grid table has wrong shape")


@dataclass(frozen=True)
class InstrumentSpec:
    instrument_id: InstrumentId
    items: tuple[ItemSpec, ...]
    excluded_items: tuple[tuple[int, str], ...]

    @property
    def item_ids(self) -> list[int]:
        return [it.item_id for it in self.items]

    def item(self, item_id: int) -> ItemSpec:
        for it in self.items:
            if it.item_id == item_id:
                return it
        raise KeyError(item_id)

    @property
    def max_total(self) -> int:
        return sum(it.max_score for it in self.items)

    def roster_document(self) -> dict[str, Any]:
        """Canonical JSON-able form; stable input to the pipeline digest."""
        return {
            "instrument": self.instrument_id.value,
            "items": [
                {
                    "id": it.item_id,
                    "name": it.name,
                    "max": it.max_score,
                    "mode": it.rating_mode.value,
                    "description": it.description,
                    "anchors": list(it.anchor_texts),
                    "convention": it.convention,
                    "grid": [list(r) for r in it.grid_table] if it.grid_table else None,
                }
                for it in self.items
            ],
            "excluded": [{"id": i, "reason": r} for i, r in self.excluded_items],
        }


@dataclass(frozen=True)
class DualAxisRating:
    frequency: int
    intensity: int


_ROSTER_FILES = {
    InstrumentId.HAMD17S: "hamd17s.json",
    InstrumentId.HAMD17S_EXT: "hamd17s.json",
    InstrumentId.HAMA14S: "hama14s.json",
}
_EXPECTED_ITEMS = {
    InstrumentId.HAMD17S: ([1, 2, 3, 4, 5, 6, 7, 10, 11, 12, 13, 14, 15, 16, 17], {8, 9}),
    InstrumentId.HAMD17S_EXT: ([1, 2, 3, 4, 5, 6, 7, 10, 11, 12, 13, 14, 15, 16, 17], {8, 9}),
    InstrumentId.HAMA14S: (list(range(1, 14)), {14}),
}


def _read_data(name: str) -> str:
    return resources.files("hamrater").joinpath("data", name).read_text("utf-8")


def parse_roster(doc: Mapping[str, Any], instrument_id: InstrumentId) -> InstrumentSpec:
    items = []
    for entry in doc["items"]:
        grid = entry.get("grid")
        items.append(
            ItemSpec(
                item_id=int(entry["id"]),
                name=entry["name"],
                max_score=int(entry["max"]),
                rating_mode=RatingMode(entry["mode"]),
                anchor_texts=tuple(entry["anchors"]),
                description=entry.get("description", ""),
                grid_table=tuple(tuple(int(c) for c in row) for row in grid) if grid else None,
            )
        )
    excluded = tuple((int(e["id"]), e["reason"]) for e in doc.get("excluded", []))
    spec = InstrumentSpec(instrument_id, tuple(items), excluded)

    wanted_mode = RatingMode.DUAL_AXIS_GRID if instrument_id.is_depression else RatingMode.SEVERITY_ANCHOR
    for it in spec.items:
        if it.rating_mode is not wanted_mode:
            raise InstrumentError(f"{instrument_id.value} item {it.item_id}: rating mode must be {wanted_mode.value}")
    ids, excl = _EXPECTED_ITEMS[instrument_id]
    if spec.item_ids != ids or {i for i, _ in excluded} != excl:
        raise InstrumentError(f"{instrument_id.value}: roster does not match the active item set {ids}")
    return spec


def default_conventions() -> dict[int, str]:
    return {int(k): v for k, v in json.loads(_read_data("conventions_extended.json")).items()}


def load_conventions(path: str | Path | None) -> dict[int, str]:
    """Read an Extended-variant conventions file (``{"item_id": "text"}``).

    ``None`` or the literal ``"builtin"`` select the packaged conventions.
    """
    if path is None or str(path) == "builtin":
        return default_conventions()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise InstrumentError(f"{path}: conventions must be a JSON object")
    return {int(k): str(v) for k, v in raw.items()}


def load_instrument(
    instrument_id: InstrumentId | str,
    conventions: Mapping[int, str] | None = None,
    roster: Mapping[str, Any] | None = None,
) -> InstrumentSpec:
    """Return the fixed item roster for an instrument variant.

    The Extended HAM-D variant requires ``conventions``; every key must name
    an active item. ``roster`` substitutes a site-supplied roster document
    (e.g. one carrying licensed GRID tables) for the packaged one.
    """
    instrument_id = InstrumentId(instrument_id)
    if roster is None:
        roster = json.loads(_read_data(_ROSTER_FILES[instrument_id]))
    spec = parse_roster(roster, instrument_id)

    if instrument_id is InstrumentId.HAMD17S_EXT:
        if not conventions:
            raise InstrumentError("HAMD17S_EXT requires a non-empty convention set")
        active = set(spec.item_ids)
        bad = sorted(int(k) for k in conventions if int(k) not in active)
        if bad:
            raise InstrumentError(f"conventions reference inactive or excluded items: {bad}")
        conv = {int(k): v for k, v in conventions.items()}
        spec = replace(
            spec,
            items=tuple(
                replace(it, convention=conv[it.item_id]) if conv.get(it.item_id, "").strip() else it
                for it in spec.items
            ),
        )
    elif conventions:
        raise InstrumentError(f"{instrument_id.value} does not take conventions")
    return spec


def _default_grid_cell(frequency: int, intensity: int) -> int:
    if frequency == 0 or intensity == 0:
        return 0
    if frequency == 1:
        return max(1, intensity - 1)
    return intensity


def default_grid_table(max_score: int) -> tuple[tuple[int, ...], ...]:
    return tuple(
        tuple(min(_default_grid_cell(f, i), max_score) for i in range(max_score + 1))
        for f in range(MAX_FREQUENCY + 1)
    )


def grid_reconcile(item: ItemSpec, d: DualAxisRating) -> int:
    """Collapse a frequency/intensity pair into one item score.

    Absent frequency or intensity scores 0; an occasional symptom is
    discounted by one point (never below 1); a symptom present much or almost
    all of the time scores at its intensity. Items carrying a ``grid_table``
    use that table instead.
    """
    if item.rating_mode is not RatingMode.DUAL_AXIS_GRID:
        raise InstrumentError(f"item {item.item_id} is not a dual-axis item")
    if not 0 <= d.frequency <= MAX_FREQUENCY:
        raise InstrumentError(f"item {item.item_id}: frequency {d.frequency} outside 0..{MAX_FREQUENCY}")
    if not 0 <= d.intensity <= item.max_score:
        raise InstrumentError(f"item {item.item_id}: intensity {d.intensity} outside 0..{item.max_score}")
    if item.grid_table is not None:
        return item.grid_table[d.frequency][d.intensity]
    return min(max(_default_grid_cell(d.frequency, d.intensity), 0), item.max_score)


def validate_score(item: ItemSpec, score: float) -> bool:
    return 0 <= score <= item.max_score


def total_score(instrument: InstrumentSpec, item_scores: Mapping[int, float]) -> float:
    active = set(instrument.item_ids)
    given = set(item_scores)
    missing = sorted(active - given)
    if missing:
        raise InstrumentError(f"{instrument.instrument_id.value}: missing item scores {missing}")
    extra = sorted(given - active)
    if extra:
        raise InstrumentError(f"{instrument.instrument_id.value}: scores for inactive items {extra}")
    for it in instrument.items:
        if not validate_score(it, item_scores[it.item_id]):
            raise InstrumentError(
                f"item {it.item_id}: score {item_scores[it.item_id]} outside 0..{it.max_score}"
            )
    return sum(item_scores[i] for i in instrument.item_ids)
