"""Full-scale and item-level tables in Markdown or CSV."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from ..clinimetrics import MetricReport
from ..instruments import InstrumentId, load_instrument
from .evaluation import load_evaluation, sort_key

FORMATS = ("md", "csv")
FAIL_MARK = "†"

FULL_COLUMNS = ("MAE", "RMSE", "Pearson r", "Spearman ρ", "ICC(3,1)", "ICC(2,1)")
_FULL_FIELDS = (
    ("mae", "bias"),
    ("rmse", None),
    ("pearson_r", "pearson"),
    ("spearman_rho", "spearman"),
    ("icc_3_1", "icc_3_1"),
    ("icc_2_1", "icc_2_1"),
)


class ReportError(ValueError):
    pass


def _fmt(value: float | None) -> str:
    return "---" if value is None else f"{value:.3f}"


def _cell(rep: MetricReport, attr: str, flag: str | None, marks: bool) -> str:
    value = getattr(rep, attr)
    text = _fmt(value)
    if marks and value is not None and flag and rep.target_flags.get(flag) == "fail":
        text += FAIL_MARK
    return text


def _item_names(instrument: str) -> dict[int, str]:
    inst = InstrumentId(instrument)
    roster = load_instrument(InstrumentId.HAMD17S if inst.is_depression else inst)
    return {it.item_id: it.name for it in roster.items}


def _tables(reports: list[MetricReport], marks: bool) -> tuple[list[list[str]], list[list[str]]]:
    reports = sorted(reports, key=sort_key)
    full = [["Instrument", "Model", "Dataset", "N", *FULL_COLUMNS]]
    items = [["Instrument", "Model", "Dataset", "Item", "Symptom", "MAE", "Pearson r"]]
    names: dict[str, dict[int, str]] = {}
    for rep in reports:
        scope = [rep.instrument, rep.model_name, rep.dataset_tag or "all"]
        if rep.item_id is None:
            full.append(scope + [str(rep.n)] + [_cell(rep, a, f, marks) for a, f in _FULL_FIELDS])
        else:
            if rep.instrument not in names:
                names[rep.instrument] = _item_names(rep.instrument)
            items.append(
                scope
                + [str(rep.item_id), names[rep.instrument].get(rep.item_id, "")]
                + [_cell(rep, "mae", "bias", marks), _cell(rep, "pearson_r", "pearson", marks)]
            )
    return full, items


def _markdown(rows: list[list[str]], title: str) -> str:
    head, *body = rows
    lines = [f"### {title}", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def _csv(rows: list[list[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def render_tables(reports: list[MetricReport], fmt: str) -> dict[str, str]:
    """Return ``{"full_scale": text, "item_level": text}``.

    Markdown marks values whose target condition failed with a dagger; CSV
    carries the same numbers plus explicit target columns.
    """
    if fmt not in FORMATS:
        raise ReportError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    if fmt == "md":
        full, items = _tables(reports, marks=True)
        note = f"\n{FAIL_MARK} target condition not met (association: adjusted p >= alpha; MAE: bias test rejected).\n"
        return {
            "full_scale": _markdown(full, "Full-scale performance") + note,
            "item_level": _markdown(items, "Item-level performance") + note,
        }
    full, items = _tables(reports, marks=False)
    by_key = {(r.instrument, r.model_name, r.dataset_tag or "all", r.item_id): r for r in reports}
    full[0] += ["MAE target", "Pearson target", "Spearman target", "ICC(3,1) target", "ICC(2,1) target"]
    for row in full[1:]:
        flags = by_key[(row[0], row[1], row[2], None)].target_flags
        row += [flags.get(k, "") for k in ("bias", "pearson", "spearman", "icc_3_1", "icc_2_1")]
    items[0] += ["MAE target", "Pearson target"]
    for row in items[1:]:
        flags = by_key[(row[0], row[1], row[2], int(row[3]))].target_flags
        row += [flags.get("bias", ""), flags.get("pearson", "")]
    return {"full_scale": _csv(full), "item_level": _csv(items)}


def cmd_report(eval_path: str | Path, fmt: str, out_dir: str | Path | None = None) -> dict[str, str]:
    """Render both tables; with ``out_dir`` also write ``full_scale.<fmt>`` and ``item_level.<fmt>``."""
    if fmt not in FORMATS:
        raise ReportError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    path = Path(eval_path)
    if not path.is_file():
        raise ReportError(f"{path}: evaluation document not found")
    _, reports = load_evaluation(path)
    tables = render_tables(reports, fmt)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in tables.items():
            (out / f"{name}.{fmt}").write_text(text, encoding="utf-8")
    return tables
