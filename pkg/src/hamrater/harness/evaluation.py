"""Scoring agent ratings against resolved expert ground truth."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ..agents import InterviewRating
from ..clinimetrics import (
    TESTED_METRICS,
    MetricReport,
    NoInformation,
    PairedScores,
    benjamini_hochberg,
    compute_report,
    judge_targets,
    resolve_ground_truth,
    wilcoxon_signed_rank,
)
from ..instruments import InstrumentId, load_instrument
from .config import write_json
from .rating import MANIFEST_NAME

EVALUATION_NAME = "evaluation.json"
CSV_NAME = "metrics.csv"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class FamilySpec:
    """A set of hypotheses adjusted together, applied within each (instrument, model, dataset)."""

    name: str
    metrics: tuple[str, ...] = TESTED_METRICS
    items: tuple[int, ...] | None = None  # None = every item-level scope
    include_total: bool = False

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FamilySpec:
        metrics = tuple(d.get("metrics", TESTED_METRICS))
        bad = set(metrics) - set(TESTED_METRICS)
        if bad:
            raise EvaluationError(f"family {d.get('name')!r}: unknown metrics {sorted(bad)}")
        items = d.get("items", "all")
        return cls(
            name=str(d["name"]),
            metrics=metrics,
            items=None if items == "all" else tuple(int(i) for i in items),
            include_total=bool(d.get("include_total", False)),
        )

    def covers(self, report: MetricReport) -> bool:
        if report.item_id is None:
            return self.include_total
        return self.items is None or report.item_id in self.items


DEFAULT_FAMILIES = (FamilySpec(name="items"),)


def load_families(path: str | Path | None) -> tuple[FamilySpec, ...]:
    if path is None:
        return DEFAULT_FAMILIES
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = raw.get("families", raw) if isinstance(raw, dict) else raw
    return tuple(FamilySpec.from_dict(e) for e in entries)


@dataclass
class EvaluationBundle:
    ratings: list[InterviewRating]
    truth: dict[str, dict[int, float]]
    families: tuple[FamilySpec, ...] = DEFAULT_FAMILIES
    alpha: float = 0.05
    q: float = 0.05
    notes: list[str] = field(default_factory=list)


def load_ratings(path: str | Path) -> list[InterviewRating]:
    """Read one ratings document, or every ``*.json`` ratings document in a directory."""
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.glob("*.json") if f.name != MANIFEST_NAME)
    elif p.is_file():
        files = [p]
    else:
        raise EvaluationError(f"{p}: no such ratings file or directory")
    out = []
    for f in files:
        doc = json.loads(f.read_text(encoding="utf-8"))
        docs = doc if isinstance(doc, list) else [doc]
        for d in docs:
            if isinstance(d, dict) and "items" in d and "interview_id" in d:
                out.append(InterviewRating.from_document(d))
    if not out:
        raise EvaluationError(f"{p}: no ratings documents found")
    return out


def load_truth(path: str | Path) -> dict[str, list[dict[int, float]]]:
    """Ground truth file: ``{interview_id: {rater_id: {item_id: score}}}``."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise EvaluationError(f"{path}: ground truth must be a JSON object")
    truth = {}
    for iid, raters in raw.items():
        if not isinstance(raters, dict) or not raters:
            raise EvaluationError(f"{path}: interview {iid!r} has no raters")
        truth[iid] = [
            {int(k): float(v) for k, v in raters[r].items()} for r in sorted(raters)
        ]
    return truth


def resolve_truth(
    raw: Mapping[str, Sequence[Mapping[int, float]]],
    instrument_ids: Iterable[InstrumentId],
) -> tuple[dict[str, dict[int, float]], list[str]]:
    """Median-resolve each interview; items the instruments exclude are dropped."""
    excluded: set[int] = set()
    for inst in instrument_ids:
        excluded |= {i for i, _ in load_instrument(InstrumentId.HAMD17S if inst.is_depression else inst).excluded_items}
    notes = []
    out = {}
    for iid, raters in raw.items():
        try:
            med = resolve_ground_truth(raters)
        except ValueError as exc:
            raise EvaluationError(f"ground truth for {iid}: {exc}") from exc
        dropped = sorted(set(med) & excluded)
        if dropped:
            notes.append(f"{iid}: dropped excluded observational items {dropped} from ground truth")
        out[iid] = {i: s for i, s in med.items() if i not in excluded}
    return out, notes


def _apply_families(reports: list[MetricReport], families: Sequence[FamilySpec], q: float) -> None:
    groups: dict[tuple, list[MetricReport]] = {}
    for rep in reports:
        groups.setdefault((rep.instrument, rep.model_name, rep.dataset_tag), []).append(rep)
    for members in groups.values():
        for fam in families:
            for metric in fam.metrics:
                covered = [r for r in members if fam.covers(r) and metric in r.raw_p()]
                if not covered:
                    continue
                _, adjusted = benjamini_hochberg([r.raw_p()[metric] for r in covered], q)
                for r, adj in zip(covered, adjusted):
                    r.p_adjusted[metric] = adj
                    r.notes.append(f"{metric}: BH-adjusted in family {fam.name!r} (m={len(covered)})")


def evaluate(bundle: EvaluationBundle) -> list[MetricReport]:
    """Full-scale and per-item reports for every (instrument, model, dataset) scope."""
    missing = [r.interview_id for r in bundle.ratings if r.interview_id not in bundle.truth]
    if missing:
        raise EvaluationError(f"no ground truth for rated interviews: {sorted(missing)}")

    reports: list[MetricReport] = []
    groups: dict[tuple[str, str], list[InterviewRating]] = {}
    for r in bundle.ratings:
        if r.failures or r.total is None:
            bundle.notes.append(f"{r.interview_id}: partial scorecard excluded from evaluation")
            continue
        groups.setdefault((r.instrument_id.value, r.model_name), []).append(r)

    for (inst, model), rated in sorted(groups.items()):
        rated.sort(key=lambda r: r.interview_id)
        item_ids = sorted(rated[0].item_ratings)
        for r in rated:
            truth_items = set(bundle.truth[r.interview_id])
            if set(r.item_ratings) != set(item_ids) or truth_items != set(item_ids):
                raise EvaluationError(
                    f"{r.interview_id}: item set mismatch between ratings {sorted(r.item_ratings)} "
                    f"and truth {sorted(truth_items)}"
                )
        tags = sorted({r.dataset_tag for r in rated if r.dataset_tag})
        scopes: list[str | None] = [None] + (tags if len(tags) > 1 else [])
        for tag in scopes:
            sub = [r for r in rated if tag is None or r.dataset_tag == tag]
            ids = [r.interview_id for r in sub]
            truth = [bundle.truth[i] for i in ids]
            full = PairedScores(
                [r.total for r in sub], [sum(t.values()) for t in truth], ids  # type: ignore[misc]
            )
            rep = compute_report(full, inst, model, tag, None)
            pooled = [r.item_ratings[i].score - t[i] for r, t in zip(sub, truth) for i in item_ids]
            try:
                rep.extra_tests["bias_items_pooled"] = wilcoxon_signed_rank(pooled)
            except NoInformation:
                rep.notes.append("bias_items_pooled: all item residuals zero")
            rep.notes.append("bias: Wilcoxon on total-score residuals; bias_items_pooled: on pooled item residuals")
            reports.append(rep)
            for item in item_ids:
                pair = PairedScores(
                    [r.item_ratings[item].score for r in sub], [t[item] for t in truth], ids
                )
                reports.append(compute_report(pair, inst, model, tag, item))

    _apply_families(reports, bundle.families, bundle.q)
    for rep in reports:
        rep.target_flags = judge_targets(rep, bundle.alpha)
    return reports


CSV_COLUMNS = (
    "instrument", "model", "dataset", "item_id", "n", "mae", "rmse", "sae",
    "pearson_r", "pearson_p", "pearson_p_adj",
    "spearman_rho", "spearman_p", "spearman_p_adj",
    "icc_3_1", "icc_3_1_p", "icc_3_1_p_adj",
    "icc_2_1", "icc_2_1_p", "icc_2_1_p_adj",
    "bias_p", "bias_p_adj", "bias_mean", "loa_low", "loa_high",
    "target_pearson", "target_spearman", "target_icc_3_1", "target_icc_2_1", "target_bias",
)


def report_row(rep: MetricReport) -> dict[str, Any]:
    raw = rep.raw_p()
    ba = rep.bland_altman
    row: dict[str, Any] = {
        "instrument": rep.instrument,
        "model": rep.model_name,
        "dataset": rep.dataset_tag or "all",
        "item_id": "total" if rep.item_id is None else rep.item_id,
        "n": rep.n,
        "mae": rep.mae,
        "rmse": rep.rmse,
        "sae": rep.sae,
        "pearson_r": rep.pearson_r,
        "spearman_rho": rep.spearman_rho,
        "icc_3_1": rep.icc_3_1,
        "icc_2_1": rep.icc_2_1,
        "bias_mean": ba.bias_mean if ba else None,
        "loa_low": ba.loa_low if ba else None,
        "loa_high": ba.loa_high if ba else None,
    }
    for m in TESTED_METRICS:
        row[f"{m}_p"] = raw.get(m)
        row[f"{m}_p_adj"] = rep.p_adjusted.get(m)
        row[f"target_{m}"] = rep.target_flags.get(m)
    return row


def sort_key(rep: MetricReport) -> tuple:
    return (rep.instrument, rep.model_name, rep.dataset_tag or "", -1 if rep.item_id is None else rep.item_id)


def reports_csv(reports: Iterable[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for rep in sorted(reports, key=sort_key):
        w.writerow({k: ("" if v is None else v) for k, v in report_row(rep).items()})
    return buf.getvalue()


def cmd_evaluate(
    ratings_path: str | Path,
    truth_path: str | Path,
    out_dir: str | Path,
    q: float = 0.05,
    alpha: float = 0.05,
    families_path: str | Path | None = None,
    allow_mixed_digests: bool = False,
) -> Path:
    """Evaluate ratings against ground truth; returns the evaluation document path."""
    if not (0 < q < 1 and 0 < alpha < 1):
        raise EvaluationError("q and alpha must lie in (0, 1)")
    ratings = load_ratings(ratings_path)
    digests = sorted({r.pipeline_config_digest for r in ratings})
    if len(digests) > 1 and not allow_mixed_digests:
        raise EvaluationError(f"ratings carry {len(digests)} different config digests; pass the override flag to mix them")
    raw_truth = load_truth(truth_path)
    truth, notes = resolve_truth(raw_truth, {r.instrument_id for r in ratings})
    bundle = EvaluationBundle(ratings, truth, load_families(families_path), alpha, q, notes)
    reports = evaluate(bundle)

    rated_ids = {r.interview_id for r in ratings}
    unrated = sorted(set(truth) - rated_ids)
    if unrated:
        bundle.notes.append(f"ground truth without ratings (ignored): {unrated}")
    out = Path(out_dir)
    doc = {
        "q": q,
        "alpha": alpha,
        "config_digests": digests,
        "interviews": sorted(rated_ids),
        "families": [
            {"name": f.name, "metrics": list(f.metrics), "items": "all" if f.items is None else list(f.items),
             "include_total": f.include_total}
            for f in bundle.families
        ],
        "notes": bundle.notes,
        "reports": [r.to_dict() for r in sorted(reports, key=sort_key)],
    }
    write_json(out / EVALUATION_NAME, doc)
    (out / CSV_NAME).write_text(reports_csv(reports), encoding="utf-8")
    return out / EVALUATION_NAME


def load_evaluation(path: str | Path) -> tuple[dict[str, Any], list[MetricReport]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return doc, [MetricReport.from_dict(d) for d in doc["reports"]]
