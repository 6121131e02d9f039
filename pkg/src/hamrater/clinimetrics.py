"""Agreement, association and bias statistics for rater-versus-reference evaluation.

All functions take plain sequences and return floats or small dataclasses.
Tail probabilities for the t and F tests use the regularized incomplete
beta function; the normal tail uses ``erfc``.
"""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import betainc

Z_95 = 1.96
WILCOXON_EXACT_MAX_N = 25

ASSOCIATION_METRICS = ("pearson", "spearman", "icc_3_1", "icc_2_1")
BIAS_METRICS = ("bias",)
TESTED_METRICS = ASSOCIATION_METRICS + BIAS_METRICS


class UndefinedStatistic(ValueError):
    """The statistic is mathematically undefined for this input."""


class NoInformation(UndefinedStatistic):
    """Every residual is zero, so the signed-rank test carries no information."""


@dataclass(frozen=True)
class PairedScores:
    """Candidate scores ``a`` and reference scores ``b``, aligned by index."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    labels: tuple[str, ...] = ()

    def __init__(self, a: Sequence[float], b: Sequence[float], labels: Sequence[str] = ()):
        a_t = tuple(float(x) for x in a)
        b_t = tuple(float(x) for x in b)
        if len(a_t) != len(b_t) or not a_t:
            raise ValueError("paired scores need equal, non-zero lengths")
        if any(math.isnan(x) for x in a_t + b_t):
            raise ValueError("paired scores contain missing values")
        labels_t = tuple(labels)
        if labels_t and len(labels_t) != len(a_t):
            raise ValueError("labels must align with scores")
        object.__setattr__(self, "a", a_t)
        object.__setattr__(self, "b", b_t)
        object.__setattr__(self, "labels", labels_t)

    @property
    def n(self) -> int:
        return len(self.a)

    def differences(self) -> np.ndarray:
        return np.asarray(self.a) - np.asarray(self.b)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method_note: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        stat = self.statistic if math.isfinite(self.statistic) else str(self.statistic)
        return {"statistic": stat, "p_value": self.p_value, "method_note": self.method_note}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TestResult:
        return cls(float(d["statistic"]), float(d["p_value"]), d.get("method_note", ""))


# --- error metrics ---------------------------------------------------------


def mae(p: PairedScores) -> float:
    return float(np.mean(np.abs(p.differences())))


def rmse(p: PairedScores) -> float:
    return float(np.sqrt(np.mean(p.differences() ** 2)))


def sae(p: PairedScores) -> float:
    return float(np.sum(np.abs(p.differences())))


# --- distributions ---------------------------------------------------------


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return float(min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


def f_upper_p(f: float, df1: float, df2: float) -> float:
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return float(min(1.0, betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))))


def normal_two_sided_p(z: float) -> float:
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


# --- association -----------------------------------------------------------


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedStatistic("correlation undefined for a zero-variance series")
    da, db = a - a.mean(), b - b.mean()
    r = float(np.dot(da, db) / math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db))))
    return max(-1.0, min(1.0, r))


def _correlation_test(r: float, n: int, label: str) -> TestResult:
    df = n - 2
    if df < 1:
        return TestResult(float("nan"), 1.0, f"{label}; n={n} leaves no degrees of freedom, p set to 1")
    t = math.copysign(math.inf, r) if abs(r) >= 1.0 else r * math.sqrt(df / (1.0 - r * r))
    return TestResult(t, t_two_sided_p(t, df), f"{label}; two-sided t test, df={df}")


def pearson(p: PairedScores) -> tuple[float, TestResult]:
    r = _correlation(np.asarray(p.a), np.asarray(p.b))
    return r, _correlation_test(r, p.n, "Pearson r")


def spearman(p: PairedScores) -> tuple[float, TestResult]:
    rho = _correlation(average_ranks(p.a), average_ranks(p.b))
    return rho, _correlation_test(rho, p.n, "Spearman rho (average ranks)")


# --- intraclass correlation ------------------------------------------------


class ICCForm(str, enum.Enum):
    CONSISTENCY_3_1 = "ICC(3,1)"
    AGREEMENT_2_1 = "ICC(2,1)"


@dataclass(frozen=True)
class AnovaTable:
    n: int
    k: int
    msr: float
    msc: float
    mse: float


def two_way_anova(m: Sequence[Sequence[float]] | np.ndarray) -> AnovaTable:
    """Two-way ANOVA without replication on an n-subjects by k-raters matrix."""
    x = np.asarray(m, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("ratings matrix must be n x k with n >= 2 and k >= 2")
    if np.isnan(x).any():
        raise ValueError("ratings matrix has missing cells")
    n, k = x.shape
    grand = x.mean()
    ss_rows = k * float(np.sum((x.mean(axis=1) - grand) ** 2))
    ss_cols = n * float(np.sum((x.mean(axis=0) - grand) ** 2))
    ss_total = float(np.sum((x - grand) ** 2))
    ss_err = max(ss_total - ss_rows - ss_cols, 0.0)
    return AnovaTable(
        n=n,
        k=k,
        msr=ss_rows / (n - 1),
        msc=ss_cols / (k - 1),
        mse=ss_err / ((n - 1) * (k - 1)),
    )


def icc(m: Sequence[Sequence[float]] | np.ndarray, form: ICCForm | str) -> tuple[float, TestResult]:
    """Single-rater ICC(3,1) (consistency) or ICC(2,1) (absolute agreement).

    The accompanying test is F = MSR/MSE on (n-1, (n-1)(k-1)) degrees of
    freedom, one-sided for ICC > 0.
    """
    form = ICCForm(form)
    a = two_way_anova(m)
    # Relative tolerance: residual sums below float noise count as zero.
    scale = max(a.msr, a.msc, a.mse, 1.0)
    mse = 0.0 if a.mse <= 1e-12 * scale else a.mse
    if a.msr <= 1e-12 * scale and mse == 0.0:
        raise UndefinedStatistic("ICC undefined: no subject or residual variance")
    n, k = a.n, a.k
    if form is ICCForm.CONSISTENCY_3_1:
        value = (a.msr - mse) / (a.msr + (k - 1) * mse)
    else:
        value = (a.msr - mse) / (a.msr + (k - 1) * mse + (k / n) * (a.msc - mse))
    df1, df2 = n - 1, (n - 1) * (k - 1)
    f = math.inf if mse == 0.0 else a.msr / mse
    return float(value), TestResult(f, f_upper_p(f, df1, df2), f"{form.value}; F=MSR/MSE, df=({df1},{df2}), one-sided")


# --- signed-rank bias test -------------------------------------------------


def _exact_lower_tail(doubled_ranks: Sequence[int], w2: int) -> float:
    """P(W+ <= w) under random signs, by counting all 2^n sign patterns.

    Ranks are doubled so tied (half-integer) ranks stay integral.
    """
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    hits = sum(counts[: w2 + 1])
    return hits / 2 ** len(doubled_ranks)


def wilcoxon_signed_rank(residuals: Sequence[float], method: str = "auto") -> TestResult:
    """Two-sided Wilcoxon signed-rank test of residuals against zero.

    Zeros are dropped. ``method="auto"`` uses the exact null distribution when
    at most 25 nonzero residuals remain and their magnitudes are tie-free,
    and otherwise the normal approximation with tie-corrected variance and a
    0.5 continuity correction. ``"exact"`` and ``"approx"`` force a path.
    """
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    d = np.asarray([x for x in residuals if x != 0], dtype=float)
    n = len(d)
    if n == 0:
        raise NoInformation("all residuals are zero")
    mags = np.abs(d)
    ranks = average_ranks(mags)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    _, tie_counts = np.unique(mags, return_counts=True)
    has_ties = bool((tie_counts > 1).any())
    dropped = len(residuals) - n

    use_exact = method == "exact" or (method == "auto" and n <= WILCOXON_EXACT_MAX_N and not has_ties)
    base = f"zeros dropped ({dropped}); n={n}; W=min(W+={w_plus:g}, W-={w_minus:g})"
    if use_exact:
        doubled = [int(round(2 * r)) for r in ranks]
        p = min(1.0, 2.0 * _exact_lower_tail(doubled, int(round(2 * w))))
        note = "exact enumeration of sign patterns" + (" with average ranks" if has_ties else "")
        return TestResult(w, p, f"Wilcoxon signed-rank, {note}; {base}")

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = max(abs(w - mean) - 0.5, 0.0) / math.sqrt(var)
    note = "normal approximation, tie-corrected variance, continuity correction 0.5"
    return TestResult(w, normal_two_sided_p(z), f"Wilcoxon signed-rank, {note}; {base}")


# --- multiplicity ----------------------------------------------------------


def benjamini_hochberg(p_values: Sequence[float], q: float = 0.05) -> tuple[list[bool], list[float]]:
    """Benjamini-Hochberg step-up: reject flags and adjusted p, in input order."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    p = [float(x) for x in p_values]
    if any(not 0.0 <= x <= 1.0 for x in p):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    if m == 0:
        return [], []
    order = sorted(range(m), key=lambda i: p[i])
    k = 0
    for rank, i in enumerate(order, start=1):
        if p[i] <= rank / m * q:
            k = rank
    reject = [False] * m
    for i in order[:k]:
        reject[i] = True
    adjusted = [0.0] * m
    running = 1.0
    for rank in range(m, 0, -1):
        i = order[rank - 1]
        running = min(running, min(1.0, p[i] * (m / rank)))
        adjusted[i] = running
    return reject, adjusted


# --- Bland-Altman ----------------------------------------------------------


@dataclass(frozen=True)
class BlandAltman:
    bias_mean: float
    sd: float
    loa_low: float
    loa_high: float
    points: tuple[tuple[float, float], ...] = ()


def bland_altman(p: PairedScores) -> BlandAltman:
    if p.n < 2:
        raise ValueError("Bland-Altman needs at least two pairs")
    a, b = np.asarray(p.a), np.asarray(p.b)
    d = a - b
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    pts = tuple((float(m), float(x)) for m, x in zip((a + b) / 2.0, d))
    return BlandAltman(bias, sd, bias - Z_95 * sd, bias + Z_95 * sd, pts)


# --- ground truth ----------------------------------------------------------


def resolve_ground_truth(raters: Sequence[Mapping[int, float]]) -> dict[int, float]:
    """Per-item median across raters; an even count averages the middle two."""
    if not raters:
        raise ValueError("at least one rater is required")
    items = set(raters[0])
    for r in raters[1:]:
        if set(r) != items:
            raise ValueError(
                f"inconsistent item coverage across raters: {sorted(items ^ set(r))}"
            )
    return {i: float(statistics.median(r[i] for r in raters)) for i in sorted(items)}


def select_high_discrepancy(
    agent_totals: Mapping[str, float], truth_totals: Mapping[str, float], top_k: int
) -> list[str]:
    """Interview ids with the largest absolute total-score disagreement."""
    if set(agent_totals) != set(truth_totals):
        raise ValueError("agent and truth totals cover different interviews")
    if not 0 <= top_k <= len(agent_totals):
        raise ValueError(f"top_k={top_k} exceeds population of {len(agent_totals)}")
    ranked = sorted(agent_totals, key=lambda i: (-abs(agent_totals[i] - truth_totals[i]), i))
    return ranked[:top_k]


# --- reports ---------------------------------------------------------------


@dataclass
class MetricReport:
    instrument: str
    model_name: str
    dataset_tag: str | None
    item_id: int | None
    n: int
    mae: float
    rmse: float
    sae: float
    pearson_r: float | None = None
    pearson_test: TestResult | None = None
    spearman_rho: float | None = None
    spearman_test: TestResult | None = None
    icc_3_1: float | None = None
    icc_3_1_test: TestResult | None = None
    icc_2_1: float | None = None
    icc_2_1_test: TestResult | None = None
    bias_test: TestResult | None = None
    bland_altman: BlandAltman | None = None
    extra_tests: dict[str, TestResult] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    p_adjusted: dict[str, float] = field(default_factory=dict)
    target_flags: dict[str, str] = field(default_factory=dict)

    @property
    def scope_key(self) -> str:
        item = "total" if self.item_id is None else f"item{self.item_id}"
        return f"{self.instrument}/{self.model_name}/{self.dataset_tag or 'all'}/{item}"

    def raw_p(self) -> dict[str, float]:
        """Raw p-values of the tested metrics that are defined for this scope."""
        tests = {
            "pearson": self.pearson_test,
            "spearman": self.spearman_test,
            "icc_3_1": self.icc_3_1_test,
            "icc_2_1": self.icc_2_1_test,
            "bias": self.bias_test,
        }
        return {k: t.p_value for k, t in tests.items() if t is not None}

    def to_dict(self) -> dict[str, Any]:
        def t(x: TestResult | None) -> dict[str, Any] | None:
            return None if x is None else x.to_dict()

        ba = None
        if self.bland_altman is not None:
            ba = {
                "bias_mean": self.bland_altman.bias_mean,
                "sd": self.bland_altman.sd,
                "loa_low": self.bland_altman.loa_low,
                "loa_high": self.bland_altman.loa_high,
                "points": [list(pt) for pt in self.bland_altman.points],
            }
        return {
            "scope": {
                "instrument": self.instrument,
                "model": self.model_name,
                "dataset": self.dataset_tag,
                "item_id": self.item_id,
            },
            "n": self.n,
            "mae": self.mae,
            "rmse": self.rmse,
            "sae": self.sae,
            "pearson_r": self.pearson_r,
            "pearson_test": t(self.pearson_test),
            "spearman_rho": self.spearman_rho,
            "spearman_test": t(self.spearman_test),
            "icc_3_1": self.icc_3_1,
            "icc_3_1_test": t(self.icc_3_1_test),
            "icc_2_1": self.icc_2_1,
            "icc_2_1_test": t(self.icc_2_1_test),
            "bias_test": t(self.bias_test),
            "bland_altman": ba,
            "extra_tests": {k: v.to_dict() for k, v in sorted(self.extra_tests.items())},
            "notes": list(self.notes),
            "p_adjusted": dict(sorted(self.p_adjusted.items())),
            "target_flags": dict(sorted(self.target_flags.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MetricReport:
        def t(x: Mapping[str, Any] | None) -> TestResult | None:
            return None if x is None else TestResult.from_dict(x)

        ba = d.get("bland_altman")
        scope = d["scope"]
        return cls(
            instrument=scope["instrument"],
            model_name=scope["model"],
            dataset_tag=scope.get("dataset"),
            item_id=scope.get("item_id"),
            n=d["n"],
            mae=d["mae"],
            rmse=d["rmse"],
            sae=d["sae"],
            pearson_r=d.get("pearson_r"),
            pearson_test=t(d.get("pearson_test")),
            spearman_rho=d.get("spearman_rho"),
            spearman_test=t(d.get("spearman_test")),
            icc_3_1=d.get("icc_3_1"),
            icc_3_1_test=t(d.get("icc_3_1_test")),
            icc_2_1=d.get("icc_2_1"),
            icc_2_1_test=t(d.get("icc_2_1_test")),
            bias_test=t(d.get("bias_test")),
            bland_altman=None
            if ba is None
            else BlandAltman(ba["bias_mean"], ba["sd"], ba["loa_low"], ba["loa_high"], tuple(map(tuple, ba["points"]))),
            extra_tests={k: TestResult.from_dict(v) for k, v in d.get("extra_tests", {}).items()},
            notes=list(d.get("notes", [])),
            p_adjusted=dict(d.get("p_adjusted", {})),
            target_flags=dict(d.get("target_flags", {})),
        )


def compute_report(
    p: PairedScores,
    instrument: str,
    model_name: str,
    dataset_tag: str | None = None,
    item_id: int | None = None,
) -> MetricReport:
    """Every metric for one scope; ``p.a`` is the candidate, ``p.b`` the reference.

    Statistics that are undefined for the data (e.g. a constant series) are
    left as ``None`` with an explanatory note.
    """
    rep = MetricReport(
        instrument=instrument,
        model_name=model_name,
        dataset_tag=dataset_tag,
        item_id=item_id,
        n=p.n,
        mae=mae(p),
        rmse=rmse(p),
        sae=sae(p),
    )
    try:
        rep.pearson_r, rep.pearson_test = pearson(p)
    except UndefinedStatistic as exc:
        rep.notes.append(f"pearson: {exc}")
    try:
        rep.spearman_rho, rep.spearman_test = spearman(p)
    except UndefinedStatistic as exc:
        rep.notes.append(f"spearman: {exc}")
    if p.n >= 2:
        matrix = np.column_stack([p.a, p.b])
        for form, attr in ((ICCForm.CONSISTENCY_3_1, "icc_3_1"), (ICCForm.AGREEMENT_2_1, "icc_2_1")):
            try:
                value, test = icc(matrix, form)
            except UndefinedStatistic as exc:
                rep.notes.append(f"{attr}: {exc}")
                continue
            setattr(rep, attr, value)
            setattr(rep, f"{attr}_test", test)
        rep.bland_altman = bland_altman(p)
    else:
        rep.notes.append("icc, bland-altman: need at least two pairs")
    try:
        rep.bias_test = wilcoxon_signed_rank(list(p.differences()))
    except NoInformation:
        rep.notes.append("bias: all residuals zero, test not applicable")
    return rep


def judge_targets(report: MetricReport, alpha: float = 0.05) -> dict[str, str]:
    """Pass/fail per tested metric, using adjusted p where one exists.

    Association metrics pass on significance (p < alpha). The bias metric
    passes when the null of no systematic offset is not rejected, including
    when the test is not applicable because every residual is zero.
    """
    raw = report.raw_p()
    flags: dict[str, str] = {}
    for metric in ASSOCIATION_METRICS:
        if metric not in raw:
            flags[metric] = "n/a"
            continue
        p = report.p_adjusted.get(metric, raw[metric])
        flags[metric] = "pass" if p < alpha else "fail"
    if "bias" not in raw:
        flags["bias"] = "pass"
    else:
        p = report.p_adjusted.get("bias", raw["bias"])
        flags["bias"] = "pass" if p >= alpha else "fail"
    return flags
