import math
import numpy as np
import pytest
import scipy.stats
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracles
from hamrater.clinimetrics import (
    ICCForm,
    NoInformation,
    PairedScores,
    UndefinedStatistic,
    average_ranks,
    benjamini_hochberg,
    bland_altman,
    compute_report,
    icc,
    judge_targets,
    mae,
    pearson,
    resolve_ground_truth,
    rmse,
    sae,
    select_high_discrepancy,
    spearman,
    two_way_anova,
    wilcoxon_signed_rank,
)


def test_error_metrics_identity():
    p = PairedScores([1, 2, 3], [1, 2, 3])
    assert mae(p) == rmse(p) == sae(p) == 0


def test_error_metrics_hand_example():
    p = PairedScores([1, 2, 3], [2, 2, 5])
    assert mae(p) == pytest.approx(1.0)
    assert sae(p) == pytest.approx(3.0)
    assert rmse(p) == pytest.approx(math.sqrt(5 / 3))


def test_error_metrics_single_pair():
    p = PairedScores([4], [1])
    assert mae(p) == rmse(p) == sae(p) == 3


def test_paired_scores_validation():
    with pytest.raises(ValueError):
        PairedScores([], [])
    with pytest.raises(ValueError):
        PairedScores([1, 2], [1])
    with pytest.raises(ValueError):
        PairedScores([1, float("nan")], [1, 2])


def test_pearson_perfect_line():
    a = [1, 4, 2, 8, 5]
    r, t = pearson(PairedScores(a, [2 * x + 1 for x in a]))
    assert r == pytest.approx(1.0) and t.p_value == 0.0


def test_pearson_hand_example():
    r, _ = pearson(PairedScores([1, 2, 3], [3, 1, 2]))
    assert r == pytest.approx(-0.5)


def test_pearson_constant_series():
    with pytest.raises(UndefinedStatistic):
        pearson(PairedScores([1, 2, 3], [2, 2, 2]))


def test_pearson_p_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.integers(0, 20, 15)
        b = a + rng.integers(-6, 7, 15)
        r, t = pearson(PairedScores(a, b))
        ref = scipy.stats.pearsonr(a, b)
        assert r == pytest.approx(ref.statistic, abs=1e-12)
        assert t.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


def test_spearman_monotone():
    a = [0.5, 2, -1, 3, 7]
    rho, _ = spearman(PairedScores(a, [x**3 for x in a]))
    assert rho == pytest.approx(1.0)


def test_spearman_hand_examples():
    rho, _ = spearman(PairedScores([1, 2, 3], [3, 1, 2]))
    assert rho == pytest.approx(1 - 6 * 6 / (3 * 8))
    # Average rank 1.5 for the tie: ranks (1.5, 1.5, 3) vs (1, 2, 3) gives sqrt(3)/2.
    rho, _ = spearman(PairedScores([1, 1, 2], [1, 2, 3]))
    assert rho == pytest.approx(math.sqrt(3) / 2)
    assert rho == pytest.approx(oracles.spearman([1, 1, 2], [1, 2, 3]))


def test_spearman_all_tied():
    with pytest.raises(UndefinedStatistic):
        spearman(PairedScores([1, 1, 1], [1, 2, 3]))


def test_spearman_matches_scipy():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.integers(0, 5, 12), rng.integers(0, 5, 12)
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        rho, t = spearman(PairedScores(a, b))
        ref = scipy.stats.spearmanr(a, b)
        assert rho == pytest.approx(ref.statistic, abs=1e-12)
        assert t.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


def test_average_ranks():
    assert list(average_ranks([10, 20, 10, 30, 20])) == [1.5, 3.5, 1.5, 5.0, 3.5]


def test_icc_identical_columns():
    m = [[1, 1], [3, 3], [2, 2], [5, 5]]
    for form in ICCForm:
        value, test = icc(m, form)
        assert value == pytest.approx(1.0)
        assert test.p_value == 0.0


def test_icc_offset_column():
    m = [[1, 3], [3, 5], [2, 4], [5, 7]]
    assert icc(m, "ICC(3,1)")[0] == pytest.approx(1.0)
    assert icc(m, "ICC(2,1)")[0] < 1.0


def test_icc_four_by_two_longhand():
    m = [[1, 2], [3, 4], [5, 6], [7, 8]]
    a = two_way_anova(m)
    assert (a.msr, a.msc, a.mse) == pytest.approx((40 / 3, 2.0, 0.0))
    assert icc(m, "ICC(3,1)")[0] == pytest.approx(1.0)
    assert icc(m, "ICC(2,1)")[0] == pytest.approx(40 / 43)
    icc2, icc3, _ = oracles.icc_longhand(m)
    assert (icc2, icc3) == pytest.approx((40 / 43, 1.0))


def test_icc_f_test_against_scipy():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(12, 3)) + rng.normal(size=(12, 1)) * 2
    a = two_way_anova(m)
    _, test = icc(m, "ICC(3,1)")
    assert test.statistic == pytest.approx(a.msr / a.mse)
    assert test.p_value == pytest.approx(scipy.stats.f.sf(a.msr / a.mse, 11, 22), rel=1e-9)


def test_icc_degenerate():
    with pytest.raises(UndefinedStatistic):
        icc([[2, 2], [2, 2], [2, 2]], "ICC(2,1)")


def test_icc_shape_validation():
    with pytest.raises(ValueError):
        icc([[1, 2]], "ICC(3,1)")
    with pytest.raises(ValueError):
        icc([[1], [2]], "ICC(3,1)")


def test_wilcoxon_all_zero():
    with pytest.raises(NoInformation):
        wilcoxon_signed_rank([0, 0, 0])


def test_wilcoxon_symmetric():
    assert wilcoxon_signed_rank([1, -1, 2, -2]).p_value == pytest.approx(1.0)
    assert wilcoxon_signed_rank([1, -1, 2, -2], method="exact").p_value == pytest.approx(1.0)


def test_wilcoxon_all_positive_five():
    res = wilcoxon_signed_rank([1, 2, 3, 4, 5])
    assert res.p_value == 2 / 2**5 == 0.0625
    assert res.statistic == 0
    assert "exact" in res.method_note


def test_wilcoxon_path_selection():
    assert "normal approximation" in wilcoxon_signed_rank([1, 1, 2, 3]).method_note
    assert "exact" in wilcoxon_signed_rank(list(range(1, 26))).method_note
    assert "normal approximation" in wilcoxon_signed_rank(list(range(1, 27))).method_note
    assert "zeros dropped (2)" in wilcoxon_signed_rank([0, 1, 0, 2]).method_note


def test_wilcoxon_matches_scipy_exact_and_approx():
    rng = np.random.default_rng(9)
    for n in (6, 9, 12):
        d = rng.permutation(np.arange(1, n + 1)) * rng.choice([-1, 1], n)
        ours = wilcoxon_signed_rank(d.tolist())
        ref = scipy.stats.wilcoxon(d, method="exact")
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)
    d = rng.integers(-4, 5, 40)
    d = d[d != 0]
    ours = wilcoxon_signed_rank(d.tolist())
    ref = scipy.stats.wilcoxon(d, method="approx", correction=True)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_bh_single():
    assert benjamini_hochberg([0.03], 0.05) == ([True], [0.03])
    assert benjamini_hochberg([0.07], 0.05) == ([False], [0.07])


def test_bh_hand_examples():
    reject, adj = benjamini_hochberg([0.01, 0.02, 0.03, 0.04], 0.05)
    assert reject == [True] * 4
    assert adj == pytest.approx([0.04] * 4)
    reject, adj = benjamini_hochberg([0.04, 0.9], 0.05)
    assert reject == [False, False]
    assert adj == pytest.approx([0.08, 0.9])


def test_bh_preserves_input_order():
    reject, adj = benjamini_hochberg([0.9, 0.001, 0.04], 0.05)
    assert reject == [False, True, False]
    assert adj == pytest.approx([0.9, 0.003, 0.06])


def test_bh_validation():
    with pytest.raises(ValueError):
        benjamini_hochberg([0.1], 0)
    with pytest.raises(ValueError):
        benjamini_hochberg([1.2], 0.05)


def test_bland_altman_examples():
    ba = bland_altman(PairedScores([1, 2, 3], [1, 2, 3]))
    assert (ba.bias_mean, ba.loa_low, ba.loa_high) == (0, 0, 0)
    ba = bland_altman(PairedScores([2, 3, 4, 5], [1, 2, 3, 4]))
    assert (ba.bias_mean, ba.loa_low, ba.loa_high) == (1, 1, 1)
    ba = bland_altman(PairedScores([1, 3], [1, 1]))
    assert ba.bias_mean == 1 and ba.sd == pytest.approx(math.sqrt(2))
    assert ba.loa_low == pytest.approx(1 - 1.96 * math.sqrt(2))
    assert ba.loa_high == pytest.approx(1 + 1.96 * math.sqrt(2))
    assert ba.points == ((1.0, 0.0), (2.0, 2.0))
    with pytest.raises(ValueError):
        bland_altman(PairedScores([1], [2]))


def test_resolve_ground_truth():
    assert resolve_ground_truth([{1: 3, 2: 0}]) == {1: 3, 2: 0}
    assert resolve_ground_truth([{1: 1}, {1: 2}, {1: 4}]) == {1: 2}
    assert resolve_ground_truth([{1: 1}, {1: 2}]) == {1: 1.5}
    with pytest.raises(ValueError, match="coverage"):
        resolve_ground_truth([{1: 1, 2: 1}, {1: 2}])
    with pytest.raises(ValueError):
        resolve_ground_truth([])


def test_select_high_discrepancy():
    same = {"C": 1, "A": 1, "B": 1}
    assert select_high_discrepancy(same, same, 2) == ["A", "B"]
    agent, truth = {"A": 5, "B": 1, "C": 3}, {"A": 0, "B": 0, "C": 0}
    assert select_high_discrepancy(agent, truth, 2) == ["A", "C"]
    assert select_high_discrepancy(agent, truth, 3) == ["A", "C", "B"]
    with pytest.raises(ValueError):
        select_high_discrepancy(agent, truth, 4)


def _report(p_r=0.001, p_bias=0.4):
    rep = compute_report(PairedScores([1, 2, 3, 4, 6], [1, 2, 3, 5, 5]), "HAMD17S", "m")
    rep.p_adjusted = {"pearson": p_r, "spearman": p_r, "icc_3_1": p_r, "icc_2_1": p_r, "bias": p_bias}
    return rep


def test_judge_targets():
    flags = judge_targets(_report(0.001, 0.40))
    assert flags["pearson"] == "pass" and flags["bias"] == "pass"
    assert judge_targets(_report(p_r=0.20))["pearson"] == "fail"
    assert judge_targets(_report(p_bias=0.01))["bias"] == "fail"


def test_judge_targets_not_applicable_bias_passes():
    rep = compute_report(PairedScores([1, 2, 3, 4], [1, 2, 3, 4]), "HAMD17S", "m")
    assert rep.bias_test is None
    flags = judge_targets(rep)
    assert flags == {"pearson": "pass", "spearman": "pass", "icc_3_1": "pass", "icc_2_1": "pass", "bias": "pass"}


def test_report_roundtrip():
    from hamrater.clinimetrics import MetricReport

    rep = _report()
    rep.target_flags = judge_targets(rep)
    assert MetricReport.from_dict(rep.to_dict()).to_dict() == rep.to_dict()


# --- properties ---

scores = st.lists(st.integers(0, 44), min_size=3, max_size=40)


@settings(max_examples=150, deadline=None)
@given(scores, st.data())
def test_error_metric_relations(a, data):
    b = data.draw(st.lists(st.integers(0, 44), min_size=len(a), max_size=len(a)))
    p = PairedScores(a, b)
    assert mae(p) <= rmse(p) + 1e-12
    assert sae(p) == pytest.approx(p.n * mae(p))
    assert bland_altman(p).bias_mean == pytest.approx(np.mean(a) - np.mean(b))


@settings(max_examples=150, deadline=None)
@given(scores, st.data(), st.floats(0.1, 10), st.floats(-50, 50))
def test_correlation_transform_invariance(a, data, scale, shift):
    b = data.draw(st.lists(st.integers(0, 44), min_size=len(a), max_size=len(a)))
    assume(len(set(a)) > 1 and len(set(b)) > 1)
    r, _ = pearson(PairedScores(a, b))
    assert pearson(PairedScores([scale * x + shift for x in a], b))[0] == pytest.approx(r, abs=1e-9)
    assert pearson(PairedScores([-scale * x for x in a], b))[0] == pytest.approx(-r, abs=1e-9)
    rho, _ = spearman(PairedScores(a, b))
    assert spearman(PairedScores([math.exp(x / 10) for x in a], b))[0] == pytest.approx(rho, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.5), st.floats(0.01, 0.49))
def test_bh_properties(p, q, dq):
    reject, adj = benjamini_hochberg(p, q)
    order = sorted(range(len(p)), key=lambda i: p[i])
    assert all(adj[order[i]] <= adj[order[i + 1]] + 1e-15 for i in range(len(p) - 1))
    assert all(x >= y - 1e-15 and x <= 1 for x, y in zip(adj, p))
    reject2, _ = benjamini_hochberg(p, min(q + dq, 0.99))
    assert all(r2 for r, r2 in zip(reject, reject2) if r)


@settings(max_examples=80, deadline=None)
@given(st.integers(4, 15), st.integers(2, 4), st.integers(0, 2**31), st.floats(0.5, 5))
def test_icc_offset_property(n, k, seed, c):
    rng = np.random.default_rng(seed)
    m = rng.integers(0, 10, size=(n, k)).astype(float)
    try:
        i3, _ = icc(m, "ICC(3,1)")
        i2, _ = icc(m, "ICC(2,1)")
    except UndefinedStatistic:
        return
    shifted = m.copy()
    shifted[:, rng.integers(k)] += c
    assert icc(shifted, "ICC(3,1)")[0] == pytest.approx(i3, abs=1e-9)
    a = two_way_anova(m)
    if a.msr > a.mse and a.msc > a.mse:
        assert i2 < i3
