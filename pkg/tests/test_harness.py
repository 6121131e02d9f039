import copy
import json
import random

import pytest

from conftest import make_doc
from hamrater.agents import InterviewRating, ItemRating
from hamrater.cli import main
from hamrater.harness import cmd_evaluate, cmd_mock_demo, cmd_rate, cmd_report
from hamrater.harness.config import ConfigError, RunConfig
from hamrater.harness.evaluation import EvaluationError, load_evaluation
from hamrater.harness.rating import MANIFEST_NAME, RateError
from hamrater.harness.reporting import ReportError
from hamrater.instruments import DualAxisRating, InstrumentId, load_instrument

HAMD = load_instrument(InstrumentId.HAMD17S)

ZERO_BLOCK = '```json\n{"evidence": [], "justification": "Not discussed.", "frequency": 0, "intensity": 0, "score": 0}\n```'


def write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def rate_setup(tmp_path):
    tdir = tmp_path / "transcripts"
    tdir.mkdir()
    for iid in ("int01", "int02"):
        write(tdir / f"{iid}.json", make_doc([
            ("A", "How have you been sleeping over the past week?"),
            ("B", "Fine, mostly."),
        ], interview_id=iid))
    write(tmp_path / "script.json", {"__default__": ZERO_BLOCK})
    write(tmp_path / "config.json", {
        "instrument": "HAMD17S",
        "backend": {"kind": "ScriptedMock", "script_path": "script.json"},
        "model_name": "mock",
        "output_dir": "out",
    })
    return tmp_path, tdir


def test_rate_two_transcripts(rate_setup):
    root, tdir = rate_setup
    outcome = cmd_rate(root / "config.json", tdir)
    assert outcome.exit_code == 0
    assert outcome.out_dir == root / "out"
    assert [p.name for p in outcome.written] == ["int01.ratings.json", "int02.ratings.json"]
    manifest = json.loads((root / "out" / MANIFEST_NAME).read_text())
    assert manifest["counts"] == {"transcripts": 2, "rated": 2, "failed": 0}
    doc = json.loads(outcome.written[0].read_text())
    assert doc["total"] == 0 and len(doc["items"]) == 15


def test_rate_records_malformed_transcript(rate_setup):
    root, tdir = rate_setup
    (tdir / "int03.json").write_text("{not json", encoding="utf-8")
    outcome = cmd_rate(root / "config.json", tdir, root / "elsewhere")
    assert outcome.exit_code != 0
    assert outcome.manifest["counts"] == {"transcripts": 3, "rated": 2, "failed": 1}
    (failure,) = outcome.manifest["failures"]
    assert failure["file"] == "int03.json" and failure["stage"] == "parse"


def test_rate_records_item_failures(rate_setup):
    root, tdir = rate_setup
    write(root / "script.json", {"__default__": ZERO_BLOCK, "int02/hamd/5": "no json here"})
    outcome = cmd_rate(root / "config.json", tdir)
    assert outcome.exit_code == 1
    assert [f["interview_id"] for f in outcome.manifest["failures"]] == ["int02"]
    assert not (root / "out" / "int02.ratings.json").exists()


def test_rate_empty_directory(tmp_path, rate_setup):
    root, _ = rate_setup
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(RateError):
        cmd_rate(root / "config.json", empty)
    with pytest.raises(RateError):
        cmd_rate(root / "config.json", tmp_path / "missing")


def test_config_validation(tmp_path):
    base = {"instrument": "HAMD17S", "backend": {"kind": "ScriptedMock", "script_path": "s.json"}}
    RunConfig.from_dict(base)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**base, "instrument": "HAMD17S_EXT"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**base, "bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"instrument": "HAMD17S"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**base, "parallelism_cap": 0})
    cfg = RunConfig.from_dict({**base, "instrument": "HAMD17S_EXT", "conventions_path": "builtin"})
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


# --- evaluation ---


def rating_doc(iid, scores, digest="d" * 64, model="m", dataset=None):
    items = {}
    for item in HAMD.items:
        s = int(scores[item.item_id])
        items[item.item_id] = ItemRating(
            item_id=item.item_id,
            evidence=(),
            justification="j",
            score=s,
            dual_axis=DualAxisRating(2 if s else 0, s),
            model_name=model,
            reported_score=s,
        )
    return InterviewRating(
        interview_id=iid,
        instrument_id=InstrumentId.HAMD17S,
        item_ratings=items,
        total=sum(scores[i] for i in HAMD.item_ids),
        pipeline_config_digest=digest,
        model_name=model,
        dataset_tag=dataset,
        created_at="2026-01-01T00:00:00+00:00",
    ).to_document()


def random_scores(rng):
    return {item.item_id: rng.randint(0, item.max_score) for item in HAMD.items}


@pytest.fixture
def eval_setup(tmp_path):
    rng = random.Random(3)
    rdir = tmp_path / "ratings"
    rdir.mkdir()
    truth = {}
    for n in range(8):
        iid = f"int{n:02d}"
        scores = random_scores(rng)
        write(rdir / f"{iid}.ratings.json", rating_doc(iid, scores))
        truth[iid] = {"r1": {str(k): v for k, v in scores.items()}}
    write(rdir / MANIFEST_NAME, {"ignored": True})
    write(tmp_path / "truth.json", truth)
    return tmp_path, rdir, truth


def test_evaluate_identical_ratings_pass(eval_setup):
    root, rdir, _ = eval_setup
    path = cmd_evaluate(rdir, root / "truth.json", root / "ev")
    meta, reports = load_evaluation(path)
    assert (root / "ev" / "metrics.csv").exists()
    full = next(r for r in reports if r.item_id is None)
    assert full.n == 8
    assert full.mae == full.rmse == 0
    assert full.target_flags == {"pearson": "pass", "spearman": "pass", "icc_3_1": "pass", "icc_2_1": "pass", "bias": "pass"}
    assert {r.item_id for r in reports} == {None, *HAMD.item_ids}
    assert meta["interviews"] == sorted(meta["interviews"]) and len(meta["interviews"]) == 8


def test_evaluate_median_of_raters(eval_setup):
    root, rdir, truth = eval_setup
    two = copy.deepcopy(truth)
    for iid, raters in two.items():
        shifted = {k: v + 2 for k, v in raters["r1"].items()}
        raters["r0"] = shifted  # median of rater scores s and s+2 is s+1
    write(root / "truth2.json", two)
    _, reports = load_evaluation(cmd_evaluate(rdir, root / "truth2.json", root / "ev2"))
    full = next(r for r in reports if r.item_id is None)
    assert full.mae == pytest.approx(15.0)
    assert full.bland_altman.bias_mean == pytest.approx(-15.0)
    assert full.target_flags["bias"] == "fail"


def test_evaluate_drops_excluded_truth_items(eval_setup):
    root, rdir, truth = eval_setup
    extra = copy.deepcopy(truth)
    for raters in extra.values():
        raters["r1"].update({"8": 1, "9": 2})
    write(root / "truth3.json", extra)
    meta, _ = load_evaluation(cmd_evaluate(rdir, root / "truth3.json", root / "ev3"))
    assert any("dropped excluded" in n for n in meta["notes"])


def test_evaluate_id_mismatch(eval_setup):
    root, rdir, truth = eval_setup
    del truth["int03"]
    write(root / "partial.json", truth)
    with pytest.raises(EvaluationError, match="int03"):
        cmd_evaluate(rdir, root / "partial.json", root / "ev")


def test_evaluate_item_set_mismatch(eval_setup):
    root, rdir, truth = eval_setup
    for raters in truth.values():
        del raters["r1"]["12"]
    write(root / "short.json", truth)
    with pytest.raises(EvaluationError):
        cmd_evaluate(rdir, root / "short.json", root / "ev")


def test_evaluate_refuses_mixed_digests(eval_setup):
    root, rdir, truth = eval_setup
    doc = json.loads((rdir / "int00.ratings.json").read_text())
    doc["config_digest"] = "e" * 64
    write(rdir / "int00.ratings.json", doc)
    with pytest.raises(EvaluationError, match="digest"):
        cmd_evaluate(rdir, root / "truth.json", root / "ev")
    cmd_evaluate(rdir, root / "truth.json", root / "ev", allow_mixed_digests=True)


def test_evaluate_rejects_bad_q(eval_setup):
    root, rdir, _ = eval_setup
    with pytest.raises(EvaluationError):
        cmd_evaluate(rdir, root / "truth.json", root / "ev", q=0)


def test_evaluate_dataset_scopes(eval_setup):
    root, rdir, _ = eval_setup
    for n, f in enumerate(sorted(rdir.glob("*.ratings.json"))):
        doc = json.loads(f.read_text())
        doc["dataset"] = "siteA" if n % 2 else "siteB"
        write(f, doc)
    _, reports = load_evaluation(cmd_evaluate(rdir, root / "truth.json", root / "ev"))
    full = {r.dataset_tag: r.n for r in reports if r.item_id is None}
    assert full == {None: 8, "siteA": 4, "siteB": 4}


def test_evaluate_custom_families(eval_setup):
    root, rdir, _ = eval_setup
    write(root / "fam.json", [{"name": "corr", "metrics": ["pearson"], "items": [1, 2], "include_total": True}])
    _, reports = load_evaluation(cmd_evaluate(rdir, root / "truth.json", root / "ev", families_path=root / "fam.json"))
    by_item = {r.item_id: r for r in reports}
    assert "pearson" in by_item[None].p_adjusted and "pearson" in by_item[1].p_adjusted
    assert "pearson" not in by_item[3].p_adjusted
    write(root / "badfam.json", [{"name": "x", "metrics": ["kappa"]}])
    with pytest.raises(EvaluationError):
        cmd_evaluate(rdir, root / "truth.json", root / "ev", families_path=root / "badfam.json")


# --- reporting ---


@pytest.fixture
def eval_path(eval_setup):
    root, rdir, truth = eval_setup
    rng = random.Random(11)
    for iid, raters in truth.items():
        raters["r2"] = {k: max(0, v + rng.choice((-1, 0, 1))) for k, v in raters["r1"].items()}
    write(root / "noisy.json", truth)
    return cmd_evaluate(rdir, root / "noisy.json", root / "evn")


def test_report_deterministic(eval_path, tmp_path):
    first = cmd_report(eval_path, "md", tmp_path / "t1")
    second = cmd_report(eval_path, "md", tmp_path / "t2")
    assert first == second
    assert (tmp_path / "t1" / "full_scale.md").read_text() == (tmp_path / "t2" / "full_scale.md").read_text()
    assert set(first) == {"full_scale", "item_level"}


def test_report_md_and_csv_agree(eval_path):
    md = cmd_report(eval_path, "md")
    csv_text = cmd_report(eval_path, "csv")
    for key in ("full_scale", "item_level"):
        md_nums = [c.strip().rstrip("†") for line in md[key].splitlines() if line.startswith("|") for c in line.split("|")]
        for line in csv_text[key].splitlines()[1:]:
            for cell in line.split(",")[:8]:
                if cell.replace(".", "").replace("-", "").isdigit():
                    assert cell in md_nums


def test_report_unknown_format(eval_path):
    with pytest.raises(ReportError):
        cmd_report(eval_path, "html")


def test_report_missing_file(tmp_path):
    with pytest.raises(ReportError):
        cmd_report(tmp_path / "nope.json", "md")


# --- CLI and demo ---


def test_cli_roundtrip(rate_setup, eval_setup, capsys):
    root, tdir = rate_setup
    assert main(["rate", "--config", str(root / "config.json"), "--transcripts", str(tdir)]) == 0
    assert "rated 2/2" in capsys.readouterr().out
    eroot, rdir, _ = eval_setup
    assert main(["evaluate", "--ratings", str(rdir), "--truth", str(eroot / "truth.json"), "--out", str(eroot / "cli")]) == 0
    assert main(["report", "--eval", str(eroot / "cli" / "evaluation.json"), "--format", "md"]) == 0
    out = capsys.readouterr().out
    assert "### Full-scale performance" in out and "ICC(3,1)" in out


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["evaluate", "--ratings", str(tmp_path / "none"), "--truth", "x", "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["report", "--eval", "x", "--format", "pdf"])


def test_demo_rerun_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    a = cmd_mock_demo(tmp_path / "a")
    b = cmd_mock_demo(tmp_path / "b", parallelism_cap=1)
    assert a.observed_totals == a.expected_totals == b.observed_totals
    for fa, fb in zip(a.ratings_files, b.ratings_files):
        assert fa.read_bytes() == fb.read_bytes()
    assert a.evaluation_path.read_bytes() == b.evaluation_path.read_bytes()
    repaired = json.loads((tmp_path / "a" / "ratings" / "demo02.ratings.json").read_text())
    assert next(i for i in repaired["items"] if i["item_id"] == 7)["attempts_used"] == 2
