import pytest

from hamrater.transcript import parse_transcript

_CRITERIA: dict[str, str] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's pass/fail line for the terminal summary."""
    _CRITERIA[request.node.name] = "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and "criterion" in item.fixturenames:
        _CRITERIA[item.name] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"{status:4}  {name}")


def make_doc(utterances, interview_id="int01", dataset=None):
    doc = {
        "interview_id": interview_id,
        "utterances": [
            {"id": f"u{i}", "speaker": s, "start": float(2 * i), "end": float(2 * i + 1.5), "text": t}
            for i, (s, t) in enumerate(utterances)
        ],
    }
    if dataset:
        doc["dataset"] = dataset
    return doc


@pytest.fixture
def two_speaker_doc():
    return make_doc(
        [
            ("SPEAKER_00", "How has your mood been over the past week?"),
            ("SPEAKER_01", "Pretty low, I cry most days and I can't shake it."),
            ("SPEAKER_00", "Have you had trouble falling asleep?"),
            ("SPEAKER_01", "It takes me over an hour to fall asleep almost every night."),
            ("SPEAKER_00", "Do you feel guilty about anything?"),
            ("SPEAKER_01", "Not really, no."),
        ]
    )


@pytest.fixture
def transcript(two_speaker_doc):
    from hamrater.transcript import attribute_roles, load_probe_lexicon

    return attribute_roles(parse_transcript(two_speaker_doc), load_probe_lexicon())
