import json


def block(**fields):
    return "Reasoning first.\n```json\n" + json.dumps(fields) + "\n```\n"


def hamd_block(freq, intensity, score, evidence=(("u1", "I cry most days"),), justification="Low mood reported."):
    return block(
        evidence=[{"utterance_id": u, "quote": q} for u, q in evidence],
        justification=justification,
        frequency=freq,
        intensity=intensity,
        score=score,
    )


def hama_block(severity, score=None, evidence=(("u1", "I cry most days"),), justification="Tension reported."):
    return block(
        evidence=[{"utterance_id": u, "quote": q} for u, q in evidence],
        justification=justification,
        severity=severity,
        score=severity if score is None else score,
    )
