"""Command surface: batch rating, evaluation, reporting and the offline demo."""

from .config import RunConfig
from .demo import cmd_mock_demo
from .evaluation import EvaluationBundle, FamilySpec, cmd_evaluate, evaluate
from .rating import cmd_rate
from .reporting import cmd_report, render_tables

__all__ = [
    "EvaluationBundle",
    "FamilySpec",
    "RunConfig",
    "cmd_evaluate",
    "cmd_mock_demo",
    "cmd_rate",
    "cmd_report",
    "evaluate",
    "render_tables",
]
