"""Item-level LLM agents for Hamilton depression and anxiety re-rating, with a clinimetric evaluation harness."""

__version__ = "0.1.0"
