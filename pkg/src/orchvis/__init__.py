"""Deterministic goal-graph orchestration: plan, execute, verify, repair."""

__version__ = "0.1.0"
