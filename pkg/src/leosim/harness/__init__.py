"""Scenario files, canned experiments, batch runner and CLI."""

from .scenario import Scenario, ScenarioError, load_scenario, canned_experiments, canned_path
from .runner import RunResult, run_scenario, run_batch

__all__ = [
    "Scenario", "ScenarioError", "load_scenario", "canned_experiments", "canned_path",
    "RunResult", "run_scenario", "run_batch",
]
