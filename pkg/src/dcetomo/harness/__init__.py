"""Experiment harness: configs, scenario runner, reports and CLI."""

from .config import DEFAULT_BACKGROUND, DEFAULT_TOPOLOGY, ScenarioConfig, expand_sweep, validate_config
from .runner import ResultRow, fig6_slope, run_scenario, simulate, sweep, write_results

__all__ = [
    "DEFAULT_BACKGROUND",
    "DEFAULT_TOPOLOGY",
    "ResultRow",
    "ScenarioConfig",
    "expand_sweep",
    "fig6_slope",
    "run_scenario",
    "simulate",
    "sweep",
    "validate_config",
    "write_results",
]
