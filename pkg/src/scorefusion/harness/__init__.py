"""Experiment runner: configuration, report writing and the command-line interface."""

from .config import ConfigError, ExperimentConfig, MetricTargets, build_config, load_config
from .report import Results, ResultRow, emit_report
from .runner import COMMANDS, run_experiment

__all__ = [
    "COMMANDS",
    "ConfigError",
    "ExperimentConfig",
    "MetricTargets",
    "Results",
    "ResultRow",
    "build_config",
    "emit_report",
    "load_config",
    "run_experiment",
]
