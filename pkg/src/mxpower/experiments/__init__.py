"""Simulation experiments and their command-line entry point."""

from .config import ExperimentConfig, load_config_file, resolve_config
from .runners import run_experiment
from .table import ResultTable

__all__ = ["ExperimentConfig", "ResultTable", "load_config_file", "resolve_config", "run_experiment"]
