"""Command-line harness: configs, experiment runs and comparison grids."""
from .compare import Comparison, build_comparison
from .config import ConfigError, ExperimentConfig, apply_assignments, config_from_dict, load_config
from .runner import RunResult, read_metrics, read_predictions, run_experiment

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "config_from_dict", "apply_assignments",
           "run_experiment", "RunResult", "read_metrics", "read_predictions", "build_comparison", "Comparison"]
