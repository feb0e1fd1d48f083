from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, paper_scale
from .experiments import run_experiment, run_identifiability, run_misspecification, run_rank_collapse, run_transfer
from .report import ExperimentReport, load_report

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "config_from_dict",
    "load_config",
    "load_report",
    "paper_scale",
    "run_experiment",
    "run_identifiability",
    "run_misspecification",
    "run_rank_collapse",
    "run_transfer",
]
