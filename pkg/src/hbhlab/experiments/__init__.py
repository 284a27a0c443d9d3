"""Experiment drivers, configuration and the command line."""

from .config import ABLATIONS, ExperimentConfig, NetGrid, config_from_dict, dump_config, load_config
from .runners import (
    RunRecord,
    RunSpec,
    code_hash,
    execute,
    load_records,
    required_parameter_count,
    run_ablation_table,
    run_alpha_sweep,
    run_ratio_study,
    run_required_params,
    run_specs,
)

__all__ = [
    "ABLATIONS",
    "ExperimentConfig",
    "NetGrid",
    "RunRecord",
    "RunSpec",
    "code_hash",
    "config_from_dict",
    "dump_config",
    "execute",
    "load_config",
    "load_records",
    "required_parameter_count",
    "run_ablation_table",
    "run_alpha_sweep",
    "run_ratio_study",
    "run_required_params",
    "run_specs",
]
