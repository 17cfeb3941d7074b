"""Learner updates and experiment orchestration."""

from .backend import available_backends, backend_name, select_backend
from .runner import ExperimentResult, RunPlan, run_experiment
from .steps import (
    LearnerSpec,
    NetworkState,
    StabilityReport,
    cfg_step,
    consensus_step,
    diffusion_step,
    init_state,
    stability_check,
    step,
    tha_average,
)

__all__ = [
    "ExperimentResult",
    "LearnerSpec",
    "NetworkState",
    "RunPlan",
    "StabilityReport",
    "available_backends",
    "backend_name",
    "cfg_step",
    "consensus_step",
    "diffusion_step",
    "init_state",
    "run_experiment",
    "select_backend",
    "stability_check",
    "step",
    "tha_average",
]
