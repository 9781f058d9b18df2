"""Bayesian variable selection on linear mixed-effects models for comparing
several treatment groups with a control."""

__version__ = "0.1.0"

from .data import Dataset, DesignConfig, DesignSet, build_designs, load_csv, rescale_time, save_csv
from .diagnostics import FwsrConfig, classify, ess, ess_target, fitted_trajectories, fwsr_pass, mcse, summarize
from .model import ChainState, HyperParams, default_hyperparams, joint_log_density
from .sampler import ChainTrace, GibbsConfig, gibbs_step, run_chain
from .simulate import SimSpec, five_diet_spec, simulate_dataset

__all__ = [
    "ChainState", "ChainTrace", "Dataset", "DesignConfig", "DesignSet", "FwsrConfig", "GibbsConfig",
    "HyperParams", "SimSpec", "build_designs", "classify", "default_hyperparams", "ess", "ess_target",
    "fitted_trajectories", "fwsr_pass", "gibbs_step", "joint_log_density", "load_csv", "mcse",
    "five_diet_spec", "rescale_time", "run_chain", "save_csv", "simulate_dataset", "summarize",
]
