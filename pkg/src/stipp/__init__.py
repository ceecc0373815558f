"""Spatiotemporal informative path planning with Gaussian-process maps."""

from .gp import GPModel, Observation, Prediction, fit, predict, predict_var_grid
from .infogain import MapState, information_gpvr_st
from .kernels import KernelParams, STPoint, gram, gram_factored, matern, rbf, st_kernel
from .planner import PlannerConfig, Tree, TreeNode, plan

__version__ = "0.1.0"

__all__ = [
    "GPModel",
    "KernelParams",
    "MapState",
    "Observation",
    "PlannerConfig",
    "Prediction",
    "STPoint",
    "Tree",
    "TreeNode",
    "fit",
    "gram",
    "gram_factored",
    "information_gpvr_st",
    "matern",
    "plan",
    "predict",
    "predict_var_grid",
    "rbf",
    "st_kernel",
]
