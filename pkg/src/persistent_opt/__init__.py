"""Persistent training: re-train from one initialization while penalizing
alignment with every previously converged solution."""

from .nn import Batch, GradSet, InitSpec, ModelSpec, ParamSet, backward, forward, init_params, loss
from .optim import OptimizerConfig, OptimizerState, init_state, step
from .persistent import (
    DecompositionReport,
    NumericalFailure,
    PersistentConfig,
    SolutionRegistry,
    TrainRecord,
    decompose_gradient,
    penalty,
    penalty_grad,
    persistent_backward,
    run_persistent,
)

__version__ = "0.1.0"
