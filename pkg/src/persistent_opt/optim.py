"""First-order optimizer steps on ParamSet/GradSet pairs.

``step`` is a pure function: it never mutates its inputs and returns the new
parameters together with the new optimizer state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import GradSet, ParamSet, ShapeError

OPTIMIZER_KINDS = ("gd", "momentum", "adam")


class NonFiniteGradient(FloatingPointError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite gradient entries in layer {layer}")
        self.layer = layer


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "gd"
    learning_rate: float = 0.001
    momentum_coeff: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("momentum_coeff", "beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "momentum_coeff": self.momentum_coeff,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }


@dataclass(frozen=True)
class OptimizerState:
    step_count: int = 0
    velocity: ParamSet | None = None
    first_moment: ParamSet | None = None
    second_moment: ParamSet | None = None


def init_state(config: OptimizerConfig, params: ParamSet) -> OptimizerState:
    zeros = ParamSet.zeros_like
    if config.kind == "momentum":
        return OptimizerState(velocity=zeros(params))
    if config.kind == "adam":
        return OptimizerState(first_moment=zeros(params), second_moment=zeros(params))
    return OptimizerState()


def step(
    config: OptimizerConfig, state: OptimizerState, params: ParamSet, grads: GradSet
) -> tuple[ParamSet, OptimizerState]:
    if not params.same_shape(grads):
        raise ShapeError(f"params {params.shapes()} vs grads {grads.shapes()}")
    for l, g in enumerate(grads.layers):
        if not np.isfinite(g).all():
            raise NonFiniteGradient(l)

    lr = config.learning_rate
    t = state.step_count + 1

    if config.kind == "gd":
        new = [p - lr * g for p, g in zip(params.layers, grads.layers)]
        return ParamSet(new), replace(state, step_count=t)

    if config.kind == "momentum":
        vel = state.velocity if state.velocity is not None else ParamSet.zeros_like(params)
        mu = config.momentum_coeff
        v = [mu * vl + g for vl, g in zip(vel.layers, grads.layers)]
        new = [p - lr * vl for p, vl in zip(params.layers, v)]
        return ParamSet(new), replace(state, step_count=t, velocity=ParamSet(v))

    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    m_prev = state.first_moment or ParamSet.zeros_like(params)
    v_prev = state.second_moment or ParamSet.zeros_like(params)
    m = [b1 * a + (1 - b1) * g for a, g in zip(m_prev.layers, grads.layers)]
    v = [b2 * a + (1 - b2) * g * g for a, g in zip(v_prev.layers, grads.layers)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = [
        p - lr * (ml / c1) / (np.sqrt(vl / c2) + eps)
        for p, ml, vl in zip(params.layers, m, v)
    ]
    return ParamSet(new), OptimizerState(
        step_count=t, first_moment=ParamSet(m), second_moment=ParamSet(v)
    )
