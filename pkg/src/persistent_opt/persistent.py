"""Persistent training: alignment penalties against previously converged solutions.

Each persistent iteration restarts from the same initial parameters and adds,
for every earlier converged solution ``S_k`` and every layer ``l``, the term

    lam * |S_k[l] . theta[l]| / ||S_k[l]||^2

to the training loss. Partial mode keeps only one (randomly drawn) layer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import nn, optim
from .nn import Batch, GradSet, ModelSpec, ParamSet, ShapeError

log = logging.getLogger(__name__)

MODES = ("full", "partial")


class NumericalFailure(FloatingPointError):
    """A training iteration produced a non-finite loss or gradient."""

    def __init__(self, iteration: int, step: int | None = None, detail: str = ""):
        msg = f"non-finite value in iteration {iteration}"
        if step is not None:
            msg += f" at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.iteration = iteration
        self.step = step


class SolutionRegistry:
    """Ordered converged solutions with per-layer caches.

    Per layer the snapshots are stacked into a ``(K, N_l)`` matrix so that all
    alignments ``S_k[l] . theta[l]`` come out of a single matrix-vector product.
    """

    def __init__(self, snapshots: Sequence[ParamSet] = ()):
        self.snapshots: list[ParamSet] = []
        self.norms_sq: list[np.ndarray] = []
        self._stacked: list[np.ndarray] = []
        for s in snapshots:
            self.append(s)

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    @property
    def n_layers(self) -> int:
        return len(self.snapshots[0]) if self.snapshots else 0

    def append(self, params: ParamSet) -> None:
        if self.snapshots and not params.same_shape(self.snapshots[0]):
            raise ShapeError(
                f"snapshot sizes {params.shapes()} differ from registry {self.snapshots[0].shapes()}"
            )
        if not params.is_finite():
            raise ValueError("cannot register a snapshot with non-finite entries")
        snap = params.copy()
        norms = np.array([float(v @ v) for v in snap.layers])
        if np.any(norms <= 0):
            raise ValueError(
                f"snapshot layer {int(np.argmin(norms))} is all zero; its penalty is undefined"
            )
        for v in snap.layers:
            v.flags.writeable = False
        self.snapshots.append(snap)
        self.norms_sq.append(norms)
        if not self._stacked:
            self._stacked = [v[None, :] for v in snap.layers]
        else:
            self._stacked = [np.vstack([m, v]) for m, v in zip(self._stacked, snap.layers)]
        self._norm_cols = np.array(self.norms_sq).T  # (n_layers, K)

    def stacked(self, layer: int) -> np.ndarray:
        return self._stacked[layer]

    def layer_norms_sq(self, layer: int) -> np.ndarray:
        return self._norm_cols[layer]

    def to_json(self) -> dict:
        return {"snapshots": [s.to_json() for s in self.snapshots]}

    @classmethod
    def from_json(cls, doc: dict) -> "SolutionRegistry":
        return cls([ParamSet.from_json(s) for s in doc["snapshots"]])


@dataclass(frozen=True)
class PersistentConfig:
    lam: float = 0.01
    mode: str = "full"
    iterations: int = 1
    inner_steps: int = 1000
    layer_seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown persistent mode {self.mode!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mode": self.mode,
            "iterations": self.iterations,
            "inner_steps": self.inner_steps,
            "layer_seed": int(self.layer_seed),
            "eval_every": self.eval_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PersistentConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


def _layers_in_scope(registry: SolutionRegistry, params: ParamSet, mode: str, selected_layer):
    if len(registry) == 0:
        raise ValueError("persistent penalty needs a non-empty registry")
    if not params.same_shape(registry.snapshots[0]):
        raise ShapeError(f"params {params.shapes()} vs registry {registry.snapshots[0].shapes()}")
    if mode == "full":
        return range(len(params))
    if mode != "partial":
        raise ValueError(f"unknown persistent mode {mode!r}")
    if selected_layer is None or not 0 <= selected_layer < len(params):
        raise IndexError(f"selected layer {selected_layer} out of range for {len(params)} layers")
    return (selected_layer,)


def penalty(
    params: ParamSet,
    registry: SolutionRegistry,
    lam: float,
    mode: str = "full",
    selected_layer: int | None = None,
) -> float:
    total = 0.0
    for l in _layers_in_scope(registry, params, mode, selected_layer):
        align = registry.stacked(l) @ params.layers[l]
        total += float(np.sum(np.abs(align) / registry.layer_norms_sq(l)))
    return lam * total


def alignment_direction(
    params: ParamSet, registry: SolutionRegistry, mode: str = "full", selected_layer=None
) -> GradSet:
    """Sum over snapshots of sign(S_k . theta) / ||S_k||^2 * S_k, per layer.

    This is the penalty gradient without the ``lam`` factor; layers outside the
    partial-mode selection are zero.
    """
    out = [np.zeros_like(v) for v in params.layers]
    for l in _layers_in_scope(registry, params, mode, selected_layer):
        snaps = registry.stacked(l)
        coef = np.sign(snaps @ params.layers[l]) / registry.layer_norms_sq(l)
        out[l] = coef @ snaps
    return ParamSet(out)


def penalty_grad(
    params: ParamSet,
    registry: SolutionRegistry,
    lam: float,
    mode: str = "full",
    selected_layer: int | None = None,
) -> GradSet:
    return alignment_direction(params, registry, mode, selected_layer).scale(lam)


def persistent_backward(
    spec: ModelSpec,
    params: ParamSet,
    batch: Batch,
    registry: SolutionRegistry,
    pconfig: PersistentConfig,
    selected_layer: int | None = None,
) -> tuple[float, GradSet]:
    """Loss and gradient of data loss plus persistent penalty."""
    data_value, grads = nn.backward(spec, params, batch)
    pen = penalty(params, registry, pconfig.lam, pconfig.mode, selected_layer)
    pgrad = penalty_grad(params, registry, pconfig.lam, pconfig.mode, selected_layer)
    return data_value + pen, grads + pgrad


@dataclass
class TrainRecord:
    iteration_index: int
    selected_layer: int | None
    loss_curve: list[float]
    final_train_loss: float
    final_val_metric: float
    final_test_metric: float
    params: ParamSet | None = field(default=None, repr=False)
    evaluations: list[dict] = field(default_factory=list)
    params_path: str | None = None

    def to_json(self) -> dict:
        return {
            "iteration_index": self.iteration_index,
            "selected_layer": self.selected_layer,
            "loss_curve": list(self.loss_curve),
            "final_train_loss": self.final_train_loss,
            "final_val_metric": self.final_val_metric,
            "final_test_metric": self.final_test_metric,
            "evaluations": self.evaluations,
            "params_path": self.params_path,
        }

    @classmethod
    def from_json(cls, doc: dict, params: ParamSet | None = None) -> "TrainRecord":
        return cls(
            iteration_index=doc["iteration_index"],
            selected_layer=doc["selected_layer"],
            loss_curve=list(doc["loss_curve"]),
            final_train_loss=doc["final_train_loss"],
            final_val_metric=doc["final_val_metric"],
            final_test_metric=doc["final_test_metric"],
            params=params,
            evaluations=list(doc.get("evaluations", [])),
            params_path=doc.get("params_path"),
        )


def eval_metric(spec: ModelSpec, params: ParamSet, batch: Batch) -> float:
    """Validation/test metric: MSE for regression, error rate for classification."""
    if spec.loss_kind == "cross_entropy":
        return nn.error_rate(spec, params, batch)
    return nn.data_loss(spec, params, batch)


def select_champion(val_metrics: Sequence[float]) -> int:
    """Index of the smallest validation metric; ties go to the earliest index."""
    vals = np.asarray(val_metrics, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("no iterations to choose from")
    return int(np.argmin(vals))  # argmin returns the first occurrence


def draw_layer(layer_seed: int, iteration: int, n_layers: int) -> int:
    """Partial-mode layer for one iteration; independent stream per iteration."""
    rng = np.random.default_rng([int(layer_seed), int(iteration)])
    return int(rng.integers(n_layers))


StepMonitor = Callable[[int, int, ParamSet], None]
IterationHook = Callable[[TrainRecord, SolutionRegistry], None]


def train_iteration(
    spec: ModelSpec,
    init: ParamSet,
    train: Batch,
    oconfig: optim.OptimizerConfig,
    steps: int,
    registry: SolutionRegistry | None = None,
    pconfig: PersistentConfig | None = None,
    selected_layer: int | None = None,
    iteration: int = 0,
    monitor: StepMonitor | None = None,
    monitor_every: int = 0,
) -> tuple[ParamSet, list[float]]:
    """Run ``steps`` optimizer steps from ``init``; plain loss if no registry.

    Returns the final parameters and the per-step data loss (evaluated before
    each update). Optimizer state always starts fresh.
    """
    params = init.copy()
    state = optim.init_state(oconfig, params)
    penalized = registry is not None and len(registry) > 0
    curve = []
    for t in range(steps):
        if monitor is not None and monitor_every and t % monitor_every == 0:
            monitor(iteration, t, params)
        data_value, grads = nn.backward(spec, params, train)
        if penalized:
            grads = grads + penalty_grad(params, registry, pconfig.lam, pconfig.mode, selected_layer)
        if not np.isfinite(data_value):
            raise NumericalFailure(iteration, t, "loss")
        curve.append(data_value)
        try:
            params, state = optim.step(oconfig, state, params, grads)
        except optim.NonFiniteGradient as exc:
            raise NumericalFailure(iteration, t, str(exc)) from exc
    if monitor is not None and monitor_every:
        monitor(iteration, steps, params)
    if not params.is_finite():
        raise NumericalFailure(iteration, steps, "parameters")
    return params, curve


def run_persistent(
    spec: ModelSpec,
    data: tuple[Batch, Batch, Batch],
    oconfig: optim.OptimizerConfig,
    pconfig: PersistentConfig,
    init_seed: int,
    *,
    resume: tuple[list[TrainRecord], SolutionRegistry] | None = None,
    on_iteration: IterationHook | None = None,
    monitor: StepMonitor | None = None,
    monitor_every: int = 0,
) -> tuple[list[TrainRecord], SolutionRegistry, int]:
    """Plain training followed by ``iterations - 1`` persistent iterations.

    Every iteration starts from the parameters drawn with ``init_seed``.
    ``resume`` continues a run from records and registry saved by an earlier,
    interrupted call with the same arguments.
    """
    train, val, test = data
    for name, b in (("train", train), ("validation", val), ("test", test)):
        if len(b) == 0:
            raise ValueError(f"{name} split is empty")
    spec = replace(spec, initializer=replace(spec.initializer, seed=int(init_seed)))
    init = nn.init_params(spec)

    if resume is not None:
        records, registry = list(resume[0]), SolutionRegistry(resume[1].snapshots)
        if len(records) != len(registry):
            raise ValueError("resume records and registry disagree in length")
    else:
        records, registry = [], SolutionRegistry()

    for n in range(len(registry), pconfig.iterations):
        layer = None
        if n > 0 and pconfig.mode == "partial":
            layer = draw_layer(pconfig.layer_seed, n, spec.n_layers)
        evaluations = []

        def _monitor(it, t, p, _evals=evaluations):
            if pconfig.eval_every and t % pconfig.eval_every == 0:
                _evals.append(
                    {"step": t, "train_loss": nn.data_loss(spec, p, train),
                     "val_metric": eval_metric(spec, p, val)}
                )
            if monitor is not None and monitor_every and t % monitor_every == 0:
                monitor(it, t, p)

        every = np.gcd(pconfig.eval_every, monitor_every) if monitor is not None else pconfig.eval_every
        params, curve = train_iteration(
            spec, init, train, oconfig, pconfig.inner_steps,
            registry=registry if n > 0 else None,
            pconfig=pconfig,
            selected_layer=layer,
            iteration=n,
            monitor=_monitor if every else None,
            monitor_every=int(every),
        )
        record = TrainRecord(
            iteration_index=n,
            selected_layer=layer,
            loss_curve=curve,
            final_train_loss=nn.data_loss(spec, params, train),
            final_val_metric=eval_metric(spec, params, val),
            final_test_metric=eval_metric(spec, params, test),
            params=params,
            evaluations=evaluations,
        )
        if not np.isfinite([record.final_train_loss, record.final_val_metric]).all():
            raise NumericalFailure(n, None, "final metrics")
        try:
            registry.append(params)
        except ValueError as exc:
            raise NumericalFailure(n, None, str(exc)) from exc
        records.append(record)
        log.info(
            "iteration %d: train %.6g val %.6g", n, record.final_train_loss, record.final_val_metric
        )
        if on_iteration is not None:
            on_iteration(record, registry)

    champion = select_champion([r.final_val_metric for r in records])
    return records, registry, champion


@dataclass
class DecompositionReport:
    bias_estimate: list[np.ndarray]
    residual_samples: list[list[np.ndarray]]  # [sample][layer]
    residual_mean_norm: float
    max_sample_norm: float
    lam: float = 1.0

    def scaled_bias(self) -> list[np.ndarray]:
        """The bias term as it enters the gradient, i.e. multiplied by lam."""
        return [self.lam * c for c in self.bias_estimate]

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "bias_estimate": [c.tolist() for c in self.bias_estimate],
            "residual_mean_norm": self.residual_mean_norm,
            "max_sample_norm": self.max_sample_norm,
            "n_samples": len(self.residual_samples),
        }


def decompose_gradient(
    registry: SolutionRegistry,
    trajectory_params: Sequence[ParamSet],
    lam: float = 1.0,
    mode: str = "full",
    selected_layer: int | None = None,
) -> DecompositionReport:
    """Split the penalty direction along a trajectory into mean plus residuals.

    ``bias_estimate`` excludes ``lam``. The mean over the supplied samples plays
    the role of the constant bias term; the residuals have zero sample mean up to round-off. The estimate
    is observational only and never feeds back into training.
    """
    if len(trajectory_params) == 0:
        raise ValueError("trajectory is empty")
    samples = [
        alignment_direction(p, registry, mode, selected_layer).layers for p in trajectory_params
    ]
    n_layers = len(samples[0])
    # mean taken relative to the first sample so identical samples give exact zeros
    bias = [
        samples[0][l] + np.mean([s[l] - samples[0][l] for s in samples], axis=0)
        for l in range(n_layers)
    ]
    residuals = [[s[l] - bias[l] for l in range(n_layers)] for s in samples]
    resid_mean = np.concatenate(
        [np.mean([r[l] for r in residuals], axis=0) for l in range(n_layers)]
    )
    max_norm = max(float(np.linalg.norm(np.concatenate(s))) for s in samples)
    return DecompositionReport(
        bias_estimate=bias,
        residual_samples=residuals,
        residual_mean_norm=float(np.linalg.norm(resid_mean)),
        max_sample_norm=max_norm,
        lam=lam,
    )
