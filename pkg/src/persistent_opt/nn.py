"""Dense feed-forward networks with exact backpropagation.

Parameters are kept per layer as flat vectors: the weight matrix of shape
``(fan_out, fan_in)`` flattened row-major, followed by the bias vector.
Every other module (optimizers, the persistent penalty, the Hessian code)
works on these flat views.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
OUTPUT_ACTIVATIONS = ("identity", "softmax")
LOSS_KINDS = ("mean_squared_error", "cross_entropy")
INIT_KINDS = ("he_normal", "xavier_normal", "normal")


class ShapeError(ValueError):
    """Raised when arrays do not match the shapes implied by a ModelSpec."""


@dataclass(frozen=True)
class InitSpec:
    kind: str = "he_normal"
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"unknown initializer {self.kind!r}")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "seed": int(self.seed)}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a dense network.

    ``activation`` may be a single name (used for every hidden layer) or one
    name per hidden layer.
    """

    layer_widths: tuple[int, ...]
    activation: tuple[str, ...] | str = "relu"
    output_activation: str = "identity"
    loss_kind: str = "mean_squared_error"
    initializer: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ValueError("layer_widths needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        object.__setattr__(self, "layer_widths", widths)

        n_hidden = len(widths) - 2
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * n_hidden
        acts = tuple(acts)
        if len(acts) != n_hidden:
            raise ValueError(f"expected {n_hidden} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activation", acts)

        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss_kind!r}")
        if self.loss_kind == "cross_entropy" and self.output_activation != "softmax":
            raise ValueError("cross_entropy requires a softmax output")
        if self.loss_kind == "mean_squared_error" and self.output_activation != "identity":
            raise ValueError("mean_squared_error requires an identity output")

    @property
    def n_layers(self) -> int:
        """Number of parameterized (affine) layers."""
        return len(self.layer_widths) - 1

    def layer_shape(self, layer: int) -> tuple[int, int]:
        """(fan_out, fan_in) of the weight matrix of ``layer``."""
        return self.layer_widths[layer + 1], self.layer_widths[layer]

    def layer_sizes(self) -> list[int]:
        return [fo * fi + fo for fo, fi in map(self.layer_shape, range(self.n_layers))]

    @property
    def n_params(self) -> int:
        return sum(self.layer_sizes())

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activation": list(self.activation),
            "output_activation": self.output_activation,
            "loss_kind": self.loss_kind,
            "initializer": self.initializer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        init = d.pop("initializer", {})
        act = d.pop("activation", "relu")
        if not isinstance(act, str):
            act = tuple(act)
        return cls(activation=act, initializer=InitSpec(**init), **d)


class ParamSet:
    """Per-layer flat parameter vectors (also used for gradients)."""

    __slots__ = ("layers",)

    def __init__(self, layers: Sequence[np.ndarray]):
        self.layers = [np.asarray(v, dtype=np.float64).ravel() for v in layers]

    def __len__(self):
        return len(self.layers)

    def __repr__(self):
        return f"ParamSet(sizes={[v.size for v in self.layers]})"

    def copy(self) -> "ParamSet":
        return ParamSet([v.copy() for v in self.layers])

    def shapes(self) -> list[int]:
        return [v.size for v in self.layers]

    def same_shape(self, other: "ParamSet") -> bool:
        return self.shapes() == other.shapes()

    def flat(self) -> np.ndarray:
        return np.concatenate(self.layers)

    @classmethod
    def from_flat(cls, vec: np.ndarray, sizes: Sequence[int]) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != sum(sizes):
            raise ShapeError(f"flat vector has {vec.size} entries, expected {sum(sizes)}")
        return cls(np.split(vec.copy(), np.cumsum(sizes)[:-1]))

    @classmethod
    def zeros_like(cls, other: "ParamSet") -> "ParamSet":
        return cls([np.zeros_like(v) for v in other.layers])

    def __add__(self, other: "ParamSet") -> "ParamSet":
        _check_same(self, other)
        return ParamSet([a + b for a, b in zip(self.layers, other.layers)])

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        _check_same(self, other)
        return ParamSet([a - b for a, b in zip(self.layers, other.layers)])

    def scale(self, c: float) -> "ParamSet":
        return ParamSet([c * v for v in self.layers])

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.layers)

    def equals(self, other: "ParamSet") -> bool:
        """Bit-for-bit equality."""
        return self.same_shape(other) and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    def to_json(self) -> dict:
        return {"layers": [v.tolist() for v in self.layers]}

    @classmethod
    def from_json(cls, doc: dict) -> "ParamSet":
        return cls([np.array(v, dtype=np.float64) for v in doc["layers"]])

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "ParamSet":
        return cls.from_json(json.loads(text))


GradSet = ParamSet


def _check_same(a: ParamSet, b: ParamSet):
    if not a.same_shape(b):
        raise ShapeError(f"shape mismatch: {a.shapes()} vs {b.shapes()}")


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets)
        if self.inputs.shape[0] < 1:
            raise ShapeError("batch must contain at least one row")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ShapeError("inputs and targets have different batch sizes")

    def __len__(self):
        return self.inputs.shape[0]


def check_params(spec: ModelSpec, params: ParamSet):
    if params.shapes() != spec.layer_sizes():
        raise ShapeError(
            f"params have layer sizes {params.shapes()}, spec expects {spec.layer_sizes()}"
        )


def unpack(spec: ModelSpec, params: ParamSet, layer: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight matrix and bias of one layer, as views into ``params``."""
    fo, fi = spec.layer_shape(layer)
    v = params.layers[layer]
    return v[: fo * fi].reshape(fo, fi), v[fo * fi :]


def init_params(spec: ModelSpec) -> ParamSet:
    init = spec.initializer
    rng = np.random.default_rng(int(init.seed))
    layers = []
    for l in range(spec.n_layers):
        fo, fi = spec.layer_shape(l)
        if init.kind == "he_normal":
            std = np.sqrt(2.0 / fi)
        elif init.kind == "xavier_normal":
            std = np.sqrt(2.0 / (fi + fo))
        else:
            std = init.sigma
        w = rng.standard_normal((fo, fi)) * std
        layers.append(np.concatenate([w.ravel(), np.zeros(fo)]))
    return ParamSet(layers)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        # derivative at exactly 0 is 0
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(spec: ModelSpec, params: ParamSet, batch: Batch | np.ndarray):
    """Evaluate the network row-wise.

    Returns ``(outputs, activations)`` where ``activations[0]`` is the input
    and ``activations[l]`` for ``1 <= l < n_layers`` is the output of hidden
    layer ``l``. Pre-activations are not returned; use :func:`forward_cache`.
    """
    outputs, acts, _ = forward_cache(spec, params, batch)
    return outputs, acts


def forward_cache(spec: ModelSpec, params: ParamSet, batch: Batch | np.ndarray):
    check_params(spec, params)
    x = batch.inputs if isinstance(batch, Batch) else np.atleast_2d(np.asarray(batch, float))
    if x.shape[1] != spec.layer_widths[0]:
        raise ShapeError(f"input dim {x.shape[1]} != {spec.layer_widths[0]}")
    acts = [x]
    pre = []
    a = x
    for l in range(spec.n_layers):
        w, b = unpack(spec, params, l)
        z = a @ w.T + b
        pre.append(z)
        if l < spec.n_layers - 1:
            a = _activate(spec.activation[l], z)
            acts.append(a)
    out = softmax(z) if spec.output_activation == "softmax" else z
    return out, acts, pre


def _class_indices(targets: np.ndarray, n_classes: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 2 and t.shape[1] == n_classes:
        return t.argmax(axis=1)
    return t.reshape(-1).astype(np.int64)


def _regression_targets(targets: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64).reshape(outputs.shape[0], -1)
    if t.shape != outputs.shape:
        raise ShapeError(f"targets shape {t.shape} != outputs shape {outputs.shape}")
    return t


def loss(spec: ModelSpec, outputs: np.ndarray, targets: np.ndarray) -> float:
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    if spec.loss_kind == "mean_squared_error":
        r = outputs - _regression_targets(targets, outputs)
        return float(np.mean(np.sum(r * r, axis=1)))
    if np.any(outputs < 0) or not np.allclose(outputs.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("cross_entropy needs normalized probabilities as outputs")
    idx = _class_indices(targets, outputs.shape[1])
    if idx.shape[0] != outputs.shape[0]:
        raise ShapeError("targets and outputs have different batch sizes")
    p = outputs[np.arange(outputs.shape[0]), idx]
    return float(-np.mean(np.log(np.maximum(p, np.finfo(float).tiny))))


def backward(spec: ModelSpec, params: ParamSet, batch: Batch) -> tuple[float, GradSet]:
    out, acts, pre = forward_cache(spec, params, batch)
    n = out.shape[0]
    value = loss(spec, out, batch.targets)

    # gradient of the mean loss w.r.t. the last pre-activation
    if spec.loss_kind == "mean_squared_error":
        delta = 2.0 * (out - _regression_targets(batch.targets, out)) / n
    else:
        delta = out.copy()
        delta[np.arange(n), _class_indices(batch.targets, out.shape[1])] -= 1.0
        delta /= n

    grads = [None] * spec.n_layers
    for l in range(spec.n_layers - 1, -1, -1):
        gw = delta.T @ acts[l]
        gb = delta.sum(axis=0)
        grads[l] = np.concatenate([gw.ravel(), gb])
        if l > 0:
            w, _ = unpack(spec, params, l)
            delta = (delta @ w) * _activation_grad(spec.activation[l - 1], pre[l - 1], acts[l])
    return value, ParamSet(grads)


def predict(spec: ModelSpec, params: ParamSet, inputs: np.ndarray) -> np.ndarray:
    return forward(spec, params, np.atleast_2d(inputs))[0]


def data_loss(spec: ModelSpec, params: ParamSet, batch: Batch) -> float:
    return loss(spec, forward(spec, params, batch)[0], batch.targets)


def error_rate(spec: ModelSpec, params: ParamSet, batch: Batch) -> float:
    """Fraction of misclassified rows (classification models only)."""
    out = forward(spec, params, batch)[0]
    idx = _class_indices(batch.targets, out.shape[1])
    return float(np.mean(out.argmax(axis=1) != idx))
