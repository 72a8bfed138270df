"""Neuron-dynamics diagnostics: activation saturation and Hessian spectra."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .nn import Batch, ModelSpec, ParamSet

MAX_HESSIAN_PARAMS = 2000
N_BINS = 50


@dataclass
class LayerSaturation:
    layer: int
    activation: str
    p98_abs_activation: float
    bin_edges: list[float]
    densities: list[float]
    dead_fraction: float


@dataclass
class SaturationReport:
    """Per-epoch, per-layer saturation entries."""

    entries: list[tuple[int, list[LayerSaturation]]] = field(default_factory=list)

    def add(self, epoch: int, layers: list[LayerSaturation]) -> None:
        self.entries.append((epoch, layers))

    def rows(self):
        for epoch, layers in self.entries:
            for s in layers:
                yield epoch, s

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "layer", "p98", "dead_fraction"])
            for epoch, s in self.rows():
                w.writerow([epoch, s.layer, repr(s.p98_abs_activation), repr(s.dead_fraction)])

    def to_json(self) -> dict:
        return {
            "entries": [
                {"epoch": epoch, "layers": [asdict(s) for s in layers]}
                for epoch, layers in self.entries
            ]
        }


def normalized_histogram(values: np.ndarray, lo: float, hi: float, bins: int = N_BINS):
    """Density histogram over [lo, hi]; densities times widths sum to one."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("no values to histogram")
    if not hi > lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=edges)
    dens = counts / (counts.sum() * np.diff(edges))
    return edges, dens


def abs_percentiles(values: np.ndarray, ps: Sequence[float]) -> np.ndarray:
    return np.percentile(np.abs(np.asarray(values, dtype=np.float64)), ps)


def saturation_snapshot(
    spec: ModelSpec, params: ParamSet, batch: Batch, threshold: float = 0.98
) -> list[LayerSaturation]:
    """Saturation statistics of every hidden layer on one batch.

    tanh layers count a unit as saturated when |a| > threshold; relu layers
    count a unit as dead when it outputs exactly zero on every row.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    _, acts = nn.forward(spec, params, batch)
    out = []
    for l, a in enumerate(acts[1:]):
        kind = spec.activation[l]
        p98 = float(np.percentile(np.abs(a), 98))
        if kind == "tanh":
            edges, dens = normalized_histogram(a, -1.0, 1.0)
            dead = float(np.mean(np.abs(a) > threshold))
        elif kind == "relu":
            edges, dens = normalized_histogram(a, 0.0, float(a.max()))
            dead = float(np.mean(np.all(a == 0, axis=0)))
        else:
            edges, dens = normalized_histogram(a, float(a.min()), float(a.max()))
            dead = 0.0
        out.append(LayerSaturation(l, kind, p98, edges.tolist(), dens.tolist(), dead))
    return out


def hessian_from_grad(
    grad_fn: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, symmetrize: bool = True
) -> np.ndarray:
    """Central differences of a gradient function, one column per coordinate.

    Step size is 1e-5 * max(1, |theta_j|).
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size
    H = np.empty((n, n))
    for j in range(n):
        eps = 1e-5 * max(1.0, abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += eps
        tm[j] -= eps
        H[:, j] = (grad_fn(tp) - grad_fn(tm)) / (tp[j] - tm[j])
    if symmetrize:
        H = 0.5 * (H + H.T)
    return H


def hessian_dense(
    spec: ModelSpec, params: ParamSet, batch: Batch, symmetrize: bool = True
) -> np.ndarray:
    """Finite-difference Hessian of the data loss for desk-scale networks."""
    sizes = params.shapes()
    if sum(sizes) > MAX_HESSIAN_PARAMS:
        raise ValueError(f"{sum(sizes)} parameters exceeds the {MAX_HESSIAN_PARAMS} limit")

    def grad_fn(vec):
        return nn.backward(spec, ParamSet.from_flat(vec, sizes), batch)[1].flat()

    return hessian_from_grad(grad_fn, params.flat(), symmetrize)


@dataclass
class SpectrumReport:
    eigenvalues: list[float]
    lambda_max: float
    bulk_edge: float
    outlier_count: int
    bulk_percentile: float = 90.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eigenvalue"])
            for v in self.eigenvalues:
                w.writerow([repr(v)])

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def eigh_symmetric(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("matrix must be square")
    if not np.isfinite(H).all():
        raise ValueError("matrix has non-finite entries")
    return np.linalg.eigh(H)


def spectrum(H: np.ndarray, bulk_percentile: float = 90.0) -> SpectrumReport:
    """Eigenvalues with a percentile-based bulk edge and outlier count."""
    w, _ = eigh_symmetric(H)
    w = np.sort(w)
    edge = float(np.percentile(w, bulk_percentile))
    return SpectrumReport(
        eigenvalues=w.tolist(),
        lambda_max=float(w[-1]),
        bulk_edge=edge,
        outlier_count=int(np.sum(w > edge)),
        bulk_percentile=bulk_percentile,
    )
