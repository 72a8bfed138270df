"""Synthetic datasets with disjoint train/validation/test splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Batch

DATA_KINDS = ("regress1d_synthetic", "blobs_classify")

BLOB_CLASSES = 4
BLOB_DIM = 8
BLOB_SEPARATION = 4.0
REGRESS_RANGE = (-3.0, 3.0)


@dataclass(frozen=True)
class DataSpec:
    kind: str = "regress1d_synthetic"
    n_train: int = 200
    n_val: int = 100
    n_test: int = 100
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ValueError(f"unknown data kind {self.kind!r}")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "noise_sigma": self.noise_sigma,
            "seed": int(self.seed),
        }


def _split(x: np.ndarray, y: np.ndarray, spec: DataSpec) -> tuple[Batch, Batch, Batch]:
    a = spec.n_train
    b = a + spec.n_val
    return Batch(x[:a], y[:a]), Batch(x[a:b], y[a:b]), Batch(x[b:], y[b:])


def quadratic_target(x):
    return np.asarray(x, dtype=np.float64) ** 2 - 2.0


def gen_regress1d(spec: DataSpec) -> tuple[Batch, Batch, Batch]:
    """x ~ U[-3, 3], y = x^2 - 2 + noise. One draw, then split by index."""
    rng = np.random.default_rng(int(spec.seed))
    n = spec.n_train + spec.n_val + spec.n_test
    x = rng.uniform(*REGRESS_RANGE, size=(n, 1))
    y = quadratic_target(x) + spec.noise_sigma * rng.standard_normal((n, 1))
    return _split(x, y, spec)


def blob_means() -> np.ndarray:
    """Class means on orthogonal axes, each at distance 4 from the origin."""
    means = np.zeros((BLOB_CLASSES, BLOB_DIM))
    means[np.arange(BLOB_CLASSES), np.arange(BLOB_CLASSES)] = BLOB_SEPARATION
    return means


def gen_blobs(spec: DataSpec) -> tuple[Batch, Batch, Batch]:
    """Four unit-covariance Gaussian classes in 8 dimensions, one-hot labels.

    Labels are balanced (cyclic assignment, then shuffled) before splitting.
    """
    rng = np.random.default_rng(int(spec.seed))
    n = spec.n_train + spec.n_val + spec.n_test
    labels = rng.permutation(np.arange(n) % BLOB_CLASSES)
    x = blob_means()[labels] + rng.standard_normal((n, BLOB_DIM))
    return _split(x, np.eye(BLOB_CLASSES)[labels], spec)


def generate(spec: DataSpec) -> tuple[Batch, Batch, Batch]:
    if spec.kind == "regress1d_synthetic":
        return gen_regress1d(spec)
    return gen_blobs(spec)


def affine_fit_mse(x: np.ndarray, y: np.ndarray) -> float:
    """MSE of the least-squares affine fit of y on x."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    A = np.hstack([x, np.ones((x.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return float(np.mean(np.sum(r * r, axis=1)))
