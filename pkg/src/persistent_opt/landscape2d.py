"""Two-parameter demonstration surface with a shallow and a deep basin.

f(x, y) = -exp(-((x-2)^2 + (y+2)^2) / 5) - 1.5 exp(-((x+2)^2 + (y+1)^2))

Plain gradient descent from (-0.335, -1.4) ends in the shallow basin at
(2, -2); adding the alignment penalty against that solution sends the same
start into the deep basin near (-2, -1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

W_INI = (-0.335, -1.4)
SHALLOW_MIN = (2.0, -2.0)
DEEP_MIN = (-2.0, -1.0)


class DivergedError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite iterate at step {step}")
        self.step = step


@dataclass(frozen=True)
class ToyPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self):
        return iter((self.x, self.y))

    def distance(self, other) -> float:
        ox, oy = other
        return math.hypot(self.x - ox, self.y - oy)


@dataclass
class Trajectory2D:
    points: list[tuple[float, float, float]]
    converged_to: ToyPoint
    steps: int
    registry: list[ToyPoint] = field(default_factory=list)
    lam: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.points[-1][2]

    def write_csv(self, path, stride: int = 1) -> None:
        """Write ``step,x,y,f`` rows; ``stride`` thins the output, last step always kept."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "x", "y", "f"])
            for i, (x, y, f) in enumerate(self.points):
                if i % stride == 0 or i == len(self.points) - 1:
                    w.writerow([i, repr(x), repr(y), repr(f)])


def _wells(x: float, y: float) -> tuple[float, float]:
    # products rather than ** so huge iterates overflow to inf instead of raising
    ax, ay, bx, by = x - 2.0, y + 2.0, x + 2.0, y + 1.0
    e1 = math.exp(-(ax * ax + ay * ay) / 5.0)
    e2 = math.exp(-(bx * bx + by * by))
    return e1, e2


def toy_loss(p) -> float:
    x, y = p
    e1, e2 = _wells(x, y)
    return -e1 - 1.5 * e2


def toy_grad(p) -> tuple[float, float]:
    x, y = p
    e1, e2 = _wells(x, y)
    gx = 0.4 * (x - 2.0) * e1 + 3.0 * (x + 2.0) * e2
    gy = 0.4 * (y + 2.0) * e1 + 3.0 * (y + 1.0) * e2
    return gx, gy


def toy_penalty(p, registry: Iterable, lam: float) -> float:
    x, y = p
    total = 0.0
    for ax, ay in registry:
        total += abs(ax * x + ay * y) / (ax * ax + ay * ay)
    return lam * total


def toy_penalty_grad(p, registry: Iterable, lam: float) -> tuple[float, float]:
    x, y = p
    gx = gy = 0.0
    for ax, ay in registry:
        d = ax * x + ay * y
        s = (d > 0) - (d < 0)
        n = ax * ax + ay * ay
        gx += s * ax / n
        gy += s * ay / n
    return lam * gx, lam * gy


def run_toy(
    start=W_INI,
    eta: float = 0.001,
    steps: int = 50_000,
    registry: Sequence | None = None,
    lam: float = 0.1,
) -> Trajectory2D:
    """Gradient descent on the toy surface, optionally with alignment penalties."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    reg = [ToyPoint(*r) for r in (registry or ())]
    for r in reg:
        if r.x == 0 and r.y == 0:
            raise ValueError("registry point at the origin has no defined penalty")
    pairs = [(r.x, r.y, r.x * r.x + r.y * r.y) for r in reg]

    x, y = ToyPoint(*start)
    points = [(x, y, toy_loss((x, y)))]
    for t in range(1, steps + 1):
        gx, gy = toy_grad((x, y))
        for ax, ay, n in pairs:
            d = ax * x + ay * y
            s = (d > 0) - (d < 0)
            gx += lam * s * ax / n
            gy += lam * s * ay / n
        x -= eta * gx
        y -= eta * gy
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DivergedError(t)
        points.append((x, y, toy_loss((x, y))))
    return Trajectory2D(points, ToyPoint(x, y), steps, reg, lam if reg else 0.0)


def run_toy_persistent(
    start=W_INI, eta: float = 0.001, steps: int = 50_000, lam: float = 0.1, iterations: int = 2
) -> list[Trajectory2D]:
    """Iteration 0 is plain GD; iteration n penalizes the n earlier endpoints."""
    runs: list[Trajectory2D] = []
    for n in range(iterations):
        registry = [r.converged_to for r in runs]
        runs.append(run_toy(start, eta, steps, registry if registry else None, lam))
    return runs
