import numpy as np
import pytest

from persistent_opt.nn import Batch, InitSpec, ModelSpec, init_params

# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(CRITERIA, key=lambda k: int(k.split()[0])):
            terminalreporter.write_line(CRITERIA[key])


def random_network(rng, activation=None, max_params=200, loss_kind=None):
    """A random small dense network spec with at most ``max_params`` parameters."""
    while True:
        depth = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 7, size=depth + 1)]
        if loss_kind is None:
            lk = "cross_entropy" if rng.random() < 0.4 else "mean_squared_error"
        else:
            lk = loss_kind
        if lk == "cross_entropy":
            widths[-1] = max(widths[-1], 2)
        act = activation or str(rng.choice(["relu", "tanh", "identity"]))
        spec = ModelSpec(
            tuple(widths), act,
            "softmax" if lk == "cross_entropy" else "identity", lk,
            InitSpec("normal", sigma=float(rng.uniform(0.3, 1.2)), seed=int(rng.integers(2**63))),
        )
        if spec.n_params <= max_params:
            return spec


def random_batch(rng, spec, n=None):
    n = n or int(rng.integers(1, 9))
    x = rng.standard_normal((n, spec.layer_widths[0]))
    k = spec.layer_widths[-1]
    if spec.loss_kind == "cross_entropy":
        y = np.eye(k)[rng.integers(k, size=n)]
    else:
        y = rng.standard_normal((n, k))
    return Batch(x, y)


def random_params(rng, spec):
    p = init_params(spec)
    for v in p.layers:
        v[:] = rng.standard_normal(v.size)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
