"""Independent reference computations used by the tests.

Nothing here calls the analytic gradient code under test.
"""

import numpy as np


def central_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at flat vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (xp[j] - xm[j])
    return g


def naive_forward(widths, acts, layers, x):
    """Loop-based network evaluation straight from the layer definitions."""
    a = [float(v) for v in x]
    for l in range(len(widths) - 1):
        fi, fo = widths[l], widths[l + 1]
        v = layers[l]
        z = [sum(v[i * fi + j] * a[j] for j in range(fi)) + v[fo * fi + i] for i in range(fo)]
        if l < len(widths) - 2:
            name = acts[l]
            if name == "relu":
                z = [max(t, 0.0) for t in z]
            elif name == "tanh":
                z = [float(np.tanh(t)) for t in z]
        a = z
    return np.array(a)


def naive_penalty(theta_layers, snapshots, lam, layers=None):
    """Direct double sum of |S . theta| / ||S||^2."""
    total = 0.0
    for snap in snapshots:
        for l, (s, t) in enumerate(zip(snap, theta_layers)):
            if layers is not None and l not in layers:
                continue
            total += abs(float(np.dot(s, t))) / float(np.dot(s, s))
    return lam * total


def toy_f(x, y):
    """The two-well surface written out from its definition."""
    return -np.exp(-((x - 2) ** 2 + (y + 2) ** 2) / 5) - 1.5 * np.exp(-((x + 2) ** 2 + (y + 1) ** 2))
