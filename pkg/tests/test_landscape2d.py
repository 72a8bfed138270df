import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import toy_f
from persistent_opt import landscape2d as L
from persistent_opt.landscape2d import ToyPoint

finite = st.floats(-50, 50, allow_nan=False)


def test_values_at_minima_and_start():
    # second-well contribution at (2, -2) is 1.5 * exp(-17), about 6e-8
    assert L.toy_loss((2, -2)) == pytest.approx(-1.0, abs=1e-7)
    assert L.toy_loss((-2, -1)) == pytest.approx(-1.5 - math.exp(-3.4), abs=1e-15)
    assert L.toy_loss((-2, -1)) == pytest.approx(-1.5334, abs=5e-5)
    # direct evaluation gives -0.392638
    assert L.toy_loss(L.W_INI) == pytest.approx(-0.3927, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(finite, finite)
def test_matches_definition_and_bounds(x, y):
    f = L.toy_loss((x, y))
    assert f == pytest.approx(float(toy_f(x, y)), rel=1e-14, abs=1e-300)
    assert -2.5 <= f <= 0.0


def test_gradient_near_zero_at_shallow_minimum():
    gx, gy = L.toy_grad((2, -2))
    assert math.hypot(gx, gy) < 1e-6


def test_gradient_finite_differences_on_grid():
    h = 1e-6
    for x in np.linspace(-4, 4, 33):
        for y in np.linspace(-4, 4, 33):
            gx, gy = L.toy_grad((x, y))
            fx = (toy_f(x + h, y) - toy_f(x - h, y)) / (2 * h)
            fy = (toy_f(x, y + h) - toy_f(x, y - h)) / (2 * h)
            assert abs(gx - fx) < 1e-7 and abs(gy - fy) < 1e-7


def test_descent_direction_at_start_points_to_shallow_basin():
    gx, _ = L.toy_grad(L.W_INI)
    assert -gx > 0


def test_plain_run_reaches_shallow_minimum():
    tr = L.run_toy(L.W_INI, 0.001, 50_000)
    assert tr.converged_to.distance(L.SHALLOW_MIN) < 1e-2
    assert len(tr.points) == tr.steps + 1


def test_persistent_run_reaches_deep_basin():
    plain = L.run_toy(L.W_INI, 0.001, 50_000)
    pers = L.run_toy(L.W_INI, 0.001, 50_000, registry=[L.SHALLOW_MIN], lam=0.1)
    assert pers.converged_to.distance(L.DEEP_MIN) < 0.2
    assert pers.final_loss < plain.final_loss


def test_start_at_minimum_stays():
    tr = L.run_toy(L.SHALLOW_MIN, 0.001, 1000)
    assert tr.converged_to.distance(L.SHALLOW_MIN) < 1e-6


def test_plain_descent_is_monotone():
    f = np.array([p[2] for p in L.run_toy(L.W_INI, 0.001, 50_000).points])
    # once converged, successive values differ only by round-off
    assert np.all(np.diff(f) <= 4 * np.finfo(float).eps * np.abs(f[1:]))


def test_recorded_f_is_exact_toy_loss():
    tr = L.run_toy(L.W_INI, 0.01, 200, registry=[(2, -2)], lam=0.1)
    for x, y, f in tr.points:
        assert f == L.toy_loss((x, y))


def test_first_step_difference_bounded():
    eta, lam = 0.001, 0.1
    plain = L.run_toy(L.W_INI, eta, 1)
    pers = L.run_toy(L.W_INI, eta, 1, registry=[L.SHALLOW_MIN], lam=lam)
    (x0, y0, _), (x1, y1, _) = plain.points[1], pers.points[1]
    bound = eta * lam / math.hypot(*L.SHALLOW_MIN)
    assert math.hypot(x1 - x0, y1 - y0) <= bound * (1 + 1e-9)
    assert plain.points[0] == pers.points[0]


def test_penalty_helpers_match_definition():
    reg = [(2.0, -2.0), (-1.0, 0.5)]
    p = (0.3, -0.7)
    expected = 0.1 * sum(abs(a * p[0] + b * p[1]) / (a * a + b * b) for a, b in reg)
    assert L.toy_penalty(p, reg, 0.1) == pytest.approx(expected, rel=1e-15)
    h = 1e-6
    gx, gy = L.toy_penalty_grad(p, reg, 0.1)
    fx = (L.toy_penalty((p[0] + h, p[1]), reg, 0.1) - L.toy_penalty((p[0] - h, p[1]), reg, 0.1)) / (2 * h)
    assert gx == pytest.approx(fx, rel=1e-6)


def test_errors():
    with pytest.raises(ValueError):
        L.run_toy(L.W_INI, 0.0, 10)
    with pytest.raises(ValueError):
        L.run_toy(L.W_INI, 0.1, 0)
    with pytest.raises(ValueError):
        ToyPoint(float("nan"), 0.0)
    with pytest.raises(ValueError):
        L.run_toy(L.W_INI, 0.1, 5, registry=[(0.0, 0.0)])


def test_divergence_reports_step():
    with pytest.raises(L.DivergedError) as exc:
        # a tiny registry point makes the penalty gradient ~1e150
        L.run_toy((1.0, -1.5), 1e200, 10, registry=[(1e-150, 0.0)], lam=0.1)
    assert exc.value.step >= 1


def test_csv_export(tmp_path):
    tr = L.run_toy(L.W_INI, 0.001, 10)
    tr.write_csv(tmp_path / "t.csv", stride=3)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,x,y,f"
    steps = [int(l.split(",")[0]) for l in lines[1:]]
    assert steps == [0, 3, 6, 9, 10]
    x, y, f = map(float, lines[-1].split(",")[1:])
    assert (x, y, f) == tr.points[-1]
