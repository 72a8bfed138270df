import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_batch, random_network, random_params
from oracles import central_difference, naive_forward
from persistent_opt import nn
from persistent_opt.nn import Batch, InitSpec, ModelSpec, ParamSet, ShapeError


class TestModelSpec:
    def test_needs_two_widths(self):
        with pytest.raises(ValueError):
            ModelSpec((3,))

    def test_zero_width_rejected(self):
        with pytest.raises(ValueError):
            ModelSpec((1, 0, 1))

    def test_loss_output_pairing(self):
        with pytest.raises(ValueError):
            ModelSpec((2, 3), output_activation="identity", loss_kind="cross_entropy")
        with pytest.raises(ValueError):
            ModelSpec((2, 3), output_activation="softmax", loss_kind="mean_squared_error")

    def test_activation_broadcast(self):
        spec = ModelSpec((1, 4, 4, 1), "tanh")
        assert spec.activation == ("tanh", "tanh")

    def test_dict_round_trip(self):
        spec = ModelSpec((2, 5, 3), ("relu",), "softmax", "cross_entropy", InitSpec("normal", 0.2, 9))
        assert ModelSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


class TestInitParams:
    def test_layer_lengths(self):
        spec = ModelSpec((1, 32, 32, 1), "relu", initializer=InitSpec("he_normal", seed=14))
        assert nn.init_params(spec).shapes() == [64, 1056, 33]

    def test_sigma_zero_gives_zeros(self):
        spec = ModelSpec((3, 4, 2), "relu", initializer=InitSpec("normal", sigma=0.0))
        assert all(np.all(v == 0) for v in nn.init_params(spec).layers)

    def test_he_std(self):
        # 32 x 3125 weights = 100,000 draws with fan_in 32
        spec = ModelSpec((32, 3125), (), initializer=InitSpec("he_normal", seed=3))
        w, b = nn.unpack(spec, nn.init_params(spec), 0)
        assert abs(w.std() / math.sqrt(2 / 32) - 1) < 0.05
        assert np.all(b == 0)

    def test_xavier_std(self):
        spec = ModelSpec((200, 300), (), initializer=InitSpec("xavier_normal", seed=5))
        w, _ = nn.unpack(spec, nn.init_params(spec), 0)
        assert abs(w.std() / math.sqrt(2 / 500) - 1) < 0.05

    def test_deterministic(self):
        spec = ModelSpec((2, 8, 1), "tanh", initializer=InitSpec("he_normal", seed=123))
        assert nn.init_params(spec).equals(nn.init_params(spec))

    def test_biases_zero_all_kinds(self):
        for kind in ("he_normal", "xavier_normal", "normal"):
            spec = ModelSpec((3, 4, 2), "relu", initializer=InitSpec(kind, sigma=1.0))
            p = nn.init_params(spec)
            for l in range(spec.n_layers):
                assert np.all(nn.unpack(spec, p, l)[1] == 0)


class TestForward:
    def test_zero_params(self):
        spec = ModelSpec((3, 5, 2), "relu", initializer=InitSpec("normal", sigma=0.0))
        out, _ = nn.forward(spec, nn.init_params(spec), Batch(np.ones((4, 3)), np.zeros((4, 2))))
        assert np.all(out == 0)

    def test_hand_evaluation(self):
        spec = ModelSpec((1, 1, 1), "relu")
        p = ParamSet([[1.0, 0.0], [1.0, 0.0]])
        out, _ = nn.forward(spec, p, Batch([[1.0]], [[0.0]]))
        assert out[0, 0] == 1.0

    def test_tanh_range(self, rng):
        spec = ModelSpec((4, 16, 16, 2), "tanh")
        p = random_params(rng, spec)
        _, acts = nn.forward(spec, p, Batch(10 * rng.standard_normal((50, 4)), np.zeros((50, 2))))
        for a in acts[1:]:
            assert np.all(np.abs(a) <= 1)

    def test_matches_loop_oracle(self, rng):
        for _ in range(20):
            spec = random_network(rng, loss_kind="mean_squared_error")
            p = random_params(rng, spec)
            x = rng.standard_normal((3, spec.layer_widths[0]))
            out = nn.predict(spec, p, x)
            for i in range(3):
                ref = naive_forward(spec.layer_widths, spec.activation, p.layers, x[i])
                np.testing.assert_allclose(out[i], ref, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        spec = ModelSpec((3, 2), ())
        with pytest.raises(ShapeError):
            nn.forward(spec, nn.init_params(spec), Batch(np.ones((2, 4)), np.ones((2, 2))))
        with pytest.raises(ShapeError):
            nn.forward(spec, ParamSet([np.zeros(5)]), Batch(np.ones((2, 3)), np.ones((2, 2))))

    def test_softmax_stable(self):
        p = nn.softmax(np.array([[1000.0, 1000.0], [-1000.0, 0.0]]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p[0], [0.5, 0.5])


class TestLoss:
    mse = ModelSpec((1, 1), ())
    ce = ModelSpec((1, 10), (), "softmax", "cross_entropy")

    def test_perfect_fit(self):
        y = np.array([[1.0], [-2.0]])
        assert nn.loss(self.mse, y, y) == 0.0

    def test_mse_value(self):
        assert nn.loss(self.mse, np.array([[0.0]]), np.array([[2.0]])) == 4.0

    def test_mse_sums_output_dims(self):
        spec = ModelSpec((1, 2), ())
        assert nn.loss(spec, np.array([[1.0, 1.0]]), np.array([[0.0, 0.0]])) == 2.0

    def test_uniform_cross_entropy(self):
        out = np.full((3, 10), 0.1)
        assert nn.loss(self.ce, out, np.array([0, 4, 9])) == pytest.approx(math.log(10), abs=1e-12)
        assert nn.loss(self.ce, out, np.eye(10)[[0, 4, 9]]) == pytest.approx(2.302585, abs=1e-6)

    def test_cross_entropy_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            nn.loss(self.ce, np.full((1, 10), 0.5), np.array([1]))


class TestBackward:
    def test_zero_grad_at_perfect_fit(self):
        spec = ModelSpec((2, 3, 1), "tanh", initializer=InitSpec("normal", 0.5, 1))
        p = nn.init_params(spec)
        x = np.array([[0.2, -1.0], [0.5, 0.3]])
        batch = Batch(x, nn.predict(spec, p, x))
        value, g = nn.backward(spec, p, batch)
        assert value == 0.0
        assert all(np.all(v == 0) for v in g.layers)

    def test_duplicated_batch(self, rng):
        spec = ModelSpec((3, 4, 2), "tanh")
        p = random_params(rng, spec)
        b = random_batch(rng, spec, 5)
        b2 = Batch(np.vstack([b.inputs, b.inputs]), np.vstack([b.targets, b.targets]))
        _, g1 = nn.backward(spec, p, b)
        _, g2 = nn.backward(spec, p, b2)
        np.testing.assert_allclose(g1.flat(), g2.flat(), rtol=1e-13, atol=1e-15)

    def test_shape_closure_and_determinism(self, rng):
        for _ in range(10):
            spec = random_network(rng)
            p = random_params(rng, spec)
            b = random_batch(rng, spec)
            v1, g1 = nn.backward(spec, p, b)
            v2, g2 = nn.backward(spec, p, b)
            assert g1.shapes() == p.shapes()
            assert v1 == v2 and g1.equals(g2)

    def test_finite_differences(self, rng):
        checked = 0
        while checked < 30:
            spec = random_network(rng)
            p = random_params(rng, spec)
            b = random_batch(rng, spec)
            _, _, pre = nn.forward_cache(spec, p, b)
            if any(np.min(np.abs(z)) < 1e-3 for z in pre[:-1]) and "relu" in spec.activation:
                continue
            sizes = p.shapes()
            fd = central_difference(
                lambda v: nn.data_loss(spec, ParamSet.from_flat(v, sizes), b), p.flat()
            )
            g = nn.backward(spec, p, b)[1].flat()
            assert np.all(np.abs(g - fd) <= 1e-5 * np.abs(fd) + 1e-8)
            checked += 1

    def test_relu_derivative_at_zero(self):
        spec = ModelSpec((1, 1, 1), "relu")
        p = ParamSet([[1.0, 0.0], [1.0, 0.0]])
        _, g = nn.backward(spec, p, Batch([[0.0]], [[1.0]]))
        # pre-activation exactly 0: first-layer gradient must vanish
        assert np.all(g.layers[0] == 0)


class TestParamSetSerialization:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8),
                    min_size=1, max_size=4))
    def test_json_round_trip_bit_exact(self, layers):
        p = ParamSet(layers)
        q = ParamSet.loads(p.dumps())
        assert p.equals(q)
        assert json.loads(p.dumps()).keys() == {"layers"}

    def test_from_flat(self):
        p = ParamSet([[1.0, 2.0], [3.0]])
        assert ParamSet.from_flat(p.flat(), p.shapes()).equals(p)
        with pytest.raises(ShapeError):
            ParamSet.from_flat(np.zeros(4), [2, 1])
