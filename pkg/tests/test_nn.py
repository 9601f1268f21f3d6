import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapforge import nn
from gapforge.nn import Activation, LayerSpec

from oracles import parse_checkpoint, scalar_forward


def small_net(rng, dims=(3, 5, 4, 2), bn=True):
    specs = [LayerSpec(a, b, bn, Activation.RELU) for a, b in zip(dims[:-2], dims[1:-1])]
    specs.append(LayerSpec(dims[-2], dims[-1], False, Activation.IDENTITY))
    p = nn.init_params(specs, rng, weight_std=0.5)
    for layer in p.layers:
        layer.gamma[:] = rng.uniform(0.5, 1.5, layer.gamma.shape)
        layer.beta[:] = rng.uniform(-0.5, 0.5, layer.beta.shape)
        layer.running_mean[:] = rng.normal(size=layer.running_mean.shape)
        layer.running_var[:] = rng.uniform(0.5, 2.0, layer.running_var.shape)
        if not layer.spec.has_batchnorm:
            layer.b[:] = rng.normal(size=layer.b.shape)
    return p


def as_dicts(params):
    return [dict(W=l.W.tolist(), b=l.b.tolist(), gamma=l.gamma.tolist(), beta=l.beta.tolist(),
                 rmean=l.running_mean.tolist(), rvar=l.running_var.tolist(),
                 bn=l.spec.has_batchnorm, relu=l.spec.activation == Activation.RELU) for l in params.layers]


class TestForward:
    def test_identity_layer(self):
        p = nn.ModelParams([nn.Layer(LayerSpec(3, 3), np.eye(3), np.zeros(3), np.ones(3), np.zeros(3),
                                     np.zeros(3), np.ones(3))])
        x = np.random.default_rng(0).normal(size=(4, 3))
        y, _ = nn.mlp_forward(p, x)
        np.testing.assert_array_equal(y, x)

    def test_batchnorm_normalizes_batch(self):
        rng = np.random.default_rng(1)
        p = nn.init_params([LayerSpec(4, 6, True, Activation.IDENTITY)], rng, weight_std=1.0)
        x = rng.normal(3.0, 2.0, size=(32, 4))
        y, _ = nn.mlp_forward(p, x, train=True)
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-9)
        # (var / (var + eps)) is the exact normalized variance
        z = x @ p.layers[0].W.T
        np.testing.assert_allclose(y.var(axis=0), z.var(axis=0) / (z.var(axis=0) + nn.BN_EPS), atol=1e-9)
        np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-5)

    @pytest.mark.parametrize("train", [True, False])
    def test_matches_scalar_loop(self, train):
        rng = np.random.default_rng(7)
        p = small_net(rng)
        x = rng.normal(size=(6, 3))
        y, _ = nn.mlp_forward(p, x, train=train)
        ref = np.array(scalar_forward(as_dicts(p), x.tolist(), train))
        np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)

    def test_eval_is_pure(self):
        rng = np.random.default_rng(3)
        p = small_net(rng)
        x = rng.normal(size=(5, 3))
        before = nn.serialize_params(p)
        a, _ = nn.mlp_forward(p, x, train=False)
        b, _ = nn.mlp_forward(p, x, train=False)
        np.testing.assert_array_equal(a, b)
        assert nn.serialize_params(p) == before

    def test_errors(self):
        p = small_net(np.random.default_rng(0))
        with pytest.raises(ValueError, match="columns"):
            nn.mlp_forward(p, np.zeros((4, 2)))
        with pytest.raises(ValueError, match="at least 2"):
            nn.mlp_forward(p, np.zeros((1, 3)), train=True)
        nn.mlp_forward(p, np.zeros((1, 3)), train=False)

    def test_dims_must_chain(self):
        a = nn.init_params([LayerSpec(2, 3)], np.random.default_rng(0)).layers[0]
        b = nn.init_params([LayerSpec(4, 1)], np.random.default_rng(0)).layers[0]
        with pytest.raises(ValueError, match="chain"):
            nn.ModelParams([a, b])


class TestBackward:
    def test_linear_layer(self):
        rng = np.random.default_rng(0)
        p = nn.init_params([LayerSpec(3, 2)], rng, weight_std=1.0)
        x = rng.normal(size=(5, 3))
        G = rng.normal(size=(5, 2))
        _, cache = nn.mlp_forward(p, x)
        (dW, db), dx = nn.mlp_backward(p, cache, G)
        np.testing.assert_allclose(dW, G.T @ x)
        np.testing.assert_allclose(db, G.sum(axis=0))
        np.testing.assert_allclose(dx, G @ p.layers[0].W)

    def test_relu_zeroes_negative(self):
        p = nn.ModelParams([nn.Layer(LayerSpec(2, 2, False, Activation.RELU), np.eye(2), np.zeros(2),
                                     np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))])
        x = np.array([[1.0, -1.0], [-2.0, 3.0]])
        _, cache = nn.mlp_forward(p, x)
        _, dx = nn.mlp_backward(p, cache, np.ones((2, 2)))
        np.testing.assert_array_equal(dx, [[1.0, 0.0], [0.0, 1.0]])

    def test_shape_mismatch(self):
        p = small_net(np.random.default_rng(0))
        _, cache = nn.mlp_forward(p, np.ones((4, 3)) * np.arange(4)[:, None])
        with pytest.raises(ValueError, match="shape"):
            nn.mlp_backward(p, cache, np.zeros((4, 3)))

    def test_grads_cover_trainables(self):
        p = small_net(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 3))
        y, cache = nn.mlp_forward(p, x)
        grads, _ = nn.mlp_backward(p, cache, np.ones_like(y))
        assert [g.shape for g in grads] == [t.shape for t in p.trainable()]
        # W, gamma, beta per bn layer; W, b for the output layer
        assert len(grads) == 3 * 2 + 2

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("train", [True, False])
    def test_four_layer_finite_differences(self, seed, train):
        rng = np.random.default_rng(seed)
        p = small_net(rng, dims=(2, 6, 6, 6, 1))
        x = rng.normal(size=(8, 2))
        target = rng.normal(size=(8, 1))

        def loss(params):
            y, cache = nn.mlp_forward(params, x, train=train)
            grads, _ = nn.mlp_backward(params, cache, (y - target) / len(y))
            return 0.5 * float(np.sum((y - target) ** 2)) / len(y), grads

        assert nn.grad_check(p, loss, 1e-5) < 1e-4

    def test_input_gradient_finite_differences(self):
        rng = np.random.default_rng(4)
        p = small_net(rng)
        x = rng.normal(size=(5, 3))
        w = rng.normal(size=(5, 2))
        y, cache = nn.mlp_forward(p, x)
        _, dx = nn.mlp_backward(p, cache, w)
        h = 1e-5
        num = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            num[idx] = (np.sum(w * nn.mlp_forward(p, xp)[0]) - np.sum(w * nn.mlp_forward(p, xm)[0])) / (2 * h)
        np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-8)


class TestGradCheck:
    def test_quadratic_exact(self):
        p = nn.init_params([LayerSpec(3, 2)], np.random.default_rng(0), weight_std=1.0)
        p.layers[0].b[:] = [0.3, -0.4]

        def loss(params):
            ts = params.trainable()
            return 0.5 * sum(float(np.sum(t * t)) for t in ts), [t.copy() for t in ts]

        assert nn.grad_check(p, loss, 1e-5) < 1e-9

    def test_detects_corrupted_gradient(self):
        p = nn.init_params([LayerSpec(3, 2)], np.random.default_rng(0), weight_std=1.0)

        def loss(params):
            ts = params.trainable()
            return 0.5 * sum(float(np.sum(t * t)) for t in ts), [2 * t for t in ts]

        # relative to the analytic value: |2p - p| / |2p| = 0.5
        assert nn.grad_check(p, loss, 1e-5) == pytest.approx(0.5, abs=1e-6)

    def test_detects_halved_gradient(self):
        p = nn.init_params([LayerSpec(3, 2)], np.random.default_rng(0), weight_std=1.0)

        def loss(params):
            ts = params.trainable()
            return 0.5 * sum(float(np.sum(t * t)) for t in ts), [0.5 * t for t in ts]

        assert nn.grad_check(p, loss, 1e-5) == pytest.approx(1.0, abs=1e-6)

    def test_non_finite_loss(self):
        p = nn.init_params([LayerSpec(1, 1)], np.random.default_rng(0))
        with pytest.raises(FloatingPointError):
            nn.grad_check(p, lambda q: (float("nan"), [np.zeros((1, 1)), np.zeros(1)]), 1e-5)

    def test_bad_h(self):
        p = nn.init_params([LayerSpec(1, 1)], np.random.default_rng(0))
        with pytest.raises(ValueError):
            nn.grad_check(p, lambda q: (0.0, []), 0.0)


class TestClip:
    def test_scales_down(self):
        g = [np.array([6.0, 0.0]), np.array([[0.0, 8.0]])]
        out = nn.clip_grad_norm(g, 1.0)
        np.testing.assert_allclose(out[0], [0.6, 0.0])
        np.testing.assert_allclose(out[1], [[0.0, 0.8]])

    def test_below_threshold_unchanged(self):
        g = [np.array([0.3, 0.4])]
        out = nn.clip_grad_norm(g, 1.0)
        np.testing.assert_array_equal(out[0], g[0])

    def test_rejects_non_finite(self):
        with pytest.raises(FloatingPointError):
            nn.clip_grad_norm([np.array([np.inf])], 1.0)
        with pytest.raises(ValueError):
            nn.clip_grad_norm([np.array([1.0])], 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
    def test_norm_and_idempotence(self, seed, max_norm):
        rng = np.random.default_rng(seed)
        g = [rng.normal(size=(3, 4)) * rng.uniform(0.01, 10), rng.normal(size=5)]
        norm = math.sqrt(sum(float(np.sum(t ** 2)) for t in g))
        once = nn.clip_grad_norm(g, max_norm)
        after = math.sqrt(sum(float(np.sum(t ** 2)) for t in once))
        assert after == pytest.approx(min(norm, max_norm), abs=1e-9)
        assert after <= max_norm + 1e-12
        twice = nn.clip_grad_norm(once, max_norm)
        for a, b in zip(once, twice):
            np.testing.assert_allclose(a, b, rtol=1e-15, atol=0)


class TestAdam:
    def _scalar_params(self, value):
        p = nn.init_params([LayerSpec(1, 1)], np.random.default_rng(0))
        p.layers[0].W[:] = value
        p.layers[0].b[:] = -value
        return p

    def test_first_step_is_sign(self):
        p = self._scalar_params(1.0)
        state = nn.AdamState.zeros_like(p, lr=0.01)
        nn.adam_step(p, [np.array([[3.0]]), np.array([-0.5])], state)
        assert p.layers[0].W[0, 0] == pytest.approx(1.0 - 0.01, abs=1e-9)
        assert p.layers[0].b[0] == pytest.approx(-1.0 + 0.01, abs=1e-8)
        assert state.step == 1

    def test_zero_gradient(self):
        p = self._scalar_params(1.0)
        state = nn.AdamState.zeros_like(p)
        state.m[0][:] = 0.2
        state.v[0][:] = 0.04
        state.step = 3
        nn.adam_step(p, [np.zeros((1, 1)), np.zeros(1)], state)
        assert state.m[0][0, 0] == pytest.approx(0.1)
        assert state.v[0][0, 0] == pytest.approx(0.04 * 0.999)
        # W still moves because m is nonzero; b has zero moments and stays put
        assert p.layers[0].b[0] == -1.0

    def test_params_unchanged_with_zero_state_and_gradient(self):
        p = self._scalar_params(0.7)
        state = nn.AdamState.zeros_like(p)
        nn.adam_step(p, [np.zeros((1, 1)), np.zeros(1)], state)
        assert p.layers[0].W[0, 0] == 0.7

    def test_three_steps_hand_unrolled(self):
        # minimize f(w) = w^2 from w = 1.5; gradient 2w
        lr, b1, b2, eps = 0.1, 0.5, 0.999, 1e-8
        w = 1.5
        m = v = 0.0
        for t in (1, 2, 3):
            g = 2 * w
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        p = self._scalar_params(1.5)
        state = nn.AdamState.zeros_like(p, lr=lr, beta1=b1, beta2=b2, eps=eps)
        for _ in range(3):
            nn.adam_step(p, [2 * p.layers[0].W, np.zeros(1)], state)
        assert abs(p.layers[0].W[0, 0] - w) < 1e-12

    def test_rejects_bad_input(self):
        p = self._scalar_params(1.0)
        state = nn.AdamState.zeros_like(p)
        with pytest.raises(FloatingPointError):
            nn.adam_step(p, [np.array([[np.nan]]), np.zeros(1)], state)
        with pytest.raises(ValueError):
            nn.adam_step(p, [np.zeros((2, 1)), np.zeros(1)], state)
        with pytest.raises(ValueError):
            nn.AdamState([], [], beta1=1.0)


class TestSerialization:
    def test_round_trip_bit_exact(self):
        p = small_net(np.random.default_rng(11))
        data = nn.serialize_params(p)
        q = nn.deserialize_params(data)
        assert q.specs == p.specs
        for a, b in zip(p.layers, q.layers):
            for x, y in zip(a.tensors(), b.tensors()):
                assert x.tobytes() == y.tobytes()
        assert nn.serialize_params(q) == data

    def test_special_values_survive(self):
        p = small_net(np.random.default_rng(0))
        p.layers[0].W[0, 0] = -0.0
        p.layers[0].W[0, 1] = 5e-324
        q = nn.deserialize_params(nn.serialize_params(p))
        assert np.signbit(q.layers[0].W[0, 0])
        assert q.layers[0].W[0, 1] == 5e-324

    def test_truncated(self):
        data = nn.serialize_params(small_net(np.random.default_rng(0)))
        with pytest.raises(nn.CheckpointError, match="truncated"):
            nn.deserialize_params(data[:-1])
        with pytest.raises(nn.CheckpointError, match="truncated"):
            nn.deserialize_params(data[:10])

    def test_bad_magic_and_version(self):
        data = bytearray(nn.serialize_params(small_net(np.random.default_rng(0))))
        with pytest.raises(nn.CheckpointError, match="magic"):
            nn.deserialize_params(b"XXXXXXXX" + bytes(data[8:]))
        data[8] = 9
        with pytest.raises(nn.CheckpointError, match="version"):
            nn.deserialize_params(bytes(data))

    def test_dim_chain_violation(self):
        data = bytearray(nn.serialize_params(small_net(np.random.default_rng(0), dims=(2, 3, 1))))
        # second layer header in_dim: offset 16 + 12
        data[28] = 7
        with pytest.raises(nn.CheckpointError, match="chain"):
            nn.deserialize_params(bytes(data))

    def test_header_parsed_by_independent_reader(self, tmp_path):
        specs = nn.mlp_specs(2, [128], 1, Activation.SIGMOID_LOGIT)
        p = nn.init_params(specs, np.random.default_rng(0))
        path = tmp_path / "d.ckpt"
        path.write_bytes(nn.serialize_params(p))
        version, headers = parse_checkpoint(path.read_bytes())
        assert version == 1
        assert headers == [(2, 128, True, int(Activation.RELU)), (128, 1, False, int(Activation.SIGMOID_LOGIT))]
        assert nn.deserialize_params(path.read_bytes()).specs == specs

    def test_stable_digest(self):
        # pins the byte layout: header fields, tensor order and endianness
        spec = LayerSpec(2, 1, False, Activation.SIGMOID_LOGIT)
        layer = nn.Layer(spec, np.array([[1.0, -2.0]]), np.array([0.5]), np.ones(1), np.zeros(1),
                         np.zeros(1), np.ones(1))
        data = nn.serialize_params(nn.ModelParams([layer]))
        expected = (b"GAPCKPT1" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
                    + (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (4).to_bytes(4, "little")
                    + np.array([1.0, -2.0, 0.5, 1.0, 0.0, 0.0, 1.0], "<f8").tobytes())
        assert data == expected
        assert hashlib.sha256(data).hexdigest() == hashlib.sha256(expected).hexdigest()


class TestLosses:
    def test_log_sigmoid_stable(self):
        a = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
        out = nn.log_sigmoid(a)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out[1:4], [-30.0 - math.log1p(math.exp(-30)), -math.log(2), -math.log1p(math.exp(-30))])
        assert out[0] == -1000.0

    def test_sigmoid_symmetry(self):
        a = np.linspace(-50, 50, 101)
        np.testing.assert_allclose(nn.sigmoid(a) + nn.sigmoid(-a), 1.0, atol=1e-15)
