"""Inference-engine tests against loop-nest and finite-difference oracles."""

import numpy as np
import pytest

from nullcollide.container import WeightContainer
from nullcollide.errors import NonFiniteActivationError, ShapeError
from nullcollide.graph import LayerSpec, build_graph
from nullcollide.refnet import (
    CrossEntropy,
    LogitDistance,
    forward,
    input_gradient,
    predict,
)
from nullcollide.toys import container_from_arrays, random_layered_cnn


def conv2d_naive(x, w, b, stride, padding):
    """Direct loop-nest convolution (oracle)."""
    c_out, c_in, kh, kw = w.shape
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    sh, sw = stride
    oh = (xp.shape[1] - kh) // sh + 1
    ow = (xp.shape[2] - kw) // sw + 1
    out = np.zeros((c_out, oh, ow))
    for co in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ci in range(c_in):
                    for a in range(kh):
                        for bb in range(kw):
                            acc += xp[ci, i * sh + a, j * sw + bb] * w[co, ci, a, bb]
                out[co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out


def maxpool_naive(x, kh, kw, stride):
    sh, sw = stride
    c, h, w = x.shape
    oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
    out = np.zeros((c, oh, ow))
    for ci in range(c):
        for i in range(oh):
            for j in range(ow):
                out[ci, i, j] = x[ci, i * sh : i * sh + kh, j * sw : j * sw + kw].max()
    return out


class TestForward:
    def test_identity_dense_relu(self):
        c = container_from_arrays({"w": np.eye(2)})
        g = build_graph(
            "id",
            [2],
            [LayerSpec("dense", in_dim=2, out_dim=2, weight="w"), LayerSpec("activation", fn="relu")],
        )
        trace = forward(g, c, np.array([1.0, -1.0]))
        np.testing.assert_array_equal(trace.logits, [1.0, 0.0])

    def test_conv_1x1_scaling(self):
        c = container_from_arrays({"w": np.array([[[[2.0]]]])})
        g = build_graph(
            "k1",
            [1, 2, 2],
            [LayerSpec("conv2d", c_in=1, c_out=1, kh=1, kw=1, stride=(1, 1), padding=(0, 0), weight="w")],
        )
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        trace = forward(g, c, x)
        np.testing.assert_array_equal(trace.outputs[0], [[[2.0, 4.0], [6.0, 8.0]]])

    def test_unfold_conv_matches_naive(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 5))
            k = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            pad = int(rng.integers(0, 2))
            size = int(rng.integers(k, 8))
            w = rng.normal(size=(c_out, c_in, k, k))
            b = rng.normal(size=c_out)
            cont = container_from_arrays({"w": w, "b": b})
            g = build_graph(
                "c",
                [c_in, size, size],
                [LayerSpec("conv2d", c_in=c_in, c_out=c_out, kh=k, kw=k,
                           stride=(stride, stride), padding=(pad, pad), weight="w", bias="b")],
            )
            x = rng.normal(size=(c_in, size, size))
            got = forward(g, cont, x).outputs[0]
            want = conv2d_naive(x, w, b, (stride, stride), (pad, pad))
            assert np.max(np.abs(got - want)) <= 1e-10

    def test_three_layer_cnn_matches_naive_composition(self):
        rng = np.random.default_rng(1)
        w1 = rng.normal(size=(3, 1, 2, 2))
        b1 = rng.normal(size=3)
        w2 = rng.normal(size=(4, 12))
        cont = container_from_arrays({"w1": w1, "b1": b1, "w2": w2})
        g = build_graph(
            "cnn",
            [1, 5, 5],
            [
                LayerSpec("conv2d", c_in=1, c_out=3, kh=2, kw=2, stride=(1, 1), padding=(0, 0), weight="w1", bias="b1"),
                LayerSpec("activation", fn="relu"),
                LayerSpec("maxpool2d", kh=2, kw=2, stride=(2, 2)),
                LayerSpec("flatten"),
                LayerSpec("dense", in_dim=12, out_dim=4, weight="w2"),
            ],
        )
        x = rng.normal(size=(1, 5, 5))
        got = forward(g, cont, x).logits
        h = conv2d_naive(x, w1, b1, (1, 1), (0, 0))
        h = np.maximum(h, 0)
        h = maxpool_naive(h, 2, 2, (2, 2))
        want = w2 @ h.reshape(-1)
        assert np.max(np.abs(got - want)) <= 1e-10

    def test_avgpool(self):
        cont = WeightContainer()
        g = build_graph("a", [1, 4, 4], [LayerSpec("avgpool2d", kh=2, kw=2, stride=(2, 2))])
        x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
        got = forward(g, cont, x).outputs[0]
        np.testing.assert_allclose(got, [[[2.5, 4.5], [10.5, 12.5]]])

    def test_shape_mismatch(self):
        c = container_from_arrays({"w": np.eye(2)})
        g = build_graph("x", [2], [LayerSpec("dense", in_dim=2, out_dim=2, weight="w")])
        with pytest.raises(ShapeError):
            forward(g, c, np.zeros(3))

    def test_nonfinite_reports_layer(self):
        c = container_from_arrays({"w": np.full((2, 2), 1e308)})
        g = build_graph("x", [2], [LayerSpec("dense", in_dim=2, out_dim=2, weight="w")])
        with np.errstate(over="ignore"):
            with pytest.raises(NonFiniteActivationError, match="layer 0"):
                forward(g, c, np.full(2, 1e10))

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(2)
        g, c = random_layered_cnn(rng)
        x = rng.normal(size=g.input_shape)
        t1 = forward(g, c, x)
        t2 = forward(g, c, x)
        for a, b in zip(t1.outputs, t2.outputs):
            assert a.tobytes() == b.tobytes()

    def test_f32_mode_dtype(self):
        rng = np.random.default_rng(3)
        g, c = random_layered_cnn(rng)
        x = rng.normal(size=g.input_shape)
        trace = forward(g, c, x, precision="f32")
        assert all(o.dtype == np.float32 for o in trace.outputs)


class TestPredict:
    def test_argmax(self):
        c = container_from_arrays({"w": np.eye(2)})
        g = build_graph("x", [2], [LayerSpec("dense", in_dim=2, out_dim=2, weight="w")])
        assert predict(forward(g, c, np.array([0.1, 0.9]))) == 1

    def test_tie_break_lowest_index(self):
        c = container_from_arrays({"w": np.eye(2)})
        g = build_graph("x", [2], [LayerSpec("dense", in_dim=2, out_dim=2, weight="w")])
        assert predict(forward(g, c, np.array([0.5, 0.5]))) == 0

    def test_against_scan_oracle(self):
        rng = np.random.default_rng(4)
        n = 7
        c = container_from_arrays({"w": np.eye(n)})
        g = build_graph("x", [n], [LayerSpec("dense", in_dim=n, out_dim=n, weight="w")])
        for _ in range(50):
            logits = rng.normal(size=n)
            best, best_i = -np.inf, -1
            for i, v in enumerate(logits):
                if v > best:
                    best, best_i = v, i
            assert predict(forward(g, c, logits)) == best_i


def fd_gradient(g, c, x, loss, h=1e-5):
    """Central finite differences on the loss (oracle)."""
    out = np.zeros_like(x, dtype=np.float64)
    flat = out.reshape(-1)
    xf = np.asarray(x, dtype=np.float64).copy()
    base = xf.reshape(-1)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + h
        up, _ = loss.value_and_grad(forward(g, c, xf).logits)
        base[i] = orig - h
        dn, _ = loss.value_and_grad(forward(g, c, xf).logits)
        base[i] = orig
        flat[i] = (up - dn) / (2 * h)
    return out


def _safe_input(rng, g, c, margin=1e-2, tries=50):
    """Input keeping relu/maxpool decisions stable under FD probing."""
    for _ in range(tries):
        x = rng.normal(size=g.input_shape)
        trace = forward(g, c, x)
        ok = True
        prev = np.asarray(x, dtype=np.float64)
        for layer, out in zip(g.layers, trace.outputs):
            if layer.kind == "activation" and layer.fn == "relu":
                if np.min(np.abs(prev)) < margin:
                    ok = False
                    break
            if layer.kind == "maxpool2d":
                from nullcollide.refnet import _pool_windows

                win = _pool_windows(prev, layer)
                top2 = np.sort(win, axis=-1)[..., -2:]
                if win.shape[-1] > 1 and np.min(top2[..., 1] - top2[..., 0]) < margin:
                    ok = False
                    break
            prev = out
        if ok:
            return x
    return x


class TestInputGradient:
    def test_single_dense_cross_entropy_closed_form(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(3, 4))
        c = container_from_arrays({"w": w})
        g = build_graph("x", [4], [LayerSpec("dense", in_dim=4, out_dim=3, weight="w")])
        x = rng.normal(size=4)
        z = w @ x
        p = np.exp(z - z.max())
        p /= p.sum()
        p[1] -= 1.0
        want = w.T @ p
        got = input_gradient(g, c, x, CrossEntropy(target=1))
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_random_cnn_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        g, c = random_layered_cnn(rng)
        x = _safe_input(rng, g, c)
        loss = CrossEntropy(target=0)
        got = input_gradient(g, c, x, loss)
        want = fd_gradient(g, c, x, loss)
        denom = np.maximum(1.0, np.maximum(np.abs(got), np.abs(want)))
        assert np.max(np.abs(got - want) / denom) <= 1e-4

    def test_logit_distance_losses(self):
        rng = np.random.default_rng(6)
        g, c = random_layered_cnn(rng)
        x = _safe_input(rng, g, c)
        target = forward(g, c, rng.normal(size=g.input_shape)).logits
        for p in (2.0, np.inf):
            loss = LogitDistance(target_logits=target, p=p)
            got = input_gradient(g, c, x, loss)
            want = fd_gradient(g, c, x, loss)
            denom = np.maximum(1.0, np.maximum(np.abs(got), np.abs(want)))
            assert np.max(np.abs(got - want) / denom) <= 1e-4

    def test_gradient_equal_at_collision_pair(self):
        from nullcollide.collider import kernel_basis_set, null_space_search_dense
        from nullcollide.toys import random_dense_net

        rng = np.random.default_rng(7)
        g, c = random_dense_net(rng, q=12, p=5)
        basis = kernel_basis_set(g.layers[0], c)
        x = rng.normal(size=12)
        x_hat = null_space_search_dense(x, basis, 0, 2.0)
        ga = input_gradient(g, c, x, CrossEntropy(target=0))
        gb = input_gradient(g, c, x_hat, CrossEntropy(target=0))
        assert np.max(np.abs(ga - gb)) <= 1e-8
