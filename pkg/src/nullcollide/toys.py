"""Small deterministic models for tests, demos, and committed fixtures.

The hand-built MLP has integer weights whose ranks are exact by
construction (each weight embeds an identity block), so its nullity
metrics are known without any numerics.  The random builders draw
fan-in-scaled Gaussian weights, keeping activations O(1) so float32 and
float64 residuals sit at their natural scales.
"""

from __future__ import annotations

import numpy as np

from .container import WeightContainer
from .graph import LayerSpec, ModelGraph, build_graph


def container_from_arrays(arrays: dict[str, np.ndarray]) -> WeightContainer:
    c = WeightContainer()
    for name, arr in arrays.items():
        c.add(name, np.asarray(arr, dtype=np.float64))
    return c


def build_toy_mlp() -> tuple[ModelGraph, WeightContainer]:
    """dense 10->4, relu, dense 4->4 (full rank), dense 4->2.

    Exact metrics: layer nullities 6, 0, 2; so 2 of 3 weights have a
    non-trivial kernel, 2 of 3 have fan-out < fan-in, total nullity 8,
    first-layer nullity 6.
    """
    w1 = np.hstack([np.eye(4), np.arange(1.0, 25.0).reshape(4, 6)])  # (4, 10), rank 4
    b1 = np.array([0.5, -0.25, 0.0, 1.0])
    w2 = np.array(  # upper triangular, nonzero diagonal: rank 4
        [
            [1.0, 2.0, 0.0, 1.0],
            [0.0, 1.0, 3.0, 0.0],
            [0.0, 0.0, 2.0, 1.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    w3 = np.hstack([np.eye(2), np.array([[1.0, 3.0], [2.0, 1.0]])])  # (2, 4), rank 2
    container = container_from_arrays({"fc1.weight": w1, "fc1.bias": b1, "fc2.weight": w2, "fc3.weight": w3})
    graph = build_graph(
        "toy-mlp",
        [10],
        [
            LayerSpec("dense", in_dim=10, out_dim=4, weight="fc1.weight", bias="fc1.bias"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("dense", in_dim=4, out_dim=4, weight="fc2.weight"),
            LayerSpec("dense", in_dim=4, out_dim=2, weight="fc3.weight"),
        ],
    )
    return graph, container


def random_dense_net(
    rng: np.random.Generator,
    q: int | None = None,
    p: int | None = None,
    n_classes: int | None = None,
) -> tuple[ModelGraph, WeightContainer]:
    """dense q->p (q > p, so nullity q-p), relu, dense p->classes."""
    if q is None:
        q = int(rng.integers(6, 25))
    if p is None:
        p = int(rng.integers(2, q))
    if n_classes is None:
        n_classes = int(rng.integers(2, 6))
    w1 = rng.normal(0.0, 1.0 / np.sqrt(q), size=(p, q))
    b1 = rng.normal(0.0, 0.1, size=p)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(p), size=(n_classes, p))
    b2 = rng.normal(0.0, 0.1, size=n_classes)
    container = container_from_arrays({"fc1.weight": w1, "fc1.bias": b1, "fc2.weight": w2, "fc2.bias": b2})
    graph = build_graph(
        f"dense-{q}x{p}",
        [q],
        [
            LayerSpec("dense", in_dim=q, out_dim=p, weight="fc1.weight", bias="fc1.bias"),
            LayerSpec("activation", fn="relu"),
            LayerSpec("dense", in_dim=p, out_dim=n_classes, weight="fc2.weight", bias="fc2.bias"),
        ],
    )
    return graph, container


def random_patchify_cnn(
    rng: np.random.Generator,
    c_in: int | None = None,
    k: int | None = None,
    grid: int | None = None,
    c_out: int | None = None,
    n_classes: int | None = None,
) -> tuple[ModelGraph, WeightContainer]:
    """conv kxk stride k (fan-out < patch size, so nullity >= 1), relu,
    flatten, dense head."""
    if c_in is None:
        c_in = int(rng.integers(1, 3))
    if k is None:
        k = int(rng.integers(2, 4))
    if grid is None:
        grid = int(rng.integers(2, 4))
    patch = c_in * k * k
    if c_out is None:
        c_out = int(rng.integers(1, patch))
    if n_classes is None:
        n_classes = int(rng.integers(2, 6))
    size = k * grid
    feat = c_out * grid * grid
    w1 = rng.normal(0.0, 1.0 / np.sqrt(patch), size=(c_out, c_in, k, k))
    b1 = rng.normal(0.0, 0.1, size=c_out)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(feat), size=(n_classes, feat))
    b2 = rng.normal(0.0, 0.1, size=n_classes)
    container = container_from_arrays({"conv.weight": w1, "conv.bias": b1, "head.weight": w2, "head.bias": b2})
    graph = build_graph(
        f"patchify-{c_in}x{size}x{size}-k{k}",
        [c_in, size, size],
        [
            LayerSpec(
                "conv2d", c_in=c_in, c_out=c_out, kh=k, kw=k, stride=(k, k),
                padding=(0, 0), weight="conv.weight", bias="conv.bias",
            ),
            LayerSpec("activation", fn="relu"),
            LayerSpec("flatten"),
            LayerSpec("dense", in_dim=feat, out_dim=n_classes, weight="head.weight", bias="head.bias"),
        ],
    )
    return graph, container


def random_layered_cnn(rng: np.random.Generator) -> tuple[ModelGraph, WeightContainer]:
    """Random small CNN touching every layer kind; used for gradient checks."""
    c_in = int(rng.integers(1, 3))
    size = int(rng.integers(6, 9))
    c_mid = int(rng.integers(2, 5))
    k = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    fn1 = str(rng.choice(["relu", "sigmoid", "tanh", "gelu"]))
    fn2 = str(rng.choice(["relu", "sigmoid", "tanh", "gelu"]))
    pool_kind = str(rng.choice(["maxpool2d", "avgpool2d"]))
    n_classes = int(rng.integers(2, 5))

    layers = [
        LayerSpec(
            "conv2d", c_in=c_in, c_out=c_mid, kh=k, kw=k, stride=(stride, stride),
            padding=(pad, pad), weight="conv.weight", bias="conv.bias",
        ),
        LayerSpec("activation", fn=fn1),
    ]
    oh = (size + 2 * pad - k) // stride + 1
    if oh >= 2:
        layers.append(LayerSpec(pool_kind, kh=2, kw=2, stride=(2, 2)))
        oh = (oh - 2) // 2 + 1
    layers.append(LayerSpec("flatten"))
    feat = c_mid * oh * oh
    hidden = int(rng.integers(3, 8))
    layers.extend(
        [
            LayerSpec("dense", in_dim=feat, out_dim=hidden, weight="fc1.weight", bias="fc1.bias"),
            LayerSpec("activation", fn=fn2),
            LayerSpec("dense", in_dim=hidden, out_dim=n_classes, weight="fc2.weight"),
        ]
    )
    arrays = {
        "conv.weight": rng.normal(0.0, 1.0 / np.sqrt(c_in * k * k), size=(c_mid, c_in, k, k)),
        "conv.bias": rng.normal(0.0, 0.1, size=c_mid),
        "fc1.weight": rng.normal(0.0, 1.0 / np.sqrt(feat), size=(hidden, feat)),
        "fc1.bias": rng.normal(0.0, 0.1, size=hidden),
        "fc2.weight": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(n_classes, hidden)),
    }
    graph = build_graph("random-cnn", [c_in, size, size], layers)
    return graph, container_from_arrays(arrays)
