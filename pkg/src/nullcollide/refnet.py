"""Minimal deterministic inference engine with traces and input gradients.

Forward passes run layer by layer in a fixed order with no parallel
reductions, so two runs on the same platform are bit-identical; in "f32"
mode every layer computes and stores in single precision, which is what the
precision-contrast measurements compare against.  Convolution is evaluated
as unfold + matrix product against the same (c_in, kh, kw)-ordered analysis
matrix the null-space code uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import WeightContainer
from .errors import NonFiniteActivationError, ShapeError, UnsupportedLayerError
from .graph import LayerSpec, ModelGraph, as_analysis_matrix, validate_weights

GELU_C = 0.7978845608  # sqrt(2/pi), tanh-approximation constant
GELU_A = 0.044715

_PRECISIONS = {"f32": np.float32, "f64": np.float64}


@dataclass
class ForwardTrace:
    """Per-layer outputs f^(1)(x) ... f^(t)(x) and the final logits."""

    outputs: list[np.ndarray]
    precision: str

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1].ravel()


def _unfold(x: np.ndarray, layer: LayerSpec) -> tuple[np.ndarray, int, int]:
    """Patch matrix V (rows: output pixels row-major; cols: c_in, kh, kw)."""
    c, h, w = x.shape
    kh, kw = layer.kh, layer.kw
    sh, sw = layer.stride
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]  # (c, oh, ow, kh, kw)
    v = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)
    return np.ascontiguousarray(v), oh, ow


def _pad(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    ph, pw = layer.padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def _activation(z: np.ndarray, fn: str) -> np.ndarray:
    if fn == "relu":
        return np.maximum(z, 0)
    if fn == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if fn == "tanh":
        return np.tanh(z)
    if fn == "gelu":
        dt = z.dtype.type
        inner = np.tanh(dt(GELU_C) * (z + dt(GELU_A) * z**3))
        return dt(0.5) * z * (dt(1.0) + inner)
    raise UnsupportedLayerError(f"unknown activation {fn!r}")


def _pool_windows(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """(c, oh, ow, kh*kw) view of pooling windows."""
    win = np.lib.stride_tricks.sliding_window_view(x, (layer.kh, layer.kw), axis=(1, 2))
    win = win[:, :: layer.stride[0], :: layer.stride[1]]
    return win.reshape(*win.shape[:3], -1)


def _layer_forward(
    layer: LayerSpec, x: np.ndarray, container: WeightContainer, dtype
) -> np.ndarray:
    if layer.kind == "dense":
        a = as_analysis_matrix(layer, container).astype(dtype)
        z = x @ a
        if layer.bias is not None:
            z = z + container.array(layer.bias).astype(dtype)
        return z
    if layer.kind == "conv2d":
        a = as_analysis_matrix(layer, container).astype(dtype)
        v, oh, ow = _unfold(_pad(x, layer), layer)
        z = v @ a  # (oh*ow, c_out)
        if layer.bias is not None:
            z = z + container.array(layer.bias).astype(dtype)
        return np.ascontiguousarray(z.reshape(oh, ow, layer.c_out).transpose(2, 0, 1))
    if layer.kind == "activation":
        return _activation(x, layer.fn)
    if layer.kind == "maxpool2d":
        return _pool_windows(x, layer).max(axis=-1)
    if layer.kind == "avgpool2d":
        win = _pool_windows(x, layer)
        return win.sum(axis=-1) / dtype(layer.kh * layer.kw)
    if layer.kind == "flatten":
        return x.reshape(-1)
    raise UnsupportedLayerError(f"unknown layer kind {layer.kind!r}")


def forward(
    graph: ModelGraph,
    container: WeightContainer,
    x: np.ndarray,
    precision: str = "f64",
) -> ForwardTrace:
    """Run the composed layers on one input and keep every intermediate."""
    if precision not in _PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}")
    dtype = _PRECISIONS[precision]
    validate_weights(graph, container)
    x = np.asarray(x)
    if tuple(x.shape) != graph.input_shape:
        raise ShapeError(f"input has shape {x.shape}, model expects {graph.input_shape}")
    out = x.astype(dtype)
    outputs: list[np.ndarray] = []
    for i, layer in enumerate(graph.layers):
        out = _layer_forward(layer, out, container, dtype)
        if not np.all(np.isfinite(out)):
            raise NonFiniteActivationError(
                f"layer {i} ({layer.kind}) produced non-finite values"
            )
        outputs.append(out)
    return ForwardTrace(outputs=outputs, precision=precision)


def predict(trace: ForwardTrace) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    logits = trace.logits
    if logits.size == 0:
        raise ValueError("empty logits")
    return int(np.argmax(logits))


@dataclass(frozen=True)
class CrossEntropy:
    """Softmax cross-entropy against a target class index."""

    target: int

    def value_and_grad(self, logits: np.ndarray) -> tuple[float, np.ndarray]:
        z = logits - logits.max()
        e = np.exp(z)
        p = e / e.sum()
        grad = p.copy()
        grad[self.target] -= 1.0
        return float(-np.log(p[self.target])), grad


@dataclass(frozen=True)
class LogitDistance:
    """l_p distance between the logits and a fixed target logit vector.

    p=2 is the Euclidean norm; p=inf is smoothed by log-sum-exp with the
    given temperature so its gradient is defined everywhere.
    """

    target_logits: np.ndarray
    p: float = 2.0
    temperature: float = 100.0

    def value_and_grad(self, logits: np.ndarray) -> tuple[float, np.ndarray]:
        d = logits - np.asarray(self.target_logits, dtype=np.float64).ravel()
        if self.p == 2.0:
            norm = float(np.sqrt(np.sum(d * d)))
            if norm == 0.0:
                return 0.0, np.zeros_like(d)
            return norm, d / norm
        if np.isinf(self.p):
            a = np.abs(d) * self.temperature
            m = a.max()
            e = np.exp(a - m)
            value = (m + np.log(e.sum())) / self.temperature
            w = e / e.sum()
            return float(value), w * np.sign(d)
        raise ValueError(f"p must be 2 or inf, got {self.p}")


def _fold(dv: np.ndarray, layer: LayerSpec, padded_shape: tuple[int, int, int]) -> np.ndarray:
    """Scatter-add patch gradients back into the (padded) input."""
    c, h, w = padded_shape
    kh, kw = layer.kh, layer.kw
    sh, sw = layer.stride
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    dx = np.zeros(padded_shape, dtype=np.float64)
    dv = dv.reshape(oh, ow, c, kh, kw)
    for i in range(oh):
        for j in range(ow):
            dx[:, i * sh : i * sh + kh, j * sw : j * sw + kw] += dv[i, j]
    return dx


def _activation_backward(layer: LayerSpec, x_in, x_out, g):
    if layer.fn == "relu":
        return g * (x_in > 0)  # subgradient 0 at the kink
    if layer.fn == "sigmoid":
        return g * x_out * (1.0 - x_out)
    if layer.fn == "tanh":
        return g * (1.0 - x_out * x_out)
    if layer.fn == "gelu":
        inner = np.tanh(GELU_C * (x_in + GELU_A * x_in**3))
        dinner = (1.0 - inner * inner) * GELU_C * (1.0 + 3.0 * GELU_A * x_in * x_in)
        return g * (0.5 * (1.0 + inner) + 0.5 * x_in * dinner)
    raise UnsupportedLayerError(f"unknown activation {layer.fn!r}")


def _layer_backward(
    layer: LayerSpec,
    x_in: np.ndarray,
    x_out: np.ndarray,
    g: np.ndarray,
    container: WeightContainer,
) -> np.ndarray:
    if layer.kind == "dense":
        a = as_analysis_matrix(layer, container)
        return g @ a.T
    if layer.kind == "conv2d":
        a = as_analysis_matrix(layer, container)
        gm = g.transpose(1, 2, 0).reshape(-1, layer.c_out)  # (oh*ow, c_out)
        dv = gm @ a.T
        ph, pw = layer.padding
        c, h, w = x_in.shape
        dx = _fold(dv, layer, (c, h + 2 * ph, w + 2 * pw))
        if ph or pw:
            dx = dx[:, ph : ph + h, pw : pw + w]
        return dx
    if layer.kind == "activation":
        return _activation_backward(layer, x_in, x_out, g)
    if layer.kind == "maxpool2d":
        win = _pool_windows(x_in, layer)  # (c, oh, ow, kh*kw)
        first_max = np.argmax(win, axis=-1)  # first maximum gets the gradient
        dx = np.zeros_like(x_in, dtype=np.float64)
        c, oh, ow, _ = win.shape
        sh, sw = layer.stride
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    k = first_max[ch, i, j]
                    dx[ch, i * sh + k // layer.kw, j * sw + k % layer.kw] += g[ch, i, j]
        return dx
    if layer.kind == "avgpool2d":
        dx = np.zeros_like(x_in, dtype=np.float64)
        c, oh, ow = x_out.shape
        sh, sw = layer.stride
        scale = 1.0 / (layer.kh * layer.kw)
        for i in range(oh):
            for j in range(ow):
                dx[:, i * sh : i * sh + layer.kh, j * sw : j * sw + layer.kw] += (
                    g[:, i : i + 1, j : j + 1] * scale
                )
        return dx
    if layer.kind == "flatten":
        return g.reshape(x_in.shape)
    raise UnsupportedLayerError(f"no backward for layer kind {layer.kind!r}")


def input_gradient(
    graph: ModelGraph,
    container: WeightContainer,
    x: np.ndarray,
    loss,
) -> np.ndarray:
    """Exact reverse-mode gradient of loss(logits) with respect to the input.

    `loss` is any object with value_and_grad(logits) -> (value, dloss/dlogits),
    e.g. CrossEntropy or LogitDistance.  Runs in float64.
    """
    trace = forward(graph, container, x, precision="f64")
    _, dlogits = loss.value_and_grad(trace.logits)
    g = np.asarray(dlogits, dtype=np.float64).reshape(trace.outputs[-1].shape)
    for i in range(len(graph.layers) - 1, -1, -1):
        x_in = trace.outputs[i - 1] if i > 0 else np.asarray(x, dtype=np.float64)
        g = _layer_backward(graph.layers[i], x_in, trace.outputs[i], g, container)
    return g
