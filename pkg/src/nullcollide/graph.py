"""Model-graph schema: JSON parsing, shape inference, analysis orientation.

A graph is an ordered list of layers applied to a single input tensor.
Containers store dense weights as (out, in) and conv kernels as
(c_out, c_in, kh, kw); `as_analysis_matrix` reorients both into the q x p
form (fan-in rows, fan-out columns) used by the null-space analysis, with
conv kernels flattened in (c_in, kh, kw) row-major order.  The inference
engine unfolds its patches in the same order, which is what makes basis
vectors from one side exact for the other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .container import WeightContainer
from .errors import GraphSchemaError, ShapeError, UnsupportedLayerError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "gelu")
TRAINABLE_KINDS = ("dense", "conv2d")
LAYER_KINDS = ("dense", "conv2d", "activation", "maxpool2d", "avgpool2d", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int | None = None  # dense
    out_dim: int | None = None  # dense
    c_in: int | None = None  # conv2d
    c_out: int | None = None  # conv2d
    kh: int | None = None  # conv2d / pools
    kw: int | None = None
    stride: tuple[int, int] | None = None
    padding: tuple[int, int] | None = None  # conv2d only
    weight: str | None = None
    bias: str | None = None
    fn: str | None = None  # activation

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE_KINDS

    @property
    def label(self) -> str:
        if self.weight is not None:
            return self.weight
        return self.kind


@dataclass(frozen=True)
class ModelGraph:
    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    #: per-layer output shapes, filled in by shape inference
    layer_shapes: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.layer_shapes[-1] if self.layer_shapes else self.input_shape

    def trainable_layers(self) -> list[tuple[int, LayerSpec]]:
        return [(i, l) for i, l in enumerate(self.layers) if l.trainable]

    def first_trainable(self) -> tuple[int, LayerSpec]:
        for i, layer in enumerate(self.layers):
            if layer.trainable:
                return i, layer
        raise UnsupportedLayerError(f"model {self.name!r} has no trainable layers")


def _int_pair(value, where: str) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    if (
        isinstance(value, (list, tuple))
        and len(value) == 2
        and all(isinstance(v, int) for v in value)
    ):
        return (value[0], value[1])
    raise GraphSchemaError(f"{where}: expected int or [int, int], got {value!r}")


_LAYER_FIELDS = {
    "dense": {"kind", "in", "out", "weight", "bias"},
    "conv2d": {"kind", "c_in", "c_out", "kh", "kw", "stride", "padding", "weight", "bias"},
    "activation": {"kind", "fn"},
    "maxpool2d": {"kind", "kh", "kw", "stride"},
    "avgpool2d": {"kind", "kh", "kw", "stride"},
    "flatten": {"kind"},
}
_OPTIONAL_FIELDS = {"dense": {"bias"}, "conv2d": {"bias", "padding", "stride"}}


def _parse_layer(obj: dict, index: int) -> LayerSpec:
    where = f"layer {index}"
    if not isinstance(obj, dict):
        raise GraphSchemaError(f"{where}: expected an object")
    kind = obj.get("kind")
    if kind not in _LAYER_FIELDS:
        raise GraphSchemaError(f"{where}: unknown kind {kind!r}")
    allowed = _LAYER_FIELDS[kind]
    unknown = set(obj) - allowed
    if unknown:
        raise GraphSchemaError(f"{where} ({kind}): unknown keys {sorted(unknown)}")
    required = allowed - _OPTIONAL_FIELDS.get(kind, set())
    missing = required - set(obj)
    if missing:
        raise GraphSchemaError(f"{where} ({kind}): missing keys {sorted(missing)}")

    if kind == "dense":
        in_dim, out_dim = obj["in"], obj["out"]
        if not (isinstance(in_dim, int) and in_dim >= 1 and isinstance(out_dim, int) and out_dim >= 1):
            raise GraphSchemaError(f"{where}: in/out must be positive ints")
        return LayerSpec(kind, in_dim=in_dim, out_dim=out_dim, weight=obj["weight"], bias=obj.get("bias"))
    if kind == "conv2d":
        c_in, c_out, kh, kw = obj["c_in"], obj["c_out"], obj["kh"], obj["kw"]
        for key, val in (("c_in", c_in), ("c_out", c_out), ("kh", kh), ("kw", kw)):
            if not (isinstance(val, int) and val >= 1):
                raise GraphSchemaError(f"{where}: {key} must be a positive int")
        stride = _int_pair(obj.get("stride", 1), where)
        padding = _int_pair(obj.get("padding", 0), where)
        if min(stride) < 1:
            raise GraphSchemaError(f"{where}: stride must be >= 1")
        if min(padding) < 0:
            raise GraphSchemaError(f"{where}: padding must be >= 0")
        return LayerSpec(
            kind, c_in=c_in, c_out=c_out, kh=kh, kw=kw, stride=stride,
            padding=padding, weight=obj["weight"], bias=obj.get("bias"),
        )
    if kind == "activation":
        fn = obj["fn"]
        if fn not in ACTIVATIONS:
            raise GraphSchemaError(f"{where}: unknown activation {fn!r}")
        return LayerSpec(kind, fn=fn)
    if kind == "flatten":
        return LayerSpec(kind)
    # pools
    kh, kw = obj["kh"], obj["kw"]
    if not (isinstance(kh, int) and kh >= 1 and isinstance(kw, int) and kw >= 1):
        raise GraphSchemaError(f"{where}: kh/kw must be positive ints")
    stride = _int_pair(obj["stride"], where)
    if min(stride) < 1:
        raise GraphSchemaError(f"{where}: stride must be >= 1")
    return LayerSpec(kind, kh=kh, kw=kw, stride=stride)


def infer_shapes(
    input_shape: tuple[int, ...], layers: tuple[LayerSpec, ...]
) -> tuple[tuple[int, ...], ...]:
    """Propagate the input shape through every layer, or raise ShapeError."""
    shape = tuple(input_shape)
    shapes: list[tuple[int, ...]] = []
    for i, layer in enumerate(layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"{where}: needs a flat input, got {shape}")
            if shape[0] != layer.in_dim:
                raise ShapeError(f"{where}: expects {layer.in_dim} features, got {shape[0]}")
            shape = (layer.out_dim,)
        elif layer.kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"{where}: needs a (c, h, w) input, got {shape}")
            c, h, w = shape
            if c != layer.c_in:
                raise ShapeError(f"{where}: expects {layer.c_in} channels, got {c}")
            sh, sw = layer.stride
            ph, pw = layer.padding
            oh = (h + 2 * ph - layer.kh) // sh + 1
            ow = (w + 2 * pw - layer.kw) // sw + 1
            if h + 2 * ph < layer.kh or w + 2 * pw < layer.kw:
                raise ShapeError(f"{where}: kernel {layer.kh}x{layer.kw} larger than padded input {shape}")
            shape = (layer.c_out, oh, ow)
        elif layer.kind in ("maxpool2d", "avgpool2d"):
            if len(shape) != 3:
                raise ShapeError(f"{where}: needs a (c, h, w) input, got {shape}")
            c, h, w = shape
            sh, sw = layer.stride
            if h < layer.kh or w < layer.kw:
                raise ShapeError(f"{where}: window {layer.kh}x{layer.kw} larger than input {shape}")
            shape = (c, (h - layer.kh) // sh + 1, (w - layer.kw) // sw + 1)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        else:  # activation
            pass
        shapes.append(shape)
    return tuple(shapes)


def build_graph(name: str, input_shape, layers: list[LayerSpec]) -> ModelGraph:
    """Assemble and shape-check a graph constructed in code."""
    input_shape = tuple(int(d) for d in input_shape)
    if len(input_shape) not in (1, 3) or min(input_shape) < 1:
        raise GraphSchemaError(f"input_shape must be [n] or [c, h, w], got {list(input_shape)}")
    layer_tuple = tuple(layers)
    shapes = infer_shapes(input_shape, layer_tuple)
    return ModelGraph(name=name, input_shape=input_shape, layers=layer_tuple, layer_shapes=shapes)


def load_graph(path: str) -> ModelGraph:
    """Parse and validate a graph JSON file; shapes are inferred eagerly."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphSchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise GraphSchemaError(f"{path}: top level must be an object")
    unknown = set(obj) - {"name", "input_shape", "layers"}
    if unknown:
        raise GraphSchemaError(f"{path}: unknown top-level keys {sorted(unknown)}")
    for key in ("name", "input_shape", "layers"):
        if key not in obj:
            raise GraphSchemaError(f"{path}: missing top-level key {key!r}")
    if not isinstance(obj["name"], str):
        raise GraphSchemaError(f"{path}: name must be a string")
    shape = obj["input_shape"]
    if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 1 for d in shape):
        raise GraphSchemaError(f"{path}: input_shape must be a list of positive ints")
    if not isinstance(obj["layers"], list) or not obj["layers"]:
        raise GraphSchemaError(f"{path}: layers must be a non-empty list")
    layers = [_parse_layer(l, i) for i, l in enumerate(obj["layers"])]
    return build_graph(obj["name"], shape, layers)


def graph_to_dict(graph: ModelGraph) -> dict:
    layers = []
    for layer in graph.layers:
        if layer.kind == "dense":
            entry = {"kind": "dense", "in": layer.in_dim, "out": layer.out_dim, "weight": layer.weight}
            if layer.bias is not None:
                entry["bias"] = layer.bias
        elif layer.kind == "conv2d":
            entry = {
                "kind": "conv2d", "c_in": layer.c_in, "c_out": layer.c_out,
                "kh": layer.kh, "kw": layer.kw, "stride": list(layer.stride),
                "padding": list(layer.padding), "weight": layer.weight,
            }
            if layer.bias is not None:
                entry["bias"] = layer.bias
        elif layer.kind == "activation":
            entry = {"kind": "activation", "fn": layer.fn}
        elif layer.kind == "flatten":
            entry = {"kind": "flatten"}
        else:
            entry = {"kind": layer.kind, "kh": layer.kh, "kw": layer.kw, "stride": list(layer.stride)}
        layers.append(entry)
    return {"name": graph.name, "input_shape": list(graph.input_shape), "layers": layers}


def save_graph(graph: ModelGraph, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(graph), fh, indent=2)
        fh.write("\n")


def validate_weights(graph: ModelGraph, container: WeightContainer) -> None:
    """Check every referenced tensor exists with a consistent shape."""
    for i, layer in enumerate(graph.layers):
        if not layer.trainable:
            continue
        where = f"layer {i} ({layer.kind})"
        if layer.weight not in container:
            raise ShapeError(f"{where}: weight {layer.weight!r} not in container")
        wshape = container.array(layer.weight).shape
        if layer.kind == "dense":
            expect = (layer.out_dim, layer.in_dim)
        else:
            expect = (layer.c_out, layer.c_in, layer.kh, layer.kw)
        if wshape != expect:
            raise ShapeError(f"{where}: weight {layer.weight!r} has shape {wshape}, expected {expect}")
        if layer.bias is not None:
            if layer.bias not in container:
                raise ShapeError(f"{where}: bias {layer.bias!r} not in container")
            bshape = container.array(layer.bias).shape
            expect_b = (layer.out_dim,) if layer.kind == "dense" else (layer.c_out,)
            if bshape != expect_b:
                raise ShapeError(f"{where}: bias {layer.bias!r} has shape {bshape}, expected {expect_b}")


def as_analysis_matrix(layer: LayerSpec, container: WeightContainer) -> np.ndarray:
    """Weight of a trainable layer oriented q x p (fan-in rows, fan-out cols).

    dense: (in, out).  conv2d: (c_in*kh*kw, c_out) with the kernel flattened
    in (c_in, kh, kw) row-major order.
    """
    if layer.kind == "dense":
        w = container.as_f64(layer.weight)  # stored (out, in)
        return np.ascontiguousarray(w.T)
    if layer.kind == "conv2d":
        w = container.as_f64(layer.weight)  # stored (c_out, c_in, kh, kw)
        return np.ascontiguousarray(w.reshape(w.shape[0], -1).T)
    raise UnsupportedLayerError(f"layer kind {layer.kind!r} has no analysis matrix")
