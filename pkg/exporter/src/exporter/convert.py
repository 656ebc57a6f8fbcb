"""Convert torch checkpoints into the analyzer's container + graph files.

Sequential CNN/MLP architectures (Conv2d, Linear, ReLU/Sigmoid/Tanh/GELU,
MaxPool2d, AvgPool2d, Flatten, with Dropout and shape-preserving adaptive
pools skipped) are exported with a runnable graph JSON.  Anything else
falls back to a weights-only export; every parameter tensor is either in
the container or listed as unsupported in the manifest, never dropped
silently.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np
import torch
from safetensors.numpy import save_file

_FLOAT_CAST = {torch.float16: "f16->f32", torch.bfloat16: "bf16->f32"}
_ACTIVATIONS = {
    torch.nn.ReLU: "relu",
    torch.nn.Sigmoid: "sigmoid",
    torch.nn.Tanh: "tanh",
    torch.nn.GELU: "gelu",
}


def _leaf_modules(model: torch.nn.Module):
    """Execution-ordered leaves for container-style (Sequential) models."""
    for child in model.children():
        if isinstance(child, torch.nn.Sequential):
            yield from _leaf_modules(child)
        else:
            yield child


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def _tensor_to_numpy(t: torch.Tensor) -> tuple[np.ndarray | None, str | None]:
    """Return (array, note) for float tensors, (None, reason) otherwise."""
    if t.dtype in (torch.float32, torch.float64):
        return t.detach().cpu().numpy(), None
    if t.dtype in _FLOAT_CAST:
        return t.detach().cpu().to(torch.float32).numpy(), _FLOAT_CAST[t.dtype]
    return None, f"dtype {t.dtype}"


def build_graph_layers(model: torch.nn.Module, input_shape: tuple[int, ...]):
    """Map sequential leaves onto graph-JSON layers, tracking shapes.

    Returns (layers, tensor_map) or None when a module has no equivalent.
    """
    layers: list[dict] = []
    tensors: dict[str, torch.Tensor] = {}
    shape = tuple(input_shape)
    named = {id(m): n for n, m in model.named_modules()}

    for mod in _leaf_modules(model):
        name = named.get(id(mod), mod.__class__.__name__)
        if isinstance(mod, torch.nn.Conv2d):
            if (
                len(shape) != 3
                or mod.dilation != (1, 1)
                or mod.groups != 1
                or mod.padding_mode != "zeros"
                or isinstance(mod.padding, str)
            ):
                return None
            kh, kw = _pair(mod.kernel_size)
            sh, sw = _pair(mod.stride)
            ph, pw = _pair(mod.padding)
            entry = {
                "kind": "conv2d", "c_in": mod.in_channels, "c_out": mod.out_channels,
                "kh": kh, "kw": kw, "stride": [sh, sw], "padding": [ph, pw],
                "weight": f"{name}.weight",
            }
            tensors[f"{name}.weight"] = mod.weight
            if mod.bias is not None:
                entry["bias"] = f"{name}.bias"
                tensors[f"{name}.bias"] = mod.bias
            layers.append(entry)
            c, h, w = shape
            shape = (mod.out_channels, (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)
        elif isinstance(mod, torch.nn.Linear):
            if len(shape) == 3 and int(np.prod(shape)) == mod.in_features:
                # container models often flatten in forward() without a module
                layers.append({"kind": "flatten"})
                shape = (mod.in_features,)
            if len(shape) != 1 or shape[0] != mod.in_features:
                return None
            entry = {
                "kind": "dense", "in": mod.in_features, "out": mod.out_features,
                "weight": f"{name}.weight",
            }
            tensors[f"{name}.weight"] = mod.weight
            if mod.bias is not None:
                entry["bias"] = f"{name}.bias"
                tensors[f"{name}.bias"] = mod.bias
            layers.append(entry)
            shape = (mod.out_features,)
        elif type(mod) in _ACTIVATIONS:
            layers.append({"kind": "activation", "fn": _ACTIVATIONS[type(mod)]})
        elif isinstance(mod, (torch.nn.MaxPool2d, torch.nn.AvgPool2d)):
            if len(shape) != 3:
                return None
            kh, kw = _pair(mod.kernel_size)
            sh, sw = _pair(mod.stride if mod.stride is not None else mod.kernel_size)
            if _pair(mod.padding) != (0, 0):
                return None
            kind = "maxpool2d" if isinstance(mod, torch.nn.MaxPool2d) else "avgpool2d"
            layers.append({"kind": kind, "kh": kh, "kw": kw, "stride": [sh, sw]})
            c, h, w = shape
            shape = (c, (h - kh) // sh + 1, (w - kw) // sw + 1)
        elif isinstance(mod, torch.nn.AdaptiveAvgPool2d):
            if len(shape) != 3 or _pair(mod.output_size) != shape[1:]:
                return None  # only the shape-preserving (identity) case maps
        elif isinstance(mod, torch.nn.Flatten):
            shape = (int(np.prod(shape)),)
            layers.append({"kind": "flatten"})
        elif isinstance(mod, (torch.nn.Dropout, torch.nn.Identity)):
            continue  # identity at inference
        else:
            return None
    return layers, tensors, shape


def _load_checkpoint(spec: str) -> tuple[torch.nn.Module | dict, str]:
    if spec.startswith("torchvision:"):
        from torchvision import models

        name = spec.split(":", 1)[1]
        model = models.get_model(name, weights="DEFAULT")
        model.eval()
        return model, spec
    obj = torch.load(spec, map_location="cpu", weights_only=False)
    if isinstance(obj, torch.nn.Module):
        obj.eval()
    return obj, spec


def export_weights(
    checkpoint: str,
    out_container: str,
    out_graph: str,
    input_shape: tuple[int, ...] = (3, 224, 224),
    model_name: str | None = None,
) -> dict:
    """Export a checkpoint; returns the manifest (also written alongside)."""
    obj, source = _load_checkpoint(checkpoint)
    if isinstance(obj, torch.nn.Module):
        state = obj.state_dict()
    elif isinstance(obj, dict) and all(isinstance(v, torch.Tensor) for v in obj.values()):
        state = obj
    else:
        raise ValueError(f"{checkpoint}: not a torch module or state dict")
    if not state:
        raise ValueError(f"{checkpoint}: checkpoint has no tensors; nothing to export")

    arrays: dict[str, np.ndarray] = {}
    mapping: dict[str, dict] = {}
    unsupported: list[dict] = []
    for tname, tensor in state.items():
        arr, note = _tensor_to_numpy(tensor)
        if arr is None:
            unsupported.append({"name": tname, "reason": note})
            continue
        arrays[tname] = np.ascontiguousarray(arr)
        mapping[tname] = {
            "container_name": tname,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "note": note,
        }

    graph_obj = None
    if isinstance(obj, torch.nn.Module):
        built = build_graph_layers(obj, input_shape)
        if built is not None:
            layers, _, _ = built
            graph_obj = {
                "name": model_name or source.replace(":", "-"),
                "input_shape": list(input_shape),
                "layers": layers,
            }

    # single metadata key keeps the byte layout reproducible (safetensors
    # serializes multi-key metadata in unstable order)
    metadata = {"source": f"{source} (nullcollide-exporter, torch {torch.__version__})"}
    save_file(arrays, out_container, metadata=metadata)
    if graph_obj is not None:
        with open(out_graph, "w") as fh:
            json.dump(graph_obj, fh, indent=2)
            fh.write("\n")

    manifest = {
        "source": source,
        "torch_version": torch.__version__,
        "dtype_policy": "float kept as stored; f16/bf16 upcast to f32; others unsupported",
        "container": out_container,
        "container_sha256": hashlib.sha256(open(out_container, "rb").read()).hexdigest(),
        "graph": out_graph if graph_obj is not None else None,
        "tensors": mapping,
        "unsupported": unsupported,
    }
    with open(out_container + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Export a torch checkpoint to a weight container (+ graph JSON when runnable)."
    )
    parser.add_argument("--checkpoint", required=True, help="path to .pt, or torchvision:<name>")
    parser.add_argument("--out-container", required=True)
    parser.add_argument("--out-graph", required=True)
    parser.add_argument("--input-shape", default="3,224,224", help="c,h,w (or flat n) for graph export")
    parser.add_argument("--name", help="model name recorded in the graph")
    args = parser.parse_args(argv)
    shape = tuple(int(v) for v in args.input_shape.split(","))
    try:
        manifest = export_weights(args.checkpoint, args.out_container, args.out_graph, shape, args.name)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    runnable = "with graph" if manifest["graph"] else "weights-only"
    print(
        f"exported {len(manifest['tensors'])} tensors ({runnable}); "
        f"{len(manifest['unsupported'])} unsupported"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
