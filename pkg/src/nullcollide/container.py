"""Weight containers in the safetensors byte layout, plus NPY/PGM helpers.

Layout: 8-byte little-endian header length N, then N bytes of JSON mapping
tensor name -> {"dtype", "shape", "data_offsets": [begin, end]} (offsets
relative to the byte buffer that follows the header), then the packed
little-endian payload.  The optional "__metadata__" key holds str->str
pairs.  Only F32 and F64 tensors are accepted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateNameError,
    MalformedHeaderError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)

_DTYPES = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype("float32"): "F32", np.dtype("float64"): "F64"}


@dataclass
class WeightContainer:
    """Named tensors in their stored dtype (float32 or float64, C-order)."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.entries:
            raise DuplicateNameError(f"tensor {name!r} already in container")
        arr = np.ascontiguousarray(array)
        if arr.dtype not in _DTYPE_NAMES:
            raise UnsupportedDtypeError(
                f"tensor {name!r} has dtype {arr.dtype}; only float32/float64 supported"
            )
        self.entries[name] = arr

    def array(self, name: str) -> np.ndarray:
        """Tensor in its stored dtype."""
        return self.entries[name]

    def as_f64(self, name: str) -> np.ndarray:
        """Tensor up-converted to float64 for analysis."""
        return np.asarray(self.entries[name], dtype=np.float64)

    def names(self) -> list[str]:
        return list(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries


def _parse_header(blob: bytes, path: str) -> tuple[dict, int]:
    if len(blob) < 8:
        raise MalformedHeaderError(f"{path}: file shorter than 8-byte header length")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if 8 + header_len > len(blob):
        raise MalformedHeaderError(
            f"{path}: declared header length {header_len} exceeds file size"
        )
    raw = blob[8 : 8 + header_len]

    def reject_duplicates(pairs):
        seen: dict = {}
        for key, value in pairs:
            if key in seen:
                raise DuplicateNameError(f"{path}: duplicate tensor name {key!r}")
            seen[key] = value
        return seen

    try:
        header = json.loads(raw.decode("utf-8"), object_pairs_hook=reject_duplicates)
    except DuplicateNameError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError(f"{path}: header JSON must be an object")
    return header, 8 + header_len


def load_container(path: str) -> WeightContainer:
    """Parse a container file; errors are specific to the defect found."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload_start = _parse_header(blob, str(path))
    payload = blob[payload_start:]

    container = WeightContainer()
    for name, info in header.items():
        if name == "__metadata__":
            if not isinstance(info, dict):
                raise MalformedHeaderError(f"{path}: __metadata__ must be an object")
            container.metadata = {str(k): str(v) for k, v in info.items()}
            continue
        if not isinstance(info, dict) or set(info) != {"dtype", "shape", "data_offsets"}:
            raise MalformedHeaderError(
                f"{path}: tensor {name!r} entry must have dtype/shape/data_offsets"
            )
        dtype_name = info["dtype"]
        if dtype_name not in _DTYPES:
            raise UnsupportedDtypeError(
                f"{path}: tensor {name!r} has unsupported dtype {dtype_name!r}"
            )
        dtype = _DTYPES[dtype_name]
        shape = info["shape"]
        if not isinstance(shape, list) or not all(
            isinstance(d, int) and d >= 0 for d in shape
        ):
            raise MalformedHeaderError(f"{path}: tensor {name!r} has invalid shape {shape!r}")
        begin, end = info["data_offsets"]
        if not (isinstance(begin, int) and isinstance(end, int) and 0 <= begin <= end):
            raise MalformedHeaderError(
                f"{path}: tensor {name!r} has invalid data_offsets {info['data_offsets']!r}"
            )
        if end > len(payload):
            raise TruncatedPayloadError(
                f"{path}: tensor {name!r} offsets [{begin}, {end}) exceed payload "
                f"of {len(payload)} bytes"
            )
        n_elem = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if end - begin != n_elem * dtype.itemsize:
            raise MalformedHeaderError(
                f"{path}: tensor {name!r} byte span {end - begin} does not match "
                f"shape {shape} x {dtype_name}"
            )
        arr = np.frombuffer(payload[begin:end], dtype=dtype).reshape(shape).copy()
        container.entries[name] = arr
    return container


def save_container(container: WeightContainer, path: str) -> None:
    """Write tensors plus metadata; load(save(c)) is byte-exact on payloads."""
    header: dict = {}
    if container.metadata:
        header["__metadata__"] = dict(container.metadata)
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(container.entries):
        arr = np.ascontiguousarray(container.entries[name])
        if arr.dtype not in _DTYPE_NAMES:
            raise UnsupportedDtypeError(
                f"tensor {name!r} has dtype {arr.dtype}; only float32/float64 supported"
            )
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        header[name] = {
            "dtype": _DTYPE_NAMES[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(data)],
        }
        chunks.append(data)
        offset += len(data)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for chunk in chunks:
            fh.write(chunk)


def load_tensor(path: str) -> np.ndarray:
    """Read one NPY tensor (f32 or f64, C-order)."""
    arr = np.load(path, allow_pickle=False)
    if arr.dtype not in _DTYPE_NAMES:
        raise UnsupportedDtypeError(f"{path}: NPY dtype {arr.dtype} not supported")
    return np.ascontiguousarray(arr)


def save_tensor(path: str, array: np.ndarray) -> None:
    """Write one NPY (version 1.0 for these dtypes/shapes) tensor."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_NAMES:
        raise UnsupportedDtypeError(f"{path}: NPY dtype {arr.dtype} not supported")
    np.save(path, arr, allow_pickle=False)


def write_pgm(path: str, image: np.ndarray) -> dict:
    """Dump a 2-D (or channel-first 3-D, averaged) array as 8-bit binary PGM.

    The array is min-max normalized to [0, 255]; the normalization applied
    is returned so callers can record it alongside the preview.
    """
    arr = np.asarray(image, dtype=np.float64)
    reduced = "none"
    if arr.ndim == 3:
        arr = arr.mean(axis=0)
        reduced = "channel_mean"
    if arr.ndim != 2:
        raise ValueError(f"PGM preview needs a 2-D or 3-D array, got shape {image.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        scaled = (arr - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(arr)
    pixels = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return {"min": lo, "max": hi, "channel_reduction": reduced}
