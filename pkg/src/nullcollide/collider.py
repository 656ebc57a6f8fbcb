"""Constructing and verifying colliding inputs.

A layer with a non-trivial left kernel maps x and x + beta*phi to the same
pre-activation, so the whole network output is unchanged up to float
rounding.  Three constructions are supported: adding a basis vector
directly to a flat input, tiling reshaped basis vectors over the patches of
a non-overlapping (patchify) convolution, and taking the kernel of the
fully materialized convolution operator, which is exact for any geometry.
Verification reruns both inputs through the inference engine and accounts
for per-layer residuals at either precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .container import WeightContainer
from .errors import (
    DegenerateWindowError,
    EmptyKernelError,
    NoNegativeElementsError,
    OperatorCapError,
    OverlappingConvError,
    ShapeError,
)
from .graph import LayerSpec, ModelGraph, as_analysis_matrix
from .linalg import DEFAULT_TOL, TolerancePolicy, kernel_basis
from .refnet import _pad, _unfold, forward, predict

PLAN_MODES = ("dense", "tile_single", "tile_multi", "per_patch", "conv_operator")
CLIP_POLICIES = ("none", "clip_and_report", "rescale_beta")

#: Largest materialized convolution operator we will build (rows and cols).
OPERATOR_CAP = 4096


@dataclass(frozen=True)
class KernelBasisSet:
    """Orthonormal basis phi_1..phi_m of a layer's left null space."""

    layer_name: str
    q: int
    vectors: np.ndarray  # (q, m)

    @property
    def size(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class PerturbationPlan:
    """How a colliding perturbation is assembled and range-limited."""

    mode: str = "dense"
    indices: tuple[int, ...] = (0,)
    beta: float = 1.0
    patch_multipliers: tuple[float, ...] | None = None  # per_patch mode only
    clip_policy: str = "none"
    clip_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.mode not in PLAN_MODES:
            raise ValueError(f"unknown plan mode {self.mode!r}")
        if self.clip_policy not in CLIP_POLICIES:
            raise ValueError(f"unknown clip policy {self.clip_policy!r}")
        if not self.indices:
            raise ValueError("plan needs at least one basis index")
        if self.clip_policy != "none":
            if self.clip_range is None or not all(np.isfinite(self.clip_range)):
                raise ValueError(f"clip policy {self.clip_policy!r} needs a finite clip range")
            if self.clip_range[0] >= self.clip_range[1]:
                raise ValueError(f"empty clip range {self.clip_range}")


@dataclass
class AppliedPerturbation:
    """What apply_plan actually did to the input."""

    scale: float  # fraction of the perturbation applied (rescale mode)
    exactness_broken: bool  # clipping moved elements off the kernel direction
    clipped_elements: int


@dataclass
class CollisionReport:
    """Per-layer residual evidence that two inputs collide."""

    layer_names: list[str]
    layer_residuals: list[float]  # max-norm per layer, input order
    logit_residual: float
    logit_residual_l2: float
    argmax_equal: bool
    prediction_a: int
    prediction_b: int
    perturbation_linf: float
    perturbation_l2: float
    precision: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": "collision-report/v1",
            "layer_names": self.layer_names,
            "layer_residuals": self.layer_residuals,
            "logit_residual": self.logit_residual,
            "logit_residual_l2": self.logit_residual_l2,
            "argmax_equal": self.argmax_equal,
            "prediction_a": self.prediction_a,
            "prediction_b": self.prediction_b,
            "perturbation_linf": self.perturbation_linf,
            "perturbation_l2": self.perturbation_l2,
            "precision": self.precision,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def kernel_basis_set(
    layer: LayerSpec,
    container: WeightContainer,
    tol: TolerancePolicy = DEFAULT_TOL,
) -> KernelBasisSet:
    """Left-kernel basis of a trainable layer in analysis orientation."""
    w = as_analysis_matrix(layer, container)
    vectors = kernel_basis(w, tol, label=layer.label)
    return KernelBasisSet(layer_name=layer.label, q=w.shape[0], vectors=vectors)


def null_space_search_dense(
    x: np.ndarray, basis: KernelBasisSet, i: int, beta: float
) -> np.ndarray:
    """x + beta * phi_i for a dense first layer with fan-in q."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != basis.q:
        raise ShapeError(f"input has shape {x.shape}, kernel basis expects ({basis.q},)")
    if not 0 <= i < basis.size:
        raise IndexError(f"basis index {i} out of range for {basis.size} vectors")
    return x + beta * basis.vectors[:, i]


def _patch_grid(image_shape: tuple[int, int, int], conv: LayerSpec) -> tuple[int, int]:
    c, h, w = image_shape
    return h // conv.kh, w // conv.kw


def build_patch_perturbation(
    basis: KernelBasisSet,
    image_shape: tuple[int, int, int],
    conv: LayerSpec,
    plan: PerturbationPlan,
) -> np.ndarray:
    """Tile reshaped kernel vectors over the whole patches of a patchify conv.

    Exactness holds only when stride equals the kernel size with no padding
    (patches do not overlap); otherwise OverlappingConvError points the
    caller at the conv-operator mode.  Image regions not covered by a whole
    patch are left at zero.
    """
    if conv.kind != "conv2d":
        raise OverlappingConvError(f"layer {conv.label!r} is not a convolution")
    if conv.stride != (conv.kh, conv.kw) or conv.padding != (0, 0):
        raise OverlappingConvError(
            f"conv {conv.label!r} has stride {conv.stride} and padding {conv.padding}; "
            f"tiled patches need stride == kernel and no padding (use conv_operator mode)"
        )
    if basis.size == 0:
        raise EmptyKernelError(f"kernel basis for {basis.layer_name!r} is empty")
    c, h, w = image_shape
    if c != conv.c_in or basis.q != conv.c_in * conv.kh * conv.kw:
        raise ShapeError(
            f"image shape {image_shape} / basis q={basis.q} inconsistent with conv "
            f"({conv.c_in} channels, {conv.kh}x{conv.kw} kernel)"
        )
    grid_h, grid_w = _patch_grid(image_shape, conv)
    n_patches = grid_h * grid_w
    if plan.mode == "per_patch":
        if plan.patch_multipliers is None or len(plan.patch_multipliers) != n_patches:
            got = 0 if plan.patch_multipliers is None else len(plan.patch_multipliers)
            raise ValueError(f"per_patch plan needs {n_patches} multipliers, got {got}")
        multipliers = list(plan.patch_multipliers)
    else:
        multipliers = [plan.beta] * n_patches

    for i in plan.indices:
        if not 0 <= i < basis.size:
            raise IndexError(f"basis index {i} out of range for {basis.size} vectors")

    p = np.zeros(image_shape, dtype=np.float64)
    for t in range(n_patches):
        gi, gj = divmod(t, grid_w)
        if plan.mode == "tile_single":
            idx = plan.indices[0]
        else:  # tile_multi / per_patch cycle through the selected indices
            idx = plan.indices[t % len(plan.indices)]
        block = basis.vectors[:, idx].reshape(conv.c_in, conv.kh, conv.kw)
        p[:, gi * conv.kh : (gi + 1) * conv.kh, gj * conv.kw : (gj + 1) * conv.kw] = (
            multipliers[t] * block
        )
    return p


def materialize_conv_operator(
    conv: LayerSpec,
    input_shape: tuple[int, int, int],
    container: WeightContainer,
    cap: int = OPERATOR_CAP,
) -> np.ndarray:
    """Dense matrix of the conv's linear map: (flat feature map) x (flat image).

    Bias is excluded; it cancels in any collision difference.
    """
    c, h, w = input_shape
    if c != conv.c_in:
        raise ShapeError(f"input shape {input_shape} expects {conv.c_in} channels for {conv.label!r}")
    n_in = c * h * w
    sh, sw = conv.stride
    ph, pw = conv.padding
    oh = (h + 2 * ph - conv.kh) // sh + 1
    ow = (w + 2 * pw - conv.kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv {conv.label!r} produces empty output on input {input_shape}")
    n_out = conv.c_out * oh * ow
    if n_in > cap or n_out > cap:
        raise OperatorCapError(
            f"operator is {n_out} x {n_in}; cap is {cap} x {cap} (desk-scale only)"
        )
    a = as_analysis_matrix(conv, container)
    op = np.zeros((n_out, n_in), dtype=np.float64)
    unit = np.zeros(input_shape, dtype=np.float64)
    flat = unit.reshape(-1)
    for e in range(n_in):
        flat[e] = 1.0
        v, _, _ = _unfold(_pad(unit, conv), conv)
        feat = (v @ a).reshape(oh, ow, conv.c_out).transpose(2, 0, 1)
        op[:, e] = feat.reshape(-1)
        flat[e] = 0.0
    return op


def conv_operator_kernel(
    conv: LayerSpec,
    input_shape: tuple[int, int, int],
    container: WeightContainer,
    tol: TolerancePolicy = DEFAULT_TOL,
    cap: int = OPERATOR_CAP,
) -> KernelBasisSet:
    """Kernel of the full convolution operator, valid for any stride/padding.

    Basis vectors live in the flat image space; reshape to (c, h, w) before
    adding them to an image.  Raises EmptyKernelError when the operator is
    injective (possible for overlapping convolutions).
    """
    op = materialize_conv_operator(conv, input_shape, container, cap)
    vectors = kernel_basis(op.T, tol, label=f"{conv.label}:operator")
    return KernelBasisSet(layer_name=conv.label, q=op.shape[1], vectors=vectors)


def apply_plan(
    x: np.ndarray, p: np.ndarray, plan: PerturbationPlan
) -> tuple[np.ndarray, AppliedPerturbation]:
    """Add a perturbation under the plan's range policy.

    none: exact addition.  clip_and_report: clamp into range and flag that
    exactness is broken when anything clipped.  rescale_beta: shrink the
    whole perturbation by the largest factor keeping every element in
    range, which preserves exactness.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if x.shape != p.shape:
        raise ShapeError(f"input shape {x.shape} != perturbation shape {p.shape}")
    if plan.clip_policy == "none":
        return x + p, AppliedPerturbation(1.0, False, 0)

    lo, hi = plan.clip_range
    if plan.clip_policy == "clip_and_report":
        raw = x + p
        clipped = np.clip(raw, lo, hi)
        n_clipped = int(np.count_nonzero(clipped != raw))
        return clipped, AppliedPerturbation(1.0, n_clipped > 0, n_clipped)

    # rescale_beta
    scale = 1.0
    nz = p != 0
    if np.any(nz):
        room = np.where(p > 0, hi - x, lo - x)
        scale = min(1.0, float(np.min(room[nz] / p[nz])))
        scale = max(scale, 0.0)
    return x + scale * p, AppliedPerturbation(scale, False, 0)


def verify_collision(
    graph: ModelGraph,
    container: WeightContainer,
    x: np.ndarray,
    x_hat: np.ndarray,
    precision: str = "f64",
) -> CollisionReport:
    """Forward both inputs and account for the residual after every layer."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"inputs differ in shape: {x.shape} vs {x_hat.shape}")
    trace_a = forward(graph, container, x, precision)
    trace_b = forward(graph, container, x_hat, precision)
    residuals = [
        float(np.max(np.abs(b.astype(np.float64) - a.astype(np.float64))))
        for a, b in zip(trace_a.outputs, trace_b.outputs)
    ]
    logit_diff = trace_b.logits.astype(np.float64) - trace_a.logits.astype(np.float64)
    delta = x_hat - x
    return CollisionReport(
        layer_names=[l.label for l in graph.layers],
        layer_residuals=residuals,
        logit_residual=float(np.max(np.abs(logit_diff))),
        logit_residual_l2=float(np.linalg.norm(logit_diff)),
        argmax_equal=predict(trace_a) == predict(trace_b),
        prediction_a=predict(trace_a),
        prediction_b=predict(trace_b),
        perturbation_linf=float(np.max(np.abs(delta))),
        perturbation_l2=float(np.linalg.norm(delta)),
        precision=precision,
    )


def demo_relu_collision(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two different vectors with identical ReLU images.

    Doubles every strictly negative coordinate; ReLU maps both versions of
    those coordinates to 0.
    """
    v1 = np.asarray(v, dtype=np.float64).copy()
    if not np.any(v1 < 0):
        raise NoNegativeElementsError("need at least one strictly negative element")
    v2 = np.where(v1 < 0, 2.0 * v1, v1)
    return v1, v2


def demo_pool_collision(z: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Two different vectors with identical max-pool outputs.

    In each full window the first minimum is pushed strictly lower (by 1);
    the window maximum is unaffected.  Elements past the last full window
    are untouched, matching floor-division pooling.
    """
    z = np.asarray(z, dtype=np.float64).copy()
    if window <= 1:
        raise DegenerateWindowError("window must cover more than one element")
    z_star = z.copy()
    for start in range(0, z.size - window + 1, window):
        chunk = z_star[start : start + window]
        chunk[int(np.argmin(chunk))] -= 1.0
    if np.array_equal(z, z_star):
        raise DegenerateWindowError(f"no full window of size {window} in input of size {z.size}")
    return z, z_star
