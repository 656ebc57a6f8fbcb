"""Dense linear-algebra kernel: SVD, numerical rank, null-space bases.

Everything here runs in 64-bit floats on plain numpy arrays.  Matrices are
row-major, oriented q x p with q the layer's input dimension (fan-in) and
p its output dimension (fan-out), so the left null space {phi : phi^T W = 0}
is the space of input perturbations a layer cannot see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyKernelError, SvdConvergenceError

EPS64 = float(np.finfo(np.float64).eps)

#: Sign-convention cutoff: the first component of a basis vector with
#: magnitude above this is made positive.
_SIGN_EPS = 1e-12


@dataclass(frozen=True)
class TolerancePolicy:
    """How singular values are thresholded into rank / nullity.

    mode="relative" resolves the threshold as
    ``value * sigma_max * max(rows, cols) * eps64`` (the usual numerical-rank
    convention, and numpy's default when value == 1).  mode="absolute" uses
    ``value`` directly.
    """

    mode: str = "relative"
    value: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"unknown tolerance mode: {self.mode!r}")
        if not self.value >= 0:
            raise ValueError(f"tolerance value must be >= 0, got {self.value}")

    def resolve(self, sigma_max: float, shape: tuple[int, int]) -> float:
        """Return the absolute threshold tau for a matrix of this shape."""
        if self.mode == "absolute":
            return self.value
        return self.value * sigma_max * max(shape) * EPS64


DEFAULT_TOL = TolerancePolicy()


@dataclass(frozen=True)
class SvdResult:
    """Reduced SVD ``a = u @ diag(s) @ vt`` with r = min(rows, cols)."""

    u: np.ndarray  # (rows, r)
    s: np.ndarray  # (r,) non-negative, descending
    vt: np.ndarray  # (r, cols)


def _as_matrix(a, label: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{label} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{label} contains non-finite entries")
    return a


def svd(a, label: str = "matrix") -> SvdResult:
    """Reduced SVD of a finite 2-D array.

    Raises SvdConvergenceError (naming `label`) if the LAPACK iteration
    fails, so callers can report which layer's weight was at fault.
    """
    a = _as_matrix(a, label)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(
            f"SVD did not converge for {label} with shape {a.shape}"
        ) from exc
    return SvdResult(u=u, s=s, vt=vt)


def numerical_rank(
    s: np.ndarray, shape: tuple[int, int], tol: TolerancePolicy = DEFAULT_TOL
) -> int:
    """Count singular values strictly above the resolved threshold.

    `s` must be sorted descending.  An all-zero matrix has rank 0.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        return 0
    tau = tol.resolve(float(s[0]), shape)
    return int(np.count_nonzero(s > tau))


def left_nullity(w, tol: TolerancePolicy = DEFAULT_TOL, label: str = "matrix") -> int:
    """dim ker(W^T) for a q x p weight: q minus the numerical rank."""
    w = _as_matrix(w, label)
    s = svd(w, label).s
    return w.shape[0] - numerical_rank(s, w.shape, tol)


def kernel_basis(
    w, tol: TolerancePolicy = DEFAULT_TOL, label: str = "matrix"
) -> np.ndarray:
    """Orthonormal basis of the left null space of a q x p weight.

    Returns a (q, nullity) matrix whose columns phi satisfy phi^T W ~ 0.
    Ordering and sign are deterministic: columns are the left singular
    vectors whose singular value falls below the threshold, sorted by that
    singular value ascending (vectors beyond min(q, p) count as sigma = 0),
    and each column's first component of magnitude > 1e-12 is made positive.

    Raises EmptyKernelError when the nullity is 0.
    """
    w = _as_matrix(w, label)
    q, p = w.shape
    try:
        u, s, _ = np.linalg.svd(w, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(
            f"SVD did not converge for {label} with shape {w.shape}"
        ) from exc
    rank = numerical_rank(s, w.shape, tol)
    if rank >= q:
        raise EmptyKernelError(
            f"{label} with shape {w.shape} has full row rank; left kernel is trivial"
        )
    null_idx = np.arange(rank, q)
    sigmas = np.array([s[i] if i < s.size else 0.0 for i in null_idx])
    order = np.argsort(sigmas, kind="stable")
    basis = u[:, null_idx[order]].copy()
    for j in range(basis.shape[1]):
        col = basis[:, j]
        lead = np.nonzero(np.abs(col) > _SIGN_EPS)[0]
        if lead.size and col[lead[0]] < 0:
            basis[:, j] = -col
    return basis


def min_gram_eigenvalue(w, label: str = "matrix") -> float:
    """Smallest eigenvalue of W W^T for a q x p weight.

    Equal to sigma_min(W)^2 when q <= p; when q > p the Gram matrix is rank
    deficient and the smallest eigenvalue is exactly 0.
    """
    w = _as_matrix(w, label)
    q, p = w.shape
    if q > p:
        return 0.0
    s = svd(w, label).s
    return float(s[-1] ** 2)
