"""Dense N-mode tensor primitives: unfolding, folding, mode products, SVD.

All values are ``numpy.ndarray`` with ``float64`` elements in row-major
(C) layout, so the last listed mode varies fastest.  Indexing is 0-based
throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DenseTensor",
    "Matrix",
    "SvdResult",
    "as_tensor",
    "unfold",
    "fold",
    "mode_multiply",
    "svd",
    "frobenius_norm",
]

# Type aliases: a DenseTensor is a float64 C-order ndarray; a Matrix is the
# 2-mode special case.  All operations below preserve this representation.
DenseTensor = np.ndarray
Matrix = np.ndarray


def as_tensor(data, ndim: int | None = None) -> np.ndarray:
    """Coerce ``data`` to a float64 C-order array, optionally checking ndim."""
    t = np.ascontiguousarray(data, dtype=np.float64)
    if t.ndim == 0:
        t = t.reshape(1)
    if ndim is not None and t.ndim != ndim:
        raise ValueError(f"expected a {ndim}-mode tensor, got {t.ndim} modes")
    return t


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (matricization) of ``t``.

    The result has ``t.shape[mode]`` rows and one column per combination of
    the remaining indices.  Columns are ordered with the remaining modes in
    ascending mode order, the earliest remaining mode varying slowest: the
    column index of multi-index ``(i_0, ..., i_{N-1})`` with ``i_mode``
    removed is its row-major rank over the remaining extents.  This is the
    exact inverse of :func:`fold`.
    """
    t = as_tensor(t)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for a {t.ndim}-mode tensor")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def fold(m: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor of ``shape`` from ``m``."""
    m = as_tensor(m, ndim=2)
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    rest = shape[:mode] + shape[mode + 1 :]
    expected = (shape[mode], int(np.prod(rest)) if rest else 1)
    if m.shape != expected:
        raise ValueError(
            f"matrix shape {m.shape} inconsistent with shape {shape} on mode {mode}"
        )
    return np.ascontiguousarray(np.moveaxis(m.reshape((shape[mode],) + rest), 0, mode))


def mode_multiply(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` product of tensor ``t`` with matrix ``m``.

    Contracts ``t`` along ``mode`` with the columns of ``m``; the result has
    ``t.shape`` with ``shape[mode]`` replaced by ``m.shape[0]``.
    """
    t = as_tensor(t)
    m = as_tensor(m, ndim=2)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for a {t.ndim}-mode tensor")
    if m.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix has {m.shape[1]} columns but mode {mode} has size {t.shape[mode]}"
        )
    new_shape = list(t.shape)
    new_shape[mode] = m.shape[0]
    return fold(m @ unfold(t, mode), mode, new_shape)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``u @ diag(s) @ vt`` with a deterministic sign convention."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def svd(m: np.ndarray) -> SvdResult:
    """Deterministic thin SVD.

    Singular values are non-increasing and non-negative.  Sign convention:
    in each column of ``u`` the entry of largest magnitude is non-negative,
    ties broken by lowest row index, so repeated calls (and reruns) give
    bit-identical factors for identical input.
    """
    m = as_tensor(m, ndim=2)
    if not np.all(np.isfinite(m)):
        raise ValueError("svd requires finite entries")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    # np.argmax returns the first (lowest-index) maximal entry.
    pivot = np.argmax(np.abs(u), axis=0)
    flip = u[pivot, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    vt[flip, :] *= -1.0
    return SvdResult(np.ascontiguousarray(u), s, np.ascontiguousarray(vt))


def frobenius_norm(t: np.ndarray) -> float:
    """Square root of the sum of squared elements."""
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))
