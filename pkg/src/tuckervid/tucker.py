"""Partial Tucker decomposition of convolution kernels.

Decomposes an N-mode tensor along a subset of its modes into a core tensor
plus one column-orthonormal loading matrix per decomposed mode.  The
factors are initialized by truncated SVD of each unfolding (HOSVD) and
refined by higher-order orthogonal iteration (HOOI), which never decreases
the fit.  Undecomposed modes keep their full size in the core.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import as_tensor, frobenius_norm, mode_multiply, svd, unfold

__all__ = [
    "TuckerFactors",
    "partial_tucker",
    "tucker2_kernel",
    "tucker1_kernel",
    "reconstruct",
]

DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-8


@dataclass
class TuckerFactors:
    """Core tensor plus per-mode loading matrices.

    ``factors`` holds ``(mode, U)`` pairs sorted by mode, where ``U`` has
    one column per retained rank and ``U.T @ U = I``.  ``shape`` is the
    shape of the tensor that was decomposed.  ``fit_history`` records the
    fit ``1 - ||t - reconstruct||_F / ||t||_F`` after the HOSVD init and
    after each HOOI sweep.
    """

    core: np.ndarray
    factors: list[tuple[int, np.ndarray]]
    shape: tuple[int, ...]
    fit_history: list[float] = field(default_factory=list)

    @property
    def decomposed_modes(self) -> tuple[int, ...]:
        return tuple(mode for mode, _ in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for _, u in self.factors)

    def factor(self, mode: int) -> np.ndarray:
        for m, u in self.factors:
            if m == mode:
                return u
        raise KeyError(f"mode {mode} carries no factor")


def reconstruct(f: TuckerFactors) -> np.ndarray:
    """Multiply the core by each loading matrix on its mode."""
    t = f.core
    for mode, u in f.factors:
        t = mode_multiply(t, u, mode)
    if t.shape != f.shape:
        raise ValueError(f"reconstruction shape {t.shape} != original {f.shape}")
    return t


def _validate(t: np.ndarray, modes, ranks) -> tuple[list[int], list[int]]:
    modes = [int(m) for m in modes]
    ranks = [int(r) for r in ranks]
    if len(modes) != len(ranks):
        raise ValueError("modes and ranks must have equal length")
    if len(set(modes)) != len(modes):
        raise ValueError("modes must be distinct")
    for m, r in zip(modes, ranks):
        if not 0 <= m < t.ndim:
            raise ValueError(f"mode {m} out of range for a {t.ndim}-mode tensor")
        if r < 1:
            raise ValueError(f"rank for mode {m} must be >= 1, got {r}")
        if r > t.shape[m]:
            raise ValueError(f"rank {r} exceeds size {t.shape[m]} of mode {m}")
    return modes, ranks


def _project(t: np.ndarray, factors: dict[int, np.ndarray], skip: int | None = None) -> np.ndarray:
    out = t
    for mode, u in sorted(factors.items()):
        if mode == skip:
            continue
        out = mode_multiply(out, u.T, mode)
    return out


def partial_tucker(
    t: np.ndarray,
    modes,
    ranks,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> TuckerFactors:
    """Partial Tucker decomposition of ``t`` along ``modes`` at ``ranks``.

    HOSVD initialization followed by HOOI sweeps; iteration stops when the
    relative fit change drops below ``tol`` or after ``max_iters`` sweeps.
    The fit is non-decreasing across sweeps.
    """
    t = as_tensor(t)
    if not np.all(np.isfinite(t)):
        raise ValueError("partial_tucker requires finite entries")
    modes, ranks = _validate(t, modes, ranks)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be > 0")

    norm_t = frobenius_norm(t)

    factors: dict[int, np.ndarray] = {}
    for mode, rank in zip(modes, ranks):
        factors[mode] = svd(unfold(t, mode)).u[:, :rank]

    def current_fit() -> float:
        # With orthonormal factors, ||t - recon||^2 = ||t||^2 - ||core||^2.
        if norm_t == 0.0:
            return 1.0
        core_norm = frobenius_norm(_project(t, factors))
        gap = max(norm_t**2 - core_norm**2, 0.0)
        return 1.0 - np.sqrt(gap) / norm_t

    history = [current_fit()]
    for _ in range(max_iters):
        for mode in modes:
            partial = _project(t, factors, skip=mode)
            factors[mode] = svd(unfold(partial, mode)).u[:, : factors[mode].shape[1]]
        fit = current_fit()
        previous = history[-1]
        history.append(fit)
        if abs(fit - previous) <= tol * max(abs(previous), 1.0):
            break

    core = _project(t, factors)
    return TuckerFactors(
        core=core,
        factors=sorted(factors.items()),
        shape=t.shape,
        fit_history=history,
    )


def _kernel_weights(k) -> np.ndarray:
    # Accepts a raw array or anything carrying a ``weights`` array
    # (e.g. network.ConvKernel).
    return as_tensor(getattr(k, "weights", k))


def tucker2_kernel(
    k,
    rs: int,
    rt: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> TuckerFactors:
    """Tucker-2 of a 5-mode kernel on its input/output channel modes.

    The kernel is laid out ``(D_F, D_H, D_W, S, T)``; only modes 3 (input
    channels) and 4 (output channels) are decomposed, so the core keeps the
    full filter extent and has shape ``(D_F, D_H, D_W, rs, rt)``.
    """
    w = _kernel_weights(k)
    if w.ndim != 5:
        raise ValueError(f"expected a 5-mode kernel, got {w.ndim} modes")
    return partial_tucker(w, modes=(3, 4), ranks=(rs, rt), max_iters=max_iters, tol=tol)


def tucker1_kernel(
    k,
    mode: int,
    r: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> TuckerFactors:
    """Tucker-1: a single loading matrix on ``mode``, full size elsewhere.

    For a 2-mode weight matrix this is a truncated-SVD factorization
    ``W ~ U @ G`` with ``U`` the mode factor and ``G`` the core.
    """
    w = _kernel_weights(k)
    return partial_tucker(w, modes=(mode,), ranks=(r,), max_iters=max_iters, tol=tol)
