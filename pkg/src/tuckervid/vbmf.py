"""Analytic variational Bayesian matrix factorization for rank selection.

Implements the global analytic solution of fully-observed VBMF with an
empirically estimated noise variance: the free energy is minimized over a
one-dimensional bracket of candidate variances, and the resulting variance
defines a threshold below which singular values are treated as noise.  The
estimated rank is the number of singular values above that threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .tensor import as_tensor, unfold

__all__ = ["RankEstimate", "estimate_rank", "estimate_ranks_for_conv"]

# Threshold coefficient of the analytic solution; the rank cut-off for an
# L x M matrix (L <= M, alpha = L/M) is sqrt(M * sigma2 * (1 + tau)(1 + alpha/tau))
# with tau = 2.5129 * sqrt(alpha).
_TAU_COEFF = 2.5129


@dataclass(frozen=True)
class RankEstimate:
    """Estimated rank, the retained leading singular values, and the noise variance."""

    rank: int
    retained_singular_values: np.ndarray
    noise_variance: float


def _free_energy(sigma2: float, alpha: float, m_cols: int, s: np.ndarray, x_bar: float) -> float:
    """Objective minimized to estimate the noise variance.

    ``s`` holds the strictly positive singular values; exact zeros are
    accounted for separately by the caller (their only sigma2-dependent
    contribution is ``log(M * sigma2)`` each).
    """
    x = s**2 / (m_cols * sigma2)
    large = x > x_bar
    z1 = x[large]
    z2 = x[~large]
    root = np.sqrt(np.maximum((z1 - (1.0 + alpha)) ** 2 - 4.0 * alpha, 0.0))
    tau_z1 = 0.5 * (z1 - (1.0 + alpha) + root)
    term1 = float(np.sum(z2 - np.log(z2)))
    term2 = float(np.sum(z1 - tau_z1))
    term3 = float(np.sum(np.log((tau_z1 + 1.0) / z1)))
    term4 = alpha * float(np.sum(np.log(tau_z1 / alpha + 1.0)))
    return term1 + term2 + term3 + term4


def estimate_rank(m: np.ndarray) -> RankEstimate:
    """Estimate the rank of ``m`` by the global analytic VBMF threshold.

    Deterministic; rank 0 is a legitimate result (no retained values) and
    is reported honestly, clamping is left to conv-facing wrappers.  The
    estimate is invariant to positive rescaling of ``m`` and identical for
    ``m`` and ``m.T``.
    """
    m = as_tensor(m, ndim=2)
    if not np.all(np.isfinite(m)):
        raise ValueError("estimate_rank requires finite entries")
    if m.shape[0] > m.shape[1]:
        m = m.T
    rows, cols = m.shape

    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0:
        return RankEstimate(0, s[:0], np.finfo(np.float64).tiny)

    alpha = rows / cols
    tau_bar = _TAU_COEFF * np.sqrt(alpha)
    x_bar = (1.0 + tau_bar) * (1.0 + alpha / tau_bar)

    # Bracket of admissible noise variances.  The upper bound is the mean
    # squared entry; the lower bound keeps at least the trailing singular
    # values inside the noise floor.
    upper = float(np.sum(s**2)) / (rows * cols)
    cut = int(min(np.ceil(rows / (1.0 + alpha)) - 1, rows)) - 1
    lower = max(
        s[cut + 1] ** 2 / (cols * x_bar),
        float(np.mean(s[cut + 1 :] ** 2)) / cols,
    )
    lower = max(lower, upper * 1e-12)  # guard exact-zero tails

    if lower >= upper:
        sigma2 = upper
    else:
        positive = s[s > 0.0]
        n_zero = len(s) - len(positive)

        def objective(sig2: float) -> float:
            obj = _free_energy(sig2, alpha, cols, positive, x_bar)
            if n_zero:
                obj += n_zero * np.log(cols * sig2)
            return obj

        result = minimize_scalar(
            objective,
            bounds=(lower, upper),
            method="bounded",
            options={"xatol": 1e-6 * upper},
        )
        sigma2 = float(result.x)

    threshold = np.sqrt(cols * sigma2 * (1.0 + tau_bar) * (1.0 + alpha / tau_bar))
    rank = int(np.sum(s > threshold))
    return RankEstimate(rank, s[:rank].copy(), sigma2)


def estimate_ranks_for_conv(k) -> tuple[int, int]:
    """VBMF channel ranks ``(rs, rt)`` for a 5-mode convolution kernel.

    The kernel is matricized on its input-channel mode (3) and on its
    output-channel mode (4); each unfolding gets an independent rank
    estimate.  Estimates of 0 are clamped to 1 with a warning, since a
    rank-0 layer cannot appear in a rewritten network.
    """
    w = as_tensor(getattr(k, "weights", k))
    if w.ndim != 5:
        raise ValueError(f"expected a 5-mode kernel, got {w.ndim} modes")
    ranks = []
    for mode, label in ((3, "input-channel"), (4, "output-channel")):
        est = estimate_rank(unfold(w, mode))
        rank = est.rank
        if rank < 1:
            warnings.warn(
                f"VBMF estimated rank 0 on the {label} mode; clamping to 1",
                stacklevel=2,
            )
            rank = 1
        ranks.append(rank)
    return ranks[0], ranks[1]
