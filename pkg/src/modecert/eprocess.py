"""Pairwise betting e-processes and their grid mixtures, in natural-log space.

Scalar functions are the reference path (pure ``math``); the ``*_array``
variants are numpy-vectorised and agree with them to ~1e-12, not bitwise.
Anything that feeds a certification decision goes through the scalar path.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .core import GridSpec, InvalidParameterError

_NEG_INF = -math.inf


def log_sum_weighted(log_terms: Iterable[float], log_weights: Iterable[float]) -> float:
    """log(sum_j exp(log_w_j + log_term_j)) with max-shift; empty or all -inf gives -inf."""
    z = [a + b for a, b in zip(log_terms, log_weights) if a != _NEG_INF]
    return _lse(z)


def _lse(z: list[float]) -> float:
    if not z:
        return _NEG_INF
    m = max(z)
    if m == math.inf:
        return m
    exp = math.exp
    return m + math.log(sum([exp(v - m) for v in z]))


def log_mix(log_terms: np.ndarray, log_w: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorised :func:`log_sum_weighted` along ``axis``."""
    z = np.asarray(log_terms, dtype=float) + log_w
    m = np.max(z, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(np.sum(np.exp(z - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def pairwise_log_e(lam: float, n_r: int, n_a: int) -> float:
    """log of (1+lam)^n_r (1-lam)^n_a."""
    if not (0 < lam < 1):
        raise InvalidParameterError(f"lambda must lie in (0, 1), got {lam!r}")
    return n_r * math.log1p(lam) + n_a * math.log1p(-lam)


def mixture_log_e(grid: GridSpec, n_r: int, n_a: int) -> float:
    """log sum_lambda w_lambda (1+lambda)^n_r (1-lambda)^n_a."""
    if grid.kind != "pairwise":
        raise InvalidParameterError("mixture_log_e needs a pairwise grid")
    log1p = math.log1p
    return _lse([lw + n_r * log1p(lam) + n_a * log1p(-lam)
                 for lam, lw in zip(grid.points, grid.log_weights)])


def mixture_log_e_array(grid: GridSpec, n_r, n_a) -> np.ndarray:
    """Vectorised :func:`mixture_log_e` over broadcastable count arrays."""
    lam = grid.lam
    n_r = np.asarray(n_r, dtype=float)[..., None]
    n_a = np.asarray(n_a, dtype=float)[..., None]
    return log_mix(n_r * np.log1p(lam) + n_a * np.log1p(-lam), grid.log_w)


def oracle_lambda(p_r: float, p2: float) -> float:
    """Growth-optimal fixed bet (p_r - p2) / (p_r + p2) against a competitor of mass p2."""
    if p_r < 0 or p2 < 0 or p_r + p2 <= 0:
        raise InvalidParameterError("oracle_lambda needs p_r + p2 > 0 and nonnegative masses")
    if p2 > p_r or p_r + p2 > 1 + 1e-12:
        raise InvalidParameterError("oracle_lambda needs p2 <= p_r and p_r + p2 <= 1")
    return (p_r - p2) / (p_r + p2)


def growth_rate(lam: float, p_r: float, p2: float) -> float:
    """Expected log-growth per draw, p_r log(1+lam) + p2 log(1-lam)."""
    return p_r * math.log1p(lam) + p2 * math.log1p(-lam)


class PairwiseAccumulator:
    """Running per-lambda log wealth of one target/competitor pair, one draw at a time.

    Each draw multiplies by (1 + lambda Z) with Z = +1 (target), -1 (competitor)
    or 0 (anything else). Sums are Neumaier-compensated so long streams agree
    with :func:`pairwise_log_e` to rounding level.
    """

    def __init__(self, grid: GridSpec) -> None:
        if grid.kind != "pairwise":
            raise InvalidParameterError("PairwiseAccumulator needs a pairwise grid")
        self.grid = grid
        self._up = [math.log1p(lam) for lam in grid.points]
        self._down = [math.log1p(-lam) for lam in grid.points]
        self._s = [0.0] * len(grid)
        self._c = [0.0] * len(grid)
        self.n_r = 0
        self.n_a = 0

    def update(self, z: int) -> None:
        if z == 0:
            return
        if z == 1:
            inc, self.n_r = self._up, self.n_r + 1
        elif z == -1:
            inc, self.n_a = self._down, self.n_a + 1
        else:
            raise InvalidParameterError(f"z must be -1, 0 or 1, got {z!r}")
        s, c = self._s, self._c
        for k, x in enumerate(inc):
            t = s[k] + x
            if abs(s[k]) >= abs(x):
                c[k] += (s[k] - t) + x
            else:
                c[k] += (x - t) + s[k]
            s[k] = t

    def log_values(self) -> list[float]:
        """Per-lambda log e-values."""
        return [s + c for s, c in zip(self._s, self._c)]

    def log_e(self) -> float:
        return log_sum_weighted(self.log_values(), self.grid.log_weights)
