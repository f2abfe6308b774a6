"""Time-uniform lower confidence bound on the target mass and the unseen-category bound."""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .core import GridSpec, InvalidParameterError
from .eprocess import _lse, log_mix

LCB_TOL = 1e-9
UNSEEN_TOL = 1e-12
# Screens built on the vectorised path admit values this far below threshold.
SCREEN_SLACK = 1e-9


class LcbInputs(NamedTuple):
    grid: GridSpec
    n_r: int
    t: int
    threshold_log: float


def _lcb_log(q: float, grid: GridSpec, n_r: int, t: int) -> float:
    m = t - n_r
    log1p = math.log1p
    return _lse([lw + n_r * log1p(lam * (1.0 - q)) + m * log1p(-lam * q)
                 for lam, lw in zip(grid.points, grid.log_weights) if lam * q < 1])


def lcb_mixture_log(q: float, inputs: LcbInputs) -> float:
    """log sum_{lambda < 1/q} v_lambda (1+lambda(1-q))^n_r (1-lambda q)^(t-n_r).

    Grid points with lambda >= 1/q are dropped; if none remain the result is -inf.
    """
    if not (0 < q <= 1):
        raise InvalidParameterError(f"q must lie in (0, 1], got {q!r}")
    return _lcb_log(q, inputs.grid, inputs.n_r, inputs.t)


def lcb_mixture_log_array(q, grid: GridSpec, n_r, t) -> np.ndarray:
    """Vectorised :func:`lcb_mixture_log`; q, n_r, t broadcast together."""
    q = np.asarray(q, dtype=float)[..., None]
    n_r = np.asarray(n_r, dtype=float)[..., None]
    t = np.asarray(t, dtype=float)[..., None]
    lam = grid.lam
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = n_r * np.log1p(lam * (1.0 - q)) + (t - n_r) * np.log1p(-lam * q)
    terms = np.where(lam * q < 1, terms, -np.inf)
    return log_mix(terms, grid.log_w)


def bisect_sup(log_m: Callable[[float], float], hi: float, threshold: float,
               tol: float = LCB_TOL) -> float:
    """sup {q in (0, hi] : log_m(q) >= threshold} for nonincreasing ``log_m``, or 0.

    Returns ``hi`` when it is feasible; otherwise the lower end of the final
    bisection bracket, so the answer never overstates the supremum.
    """
    if hi <= 0:
        return 0.0
    if log_m(hi) >= threshold:
        return hi
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if log_m(mid) >= threshold:
            lo = mid
        else:
            hi = mid
    return lo


@lru_cache(maxsize=1 << 16)
def _lcb_cached(grid: GridSpec, n_r: int, t: int, thr: float, tol: float) -> float:
    return bisect_sup(lambda q: _lcb_log(q, grid, n_r, t), n_r / t, thr, tol)


def lower_conf_bound(inputs: LcbInputs, tol: float = LCB_TOL) -> float:
    """L_t(r): largest q <= p_hat whose mixture wealth reaches the threshold, else 0."""
    grid, n_r, t, thr = inputs
    if t < 1:
        raise InvalidParameterError("lower_conf_bound needs t >= 1")
    if n_r == 0:
        return 0.0
    return _lcb_cached(grid, int(n_r), int(t), float(thr), tol)


def _log_f(u: float, t: int) -> float:
    # log of u^-1 (1-u)^t
    return -math.log(u) + (t * math.log1p(-u) if u < 1 else -math.inf)


@lru_cache(maxsize=None)
def unseen_bound(t: int, alpha_u: float, tol: float = UNSEEN_TOL) -> float:
    """U_t = min {u in (0, 1] : u^-1 (1-u)^t <= alpha_u}, upper bracket end."""
    if t < 1:
        raise InvalidParameterError("unseen_bound needs t >= 1")
    if not (0 < alpha_u < 1):
        raise InvalidParameterError(f"alpha_u must lie in (0, 1), got {alpha_u!r}")
    target = math.log(alpha_u)
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _log_f(mid, t) <= target:
            hi = mid
        else:
            lo = mid
    return hi


@lru_cache(maxsize=64)
def _unseen_array(horizon: int, alpha_u: float) -> np.ndarray:
    out = np.array([unseen_bound(t, alpha_u) for t in range(1, horizon + 1)])
    out.setflags(write=False)
    return out


def unseen_bounds(horizon: int, alpha_u: float) -> np.ndarray:
    """Read-only array of U_1..U_horizon (index t-1)."""
    return _unseen_array(int(horizon), float(alpha_u))
