"""W-CITE: CITE with confidence weights in [0, 1] attached to each draw.

Pairwise evidence against competitor ``a`` factorises as A(lam) - B(a, lam) with

    A(lam)    = sum over target hits of log(1 + lam W)
    B(a, lam) = sum over hits of a   of -log(1 - lam W)

and the stopping rule takes the literal minimum over every observed competitor.
Competitors whose B vector is dominated coordinatewise by another one can
never attain that minimum, so only the Pareto front is scanned.

The weighted LCB keeps the multiset of target-hit weights as a weight -> count
map.  With a single distinct weight of 1 the arithmetic is operation-for-operation
that of :mod:`modecert.bounds`, so W == 1 reproduces unweighted CITE.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import IO, Iterable, Sequence

import numpy as np

from .bounds import LCB_TOL, SCREEN_SLACK, bisect_sup, unseen_bound, unseen_bounds
from .certifier import Crossings
from .core import CiteParams, GridSpec, InvalidParameterError, Label
from .eprocess import _lse, log_mix

# Above this many distinct target weights the LCB probe switches to numpy.
EXACT_UNIQUE_LIMIT = 16


class InvalidObservationError(ValueError):
    """A weighted observation violates 0 <= weight <= 1."""


class ExcludedGridPointError(InvalidParameterError):
    """lambda >= 1/q: the grid point is not part of the mixture at this q."""


@dataclass(frozen=True)
class WeightedObservation:
    label: Label
    weight: float

    def __post_init__(self) -> None:
        w = self.weight
        if not isinstance(w, (int, float, np.floating, np.integer)) or not (0.0 <= w <= 1.0):
            raise InvalidObservationError(f"weight must lie in [0, 1], got {w!r}")
        object.__setattr__(self, "weight", float(w))


class TargetWeights:
    """Multiset of the weights seen on target hits."""

    def __init__(self, weights: Iterable[float] = ()) -> None:
        self.counts: dict[float, int] = {}
        self.n = 0
        self._cache: tuple | None = None
        for w in weights:
            self.add(w)

    def add(self, w: float) -> None:
        w = float(w)
        self.counts[w] = self.counts.get(w, 0) + 1
        self.n += 1
        self._cache = None

    def items(self) -> tuple:
        """(sorted unique weights, counts, numpy weights, numpy counts), cached."""
        if self._cache is None:
            ws = sorted(self.counts)
            cs = [self.counts[w] for w in ws]
            self._cache = (tuple(ws), tuple(cs), np.array(ws), np.array(cs, dtype=float))
        return self._cache

    @property
    def total(self) -> float:
        ws, cs, _, _ = self.items()
        return sum([c * w for w, c in zip(ws, cs)])

    def __len__(self) -> int:
        return self.n


def _weighted_terms(q: float, lam: float, tw: TargetWeights) -> float:
    ws, cs, w_arr, c_arr = tw.items()
    if len(ws) <= EXACT_UNIQUE_LIMIT:
        log1p = math.log1p
        return sum([c * log1p(lam * (w - q)) for w, c in zip(ws, cs)])
    return float(c_arr @ np.log1p(lam * (w_arr - q)))


def weighted_lcb_log(q: float, state, lam: float) -> float:
    """log M~_t(q, lam) = (t - N_t(r)) log(1 - lam q) + sum over hits log(1 + lam (W - q)).

    ``state`` is anything exposing ``t`` and ``target_weights``.
    """
    if lam * q >= 1:
        raise ExcludedGridPointError(f"lambda={lam!r} is excluded at q={q!r}")
    tw = state.target_weights
    return _weighted_terms(q, lam, tw) + (state.t - tw.n) * math.log1p(-lam * q)


def weighted_lcb_mixture_log(q: float, tw: TargetWeights, grid: GridSpec, t: int) -> float:
    m = t - tw.n
    log1p = math.log1p
    ws, cs, w_arr, c_arr = tw.items()
    if len(ws) == 1:
        w, c = ws[0], cs[0]
        return _lse([
            lw + c * log1p(lam * (w - q)) + m * log1p(-lam * q)
            for lam, lw in zip(grid.points, grid.log_weights) if lam * q < 1
        ])
    if len(ws) <= EXACT_UNIQUE_LIMIT:
        return _lse([
            lw + sum([c * log1p(lam * (w - q)) for w, c in zip(ws, cs)]) + m * log1p(-lam * q)
            for lam, lw in zip(grid.points, grid.log_weights) if lam * q < 1
        ])
    keep = [i for i, lam in enumerate(grid.points) if lam * q < 1]
    if not keep:
        return -math.inf
    lam = grid.lam[keep]
    s = np.log1p(lam[:, None] * (w_arr[None, :] - q)) @ c_arr
    return _lse([grid.log_weights[i] + float(s[j]) + m * log1p(-grid.points[i] * q)
                 for j, i in enumerate(keep)])


def weighted_lower_conf_bound(tw: TargetWeights, t: int, grid: GridSpec, threshold_log: float,
                              tol: float = LCB_TOL) -> float:
    """L~_t: sup of q in (0, mu_hat] with M~_t(q) >= threshold, else 0."""
    if t < 1:
        raise InvalidParameterError("weighted_lower_conf_bound needs t >= 1")
    if tw.n == 0:
        return 0.0
    ws, cs, _, _ = tw.items()
    if len(ws) <= EXACT_UNIQUE_LIMIT:
        return _wlcb_cached(ws, cs, int(t), grid, float(threshold_log), tol)
    hi = tw.total / t
    return bisect_sup(lambda q: weighted_lcb_mixture_log(q, tw, grid, t), hi, threshold_log, tol)


@lru_cache(maxsize=1 << 16)
def _wlcb_cached(ws: tuple, cs: tuple, t: int, grid: GridSpec, thr: float, tol: float) -> float:
    tw = TargetWeights()
    tw.counts = dict(zip(ws, cs))
    tw.n = sum(cs)
    return bisect_sup(lambda q: weighted_lcb_mixture_log(q, tw, grid, t), tw.total / t, thr, tol)


class PairwiseLedger:
    """Per-lambda log sums A and B(a, .) with the non-dominated competitor front.

    Unit-weight draws are kept as counts and multiplied in, the rest as running
    sums, so that with W == 1 every value is formed exactly as in the
    unweighted closed form.
    """

    def __init__(self, grid: GridSpec, target: Label) -> None:
        self.grid = grid
        self.target = target
        self._up = [math.log1p(lam) for lam in grid.points]
        self._down = [-math.log1p(-lam) for lam in grid.points]
        self._n_unit = 0
        self._rest = [0.0] * len(grid)
        self.A = [0.0] * len(grid)
        self.B: dict[Label, list[float]] = {}
        self._b_unit: dict[Label, int] = {}
        self._b_rest: dict[Label, list[float]] = {}
        self.front: list[Label] = []

    def update(self, label: Label, w: float) -> None:
        pts = self.grid.points
        log1p = math.log1p
        if label == self.target:
            rest = self._rest
            if w == 1.0:
                self._n_unit += 1
            elif w != 0.0:
                for k, lam in enumerate(pts):
                    rest[k] += log1p(lam * w)
            n = self._n_unit
            self.A = [n * u + r for u, r in zip(self._up, rest)]
            return
        rest = self._b_rest.get(label)
        if rest is None:
            rest = self._b_rest[label] = [0.0] * len(pts)
            self._b_unit[label] = 0
        if w == 1.0:
            self._b_unit[label] += 1
        elif w != 0.0:
            for k, lam in enumerate(pts):
                rest[k] -= log1p(-lam * w)
        m = self._b_unit[label]
        b = self.B[label] = [m * d + r for d, r in zip(self._down, rest)]
        self._refront(label, b)

    def _refront(self, label: Label, b: list[float]) -> None:
        front = [a for a in self.front if a != label]
        B = self.B
        for a in front:
            if all(x >= y for x, y in zip(B[a], b)):
                self.front = front
                return
        self.front = [a for a in front if not all(y >= x for x, y in zip(B[a], b))] + [label]

    @property
    def vacuous(self) -> bool:
        return not self.B

    def log_e(self, label: Label) -> float:
        b = self.B.get(label)
        if b is None:
            return _lse([lw + x for lw, x in zip(self.grid.log_weights, self.A)])
        return _lse([lw + x - y for lw, x, y in zip(self.grid.log_weights, self.A, b)])

    def min_log_e(self) -> float:
        """min over observed competitors; with none, the value against an unseen one."""
        if not self.B:
            return self.log_e(None)
        return min(self.log_e(a) for a in self.front)

    def min_log_e_literal(self) -> float:
        """Same minimum over every observed competitor, without the front."""
        if not self.B:
            return self.log_e(None)
        return min(self.log_e(a) for a in self.B)


class WCiteCertifier:
    """Streaming W-CITE for a fixed target."""

    def __init__(self, target: Label, params: CiteParams | None = None,
                 trace: IO[str] | None = None) -> None:
        self.target = target
        self.params = params or CiteParams()
        self.t = 0
        self.ledger = PairwiseLedger(self.params.pairwise_grid, target)
        self.target_weights = TargetWeights()
        self._thr_pw = self.params.budget.log_threshold_pw
        self._thr_r = self.params.budget.log_threshold_r
        self.lcb_value = 0.0
        self.unseen_value: float | None = None
        self.pw_log_e: float | None = None
        self.tau: int | None = None
        self.tau_pw: int | None = None
        self.tau_lu: int | None = None
        self.last: dict | None = None
        self._trace = trace

    @property
    def certified(self) -> bool:
        return self.tau is not None

    @property
    def mu_hat(self) -> float:
        return self.target_weights.total / self.t if self.t else 0.0

    def diagnostics(self) -> tuple[int | None, int | None]:
        return self.tau_pw, self.tau_lu

    def wstep(self, obs: WeightedObservation) -> dict:
        if self.tau is not None:
            return self.last
        self.t += 1
        t = self.t
        self.ledger.update(obs.label, obs.weight)
        if obs.label == self.target:
            self.target_weights.add(obs.weight)
        vacuous = self.ledger.vacuous
        pw = self.ledger.min_log_e()
        self.pw_log_e = pw
        pw_ok = vacuous or pw >= self._thr_pw
        self.lcb_value = weighted_lower_conf_bound(
            self.target_weights, t, self.params.lcb_grid, self._thr_r)
        u = unseen_bound(t, self.params.budget.alpha_u)
        self.unseen_value = u
        lu_ok = self.lcb_value > u
        if pw_ok and self.tau_pw is None:
            self.tau_pw = t
        if lu_ok and self.tau_lu is None:
            self.tau_lu = t
        if pw_ok and lu_ok:
            self.tau = t
        rec = {
            "t": t, "label": obs.label, "weight": obs.weight, "pw_log_e": pw,
            "vacuous": vacuous, "L_t": self.lcb_value, "U_t": u,
            "verdict": "certified" if self.tau is not None else "continue", "tau": self.tau,
        }
        self.last = rec
        if self._trace is not None:
            self._trace.write(json.dumps(rec) + "\n")
        return rec

    def step(self, label: Label, weight: float) -> dict:
        return self.wstep(WeightedObservation(label, weight))

    def run(self, labels: Iterable[Label], weights: Iterable[float]) -> dict | None:
        rec = None
        for label, w in zip(labels, weights):
            rec = self.step(label, w)
            if self.tau is not None:
                break
        return rec


def _slack(n: int) -> float:
    # running sums of n log terms drift by O(n^2) ulps in the worst case
    return SCREEN_SLACK + 1e-15 * float(n) * float(n)


def _lu_screen(hits: np.ndarray, w: np.ndarray, grid: GridSpec, thr: float,
               u: np.ndarray, block: int = 16, within: np.ndarray | None = None) -> np.ndarray:
    """Necessary condition for L~_t > U_t at every t, evaluated in blocks.

    Within a block ending at b, U_b <= U_t and M~_t is nonincreasing in q, so
    M~_t(U_b) >= threshold is implied by L~_t > U_t.  Blocks grow with t since
    U_t flattens out.  Positions outside ``within`` are left False.
    """
    n = len(hits)
    t = np.arange(1, n + 1)
    wh = np.where(hits, w, 0.0)
    mu = np.cumsum(wh) / t
    cand = mu > u - SCREEN_SLACK
    if within is not None:
        cand &= within
    out = np.zeros(n, dtype=bool)
    slack = _slack(n)
    a = 0
    while a < n:
        b = min(a + max(block, a // 8), n)
        if not cand[a:b].any():
            a = b
            continue
        q = u[b - 1]
        keep = grid.lam * q < 1
        lam = grid.lam[keep]
        inc = np.where(hits[:b, None], np.log1p(lam[None, :] * (wh[:b, None] - q)),
                       np.log1p(-lam[None, :] * q))
        logm = log_mix(np.cumsum(inc, axis=0)[a:b], grid.log_w[keep])
        out[a:b] = cand[a:b] & (logm >= thr - slack)
        a = b
    return out


def _pw_screen(codes: np.ndarray, w: np.ndarray, target: int, grid: GridSpec,
               thr: float, max_comps: int = 8) -> np.ndarray:
    """Necessary condition for the all-competitors check at every t.

    The minimum over any subset of competitors bounds the full minimum from
    above, so only the ``max_comps`` most frequent ones are scanned.  Cumulative
    sums in numpy stand in for the ledger's running sums; the slack absorbs
    their rounding, which grows with the stream length.
    """
    n = len(codes)
    lam = grid.lam[:, None]
    lw = grid.log_w
    hits = codes == target
    others = np.flatnonzero(~hits)
    if not len(others):
        return np.ones(n, dtype=bool)
    comps, first, counts = np.unique(codes[others], return_index=True, return_counts=True)
    top = np.argsort(-counts, kind="stable")[:max_comps]
    comps, first_t = comps[top], others[first[top]]
    A = np.cumsum(np.where(hits, np.log1p(lam * w), 0.0), axis=1)
    neg = -np.log1p(-lam * w)
    B = np.cumsum(np.where(codes[None, None, :] == comps[:, None, None], neg[None], 0.0), axis=2)
    val = log_mix(np.moveaxis(A[None] - B, 1, 2), lw)
    t_idx = np.arange(n)
    worst = np.where(t_idx[None, :] >= first_t[:, None], val, np.inf).min(axis=0)
    vac = t_idx < others[0]
    return vac | (worst >= thr - _slack(n))


def wreplay(codes: Sequence[int], weights: Sequence[float], target: int,
            params: CiteParams | None = None, need_diagnostics: bool = True) -> Crossings:
    """W-CITE crossings on an integer-coded weighted stream; matches :class:`WCiteCertifier`.

    Both conditions are screened in numpy, and every candidate is confirmed
    with the same scalar code the streaming certifier runs.  The exact ledger
    is advanced only as far as the latest candidate that needs confirming.
    """
    params = params or CiteParams()
    codes = np.asarray(codes)
    w = np.asarray(weights, dtype=float)
    n = len(codes)
    if n == 0:
        return Crossings(None, None, None)
    if len(w) != n:
        raise InvalidParameterError("codes and weights differ in length")
    if np.any((w < 0) | (w > 1)) or np.any(np.isnan(w)):
        raise InvalidObservationError("weights must lie in [0, 1]")
    thr_pw = params.budget.log_threshold_pw
    thr_r = params.budget.log_threshold_r

    hits = codes == target
    u = unseen_bounds(n, params.budget.alpha_u)
    pw_cand = _pw_screen(codes, w, target, params.pairwise_grid, thr_pw)
    lu_cand = _lu_screen(hits, w, params.lcb_grid, thr_r, u,
                         within=None if need_diagnostics else pw_cand)

    ledger = PairwiseLedger(params.pairwise_grid, target)
    code_list = codes.tolist()
    w_list = w.tolist()
    cand_list = pw_cand.tolist()
    pw_memo: dict[int, bool] = {}
    pos = 0

    def pw_exact(i: int) -> bool:
        nonlocal pos
        while pos <= i:
            ledger.update(code_list[pos], w_list[pos])
            if cand_list[pos]:
                pw_memo[pos] = ledger.vacuous or ledger.min_log_e() >= thr_pw
            pos += 1
        return pw_memo[i]

    hit_w = w[hits].tolist()
    n_hits = np.cumsum(hits)
    lu_memo: dict[int, bool] = {}

    def lu_exact(i: int) -> bool:
        if i not in lu_memo:
            tw = TargetWeights(hit_w[: n_hits[i]])
            lu_memo[i] = weighted_lower_conf_bound(tw, i + 1, params.lcb_grid, thr_r) > u[i]
        return lu_memo[i]

    def first(mask: np.ndarray, check) -> int | None:
        for i in np.flatnonzero(mask):
            if check(int(i)):
                return int(i) + 1
        return None

    tau = first(pw_cand & lu_cand, lambda i: lu_exact(i) and pw_exact(i))
    tau_pw = tau_lu = None
    if need_diagnostics:
        tau_pw = first(pw_cand, pw_exact)
        tau_lu = first(lu_cand, lu_exact)
    return Crossings(tau, tau_pw, tau_lu)
