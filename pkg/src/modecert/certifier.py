"""The CITE stopping rule as a streaming state machine, plus its top-k form.

The streaming :class:`CiteCertifier` is the reference implementation.
:func:`replay` evaluates the same rule on a whole integer-coded stream at
once; it screens every step with vectorised necessary conditions and then
confirms candidate steps with the very same scalar functions the streaming
certifier uses, so both agree exactly on tau and on the diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

from .bounds import (
    SCREEN_SLACK,
    LcbInputs,
    lcb_mixture_log_array,
    lower_conf_bound,
    unseen_bound,
    unseen_bounds,
)
from .core import CiteParams, ConfigurationError, CountTable, Label
from .eprocess import mixture_log_e, mixture_log_e_array

UNIQUE_MODE = "unique-mode"
TOP_K = "top-k"


@dataclass(frozen=True)
class CertifierConfig:
    targets: tuple
    params: CiteParams = field(default_factory=CiteParams)
    mode: str = UNIQUE_MODE

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.mode not in (UNIQUE_MODE, TOP_K):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not self.targets:
            raise ConfigurationError("at least one target is required")
        if len(set(self.targets)) != len(self.targets):
            raise ConfigurationError("targets must be distinct")
        if self.mode == UNIQUE_MODE and len(self.targets) != 1:
            raise ConfigurationError("unique-mode certification takes exactly one target")

    @classmethod
    def unique(cls, target: Label, params: CiteParams | None = None) -> "CertifierConfig":
        return cls((target,), params or CiteParams(), UNIQUE_MODE)

    @classmethod
    def top_k(cls, targets: Iterable[Label], params: CiteParams | None = None) -> "CertifierConfig":
        return cls(tuple(targets), params or CiteParams(), TOP_K)


@dataclass
class StepRecord:
    """One line of the step trace."""

    t: int
    label: object
    pw_log_e: float
    vacuous: bool
    lcb: float
    unseen: float
    verdict: str
    tau: int | None = None

    def to_dict(self) -> dict:
        return {
            "t": self.t, "label": self.label, "pw_log_e": self.pw_log_e,
            "vacuous": self.vacuous, "L_t": self.lcb, "U_t": self.unseen,
            "verdict": self.verdict, "tau": self.tau,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class CiteCertifier:
    """Streaming CITE for a fixed target (or a target set in top-k mode).

    >>> c = CiteCertifier(CertifierConfig.unique("A"))
    >>> rec = c.step("A")
    >>> rec.verdict
    'continue'
    """

    def __init__(self, config: CertifierConfig, trace: IO[str] | None = None) -> None:
        self.config = config
        self.table = CountTable()
        p = config.params
        self._thr_pw = p.budget.log_threshold_pw
        self._thr_r = p.budget.log_threshold_r
        self._alpha_u = p.budget.alpha_u
        self._targets = set(config.targets)
        self._runner: Label | None = None
        self._runner_count = 0
        self.lcb_values: dict = {s: 0.0 for s in config.targets}
        self.unseen_value: float | None = None
        self.pw_log_e: float | None = None
        self.tau: int | None = None
        self.tau_pw: int | None = None
        self.tau_lu: int | None = None
        self.last: StepRecord | None = None
        self._trace = trace

    @property
    def t(self) -> int:
        return self.table.t

    @property
    def certified(self) -> bool:
        return self.tau is not None

    @property
    def runner_up(self) -> Label | None:
        return self._runner

    @property
    def lcb(self) -> float:
        return min(self.lcb_values.values())

    def diagnostics(self) -> tuple[int | None, int | None]:
        return self.tau_pw, self.tau_lu

    def _track_runner(self, label: Label) -> None:
        if label in self._targets:
            return
        c = self.table.counts[label]
        r = self._runner
        if c > self._runner_count or (
            c == self._runner_count and r is not None
            and self.table.first_seen(label) < self.table.first_seen(r)
        ):
            self._runner, self._runner_count = label, c

    def step(self, label: Label) -> StepRecord:
        if self.tau is not None:
            return self.last
        table = self.table.observe(label)
        self._track_runner(label)
        t = table.t
        params = self.config.params

        n_a = self._runner_count
        vacuous = self._runner is None
        pw = min(mixture_log_e(params.pairwise_grid, table.count(s), n_a)
                 for s in self.config.targets)
        self.pw_log_e = pw
        pw_ok = vacuous or pw >= self._thr_pw

        for s in self.config.targets:
            self.lcb_values[s] = lower_conf_bound(
                LcbInputs(params.lcb_grid, table.count(s), t, self._thr_r))
        lcb = self.lcb
        u = unseen_bound(t, self._alpha_u)
        self.unseen_value = u
        lu_ok = lcb > u

        if pw_ok and self.tau_pw is None:
            self.tau_pw = t
        if lu_ok and self.tau_lu is None:
            self.tau_lu = t
        if pw_ok and lu_ok:
            self.tau = t
        rec = StepRecord(t, label, pw, vacuous, lcb, u,
                         "certified" if self.tau is not None else "continue", self.tau)
        self.last = rec
        if self._trace is not None:
            self._trace.write(rec.to_json() + "\n")
        return rec

    def run(self, labels: Iterable[Label]) -> StepRecord | None:
        """Feed labels until certification or exhaustion; returns the last record."""
        rec = None
        for label in labels:
            rec = self.step(label)
            if self.tau is not None:
                break
        return rec


def topk_step(state: CiteCertifier, label: Label) -> StepRecord:
    if state.config.mode != TOP_K:
        raise ConfigurationError("topk_step needs a top-k configuration")
    return state.step(label)


class Crossings(NamedTuple):
    tau: int | None
    tau_pw: int | None
    tau_lu: int | None


def occurrence_counts(codes: np.ndarray) -> np.ndarray:
    """occ[i] = number of j <= i with codes[j] == codes[i]."""
    codes = np.asarray(codes)
    n = len(codes)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(codes, kind="stable")
    sc = codes[order]
    starts = np.r_[0, np.flatnonzero(sc[1:] != sc[:-1]) + 1]
    group_start = np.repeat(starts, np.diff(np.r_[starts, n]))
    occ = np.empty(n, dtype=np.int64)
    occ[order] = np.arange(n) - group_start + 1
    return occ


def _first(cands: np.ndarray, exact) -> int | None:
    for i in np.flatnonzero(cands):
        if exact(int(i)):
            return int(i) + 1
    return None


def replay(codes: Sequence[int], targets: Sequence[int], params: CiteParams | None = None,
           need_diagnostics: bool = True) -> Crossings:
    """First certification time and component first-crossings on an integer-coded stream.

    Equivalent to feeding ``codes`` through :class:`CiteCertifier` with the
    same targets (top-k when ``len(targets) > 1``).
    """
    params = params or CiteParams()
    codes = np.asarray(codes)
    n = len(codes)
    if n == 0:
        return Crossings(None, None, None)
    targets = list(targets)
    thr_pw = params.budget.log_threshold_pw
    thr_r = params.budget.log_threshold_r
    t = np.arange(1, n + 1)

    in_s = np.isin(codes, targets)
    n_s = np.stack([np.cumsum(codes == s) for s in targets])  # (k, n)
    ru = np.maximum.accumulate(np.where(in_s, 0, occurrence_counts(codes)))
    vac = ru == 0
    pw_arr = mixture_log_e_array(params.pairwise_grid, n_s, ru[None, :]).min(axis=0)
    pw_cand = vac | (pw_arr >= thr_pw - SCREEN_SLACK)

    u = unseen_bounds(n, params.budget.alpha_u)
    lu_cand = np.all(n_s / t > u, axis=0)
    if not need_diagnostics:
        lu_cand &= pw_cand
    if lu_cand.any():
        idx = np.flatnonzero(lu_cand)
        m = lcb_mixture_log_array(u[idx], params.lcb_grid, n_s[:, idx], t[idx])
        keep = np.all(m >= thr_r - SCREEN_SLACK, axis=0)
        lu_cand = np.zeros(n, dtype=bool)
        lu_cand[idx[keep]] = True

    grid_pw, grid_r = params.pairwise_grid, params.lcb_grid

    def pw_exact(i: int) -> bool:
        if vac[i]:
            return True
        return min(mixture_log_e(grid_pw, int(c), int(ru[i])) for c in n_s[:, i]) >= thr_pw

    def lu_exact(i: int) -> bool:
        lcb = min(lower_conf_bound(LcbInputs(grid_r, int(c), i + 1, thr_r)) for c in n_s[:, i])
        return lcb > u[i]

    both = pw_cand & lu_cand
    tau = _first(both, lambda i: pw_exact(i) and lu_exact(i))
    tau_pw = tau_lu = None
    if need_diagnostics:
        tau_pw = _first(pw_cand, pw_exact)
        tau_lu = _first(lu_cand, lu_exact)
    return Crossings(tau, tau_pw, tau_lu)
