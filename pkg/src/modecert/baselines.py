"""Comparison methods: a fixed-sample Bonferroni check and tuple-indexed MMC."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .bounds import unseen_bound
from .core import CountTable, InvalidParameterError, Label

MMC_LAMBDA = 0.25


def clopper_pearson_lower(n_r: int, n: int, alpha: float) -> float:
    """One-sided exact lower confidence bound for a binomial proportion."""
    if n_r == 0:
        return 0.0
    if n_r == n:
        return alpha ** (1.0 / n)
    return float(stats.beta.ppf(alpha, n_r, n - n_r + 1))


def bonferroni_certify(sample: Sequence[Label], target: Label, epsilon: float = 0.05) -> bool:
    """Fixed-N certification of ``target`` as the unique mode.

    Needs (a) a one-sided exact sign test of target vs each observed competitor
    to reject at (epsilon/2)/#competitors, and (b) the epsilon/4 Clopper-Pearson
    lower bound on p_target to exceed the epsilon/4 unseen bound at N.
    """
    if not (0 < epsilon < 1):
        raise InvalidParameterError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    n = len(sample)
    if n == 0:
        raise InvalidParameterError("bonferroni_certify needs a nonempty sample")
    table = CountTable()
    for x in sample:
        table.observe(x)
    return _bonferroni_counts(table.counts, target, n, epsilon)


def _bonferroni_counts(counts: dict, target: Label, n: int, epsilon: float) -> bool:
    n_r = counts.get(target, 0)
    if n_r == 0:
        return False
    comp = np.array([c for a, c in counts.items() if a != target], dtype=np.int64)
    if len(comp):
        level = (epsilon / 2) / len(comp)
        pvals = stats.binom.sf(n_r - 1, n_r + comp, 0.5)
        if not np.all(pvals <= level):
            return False
    return clopper_pearson_lower(n_r, n, epsilon / 4) > unseen_bound(n, epsilon / 4)


@dataclass
class TupleChannels:
    """Pairwise and residual channels for one (leader, runner-up) tuple."""

    leader: Label
    runner: Label
    order: int
    alpha: float
    log_pair: float = 0.0
    log_resid: float = 0.0
    active_rounds: int = 0

    @property
    def log_threshold(self) -> float:
        return -math.log(self.alpha)


class MmcCertifier:
    """Sequential leader tracking with per-tuple e-processes.

    Before round n the empirical leader A and runner-up B (first-seen tie
    break) define the active tuple. Only that tuple's channels bet on X_n:

        pairwise: 1 + lam (1{X=A} - 1{X=B})
        residual: 1 + lam (1{X=A} - 1{X not in {A, B}})

    The j-th tuple ever activated receives alpha = epsilon 2^-j. The leader is
    certified once both channels of the active tuple reach 1/alpha.
    """

    def __init__(self, epsilon: float = 0.05, lam: float = MMC_LAMBDA) -> None:
        if not (0 < epsilon < 1):
            raise InvalidParameterError(f"epsilon must lie in (0, 1), got {epsilon!r}")
        if not (0 < lam < 1):
            raise InvalidParameterError(f"lambda must lie in (0, 1), got {lam!r}")
        self.epsilon = epsilon
        self.lam = lam
        self.table = CountTable()
        self.registry: dict[tuple, TupleChannels] = {}
        self.leader: Label | None = None
        self.runner: Label | None = None
        self.tau: int | None = None
        self.certified_label: Label | None = None
        self.active: tuple | None = None

    @property
    def t(self) -> int:
        return self.table.t

    @property
    def allocated(self) -> float:
        return sum(ch.alpha for ch in self.registry.values())

    def _better(self, a: Label, b: Label | None) -> bool:
        if b is None:
            return True
        ca, cb = self.table.counts[a], self.table.counts[b]
        return ca > cb or (ca == cb and self.table.first_seen(a) < self.table.first_seen(b))

    def _rerank(self, x: Label) -> None:
        if x == self.leader:
            return
        if x != self.runner and self._better(x, self.runner):
            self.runner = x
        if self.runner == x and self._better(x, self.leader):
            self.leader, self.runner = x, self.leader

    def step(self, label: Label) -> "MmcCertifier":
        if self.tau is not None:
            return self
        key = None
        if self.leader is not None and self.runner is not None:
            key = (self.leader, self.runner)
            ch = self.registry.get(key)
            if ch is None:
                j = len(self.registry) + 1
                ch = self.registry[key] = TupleChannels(
                    self.leader, self.runner, j, self.epsilon * 2.0**-j)
            a, b, lam = ch.leader, ch.runner, self.lam
            is_a = label == a
            ch.log_pair += math.log1p(lam * (is_a - (label == b)))
            ch.log_resid += math.log1p(lam * (is_a - (label != a and label != b)))
            ch.active_rounds += 1
        self.active = key
        self.table.observe(label)
        self._rerank(label)
        if key is not None:
            ch = self.registry[key]
            thr = ch.log_threshold
            if ch.log_pair >= thr and ch.log_resid >= thr:
                self.tau = self.table.t
                self.certified_label = ch.leader
        return self

    def run(self, labels: Iterable[Label]) -> "MmcCertifier":
        for x in labels:
            self.step(x)
            if self.tau is not None:
                break
        return self


def mmc_step(state: MmcCertifier, label: Label) -> MmcCertifier:
    return state.step(label)
