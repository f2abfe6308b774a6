"""Answer pools from JSONL files and bootstrap certification reports over them.

Each non-blank line is one JSON object::

    {"problem_id": "gsm8k-17", "answer": "42", "weight": 0.83}

``weight`` is optional but must be present on every record of a problem or on
none. Answers are compared as exact strings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CiteParams, ConfigurationError, LabelIndex
from .simharness import CASES, METHODS, TrialReport, _report, _Tally, evaluate_stream, replicate_rng


class IngestError(ValueError):
    """A pool file is malformed or unusable for the requested report."""


@dataclass(frozen=True)
class AnswerPool:
    problem_id: str
    answers: tuple[str, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.answers:
            raise IngestError(f"pool {self.problem_id!r} is empty")
        if self.weights is not None and len(self.weights) != len(self.answers):
            raise IngestError(f"pool {self.problem_id!r}: weights and answers differ in length")

    def __len__(self) -> int:
        return len(self.answers)

    def encode(self) -> tuple[LabelIndex, np.ndarray]:
        """Answers as integer codes in first-seen order."""
        index = LabelIndex()
        codes = np.array([index.intern(a) for a in self.answers], dtype=np.int64)
        return index, codes

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for a in self.answers:
            out[a] = out.get(a, 0) + 1
        return out

    def ranking(self) -> list[tuple[str, int]]:
        """Answers by descending count, first-seen order among equal counts."""
        counts = self.counts()
        order = {a: i for i, a in enumerate(counts)}
        return sorted(counts.items(), key=lambda kv: (-kv[1], order[kv[0]]))

    @property
    def mode(self) -> str:
        return self.ranking()[0][0]

    @property
    def mode_tie(self) -> bool:
        r = self.ranking()
        return len(r) > 1 and r[0][1] == r[1][1]

    @property
    def runner_up(self) -> str | None:
        r = self.ranking()
        return r[1][0] if len(r) > 1 else None


def _parse_line(path: str, lineno: int, line: str) -> tuple[str, str, float | None]:
    where = f"{path}:{lineno}"
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{where}: invalid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise IngestError(f"{where}: expected a JSON object")
    pid, ans = rec.get("problem_id"), rec.get("answer")
    if not isinstance(pid, str):
        raise IngestError(f"{where}: problem_id must be a string")
    if not isinstance(ans, str):
        raise IngestError(f"{where}: answer must be a string")
    w = rec.get("weight")
    if w is not None:
        if isinstance(w, bool) or not isinstance(w, (int, float)) or not math.isfinite(w):
            raise IngestError(f"{where}: weight must be a number")
        if not (0.0 <= w <= 1.0):
            raise IngestError(f"{where}: weight {w!r} outside [0, 1]")
        w = float(w)
    return pid, ans, w


def load_pools(path: str) -> dict[str, AnswerPool]:
    """All pools in a JSONL file, keyed by problem_id in first-seen order."""
    rows: dict[str, list] = {}
    has_w: dict[str, tuple[bool, int]] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            pid, ans, w = _parse_line(path, lineno, line)
            seen = has_w.setdefault(pid, (w is not None, lineno))
            if seen[0] != (w is not None):
                raise IngestError(
                    f"{path}:{lineno}: problem {pid!r} mixes records with and without weight "
                    f"(first record at line {seen[1]})")
            rows.setdefault(pid, []).append((ans, w))
    if not rows:
        raise IngestError(f"{path}: no records")
    pools = {}
    for pid, recs in rows.items():
        answers = tuple(a for a, _ in recs)
        weights = tuple(w for _, w in recs) if has_w[pid][0] else None
        pools[pid] = AnswerPool(pid, answers, weights)
    return pools


def load_pool(path: str, problem_id: str | None = None) -> AnswerPool:
    pools = load_pools(path)
    if problem_id is None:
        if len(pools) > 1:
            raise IngestError(f"{path}: {len(pools)} problems present; choose one")
        return next(iter(pools.values()))
    try:
        return pools[problem_id]
    except KeyError:
        raise IngestError(f"{path}: no problem {problem_id!r}") from None


def bootstrap_indices(pool_size: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, pool_size, size=n)


def bootstrap_replicate(pool: AnswerPool, n: int, seed: int) -> list[tuple[str, float | None]]:
    """``n`` uniform draws with replacement from ``pool``, as (answer, weight) pairs."""
    if n < 1:
        raise ValueError("bootstrap_replicate needs n >= 1")
    idx = bootstrap_indices(len(pool), n, np.random.Generator(np.random.PCG64(seed)))
    w = pool.weights
    return [(pool.answers[i], None if w is None else w[i]) for i in idx.tolist()]


def pool_report(pool: AnswerPool, methods: Sequence[str] = ("cite",), budgets: Sequence[int] = (64, 128, 256, 512, 1024),
                reps: int = 500, case: str = "A", epsilon: float = 0.05, seed: int = 0,
                params: CiteParams | None = None) -> list[TrialReport]:
    """Certification rates over bootstrap replicates of one pool.

    Replicate k resamples max(budgets) records with child_seed(seed, k) and
    every budget reads its prefix. Case A targets the pool mode, Case B the
    pool runner-up. Reports carry K_mean, the mean number of distinct answers
    seen by N, and note the target and whether the mode was tied.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}")
    if case not in CASES:
        raise ConfigurationError(f"case must be A or B, got {case!r}")
    if reps < 1:
        raise ConfigurationError("reps must be at least 1")
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets or budgets[0] < 1:
        raise ConfigurationError("budgets must be positive")
    if "wcite" in methods and pool.weights is None:
        raise IngestError(f"pool {pool.problem_id!r} has no weights; wcite needs them")
    params = params or CiteParams.default(epsilon)

    target_ans = pool.mode if case == "A" else pool.runner_up
    if target_ans is None:
        raise IngestError(f"pool {pool.problem_id!r} has a single distinct answer; case B needs a runner-up")
    index, codes_all = pool.encode()
    target = index.get(target_ans)
    w_all = np.array(pool.weights, dtype=float) if pool.weights is not None else None

    horizon = budgets[-1]
    tallies = {(m, n): _Tally() for m in methods for n in budgets}
    for k in range(reps):
        idx = bootstrap_indices(len(pool), horizon, replicate_rng(seed, k))
        codes = codes_all[idx]
        weights = w_all[idx] if w_all is not None else None
        first = np.zeros(horizon, dtype=bool)
        first[np.unique(codes, return_index=True)[1]] = True
        k_seen = np.cumsum(first)
        for m in methods:
            res = evaluate_stream(m, codes, target, budgets, params, weights)
            for n, (tau, tpw, tlu, ok) in zip(budgets, res):
                tallies[(m, n)].add(tau, tpw, tlu, n, ok, int(k_seen[n - 1]))
    out = []
    for m in methods:
        for n in budgets:
            r = _report(tallies[(m, n)], pool.problem_id, m, case, n, seed, with_k=True)
            if m == "bonferroni":
                r.tau_mean = None
            r.extra = {"target": target_ans, "mode_tie": pool.mode_tie}
            out.append(r)
    return out
