"""Synthetic categorical settings, null fixtures, weight models and the Monte Carlo runner."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .baselines import MmcCertifier, _bonferroni_counts
from .certifier import Crossings, replay
from .core import CiteParams, ConfigurationError, InvalidParameterError, Label
from .weighted import wreplay

METHODS = ("cite", "wcite", "bonferroni", "mmc")
CASES = ("A", "B")
DEFAULT_BUDGETS = (64, 128, 256, 512, 1024, 2048)
MASS_TOL = 1e-12


class ConstructionError(ValueError):
    """A setting or null fixture cannot be built as requested."""


@dataclass(frozen=True)
class SettingSpec:
    """Mode mass p_r, gap delta and a tail on ``m`` labels (``zipf`` with exponent ``s``, or ``uniform``)."""

    id: int
    name: str
    K: int
    p_r: float
    delta: float
    tail: str
    m: int
    s: float | None = None

    def __post_init__(self) -> None:
        if self.tail not in ("zipf", "uniform"):
            raise ConstructionError(f"unknown tail {self.tail!r}")
        if self.tail == "zipf" and (self.s is None or self.s <= 0):
            raise ConstructionError("zipf tail needs an exponent s > 0")
        if not (0 < self.p_r <= 1) or not (0 <= self.delta <= self.p_r):
            raise ConstructionError("need 0 < p_r <= 1 and 0 <= delta <= p_r")
        if self.m < 0:
            raise ConstructionError("tail size must be nonnegative")


SETTINGS: dict[int, SettingSpec] = {
    1: SettingSpec(1, "LLM-like Zipf (diffuse)", 5000, 0.24, 0.215, "zipf", 4987, 1.1),
    2: SettingSpec(2, "Concentrated (strong mode)", 100, 0.60, 0.45, "uniform", 94),
    3: SettingSpec(3, "Near-tie (small gap)", 500, 0.12, 0.01, "zipf", 497, 1.3),
    4: SettingSpec(4, "Very diffuse (huge category set)", 10000, 0.06, 0.01, "zipf", 9998, 1.0),
    5: SettingSpec(5, "Moderate LLM-like", 1000, 0.35, 0.15, "zipf", 997, 1.2),
}


def build_setting(spec: SettingSpec) -> np.ndarray:
    """Label masses: index 0 is the mode, 1 the runner-up, 2.. the tail.

    Tail weights are (j+1)^-s for j = 1..m (flat for a uniform tail), scaled
    to the leftover mass and capped at p_r - delta; capped excess is handed
    proportionally to the uncapped labels until nothing exceeds the cap.
    """
    p_r, cap = spec.p_r, spec.p_r - spec.delta
    if p_r == 1.0:
        return np.array([1.0])
    rest = 1.0 - p_r - cap
    if rest < -MASS_TOL:
        raise ConstructionError("p_r + (p_r - delta) exceeds 1")
    rest = max(rest, 0.0)
    if spec.m == 0:
        if rest > MASS_TOL:
            raise ConstructionError("leftover mass but no tail labels")
        return np.array([p_r, cap])
    if rest > spec.m * cap + MASS_TOL:
        raise ConstructionError("tail cannot hold the leftover mass under the gap cap")
    if spec.tail == "uniform":
        w = np.ones(spec.m)
    else:
        w = (np.arange(1, spec.m + 1) + 1.0) ** (-spec.s)
    w = w / w.sum() * rest
    for _ in range(spec.m + 1):
        over = w > cap
        if not over.any():
            break
        excess = float((w[over] - cap).sum())
        w[over] = cap
        free = w < cap
        w[free] += excess * w[free] / w[free].sum()
    w = np.minimum(w, cap)
    return np.concatenate([[p_r, cap], w])


def null_witness(dist: Mapping[Label, float], target: Label, kind: str,
                 hidden_label: Label | None = None) -> dict:
    """Move ``dist`` into the null where ``target`` is not the unique mode.

    ``swap`` exchanges the target's mass with its strongest competitor's,
    ``midpoint`` gives both their average, ``hidden`` splits the target's mass
    with a new label.
    """
    if dist.get(target, 0) <= 0:
        raise ConstructionError("target must carry positive mass")
    out = dict(dist)
    if kind == "hidden":
        if hidden_label is None:
            ints = [k for k in dist if isinstance(k, (int, np.integer))]
            hidden_label = (max(ints) + 1) if len(ints) == len(dist) else "__hidden__"
        if hidden_label in dist:
            raise ConstructionError(f"hidden label {hidden_label!r} already in use")
        half = dist[target] / 2
        out = {}
        for k, v in dist.items():
            out[k] = half if k == target else v
            if k == target:
                out[hidden_label] = half
        return out
    comp = [(v, -i, k) for i, (k, v) in enumerate(dist.items()) if k != target and v > 0]
    if not comp:
        raise ConstructionError(f"{kind} witness needs a competitor with positive mass")
    _, _, a = max(comp)
    if kind == "swap":
        out[target], out[a] = dist[a], dist[target]
    elif kind == "midpoint":
        mid = (dist[target] + dist[a]) / 2
        out[target] = out[a] = mid
    else:
        raise ConstructionError(f"unknown witness kind {kind!r}")
    return out


def witness_array(p: np.ndarray, target: int, kind: str) -> np.ndarray:
    """:func:`null_witness` on an index-labelled mass vector (hidden label appended)."""
    out = null_witness(dict(enumerate(p.tolist())), target, kind)
    return np.array([out[k] for k in sorted(out)])


_K0 = 10
_W_LOW = 0.1
_NOISE = 0.05
_CLIP = (0.01, 1.0)


class RankWeightModel:
    """Weights base(rank) + Uniform(-0.05, 0.05), clipped to [0.01, 1].

    base = 0.95 exp(-gamma rank) for the 10 heaviest labels (rank 1 is the
    heaviest, ties by label index) and 0.1 for all others.
    """

    def __init__(self, gamma: float, p: np.ndarray) -> None:
        if gamma < 0:
            raise InvalidParameterError("gamma must be nonnegative")
        self.gamma = gamma
        p = np.asarray(p, dtype=float)
        order = np.argsort(-p, kind="stable")
        rank = np.empty(len(p), dtype=np.int64)
        rank[order] = np.arange(1, len(p) + 1)
        self.rank = rank
        self.base = np.where(rank <= _K0, 0.95 * np.exp(-gamma * rank), _W_LOW)

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.uniform(-_NOISE, _NOISE, size=len(labels))
        return np.clip(self.base[labels] + noise, *_CLIP)

    def mean_weight(self) -> np.ndarray:
        """E[W | X = a] under the clipped uniform noise, exactly."""
        return np.array([_clipped_uniform_mean(b) for b in self.base])


def _clipped_uniform_mean(b: float) -> float:
    lo, hi = b - _NOISE, b + _NOISE
    c0, c1 = _CLIP
    width = hi - lo
    total = 0.0
    # region below c0 contributes c0, above c1 contributes c1, middle is linear
    if lo < c0:
        total += (min(hi, c0) - lo) * c0
    if hi > c1:
        total += (hi - max(lo, c1)) * c1
    a, z = max(lo, c0), min(hi, c1)
    if z > a:
        total += (z * z - a * a) / 2
    return total / width


def rank_weight_sampler(gamma: float, dist: np.ndarray, seed: int) -> Callable[[np.ndarray], np.ndarray]:
    """Returns f(labels) -> weights drawing from a generator seeded with ``seed``."""
    model = RankWeightModel(gamma, dist)
    rng = np.random.Generator(np.random.PCG64(seed))
    return lambda labels: model.sample(np.asarray(labels), rng)


def effective_gap_ratio(p: np.ndarray, gamma: float, target: int = 0) -> float:
    """(mu_r - max_{a != r} mu_a) / mu_r with mu_a = p_a E[W | X = a]."""
    mu = np.asarray(p) * RankWeightModel(gamma, p).mean_weight()
    others = np.delete(mu, target)
    return float((mu[target] - others.max()) / mu[target])


_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def child_seed(seed: int, k: int) -> int:
    """Seed for replicate ``k``: splitmix64(splitmix64(seed) XOR k)."""
    return splitmix64(splitmix64(seed & _MASK64) ^ (k & _MASK64))


def replicate_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child_seed(seed, k)))


def sample_labels(p: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-transform sampling of ``n`` label indices."""
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return np.minimum(idx, len(p) - 1)


@dataclass
class TrialReport:
    setting: object
    method: str
    case: str
    N: int
    rate: float
    stderr: float
    tau_mean: float | None
    tau_pw_mean: float | None
    tau_lu_mean: float | None
    reps: int
    seed: int
    K_mean: float | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


CSV_COLUMNS = ("setting", "method", "case", "N", "rate", "stderr", "tau_mean",
               "tau_pw_mean", "tau_lu_mean", "reps", "seed")


@dataclass
class _Tally:
    """Order-independent sums for one (method, budget) cell."""

    n: int = 0
    hits: int = 0
    tau_sum: int = 0
    pw_n: int = 0
    pw_sum: int = 0
    lu_n: int = 0
    lu_sum: int = 0
    k_sum: int = 0

    def add(self, tau: int | None, tau_pw: int | None, tau_lu: int | None, budget: int,
            success: bool = True, k_obs: int = 0) -> None:
        self.n += 1
        self.k_sum += k_obs
        if tau is not None and tau <= budget and success:
            self.hits += 1
            self.tau_sum += tau
        if tau_pw is not None and tau_pw <= budget:
            self.pw_n += 1
            self.pw_sum += tau_pw
        if tau_lu is not None and tau_lu <= budget:
            self.lu_n += 1
            self.lu_sum += tau_lu

    def merge(self, other: "_Tally") -> "_Tally":
        return _Tally(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


def _mean(s: int, n: int) -> float | None:
    return s / n if n else None


def _report(t: _Tally, setting, method, case, budget, seed, with_k=False) -> TrialReport:
    rate = t.hits / t.n
    return TrialReport(
        setting, method, case, budget, rate, math.sqrt(rate * (1 - rate) / t.n),
        _mean(t.tau_sum, t.hits), _mean(t.pw_sum, t.pw_n), _mean(t.lu_sum, t.lu_n),
        t.n, seed, (t.k_sum / t.n) if with_k else None,
    )


def evaluate_stream(method: str, codes: np.ndarray, target: int, budgets: Sequence[int],
                    params: CiteParams | None = None, weights: np.ndarray | None = None) -> list[tuple]:
    """Per-budget (tau, tau_pw, tau_lu, success) for one replicate stream.

    Sequential methods report crossings on the full stream; the tally decides
    whether they fall inside each budget.
    """
    params = params or CiteParams()
    if method == "cite":
        c = replay(codes, [target], params)
        return [(c.tau, c.tau_pw, c.tau_lu, True)] * len(budgets)
    if method == "wcite":
        if weights is None:
            raise ConfigurationError("wcite needs weights")
        c = wreplay(codes, weights, target, params)
        return [(c.tau, c.tau_pw, c.tau_lu, True)] * len(budgets)
    if method == "mmc":
        m = MmcCertifier(params.budget.epsilon).run(codes.tolist())
        return [(m.tau, None, None, m.certified_label == target)] * len(budgets)
    if method == "bonferroni":
        out = []
        for n in budgets:
            vals, cnt = np.unique(codes[:n], return_counts=True)
            ok = _bonferroni_counts(dict(zip(vals.tolist(), cnt.tolist())), target, n,
                                    params.budget.epsilon)
            out.append((n if ok else None, None, None, True))
        return out
    raise ConfigurationError(f"unknown method {method!r}")


def _run_chunk(args) -> dict:
    p, methods, target, budgets, ks, seed, gamma, params = args
    horizon = max(budgets)
    model = RankWeightModel(gamma, p) if "wcite" in methods else None
    tallies = {(m, n): _Tally() for m in methods for n in budgets}
    for k in ks:
        rng = replicate_rng(seed, k)
        codes = sample_labels(p, horizon, rng)
        weights = model.sample(codes, rng) if model is not None else None
        for m in methods:
            res = evaluate_stream(m, codes, target, budgets, params, weights)
            for n, (tau, tpw, tlu, ok) in zip(budgets, res):
                tallies[(m, n)].add(tau, tpw, tlu, n, ok)
    return tallies


def run_trials(setting: SettingSpec | int | np.ndarray, method: str | Sequence[str], case: str,
               budgets: Sequence[int] = DEFAULT_BUDGETS, reps: int = 500, seed: int = 0,
               gamma: float = 0.0, params: CiteParams | None = None,
               workers: int = 1) -> list[TrialReport]:
    """Monte Carlo certification rates; one report per (method, budget).

    Replicate k draws one stream of max(budgets) labels from a generator
    seeded with child_seed(seed, k) (weights for wcite follow from the same
    generator) and every budget is read off its prefix.  Case A targets the
    mode (label 0), Case B the runner-up (label 1).
    """
    methods = (method,) if isinstance(method, str) else tuple(method)
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}; choose from {METHODS}")
    if case not in CASES:
        raise ConfigurationError(f"case must be A or B, got {case!r}")
    if reps < 1:
        raise InvalidParameterError("reps must be at least 1")
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets or budgets[0] < 1:
        raise InvalidParameterError("budgets must be positive")
    params = params or CiteParams()
    if isinstance(setting, (int, np.integer)):
        setting = SETTINGS[int(setting)]
    if isinstance(setting, SettingSpec):
        key, p = setting.id, build_setting(setting)
    else:
        key, p = "custom", np.asarray(setting, dtype=float)
    target = 0 if case == "A" else 1
    if target >= len(p):
        raise ConfigurationError("case B needs a runner-up label")

    chunks = [range(i, reps, workers) for i in range(workers)] if workers > 1 else [range(reps)]
    args = [(p, methods, target, budgets, ks, seed, gamma, params) for ks in chunks]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, args))
    else:
        parts = [_run_chunk(a) for a in args]
    total = parts[0]
    for part in parts[1:]:
        total = {key_: total[key_].merge(part[key_]) for key_ in total}
    reports = [_report(total[(m, n)], key, m, case, n, seed) for m in methods for n in budgets]
    for r in reports:
        if r.method == "bonferroni":
            r.tau_mean = None  # fixed-sample test: no stopping time
    return reports


@dataclass
class SweepRow:
    p_r: float
    delta: float
    tau_pw_mean: float | None
    tau_lu_mean: float | None
    pw_crossed: int
    lu_crossed: int
    reps: int


def bottleneck_sweep(vary: str, values: Iterable[float], fixed: float, reps: int = 300,
                     seed: int = 0, horizon: int = 4000, tail_m: int = 4987, tail_s: float = 1.1,
                     params: CiteParams | None = None) -> list[SweepRow]:
    """Mean first-crossing times of the two CITE components over a p_r or delta sweep.

    ``vary="p_r"`` holds delta at ``fixed``; ``vary="delta"`` holds p_r at ``fixed``.
    The tail is Zipf(``tail_s``) on ``tail_m`` labels, capped as in :func:`build_setting`.
    """
    if vary not in ("p_r", "delta"):
        raise ConfigurationError("vary must be 'p_r' or 'delta'")
    params = params or CiteParams()
    rows = []
    for v in values:
        p_r, delta = (v, fixed) if vary == "p_r" else (fixed, v)
        p = build_setting(SettingSpec(0, "sweep", tail_m + 2, p_r, delta, "zipf", tail_m, tail_s))
        pw, lu = [], []
        for k in range(reps):
            codes = sample_labels(p, horizon, replicate_rng(seed, k))
            c = replay(codes, [0], params)
            if c.tau_pw is not None:
                pw.append(c.tau_pw)
            if c.tau_lu is not None:
                lu.append(c.tau_lu)
        rows.append(SweepRow(p_r, delta, float(np.mean(pw)) if pw else None,
                             float(np.mean(lu)) if lu else None, len(pw), len(lu), reps))
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(reports: Sequence[TrialReport], path, columns: Sequence[str] = CSV_COLUMNS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in reports:
            row = r.row()
            w.writerow([_cell(row[c]) for c in columns])


def write_json(reports: Sequence[TrialReport], path, columns: Sequence[str] = CSV_COLUMNS) -> None:
    out = []
    for r in reports:
        row = r.row()
        d = {c: row[c] for c in columns}
        d.update(r.extra)
        out.append(d)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
