"""Shared domain types: labels, count tables, betting grids and error budgets."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

WEIGHT_TOL = 1e-12

Label = Hashable


class InvalidParameterError(ValueError):
    """A numeric argument lies outside its admissible range."""


class ConfigurationError(ValueError):
    """A configuration (file, grid, budget or certifier setup) is invalid."""


class LabelIndex:
    """Interns free-form answer strings as integer ids in first-seen order."""

    def __init__(self) -> None:
        self._ids: dict[str, int] = {}
        self._names: list[str] = []

    def intern(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
            return idx

    def get(self, name: str) -> int | None:
        return self._ids.get(name)

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)


class CountTable:
    """Running counts N_t(a) with first-seen order for deterministic ties."""

    def __init__(self) -> None:
        self.t = 0
        self.counts: dict[Label, int] = {}
        self._order: dict[Label, int] = {}

    def observe(self, label: Label) -> "CountTable":
        self.t += 1
        c = self.counts.get(label)
        if c is None:
            self._order[label] = len(self._order)
            self.counts[label] = 1
        else:
            self.counts[label] = c + 1
        return self

    def count(self, label: Label) -> int:
        return self.counts.get(label, 0)

    def first_seen(self, label: Label) -> int:
        """Insertion index of ``label`` (0 for the first distinct label)."""
        return self._order[label]

    @property
    def observed(self) -> list[Label]:
        return list(self.counts)

    def freq(self, label: Label) -> float:
        if self.t == 0:
            raise InvalidParameterError("empirical frequency undefined at t=0")
        return self.count(label) / self.t

    def runner_up(self, exclude: Iterable[Label]) -> Label | None:
        """Most frequent observed label outside ``exclude``; ties go to the earliest seen."""
        excluded = set(exclude)
        best, best_count = None, 0
        for label, c in self.counts.items():  # dict preserves first-seen order
            if label in excluded:
                continue
            if c > best_count:
                best, best_count = label, c
        return best

    def copy(self) -> "CountTable":
        out = CountTable()
        out.t = self.t
        out.counts = dict(self.counts)
        out._order = dict(self._order)
        return out


def runner_up(table: CountTable, target: Label) -> Label | None:
    return table.runner_up((target,))


@dataclass(frozen=True)
class GridSpec:
    """Finite betting-parameter grid with positive mixture weights summing to at most one.

    ``kind`` is ``"pairwise"`` (points in (0, 1)) or ``"lcb"`` (points in (0, inf)).
    """

    points: tuple[float, ...]
    weights: tuple[float, ...]
    kind: str = "pairwise"
    lam: np.ndarray = field(init=False, repr=False, compare=False)
    log_w: np.ndarray = field(init=False, repr=False, compare=False)
    log_weights: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = tuple(float(p) for p in self.points)
        wts = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        if self.kind not in ("pairwise", "lcb"):
            raise ConfigurationError(f"unknown grid kind {self.kind!r}")
        if not pts or len(pts) != len(wts):
            raise ConfigurationError("grid needs matching, nonempty points and weights")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigurationError("grid points must be strictly increasing")
        if any(not (w > 0) for w in wts):
            raise ConfigurationError("grid weights must be positive")
        if sum(wts) > 1 + WEIGHT_TOL:
            raise ConfigurationError(f"grid weights sum to {sum(wts)!r} > 1")
        if pts[0] <= 0:
            raise ConfigurationError("grid points must be positive")
        if self.kind == "pairwise" and pts[-1] >= 1:
            raise ConfigurationError("pairwise grid points must lie in (0, 1)")
        if not math.isfinite(pts[-1]):
            raise ConfigurationError("grid points must be finite")
        object.__setattr__(self, "lam", np.asarray(pts, dtype=float))
        object.__setattr__(self, "log_w", np.log(np.asarray(wts, dtype=float)))
        object.__setattr__(self, "log_weights", tuple(math.log(w) for w in wts))

    @classmethod
    def uniform(cls, points: Iterable[float], kind: str = "pairwise") -> "GridSpec":
        pts = sorted(float(p) for p in points)
        return cls(tuple(pts), tuple([1.0 / len(pts)] * len(pts)), kind)

    def __len__(self) -> int:
        return len(self.points)


def geometric_pairwise_grid(delta0: float) -> GridSpec:
    """Grid {2^-k : k = 1..K} with K = ceil(log2(8 / delta0)) and weights 1/K."""
    if not (0 < delta0 <= 1):
        raise InvalidParameterError(f"delta0 must lie in (0, 1], got {delta0!r}")
    # log2 may round across an integer; fix K against exact powers of two
    ratio = 8.0 / delta0
    k = math.ceil(math.log2(ratio))
    if 2.0 ** (k - 1) >= ratio:
        k -= 1
    elif 2.0**k < ratio:
        k += 1
    return GridSpec.uniform([2.0**-j for j in range(1, k + 1)], kind="pairwise")


DEFAULT_DELTA0 = 0.25


def default_pairwise_grid() -> GridSpec:
    return geometric_pairwise_grid(DEFAULT_DELTA0)


def default_lcb_grid() -> GridSpec:
    """{2^-k : k = 0..10}, uniform weights; contains 1/16 and 1/32."""
    return GridSpec.uniform([2.0**-k for k in range(0, 11)], kind="lcb")


@dataclass(frozen=True)
class BudgetSplit:
    """Split of the error level epsilon over the pairwise, LCB and unseen components."""

    epsilon: float
    alpha_pw: float
    alpha_r: float
    alpha_u: float

    def __post_init__(self) -> None:
        if not (0 < self.epsilon < 1):
            raise InvalidParameterError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        for name in ("alpha_pw", "alpha_r", "alpha_u"):
            if not (getattr(self, name) > 0):
                raise InvalidParameterError(f"{name} must be positive")
        total = self.alpha_pw + self.alpha_r + self.alpha_u
        if total > self.epsilon + WEIGHT_TOL:
            raise InvalidParameterError(
                f"alpha_pw + alpha_r + alpha_u = {total!r} exceeds epsilon = {self.epsilon!r}"
            )

    @classmethod
    def equal(cls, epsilon: float = 0.05) -> "BudgetSplit":
        a = epsilon / 3
        return cls(epsilon, a, a, a)

    @property
    def log_threshold_pw(self) -> float:
        return -math.log(self.alpha_pw)

    @property
    def log_threshold_r(self) -> float:
        return -math.log(self.alpha_r)


@dataclass(frozen=True)
class CiteParams:
    """Everything CITE needs besides the target: budget and both grids."""

    budget: BudgetSplit = field(default_factory=BudgetSplit.equal)
    pairwise_grid: GridSpec = field(default_factory=default_pairwise_grid)
    lcb_grid: GridSpec = field(default_factory=default_lcb_grid)

    def __post_init__(self) -> None:
        if self.pairwise_grid.kind != "pairwise":
            raise ConfigurationError("pairwise_grid must be a pairwise grid")
        if self.lcb_grid.kind != "lcb":
            raise ConfigurationError("lcb_grid must be an lcb grid")

    @classmethod
    def default(cls, epsilon: float = 0.05, delta0: float | None = None) -> "CiteParams":
        pw = geometric_pairwise_grid(DEFAULT_DELTA0 if delta0 is None else delta0)
        return cls(BudgetSplit.equal(epsilon), pw, default_lcb_grid())

    def to_dict(self) -> dict:
        return {
            "epsilon": self.budget.epsilon,
            "alpha_pw": self.budget.alpha_pw,
            "alpha_r": self.budget.alpha_r,
            "alpha_u": self.budget.alpha_u,
            "pairwise_points": list(self.pairwise_grid.points),
            "pairwise_weights": list(self.pairwise_grid.weights),
            "lcb_points": list(self.lcb_grid.points),
            "lcb_weights": list(self.lcb_grid.weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CiteParams":
        budget = BudgetSplit(d["epsilon"], d["alpha_pw"], d["alpha_r"], d["alpha_u"])
        pw = GridSpec(tuple(d["pairwise_points"]), tuple(d["pairwise_weights"]), "pairwise")
        lcb = GridSpec(tuple(d["lcb_points"]), tuple(d["lcb_weights"]), "lcb")
        return cls(budget, pw, lcb)


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def load_params(path: str) -> CiteParams:
    """Read a ``[cite]`` INI section into :class:`CiteParams`.

    Recognised keys (all optional): ``epsilon``; ``alpha_pw``, ``alpha_r``,
    ``alpha_u`` (all three or none, default equal split); ``delta0`` or
    ``pairwise_points`` (+ optional ``pairwise_weights``); ``lcb_points``
    (+ optional ``lcb_weights``).  Lists are comma or space separated;
    omitted weights mean uniform.
    """
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if not cp.has_section("cite"):
        raise ConfigurationError(f"{path}: missing [cite] section")
    sec = cp["cite"]
    known = {
        "epsilon", "alpha_pw", "alpha_r", "alpha_u", "delta0",
        "pairwise_points", "pairwise_weights", "lcb_points", "lcb_weights",
    }
    unknown = set(sec) - known
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        eps = float(sec.get("epsilon", "0.05"))
        alphas = [sec.get(k) for k in ("alpha_pw", "alpha_r", "alpha_u")]
        if all(a is None for a in alphas):
            budget = BudgetSplit.equal(eps)
        elif any(a is None for a in alphas):
            raise ConfigurationError(f"{path}: give all of alpha_pw, alpha_r, alpha_u or none")
        else:
            budget = BudgetSplit(eps, *(float(a) for a in alphas))

        if "pairwise_points" in sec:
            if "delta0" in sec:
                raise ConfigurationError(f"{path}: delta0 and pairwise_points are exclusive")
            pw = _grid_from(sec, "pairwise")
        else:
            pw = geometric_pairwise_grid(float(sec.get("delta0", str(DEFAULT_DELTA0))))
        lcb = _grid_from(sec, "lcb") if "lcb_points" in sec else default_lcb_grid()
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"{path}: {exc}") from exc
    return CiteParams(budget, pw, lcb)


def _grid_from(sec: configparser.SectionProxy, kind: str) -> GridSpec:
    pts = _floats(sec[f"{kind}_points"])
    if f"{kind}_weights" in sec:
        wts = _floats(sec[f"{kind}_weights"])
        order = sorted(range(len(pts)), key=pts.__getitem__)
        if len(wts) != len(pts):
            raise ConfigurationError(f"{kind}_points and {kind}_weights differ in length")
        return GridSpec(tuple(pts[i] for i in order), tuple(wts[i] for i in order), kind)
    return GridSpec.uniform(pts, kind)
