import math

import numpy as np
import pytest

from modecert.core import (
    BudgetSplit,
    CiteParams,
    ConfigurationError,
    CountTable,
    GridSpec,
    InvalidParameterError,
    LabelIndex,
    default_lcb_grid,
    default_pairwise_grid,
    geometric_pairwise_grid,
    load_params,
    runner_up,
)


class TestLabelIndex:
    def test_interning_is_injective(self):
        idx = LabelIndex()
        ids = [idx.intern(s) for s in ["x", "y", "x", "z", "y"]]
        assert ids == [0, 1, 0, 2, 1]
        assert idx.name(2) == "z"
        assert len(idx) == 3
        assert "y" in idx and "w" not in idx
        assert idx.get("w") is None


class TestCountTable:
    def test_single_observation(self):
        t = CountTable().observe("a")
        assert t.t == 1 and t.count("a") == 1

    def test_counting(self):
        t = CountTable()
        for x in "aab":
            t.observe(x)
        t.observe("b")
        assert t.counts == {"a": 2, "b": 2} and t.t == 4

    def test_repeated_label(self):
        t = CountTable()
        for _ in range(5):
            t.observe("q")
        assert t.t == 5 and t.count("q") == 5

    def test_sum_of_counts_is_t(self):
        rng = np.random.default_rng(0)
        t = CountTable()
        for x in rng.integers(0, 7, 300).tolist():
            t.observe(x)
        assert sum(t.counts.values()) == t.t
        assert all(c >= 1 for c in t.counts.values())
        assert math.isclose(sum(t.freq(a) for a in t.observed), 1.0)

    def test_freq_at_zero_raises(self):
        with pytest.raises(InvalidParameterError):
            CountTable().freq("a")

    def test_permutation_gives_same_counts(self):
        rng = np.random.default_rng(3)
        xs = rng.integers(0, 5, 100).tolist()
        a, b = CountTable(), CountTable()
        for x in xs:
            a.observe(x)
        for x in rng.permutation(xs).tolist():
            b.observe(x)
        assert a.counts == b.counts and a.t == b.t


class TestRunnerUp:
    def _table(self, seq):
        t = CountTable()
        for x in seq:
            t.observe(x)
        return t

    def test_no_competitor(self):
        assert runner_up(self._table("rrr"), "r") is None

    def test_unique_max(self):
        assert runner_up(self._table("rrraab"), "r") == "a"

    def test_tie_goes_to_first_seen(self):
        assert runner_up(self._table("rbrabar"), "r") == "b"
        assert runner_up(self._table("rabrbar"), "r") == "a"


class TestGridSpec:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            GridSpec((0.5, 0.25), (0.5, 0.5))
        with pytest.raises(ConfigurationError):
            GridSpec((0.25, 0.5), (0.7, 0.7))
        with pytest.raises(ConfigurationError):
            GridSpec((0.25, 1.0), (0.5, 0.5))
        with pytest.raises(ConfigurationError):
            GridSpec((0.25,), (0.0,))
        with pytest.raises(ConfigurationError):
            GridSpec((), ())
        GridSpec((0.5, 2.0), (0.5, 0.5), kind="lcb")

    def test_weight_sum_tolerance(self):
        GridSpec.uniform([0.1 * k for k in range(1, 10)])
        with pytest.raises(ConfigurationError):
            GridSpec((0.2, 0.4), (0.5, 0.5 + 1e-9))


class TestGeometricGrid:
    @pytest.mark.parametrize("delta0, K", [(1.0, 3), (0.5, 4), (0.25, 5), (0.01, 10)])
    def test_size(self, delta0, K):
        g = geometric_pairwise_grid(delta0)
        assert len(g) == K
        assert g.points == tuple(sorted(2.0**-k for k in range(1, K + 1)))
        assert all(w == 1 / K for w in g.weights)

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_rejects(self, bad):
        with pytest.raises(InvalidParameterError):
            geometric_pairwise_grid(bad)

    def test_covers_every_gap_above_delta0(self):
        for delta0 in (1.0, 0.3, 0.05, 0.01):
            pts = np.array(geometric_pairwise_grid(delta0).points)
            for d in np.linspace(delta0, 1.0, 2000):
                assert np.any((pts >= d / 8) & (pts <= d / 4)), (delta0, d)

    def test_defaults(self):
        assert len(default_pairwise_grid()) == 5
        lcb = default_lcb_grid()
        assert 1 / 16 in lcb.points and 1 / 32 in lcb.points
        assert lcb.kind == "lcb"


class TestBudget:
    def test_equal_split(self):
        b = BudgetSplit.equal(0.05)
        assert b.alpha_pw == b.alpha_r == b.alpha_u == 0.05 / 3
        assert b.alpha_pw + b.alpha_r + b.alpha_u <= b.epsilon + 1e-12
        assert math.isclose(b.log_threshold_pw, math.log(60), rel_tol=1e-14)
        assert math.isclose(b.log_threshold_r, math.log(60), rel_tol=1e-14)

    def test_over_budget(self):
        with pytest.raises(InvalidParameterError):
            BudgetSplit(0.05, 0.02, 0.02, 0.02)
        with pytest.raises(InvalidParameterError):
            BudgetSplit.equal(0.0)

    def test_params_round_trip(self):
        p = CiteParams.default(0.1, 0.05)
        assert CiteParams.from_dict(p.to_dict()) == p


class TestLoadParams:
    def _write(self, tmp_path, body):
        f = tmp_path / "c.ini"
        f.write_text(body)
        return str(f)

    def test_defaults(self, tmp_path):
        assert load_params(self._write(tmp_path, "[cite]\n")) == CiteParams()

    def test_full(self, tmp_path):
        p = load_params(self._write(tmp_path, (
            "[cite]\nepsilon = 0.1\nalpha_pw = 0.05\nalpha_r = 0.03\nalpha_u = 0.02\n"
            "pairwise_points = 0.5, 0.25\npairwise_weights = 0.4 0.6\n"
            "lcb_points = 0.125 0.0625\n")))
        assert p.budget.alpha_pw == 0.05
        assert p.pairwise_grid.points == (0.25, 0.5)
        assert p.pairwise_grid.weights == (0.6, 0.4)
        assert p.lcb_grid.points == (0.0625, 0.125)

    def test_delta0(self, tmp_path):
        p = load_params(self._write(tmp_path, "[cite]\ndelta0 = 1\n"))
        assert len(p.pairwise_grid) == 3

    @pytest.mark.parametrize("body", [
        "[other]\n",
        "[cite]\nbogus = 1\n",
        "[cite]\nalpha_pw = 0.01\n",
        "[cite]\ndelta0 = 0.5\npairwise_points = 0.5\n",
        "[cite]\nepsilon = abc\n",
        "[cite]\npairwise_points = 0.5 1.5\n",
    ])
    def test_errors(self, tmp_path, body):
        with pytest.raises((ConfigurationError, InvalidParameterError)):
            load_params(self._write(tmp_path, body))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_params(str(tmp_path / "nope.ini"))
