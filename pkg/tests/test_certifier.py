import io
import json
import math

import numpy as np
import pytest

from modecert.bounds import LcbInputs, lower_conf_bound
from modecert.certifier import (
    CertifierConfig,
    CiteCertifier,
    Crossings,
    occurrence_counts,
    replay,
    topk_step,
)
from modecert.core import BudgetSplit, CiteParams, ConfigurationError, default_lcb_grid, default_pairwise_grid
from modecert.eprocess import mixture_log_e
from modecert.simharness import SETTINGS, build_setting, replicate_rng, sample_labels, witness_array

import oracles


def stream_through(config, labels):
    c = CiteCertifier(config)
    recs = [c.step(x) for x in labels]
    return c, recs


class TestConfig:
    def test_fresh_state(self):
        c = CiteCertifier(CertifierConfig.unique("r"))
        assert c.t == 0 and not c.certified
        assert c.lcb == 0.0 and c.unseen_value is None
        assert c.diagnostics() == (None, None)

    def test_thresholds(self):
        c = CertifierConfig.unique("r")
        assert math.isclose(c.params.budget.log_threshold_pw, math.log(60))
        assert math.isclose(c.params.budget.log_threshold_r, math.log(60))

    @pytest.mark.parametrize("kwargs", [
        dict(targets=()),
        dict(targets=("a", "a"), mode="top-k"),
        dict(targets=("a", "b")),
        dict(targets=("a",), mode="best-of"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            CertifierConfig(**kwargs)

    def test_topk_step_needs_topk(self):
        with pytest.raises(ConfigurationError):
            topk_step(CiteCertifier(CertifierConfig.unique("r")), "r")


class TestStep:
    def test_all_target_stream(self):
        c, recs = stream_through(CertifierConfig.unique("r"), ["r"] * 60)
        assert c.certified and c.tau <= 60
        assert all(r.vacuous for r in recs)
        assert (c.tau, c.tau_pw, c.tau_lu) == oracles.cite_trace(["r"] * 60, ["r"])
        assert c.diagnostics() == (1, c.tau)

    def test_alternating_never_certifies(self):
        labels = ["a", "r"] * 1000
        c, _ = stream_through(CertifierConfig.unique("r"), labels)
        assert not c.certified
        assert c.tau_pw is None
        # the pairwise mixture stays below threshold at every prefix of this trace
        n = np.arange(1, 2001)
        n_r, n_a = n // 2, (n + 1) // 2
        g = default_pairwise_grid()
        from scipy.special import logsumexp
        vals = logsumexp(np.log(g.weights)[:, None] + n_r * np.log1p(g.lam)[:, None]
                         + n_a * np.log1p(-g.lam)[:, None], axis=0)
        assert vals.max() < math.log(60)

    def test_single_competitor_draw(self):
        c = CiteCertifier(CertifierConfig.unique("r"))
        rec = c.step("a")
        assert rec.verdict == "continue" and rec.lcb == 0.0 and not rec.vacuous
        assert rec.pw_log_e == mixture_log_e(default_pairwise_grid(), 0, 1) < 0

    def test_absorbing(self):
        c, _ = stream_through(CertifierConfig.unique("r"), ["r"] * 40)
        tau, last = c.tau, c.last
        assert c.step("x") is last
        assert c.t == tau and c.table.count("x") == 0

    def test_pw_value_is_mixture_at_runner_up(self):
        rng = np.random.default_rng(0)
        labels = rng.choice(list("rabc"), size=200, p=[0.4, 0.3, 0.2, 0.1]).tolist()
        c = CiteCertifier(CertifierConfig.unique("r"))
        g = default_pairwise_grid()
        for x in labels:
            rec = c.step(x)
            ru = c.table.runner_up(["r"])
            n_a = c.table.count(ru) if ru is not None else 0
            assert rec.pw_log_e == mixture_log_e(g, c.table.count("r"), n_a)
            if c.certified:
                break

    def test_lcb_and_unseen_recorded(self):
        c, recs = stream_through(CertifierConfig.unique("r"), list("rrarrbrr"))
        for rec in recs:
            assert 0.0 <= rec.lcb <= 1.0 and 0 < rec.unseen <= 1.0
        assert recs[-1].lcb == lower_conf_bound(LcbInputs(default_lcb_grid(), 6, 8, math.log(60)))

    def test_requires_simultaneous_conditions(self):
        # pairwise holds (vacuously) at t=1 only; L_t > U_t later while r and a stay level
        labels = ["r"] * 10 + ["a"] * 10 + ["r", "a"] * 100
        c, _ = stream_through(CertifierConfig.unique("r"), labels)
        assert c.tau_pw == 1 and c.tau_lu is not None and c.tau_lu > 1
        assert not c.certified
        assert (c.tau, c.tau_pw, c.tau_lu) == oracles.cite_trace(labels, ["r"])

    def test_matches_trace_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(12):
            p = rng.dirichlet(np.ones(4))
            labels = rng.choice(4, size=120, p=p).tolist()
            c, _ = stream_through(CertifierConfig.unique(0), labels)
            assert (c.tau, c.tau_pw, c.tau_lu) == oracles.cite_trace(labels, [0])

    def test_run_stops_at_tau(self):
        c = CiteCertifier(CertifierConfig.unique("r"))
        rec = c.run(["r"] * 100)
        assert rec.verdict == "certified" and c.t == c.tau


class TestTrace:
    def test_jsonl_export(self):
        buf = io.StringIO()
        c = CiteCertifier(CertifierConfig.unique("r"), trace=buf)
        c.run(["a", "r", "r"])
        lines = [json.loads(x) for x in buf.getvalue().splitlines()]
        assert [d["t"] for d in lines] == [1, 2, 3]
        assert set(lines[0]) == {"t", "label", "pw_log_e", "vacuous", "L_t", "U_t", "verdict", "tau"}
        assert lines[0]["label"] == "a" and lines[0]["verdict"] == "continue"


class TestTopK:
    def test_k1_matches_unique(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            labels = rng.choice(5, size=150, p=[0.4, 0.25, 0.15, 0.1, 0.1]).tolist()
            a, ra = stream_through(CertifierConfig.unique(0), labels)
            b, rb = stream_through(CertifierConfig.top_k([0]), labels)
            assert [r.verdict for r in ra] == [r.verdict for r in rb]
            assert a.diagnostics() == b.diagnostics()

    def test_only_targets_seen(self):
        labels = ["r", "s"] * 40
        c, recs = stream_through(CertifierConfig.top_k(["r", "s"]), labels)
        assert all(r.vacuous for r in recs)
        assert c.certified
        assert (c.tau, c.tau_pw, c.tau_lu) == oracles.cite_trace(labels, ["r", "s"])
        assert c.lcb == min(c.lcb_values.values())

    def test_outsider_beats_member(self):
        c = CiteCertifier(CertifierConfig.top_k(["r", "s"]))
        for x in ["r", "o"] * 1000:
            topk_step(c, x)
        assert not c.certified
        assert c.lcb_values["s"] == 0.0


class TestReplay:
    def test_occurrence_counts(self):
        np.testing.assert_array_equal(occurrence_counts(np.array([3, 1, 3, 3, 1, 2])), [1, 1, 2, 3, 2, 1])
        assert len(occurrence_counts(np.array([], dtype=int))) == 0

    def test_empty(self):
        assert replay([], [0]) == Crossings(None, None, None)

    @pytest.mark.parametrize("targets", [[0], [0, 1]])
    def test_matches_streaming(self, targets):
        rng = np.random.default_rng(17)
        for _ in range(60):
            p = rng.dirichlet(np.ones(5) * 0.7)
            codes = rng.choice(5, size=250, p=p)
            cfg = CertifierConfig(tuple(targets), mode="top-k" if len(targets) > 1 else "unique-mode")
            c, _ = stream_through(cfg, codes.tolist())
            assert tuple(replay(codes, targets)) == (c.tau, c.tau_pw, c.tau_lu)

    def test_tau_only_mode(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            codes = rng.choice(4, size=300, p=[0.45, 0.3, 0.15, 0.1])
            assert replay(codes, [0], need_diagnostics=False).tau == replay(codes, [0]).tau


class TestTypeI:
    """Any-time false certification on the three null fixtures."""

    @pytest.mark.parametrize("kind", ["swap", "midpoint", "hidden"])
    def test_null_fixture(self, kind):
        reps, eps = 2000, 0.05
        q = witness_array(build_setting(SETTINGS[2]), 0, kind)
        hits = sum(replay(sample_labels(q, 4000, replicate_rng(101, k)), [0],
                          need_diagnostics=False).tau is not None for k in range(reps))
        rate = hits / reps
        assert rate <= eps + 3 * math.sqrt(eps * (1 - eps) / reps)


class TestPower:
    def test_mean_tau_decreases_with_epsilon(self):
        p = build_setting(SETTINGS[2])
        means = []
        for eps in (0.01, 0.05, 0.2):
            params = CiteParams(BudgetSplit.equal(eps))
            taus = [replay(sample_labels(p, 400, replicate_rng(9, k)), [0], params, False).tau
                    for k in range(300)]
            taus = [t for t in taus if t is not None]
            assert taus
            means.append(np.mean(taus))
        assert means[0] > means[1] > means[2]
