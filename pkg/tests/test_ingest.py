import json
import math
from collections import Counter

import numpy as np
import pytest

from modecert.ingest import (
    AnswerPool,
    IngestError,
    bootstrap_replicate,
    load_pool,
    load_pools,
    pool_report,
)


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return str(path)


class TestLoad:
    def test_three_lines(self, tmp_path):
        f = write_jsonl(tmp_path / "p.jsonl", [
            {"problem_id": "q1", "answer": "7"},
            {"problem_id": "q1", "answer": "7"},
            {"problem_id": "q1", "answer": " 7"},
        ])
        pool = load_pool(f)
        assert pool.problem_id == "q1" and len(pool) == 3
        assert pool.answers == ("7", "7", " 7")
        assert pool.weights is None

    def test_weights(self, tmp_path):
        f = write_jsonl(tmp_path / "p.jsonl", [
            {"problem_id": "q", "answer": "a", "weight": 0.5},
            {"problem_id": "q", "answer": "b", "weight": 1},
            {"problem_id": "q", "answer": "a", "weight": 0},
        ])
        assert load_pool(f).weights == (0.5, 1.0, 0.0)

    def test_weight_out_of_range(self, tmp_path):
        f = write_jsonl(tmp_path / "p.jsonl", [
            {"problem_id": "q", "answer": "a", "weight": 0.3},
            {"problem_id": "q", "answer": "a", "weight": 1.2},
        ])
        with pytest.raises(IngestError, match=r"p\.jsonl:2:.*outside"):
            load_pool(f)

    @pytest.mark.parametrize("bad", ['"0.5"', "true", "NaN", "null"])
    def test_weight_types(self, tmp_path, bad):
        f = tmp_path / "p.jsonl"
        f.write_text('{"problem_id": "q", "answer": "a", "weight": 0.5}\n'
                     f'{{"problem_id": "q", "answer": "a", "weight": {bad}}}\n')
        with pytest.raises(IngestError, match=":2:"):
            load_pool(str(f))

    def test_mixed_weight_presence(self, tmp_path):
        f = write_jsonl(tmp_path / "p.jsonl", [
            {"problem_id": "q", "answer": "a", "weight": 0.3},
            {"problem_id": "q", "answer": "b"},
        ])
        with pytest.raises(IngestError, match="mixes"):
            load_pool(f)

    def test_empty_file(self, tmp_path):
        f = tmp_path / "p.jsonl"
        f.write_text("\n\n")
        with pytest.raises(IngestError, match="no records"):
            load_pools(str(f))

    @pytest.mark.parametrize("line", [
        "not json",
        "[1, 2]",
        '{"answer": "a"}',
        '{"problem_id": "q", "answer": 3}',
    ])
    def test_malformed(self, tmp_path, line):
        f = tmp_path / "p.jsonl"
        f.write_text('{"problem_id": "q", "answer": "a"}\n' + line + "\n")
        with pytest.raises(IngestError, match=":2:"):
            load_pools(str(f))

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError):
            load_pools(str(tmp_path / "nope.jsonl"))

    def test_multiple_problems(self, tmp_path):
        f = write_jsonl(tmp_path / "p.jsonl", [
            {"problem_id": "b", "answer": "1"},
            {"problem_id": "a", "answer": "2"},
            {"problem_id": "b", "answer": "3"},
        ])
        pools = load_pools(f)
        assert list(pools) == ["b", "a"] and len(pools["b"]) == 2
        with pytest.raises(IngestError):
            load_pool(f)
        assert load_pool(f, "a").answers == ("2",)
        with pytest.raises(IngestError):
            load_pool(f, "c")

    def test_large_pool_mode_by_counting(self, tmp_path):
        rng = np.random.default_rng(0)
        answers = rng.choice(["12", "13", "x", "7.0", "7"], size=1000, p=[0.3, 0.25, 0.2, 0.15, 0.1])
        f = write_jsonl(tmp_path / "p.jsonl", [{"problem_id": "q", "answer": str(a)} for a in answers])
        pool = load_pool(f)
        assert len(pool) == 1000
        ranked = Counter(answers.tolist()).most_common()
        assert pool.mode == ranked[0][0] and pool.runner_up == ranked[1][0]
        assert pool.counts() == dict(Counter(answers.tolist()))


class TestPool:
    def test_empty_pool(self):
        with pytest.raises(IngestError):
            AnswerPool("q", ())

    def test_tie_first_seen(self):
        pool = AnswerPool("q", ("b", "a", "a", "b", "c"))
        assert pool.mode == "b" and pool.runner_up == "a" and pool.mode_tie

    def test_encode(self):
        index, codes = AnswerPool("q", ("x", "y", "x")).encode()
        assert codes.tolist() == [0, 1, 0] and index.name(1) == "y"


class TestBootstrap:
    def test_single_record(self):
        pool = AnswerPool("q", ("only",), (0.4,))
        assert bootstrap_replicate(pool, 5, seed=1) == [("only", 0.4)] * 5

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            bootstrap_replicate(AnswerPool("q", ("a",)), 0, seed=1)

    def test_deterministic(self):
        pool = AnswerPool("q", tuple("abcdefg"))
        assert bootstrap_replicate(pool, 50, 9) == bootstrap_replicate(pool, 50, 9)
        assert bootstrap_replicate(pool, 50, 9) != bootstrap_replicate(pool, 50, 10)

    def test_marginals(self):
        pool = AnswerPool("q", ("a",) * 6 + ("b",) * 3 + ("c",))
        reps, n = 400, 100
        counts = Counter()
        for s in range(reps):
            counts.update(a for a, _ in bootstrap_replicate(pool, n, s))
        total = reps * n
        for ans, p in [("a", 0.6), ("b", 0.3), ("c", 0.1)]:
            assert abs(counts[ans] / total - p) <= 4 / math.sqrt(total)


class TestPoolReport:
    def test_concentrated_pool(self):
        pool = AnswerPool("q", ("42",) * 980 + tuple(str(i) for i in range(20)))
        reps = pool_report(pool, ["cite"], budgets=(64, 128), reps=100, seed=0)
        assert reps[0].rate >= 0.98 and reps[0].tau_mean < 20
        assert reps[0].extra == {"target": "42", "mode_tie": False}

    def test_case_b_on_concentrated_pool(self):
        pool = AnswerPool("q", ("42",) * 900 + ("41",) * 100)
        r = pool_report(pool, ["cite"], budgets=(256,), reps=100, case="B", seed=0)[0]
        assert r.rate == 0.0 and r.extra["target"] == "41"

    def test_tie_flagged(self):
        pool = AnswerPool("q", ("b", "a") * 50)
        r = pool_report(pool, ["cite"], budgets=(64,), reps=5)[0]
        assert r.extra == {"target": "b", "mode_tie": True}

    def test_case_b_without_runner_up(self):
        with pytest.raises(IngestError, match="runner-up"):
            pool_report(AnswerPool("q", ("a",) * 10), case="B", reps=2)

    def test_wcite_needs_weights(self):
        with pytest.raises(IngestError, match="weights"):
            pool_report(AnswerPool("q", ("a", "b")), ["wcite"], reps=2)

    def test_single_rep(self):
        pool = AnswerPool("q", ("a",) * 6 + ("b",) * 4, (0.9,) * 6 + (0.2,) * 4)
        for r in pool_report(pool, ["cite", "wcite", "mmc", "bonferroni"], budgets=(64, 256), reps=1):
            assert r.rate in (0.0, 1.0)

    def test_k_mean_nondecreasing(self):
        rng = np.random.default_rng(2)
        pool = AnswerPool("q", tuple(str(x) for x in rng.zipf(1.5, size=1000)))
        reps = pool_report(pool, ["cite"], budgets=(64, 128, 256, 512, 1024), reps=50)
        k = [r.K_mean for r in reps]
        assert all(a <= b for a, b in zip(k, k[1:]))
        assert k[0] >= 1
