import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_auc, brute_c_index, logrank_table
from wsimmd.ksurv import comparable_pairs
from wsimmd.errors import DegenerateDataError, ValidationError
from wsimmd.evaluation import (EvalReport, aggregate_pvalue, auc_roc, bootstrap_auc_ci, c_index,
                               km_estimate, logrank_test, oob_draw, oob_split, optimal_threshold)


class TestAuc:
    def test_fixture(self):
        assert auc_roc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75

    def test_separated_and_ties(self):
        assert auc_roc([0, 0, 1, 1], [1, 2, 3, 4]) == 1.0
        assert auc_roc([0, 1, 0, 1], [7, 7, 7, 7]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValidationError):
            auc_roc([1, 1, 1], [0.1, 0.2, 0.3])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(-5, 5)), min_size=2, max_size=40))
    def test_against_brute_force(self, rows):
        labels = [r[0] for r in rows]
        if len(set(labels)) < 2:
            return
        scores = np.array([r[1] for r in rows], dtype=float) / 4
        a = auc_roc(labels, scores)
        assert a == pytest.approx(brute_auc(labels, scores), abs=1e-15)
        assert a + auc_roc(labels, -scores) == 1.0
        assert auc_roc(labels, np.exp(scores) * 3 + 1) == a


class TestBootstrap:
    def test_identical_scores_collapse(self):
        ci = bootstrap_auc_ci([0, 1] * 10, [1.0] * 20, runs=200, seed=1)
        assert (ci.point, ci.lower, ci.upper) == (0.5, 0.5, 0.5)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        y, s = rng.integers(0, 2, 50), rng.normal(size=50)
        a = bootstrap_auc_ci(y, s, runs=300, seed=42)
        b = bootstrap_auc_ci(y, s, runs=300, seed=42)
        assert (a.lower, a.upper) == (b.lower, b.upper)
        np.testing.assert_array_equal(a.values, b.values)
        c = bootstrap_auc_ci(y, s, runs=300, seed=43)
        assert not np.array_equal(a.values, c.values)

    def test_separated_fixture(self):
        rng = np.random.default_rng(3)
        y = np.repeat([0, 1], 100)
        s = rng.normal(size=200) + 4.0 * y
        ci = bootstrap_auc_ci(y, s, runs=1000, seed=7)
        assert ci.lower > 0.9
        assert ci.lower <= ci.upper

    def test_rare_class_redraws(self):
        y = np.zeros(30, dtype=int)
        y[0] = 1
        ci = bootstrap_auc_ci(y, np.arange(30.0), runs=100, seed=0)
        assert np.all((ci.values >= 0) & (ci.values <= 1))


class TestCIndex:
    def test_examples(self):
        assert c_index([1, 2, 3], [1, 1, 1], [3, 2, 1]) == 1.0
        assert c_index([1, 2, 3], [1, 1, 1], [1, 2, 3]) == 0.0
        assert c_index([1, 2, 3], [1, 1, 1], [1, 1, 1]) == 0.5

    def test_against_brute_force_and_negation(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = 25
            t = rng.integers(1, 10, n).astype(float)
            e = rng.integers(0, 2, n)
            e[np.argmin(t)] = 1
            t[np.argmin(t)] = 0.5
            r = rng.permutation(n).astype(float)
            c = c_index(t, e, r)
            assert c == pytest.approx(brute_c_index(t, e, r), abs=1e-15)
            assert c_index(t, e, -r) == pytest.approx(1 - c, abs=1e-15)

    def test_no_pairs(self):
        with pytest.raises(DegenerateDataError):
            c_index([1, 2], [0, 0], [1, 2])


class TestOOB:
    def test_oob_fraction(self):
        fracs = []
        for seed in range(20):
            events = np.repeat([0, 1], 500)
            split = oob_split(1000, events, seed)
            for v in (0, 1):
                stratum = np.flatnonzero(events == v)
                fracs.append(np.isin(stratum, split.test).mean())
        assert abs(np.mean(fracs) - 0.368) < 0.05
        assert all(abs(f - 0.368) < 0.05 for f in fracs)

    def test_partition_and_determinism(self):
        rng = np.random.default_rng(0)
        events = rng.integers(0, 2, 60)
        times = rng.exponential(size=60)
        a = oob_split(60, events, 9, times=times)
        b = oob_split(60, events, 9, times=times)
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)
        assert set(a.train).isdisjoint(a.test)
        assert sorted(set(a.train) | set(a.test)) == list(range(60))
        assert set(events[a.test]) == {0, 1}
        for idx in (a.train, a.test):
            assert len(comparable_pairs(times[idx], events[idx])) > 0

    def test_single_event_never_dropped(self):
        events = np.array([1] + [0] * 19)
        for seed in range(20):
            train, test = oob_draw(events, np.random.default_rng(seed))
            assert (0 in train) != (0 in test)
            assert sorted(np.concatenate([train, test])) == list(range(20))

    def test_single_event_cannot_satisfy_constraint(self):
        with pytest.raises(DegenerateDataError):
            oob_split(20, np.array([1] + [0] * 19), 0)

    def test_missing_stratum(self):
        with pytest.raises(DegenerateDataError):
            oob_split(5, np.zeros(5, dtype=int), 0)


class TestKM:
    def test_all_events(self):
        km = km_estimate([1, 2, 3], [1, 1, 1])
        np.testing.assert_allclose(km([0.5, 1, 2, 3, 4]), [1, 2 / 3, 1 / 3, 0, 0], atol=1e-15)
        assert km.rows()[0] == ("", 0.0, 1.0, 3)

    def test_all_censored(self):
        km = km_estimate([1, 2, 3], [0, 0, 0])
        np.testing.assert_array_equal(km([0, 1, 10]), 1.0)

    def test_single_event(self):
        km = km_estimate([5], [1])
        assert km(4.999) == 1.0 and km(5) == 0.0

    def test_censoring_only_shrinks_risk_set(self):
        km = km_estimate([1, 2, 3, 4], [1, 0, 1, 0])
        # 1 - 1/4, then (3/4)(1 - 1/2)
        np.testing.assert_allclose(km([1, 2, 3]), [0.75, 0.75, 0.375])

    def test_matches_empirical_without_censoring(self):
        rng = np.random.default_rng(0)
        t = rng.exponential(size=50)
        km = km_estimate(t, np.ones(50))
        grid = np.linspace(0, t.max() * 1.1, 40)
        emp = np.array([(t > g).mean() for g in grid])
        np.testing.assert_allclose(km(grid), emp, atol=1e-12)
        assert np.all(np.diff(km.survival) <= 0)


class TestLogRank:
    def test_identical_groups(self):
        g = ([1, 2, 3, 4], [1, 0, 1, 1])
        res = logrank_test(g, g)
        assert res.statistic == 0.0 and res.p_value == 1.0

    def test_separated_groups(self):
        rng = np.random.default_rng(1)
        ta, tb = rng.uniform(0.1, 1, 20), rng.uniform(10, 20, 20)
        ea = eb = np.ones(20, dtype=int)
        res = logrank_test((ta, ea), (tb, eb))
        assert res.p_value < 0.001
        assert res.statistic == pytest.approx(logrank_table(ta, ea, tb, eb), rel=1e-12)
        assert not res.small_sample

    def test_symmetry_and_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            ta, tb = rng.integers(1, 8, 12).astype(float), rng.integers(1, 8, 9).astype(float)
            ea, eb = rng.integers(0, 2, 12), rng.integers(0, 2, 9)
            ea[0] = 1
            r1 = logrank_test((ta, ea), (tb, eb))
            r2 = logrank_test((tb, eb), (ta, ea))
            assert r1.statistic == r2.statistic and r1.p_value == r2.p_value
            assert r1.statistic == pytest.approx(logrank_table(ta, ea, tb, eb), rel=1e-10, abs=1e-14)
            assert r1.statistic >= 0 and 0 < r1.p_value <= 1

    def test_small_sample_flag(self):
        assert logrank_test(([1, 2], [1, 1]), ([3, 4], [1, 0])).small_sample

    def test_no_events(self):
        with pytest.raises(ValidationError):
            logrank_test(([1, 2], [0, 0]), ([3], [0]))


class TestThreshold:
    def test_two_points(self):
        assert optimal_threshold([0, 1], [1, 2], [1, 1]) == 0.5

    def test_all_equal(self):
        with pytest.raises(DegenerateDataError):
            optimal_threshold([2, 2, 2], [1, 2, 3], [1, 1, 1])

    @pytest.mark.parametrize("seed", range(10))
    def test_recovers_groups(self, seed):
        # high-risk group: all events at t=1; low-risk group: censored at t=10
        rng = np.random.default_rng(seed)
        n0, n1 = rng.integers(10, 40, 2)
        risk = np.concatenate([rng.uniform(0, 1, n0), rng.uniform(5, 6, n1)])
        times = np.concatenate([np.full(n0, 10.0), np.full(n1, 1.0)])
        events = np.concatenate([np.zeros(n0), np.ones(n1)])
        thr = optimal_threshold(risk, times, events)
        assert np.all(risk[:n0] <= thr) and np.all(risk[n0:] > thr)

    def test_respects_min_fraction(self):
        rng = np.random.default_rng(0)
        risk = rng.normal(size=50)
        thr = optimal_threshold(risk, rng.exponential(size=50), np.ones(50))
        k = int((risk > thr).sum())
        assert min(k, 50 - k) >= 5


class TestAggregate:
    def test_examples(self):
        assert aggregate_pvalue([0.01, 0.02, 0.03]) == pytest.approx(0.04, abs=1e-15)
        assert aggregate_pvalue([0.9, 0.9]) == 1.0
        assert aggregate_pvalue([0.001, 0.022, 0.5]) == pytest.approx(0.044, abs=1e-15)
        assert aggregate_pvalue([0.02, 0.024]) == pytest.approx(0.044, abs=1e-15)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            aggregate_pvalue([])
        with pytest.raises(ValidationError):
            aggregate_pvalue([1.5])


def test_report_json(tmp_path):
    EvalReport("auc", 0.8, 0.7, 0.9, 0.95, [0.75, 0.85]).to_json(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["estimate"] == 0.8 and doc["per_run"] == [0.75, 0.85]
    with pytest.raises(ValidationError):
        EvalReport("auc", 0.8, 0.9, 0.7)
