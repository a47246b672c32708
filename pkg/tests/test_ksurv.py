import numpy as np
import pytest

from oracles import brute_c_index, survival_gd, survival_objective
from wsimmd.errors import UnfittableError, ValidationError
from wsimmd.ksurv import RankingObjective, SurvModel, comparable_pairs, fit, risk_scores, truncate


def pairset(p):
    return {tuple(map(int, r)) for r in p}


def rbf(rng, n, d=2, shift=None):
    x = rng.normal(size=(n, d))
    if shift is not None:
        x += shift[:, None]
    sq = ((x[:, None] - x[None]) ** 2).sum(-1)
    return np.exp(-sq / 2.0), x


class TestPairs:
    def test_fully_observed(self):
        assert pairset(comparable_pairs([1, 2, 3], [1, 1, 1])) == {(0, 1), (0, 2), (1, 2)}

    def test_censored_anchor(self):
        assert len(comparable_pairs([1, 2], [0, 1])) == 0

    def test_horizon(self):
        assert pairset(comparable_pairs([5, 12], [1, 1], censor_horizon=10)) == {(0, 1)}
        t, e = truncate([5, 12], [1, 1], 10)
        np.testing.assert_array_equal(t, [5, 10])
        np.testing.assert_array_equal(e, [1, 0])

    def test_ties_and_shape(self):
        p = comparable_pairs([2, 2, 3], [1, 1, 0])
        assert pairset(p) == {(0, 2), (1, 2)}
        assert p.shape == (2, 2)

    def test_invariants_random(self):
        rng = np.random.default_rng(0)
        t = rng.integers(0, 8, size=30).astype(float)
        e = rng.integers(0, 2, size=30)
        p = comparable_pairs(t, e)
        assert np.all(e[p[:, 0]] == 1)
        assert np.all(t[p[:, 0]] < t[p[:, 1]])
        assert len(pairset(p)) == len(p)
        brute = {(i, j) for i in range(30) for j in range(30) if e[i] == 1 and t[i] < t[j]}
        assert pairset(p) == brute

    @pytest.mark.parametrize("t, e", [([-1, 2], [1, 1]), ([1, 2], [1, 2]),
                                      ([np.nan, 2], [1, 1]), ([1, 2, 3], [1, 1])])
    def test_invalid(self, t, e):
        with pytest.raises(ValidationError):
            comparable_pairs(t, e)


def test_two_point_closed_form():
    m = fit(np.eye(2), [[0, 1]], alpha=1.0)
    np.testing.assert_allclose(m.betas, [1 / 3, -1 / 3], atol=1e-9)
    np.testing.assert_allclose(risk_scores(m, np.eye(2)), [1 / 3, -1 / 3], atol=1e-9)


def test_small_alpha_shrinks_to_zero():
    norms = [np.abs(fit(np.eye(2), [[0, 1]], alpha=a).betas).max() for a in (1e-2, 1e-4, 1e-6)]
    assert norms[0] > norms[1] > norms[2]
    assert norms[2] < 1e-5


def test_zero_betas_give_zero_scores():
    m = SurvModel(np.zeros(3), 0.1, [0, 1, 2], 0.0, 0)
    np.testing.assert_array_equal(risk_scores(m, np.ones((2, 3))), 0.0)


def test_matches_gd_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 11))
        K, _ = rbf(rng, n)
        t = rng.permutation(n).astype(float) + 1
        e = np.ones(n, dtype=int)
        e[rng.random(n) < 0.3] = 0
        e[np.argmin(t)] = 1
        pairs = comparable_pairs(t, e)
        alpha = float(rng.choice([0.125, 1.0, 5.0]))
        m = fit(K, pairs, alpha=alpha)
        _, ref = survival_gd(K, pairs, alpha)
        got = survival_objective(K, pairs, alpha, m.betas)
        assert got == pytest.approx(m.objective, rel=1e-12, abs=1e-14)
        worst = max(worst, abs(got - ref))
    assert worst <= 1e-6


def test_gradient_finite_difference():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(3, 9))
        K, _ = rbf(rng, n)
        pairs = comparable_pairs(rng.permutation(n).astype(float), np.ones(n, dtype=int))
        obj = RankingObjective(K, pairs, 0.7)
        beta = rng.normal(size=n)
        g = obj.gradient(beta)
        h = 1e-6
        fd = np.array([(obj.value(beta + h * ei) - obj.value(beta - h * ei)) / (2 * h)
                       for ei in np.eye(n)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_objective_below_start():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(2, 12))
        K, _ = rbf(rng, n)
        pairs = comparable_pairs(rng.permutation(n).astype(float), np.ones(n, dtype=int))
        m = fit(K, pairs, alpha=0.125)
        assert m.objective < 0.125 / 2 * len(pairs)


def test_orientation_on_risk_ordered_groups():
    rng = np.random.default_rng(4)
    n = 40
    group = np.repeat([0, 1], n // 2)
    K, _ = rbf(rng, n, shift=3.0 * group)
    # group 1 dies earlier
    t = rng.exponential(np.where(group == 1, 1.0, 5.0))
    e = np.ones(n, dtype=int)
    m = fit(K, comparable_pairs(t, e), alpha=0.125)
    f = risk_scores(m, K)
    assert brute_c_index(t, e, f) >= 0.5
    assert f[group == 1].mean() > f[group == 0].mean()


def test_time_rescaling_and_shift_invariance():
    rng = np.random.default_rng(5)
    n = 15
    K, _ = rbf(rng, n)
    t = rng.exponential(3.0, size=n)
    e = (rng.random(n) < 0.7).astype(int)
    e[np.argmin(t)] = 1
    base = comparable_pairs(t, e)
    m0 = fit(K, base)
    for tt in (t * 7.3, t + 4.0):
        p = comparable_pairs(tt, e)
        np.testing.assert_array_equal(p, base)
        m = fit(K, p)
        np.testing.assert_array_equal(m.betas, m0.betas)
        np.testing.assert_array_equal(risk_scores(m, K), risk_scores(m0, K))


def test_json_round_trip(tmp_path):
    import json
    m = fit(np.eye(2), [[0, 1]], alpha=1.0, train_ids=["a", "b"])
    m.to_json(tmp_path / "m.json")
    back = SurvModel.from_dict(json.loads((tmp_path / "m.json").read_text()))
    np.testing.assert_array_equal(back.betas, m.betas)
    assert back.train_ids == ["a", "b"] and back.alpha == 1.0


def test_errors():
    with pytest.raises(UnfittableError, match="no comparable pairs"):
        fit(np.eye(2), np.empty((0, 2), dtype=int))
    with pytest.raises(ValidationError):
        fit(np.eye(2), [[0, 2]])
    with pytest.raises(ValidationError):
        fit(np.eye(2), [[0, 1]], alpha=0.0)
    m = fit(np.eye(2), [[0, 1]])
    with pytest.raises(ValidationError, match="columns"):
        risk_scores(m, np.ones((1, 3)))
