"""Evaluation statistics: AUC with bootstrap CI, C-index, out-of-bag splits,
Kaplan-Meier curves, the log-rank test, risk thresholds and p-value pooling.

Every resampling routine takes an explicit integer seed; run ``r`` of a
bootstrap draws from ``default_rng([seed, r])`` so runs are independent of
execution order.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import chi2, rankdata

from .errors import DegenerateDataError, ValidationError
from .ksurv import comparable_pairs

DEFAULT_BOOTSTRAP_RUNS = 1000
DEFAULT_OOB_RUNS = 50
DEFAULT_LEVEL = 0.95
MIN_GROUP_FRACTION = 0.1
SMALL_SAMPLE_EVENTS = 10


def _binary(labels):
    labels = np.asarray(labels)
    vals = set(np.unique(labels).tolist())
    if not vals <= {0, 1}:
        raise ValidationError(f"labels must be 0/1, got {sorted(vals)}")
    return labels.astype(int)


def auc_roc(labels, scores) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counted as 1/2."""
    y = _binary(labels)
    s = np.asarray(scores, dtype=float)
    if y.shape != s.shape:
        raise ValidationError("labels and scores differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes present")
    ranks = rankdata(s)  # average ranks, exact multiples of 1/2
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


class BootstrapCI(NamedTuple):
    point: float
    lower: float
    upper: float
    values: np.ndarray


def bootstrap_auc_ci(labels, scores, runs=DEFAULT_BOOTSTRAP_RUNS, level=DEFAULT_LEVEL,
                     seed=0, max_redraws=1000) -> BootstrapCI:
    """Percentile bootstrap interval for the AUC.

    Resamples missing a class are redrawn (up to ``max_redraws`` times per run).
    """
    y = _binary(labels)
    s = np.asarray(scores, dtype=float)
    point = auc_roc(y, s)
    if not 0 < level < 1:
        raise ValidationError("level must be in (0, 1)")
    n = len(y)
    values = np.empty(runs)
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        for _ in range(max_redraws):
            idx = rng.integers(0, n, size=n)
            yb = y[idx]
            if 0 < yb.sum() < n:
                break
        else:
            raise DegenerateDataError("could not draw a bootstrap sample containing both classes")
        values[r] = auc_roc(yb, s[idx])
    lo, hi = np.quantile(values, [(1 - level) / 2, 1 - (1 - level) / 2])
    return BootstrapCI(point, float(lo), float(hi), values)


def c_index(times, events, risks) -> float:
    """Harrell's concordance over comparable pairs; tied risks count 1/2."""
    risks = np.asarray(risks, dtype=float)
    pairs = comparable_pairs(times, events)
    if len(pairs) == 0:
        raise DegenerateDataError("C-index undefined: no comparable pairs")
    ri, rj = risks[pairs[:, 0]], risks[pairs[:, 1]]
    conc = np.count_nonzero(ri > rj) + 0.5 * np.count_nonzero(ri == rj)
    return float(conc / len(pairs))


# -- resampling --------------------------------------------------------------

class OOBSplit(NamedTuple):
    train: np.ndarray
    test: np.ndarray
    attempts: int


def oob_draw(events, rng):
    """One stratified bootstrap draw: each event stratum resampled to its own size.

    Returns ``(train, test)``: unique drawn indices and never-drawn indices.
    """
    events = np.asarray(events)
    n = len(events)
    drawn = np.zeros(n, dtype=bool)
    for value in (0, 1):
        stratum = np.flatnonzero(events == value)
        if len(stratum):
            drawn[rng.choice(stratum, size=len(stratum), replace=True)] = True
    return np.flatnonzero(drawn), np.flatnonzero(~drawn)


def oob_split(n, events, seed, times=None, max_attempts=100) -> OOBSplit:
    """Out-of-bag bootstrap split stratified by event status.

    Draws are repeated until the test set holds both strata and, when
    ``times`` are given, both train and test contain a comparable pair.
    """
    events = np.asarray(events, dtype=int)
    if len(events) != n:
        raise ValidationError(f"events has length {len(events)}, expected {n}")
    if not (np.any(events == 1) and np.any(events == 0)):
        raise DegenerateDataError("out-of-bag split needs both event and censored patients")
    rng = np.random.default_rng(seed)
    for attempt in range(1, max_attempts + 1):
        train, test = oob_draw(events, rng)
        if not (np.any(events[test] == 1) and np.any(events[test] == 0)):
            continue
        if times is not None:
            t = np.asarray(times, dtype=float)
            if len(comparable_pairs(t[test], events[test])) == 0:
                continue
            if len(comparable_pairs(t[train], events[train])) == 0:
                continue
        return OOBSplit(train, test, attempt)
    raise DegenerateDataError(f"no valid out-of-bag split after {max_attempts} draws "
                              "(strata too small for a test set with comparable pairs)")


# -- Kaplan-Meier and log-rank ----------------------------------------------------

@dataclass
class KMCurve:
    """Right-continuous product-limit step function."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    group: str = ""

    def __call__(self, t):
        """Survival probability at time(s) ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return np.where(idx >= 0, self.survival[np.maximum(idx, 0)], 1.0)

    def rows(self):
        return [(self.group, float(t), float(s), int(a))
                for t, s, a in zip(self.times, self.survival, self.at_risk)]


def km_estimate(times, events, group="") -> KMCurve:
    """Kaplan-Meier estimate; starts at ``(0, 1.0, n)`` and steps at event times."""
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=int)
    if t.size == 0:
        raise ValidationError("Kaplan-Meier needs at least one observation")
    event_times = np.unique(t[e == 1])
    pts_t, pts_s, pts_n = [], [], []
    if event_times.size == 0 or event_times[0] > 0:
        pts_t.append(0.0)
        pts_s.append(1.0)
        pts_n.append(int(t.size))
    s = 1.0
    for tk in event_times:
        n_k = int(np.count_nonzero(t >= tk))
        d_k = int(np.count_nonzero((t == tk) & (e == 1)))
        s *= 1.0 - d_k / n_k
        pts_t.append(float(tk))
        pts_s.append(s)
        pts_n.append(n_k)
    return KMCurve(np.array(pts_t), np.array(pts_s), np.array(pts_n, dtype=int), group)


class LogRankResult(NamedTuple):
    statistic: float
    p_value: float
    n_events: int
    small_sample: bool


def logrank_test(group_a, group_b) -> LogRankResult:
    """Two-group log-rank test with the asymptotic chi-square(1) p-value.

    ``group_a``/``group_b`` are ``(times, events)`` pairs.  ``small_sample``
    flags fewer than 10 events in total.
    """
    ta, ea = (np.asarray(x) for x in group_a)
    tb, eb = (np.asarray(x) for x in group_b)
    if ta.size == 0 or tb.size == 0:
        raise ValidationError("log-rank test needs two nonempty groups")
    ta, tb = ta.astype(float), tb.astype(float)
    ea, eb = ea.astype(int), eb.astype(int)
    event_times = np.unique(np.concatenate([ta[ea == 1], tb[eb == 1]]))
    n_events = int(ea.sum() + eb.sum())
    if n_events == 0:
        raise ValidationError("log-rank test undefined: no events")
    # counts per distinct event time; written in a form antisymmetric in a <-> b
    na = np.count_nonzero(ta[None, :] >= event_times[:, None], axis=1).astype(float)
    nb = np.count_nonzero(tb[None, :] >= event_times[:, None], axis=1).astype(float)
    da = np.count_nonzero((ta[None, :] == event_times[:, None]) & (ea[None, :] == 1), axis=1)
    db = np.count_nonzero((tb[None, :] == event_times[:, None]) & (eb[None, :] == 1), axis=1)
    n = na + nb
    d = (da + db).astype(float)
    o_minus_e = float(np.sum((da * nb - db * na) / n))
    ok = n > 1
    var = float(np.sum(na[ok] * nb[ok] * d[ok] * (n[ok] - d[ok]) / (n[ok] ** 2 * (n[ok] - 1))))
    if not var > 0:
        raise ValidationError("log-rank test undefined: zero variance")
    stat = o_minus_e ** 2 / var
    return LogRankResult(float(stat), float(chi2.sf(stat, 1)), n_events,
                         n_events < SMALL_SAMPLE_EVENTS)


def optimal_threshold(risks, times, events, min_fraction=MIN_GROUP_FRACTION) -> float:
    """Risk cut-off maximizing the log-rank statistic between high and low groups.

    Candidates are midpoints between consecutive distinct risks that leave at
    least ``min_fraction`` of samples on each side; ties go to the lowest.
    High risk means ``risk > threshold``.
    """
    r = np.asarray(risks, dtype=float)
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=int)
    u = np.unique(r)
    if u.size < 2:
        raise DegenerateDataError("no admissible threshold: fewer than two distinct risks")
    n = len(r)
    best, best_stat = None, -np.inf
    for thr in (u[:-1] + u[1:]) / 2.0:
        high = r > thr
        k = int(high.sum())
        if min(k, n - k) < min_fraction * n:
            continue
        try:
            res = logrank_test((t[high], e[high]), (t[~high], e[~high]))
        except ValidationError:
            continue
        if res.statistic > best_stat:
            best, best_stat = float(thr), res.statistic
    if best is None:
        raise DegenerateDataError("no admissible threshold")
    return best


def aggregate_pvalue(p_runs) -> float:
    """``min(1, 2 * median(p_runs))``."""
    p = np.asarray(p_runs, dtype=float)
    if p.size == 0:
        raise ValidationError("no p-values to aggregate")
    if np.any((p < 0) | (p > 1)):
        raise ValidationError("p-values must lie in [0, 1]")
    return float(min(1.0, 2.0 * np.median(p)))


# -- reports -------------------------------------------------------------------

@dataclass
class EvalReport:
    metric: str
    estimate: float
    lower: Optional[float] = None
    upper: Optional[float] = None
    level: Optional[float] = None
    per_run: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ValidationError("confidence interval has lower > upper")

    def to_dict(self):
        d = asdict(self)
        d["per_run"] = [float(v) for v in self.per_run]
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
