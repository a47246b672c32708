"""Kernel survival SVM: squared-hinge ranking loss over comparable pairs.

With ``f = K beta`` the objective is::

    J(beta) = 1/2 beta^T K beta + alpha/2 * sum_{(i,j)} max(0, 1 - (f_i - f_j))^2

over comparable pairs ``(i, j)`` (``T_i < T_j`` and ``i`` had an event), so a
higher score means higher risk.  Minimized by Newton steps solved with
conjugate gradients and an Armijo line search, from ``beta = 0``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .dataio import DEFAULT_CENSOR_HORIZON
from .errors import NumericalError, UnfittableError, ValidationError

DEFAULT_ALPHA = 0.125
DEFAULT_MAX_NEWTON = 500
GRAD_RTOL = 1e-6


def truncate(times, events, horizon=DEFAULT_CENSOR_HORIZON):
    """Administrative censoring at ``horizon``: later times become censored there."""
    times = np.asarray(times, dtype=float).copy()
    events = np.asarray(events, dtype=int).copy()
    late = times > horizon
    times[late] = horizon
    events[late] = 0
    return times, events


def comparable_pairs(times, events, censor_horizon=None) -> np.ndarray:
    """Ordered pairs ``(i, j)`` with ``T_i < T_j`` and ``event_i == 1``.

    Times are first truncated at ``censor_horizon`` when given.  Returned as an
    ``(m, 2)`` int array sorted lexicographically; tied times give no pair.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if times.shape != events.shape or times.ndim != 1:
        raise ValidationError("times and events must be 1-D arrays of equal length")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValidationError("survival times must be finite and non-negative")
    if not set(np.unique(events).tolist()) <= {0, 1}:
        raise ValidationError("events must be 0 or 1")
    if censor_horizon is not None:
        times, events = truncate(times, events, censor_horizon)
    mask = (events[:, None] == 1) & (times[:, None] < times[None, :])
    ii, jj = np.nonzero(mask)
    return np.column_stack([ii, jj]).astype(int)


def _pair_matrix(pairs, n):
    m = len(pairs)
    rows = np.repeat(np.arange(m), 2)
    cols = pairs.ravel()
    vals = np.tile([1.0, -1.0], m)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))


@dataclass
class SurvModel:
    betas: np.ndarray
    alpha: float
    train_ids: list
    objective: float = float("nan")
    iterations: int = 0
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"betas": [float(b) for b in self.betas], "alpha": float(self.alpha),
                "train_ids": list(self.train_ids), "objective": float(self.objective),
                "iterations": int(self.iterations), "params": self.params}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["betas"], dtype=float), float(d["alpha"]), list(d["train_ids"]),
                   float(d.get("objective", "nan")), int(d.get("iterations", 0)),
                   dict(d.get("params", {})))


class RankingObjective:
    """Value, gradient and Hessian-vector products of the ranking objective."""

    def __init__(self, K, pairs, alpha):
        self.K = np.asarray(K, dtype=float)
        self.n = self.K.shape[0]
        self.pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        self.alpha = float(alpha)
        self.D = _pair_matrix(self.pairs, self.n)

    def residual(self, beta):
        f = self.K @ beta
        return np.maximum(0.0, 1.0 - self.D @ f), f

    def value(self, beta):
        r, _ = self.residual(beta)
        return float(0.5 * beta @ self.K @ beta + 0.5 * self.alpha * r @ r)

    def gradient(self, beta):
        r, _ = self.residual(beta)
        return self.K @ beta - self.alpha * (self.K @ (self.D.T @ r))

    def value_and_grad(self, beta):
        r, _ = self.residual(beta)
        kb = self.K @ beta
        val = float(0.5 * beta @ kb + 0.5 * self.alpha * r @ r)
        return val, kb - self.alpha * (self.K @ (self.D.T @ r))

    def hessp(self, beta, v):
        """Generalized Hessian ``(K + alpha K D_a^T D_a K) v`` over active pairs."""
        r, _ = self.residual(beta)
        Da = self.D[r > 0]
        kv = self.K @ v
        return kv + self.alpha * (self.K @ (Da.T @ (Da @ kv)))


def _cg(matvec, b, tol, maxiter):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    bnorm = np.sqrt(b @ b)
    for _ in range(maxiter):
        if np.sqrt(rs) <= tol * bnorm:
            break
        ap = matvec(p)
        pap = p @ ap
        if pap <= 0:
            break
        step = rs / pap
        x += step * p
        r -= step * ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def fit(K_train, pairs, alpha=DEFAULT_ALPHA, max_iter=DEFAULT_MAX_NEWTON, train_ids=None,
        grad_rtol=GRAD_RTOL) -> SurvModel:
    """Minimize the ranking objective; stops when ``max|grad| <= grad_rtol * (1 + |J|)``."""
    K = np.asarray(getattr(K_train, "values", K_train), dtype=float)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValidationError("training kernel must be square")
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise UnfittableError("no comparable pairs: need at least one observed event "
                              "preceding another patient's time")
    if pairs.min() < 0 or pairs.max() >= n:
        raise ValidationError("pair indices out of range")
    if not (alpha > 0 and np.isfinite(alpha)):
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if train_ids is None:
        train_ids = getattr(K_train, "ids", None) or list(range(n))

    obj = RankingObjective(K, pairs, alpha)
    beta = np.zeros(n)
    val, g = obj.value_and_grad(beta)
    for it in range(max_iter + 1):
        gmax = float(np.abs(g).max())
        if gmax <= grad_rtol * (1.0 + abs(val)):
            return SurvModel(beta, float(alpha), list(train_ids), val, it)
        if it == max_iter:
            break
        step = _cg(lambda v: obj.hessp(beta, v), -g, 1e-10, 2 * n + 10)
        slope = float(g @ step)
        if not np.all(np.isfinite(step)) or slope >= 0:
            # ill-conditioned system: fall back to steepest descent
            step, slope = -g, -float(g @ g)
        t = 1.0
        while True:
            cand = beta + t * step
            cval, cg = obj.value_and_grad(cand)
            if cval <= val + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-20:
                # no decrease possible at this precision
                cand, cval, cg = beta, val, g
                break
        if cval == val and np.array_equal(cand, beta):
            gmax = float(np.abs(g).max())
            raise NumericalError(f"line search stalled (max gradient {gmax:.3e})")
        beta, val, g = cand, cval, cg
    raise NumericalError(f"survival SVM did not converge in {max_iter} Newton steps "
                         f"(max gradient {float(np.abs(g).max()):.3e})")


def risk_scores(model: SurvModel, K_cross) -> np.ndarray:
    """Risk ``f(t) = sum_i beta_i K(t, i)``; higher means earlier expected event."""
    Kc = np.atleast_2d(np.asarray(getattr(K_cross, "values", K_cross), dtype=float))
    if Kc.shape[1] != len(model.betas):
        raise ValidationError(f"cross kernel has {Kc.shape[1]} columns, model has "
                              f"{len(model.betas)} training items")
    return Kc @ model.betas
