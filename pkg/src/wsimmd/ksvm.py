"""Binary soft-margin SVM on a precomputed kernel, trained with SMO.

The dual solved is ``min 1/2 a^T Q a - sum(a)`` subject to ``0 <= a_i <= C_i``
and ``y^T a = 0``, with ``Q_ij = y_i y_j K_ij``.  Each iteration picks the
maximal KKT-violating pair and solves the two-variable subproblem in closed
form.  Working-set selection is deterministic (ties go to the lowest index).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

DEFAULT_C = 10_000.0
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 1_000_000
_TAU = 1e-12


@dataclass
class SvmModel:
    support_indices: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    C: float
    n_train: int
    iterations: int = 0
    params: dict = field(default_factory=dict)

    def dual_coef(self):
        """Full-length ``alpha_i * y_i`` over all training indices."""
        coef = np.zeros(self.n_train)
        coef[self.support_indices] = self.alphas * self.labels
        return coef

    def to_dict(self):
        return {
            "support_indices": [int(i) for i in self.support_indices],
            "alphas": [float(a) for a in self.alphas],
            "labels": [int(v) for v in self.labels],
            "bias": float(self.bias),
            "C": float(self.C),
            "n_train": int(self.n_train),
            "iterations": int(self.iterations),
            "params": self.params,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["support_indices"], dtype=int), np.array(d["alphas"], dtype=float),
                   np.array(d["labels"], dtype=int), float(d["bias"]), float(d["C"]),
                   int(d["n_train"]), int(d.get("iterations", 0)), dict(d.get("params", {})))


def as_signed_labels(y):
    """Map {0,1} or {-1,+1} labels to a float array of -1/+1."""
    y = np.asarray(y)
    vals = set(np.unique(y).tolist())
    if vals <= {0, 1}:
        return np.where(y == 1, 1.0, -1.0)
    if vals <= {-1, 1}:
        return y.astype(float)
    raise ValidationError(f"labels must be binary, got values {sorted(vals)}")


def _box(y, C, class_weight):
    """Per-sample upper bounds; ``"balanced"`` scales C inversely to class size."""
    if class_weight is None:
        return np.full(y.shape, float(C))
    if class_weight != "balanced":
        raise ValidationError(f"class_weight must be None or 'balanced', got {class_weight!r}")
    n = len(y)
    w = {c: n / (2.0 * np.sum(y == c)) for c in (-1.0, 1.0)}
    return np.array([C * w[v] for v in y])


def dual_objective(K, y, alphas):
    """Dual value ``sum(a) - 1/2 (a*y)^T K (a*y)`` (to be maximized)."""
    ay = alphas * y
    return float(alphas.sum() - 0.5 * ay @ K @ ay)


def fit_smo(K_train, y, C=DEFAULT_C, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
            class_weight=None, polish=True, monitor=None) -> SvmModel:
    """Fit a C-SVM on a precomputed training kernel.

    ``y`` may be {0,1} or {-1,+1}.  After SMO meets ``tol`` the free variables
    are re-solved exactly from the KKT equations with the bounded ones held
    fixed (``polish``); the result is kept only if it stays inside the box,
    does not lower the dual, and still meets ``tol``.  ``monitor``, if a list,
    receives the dual objective after every SMO iteration (slow; debugging).
    """
    K = np.asarray(getattr(K_train, "values", K_train), dtype=float)
    y = as_signed_labels(y)
    n = len(y)
    if K.shape != (n, n):
        raise ValidationError(f"kernel shape {K.shape} does not match {n} labels")
    if not (C > 0 and np.isfinite(C)):
        raise ValidationError(f"C must be positive, got {C}")
    if np.all(y == y[0]):
        raise ValidationError("training labels contain a single class")
    if not np.allclose(K, K.T, rtol=0, atol=1e-12):
        raise ValidationError("training kernel is not symmetric")
    lam = float(np.linalg.eigvalsh(K)[0])
    if lam < -1e-6 * n:
        raise NumericalError(f"training kernel is not PSD (min eigenvalue {lam:.3e})")

    Cv = _box(y, C, class_weight)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.diag(K).copy()

    it = 0
    while True:
        gap, i, j = _select(alpha, grad, y, Cv)
        if gap <= tol:
            # refresh the incrementally updated gradient before accepting
            grad = y * (K @ (alpha * y)) - 1.0
            gap, i, j = _select(alpha, grad, y, Cv)
            if gap <= tol:
                break
        if it >= max_iter:
            raise NumericalError(f"SMO did not converge in {max_iter} iterations "
                                 f"(max KKT violation {gap:.3e})")
        a = diag[i] + diag[j] - 2.0 * K[i, j]
        if a <= 0:
            a = _TAU
        t = gap / a
        # bounds keeping both variables inside their boxes
        ti = Cv[i] - alpha[i] if y[i] > 0 else alpha[i]
        tj = alpha[j] if y[j] > 0 else Cv[j] - alpha[j]
        t = min(t, ti, tj)
        if t == ti:
            alpha[i] = Cv[i] if y[i] > 0 else 0.0
        else:
            alpha[i] += y[i] * t
        if t == tj:
            alpha[j] = 0.0 if y[j] > 0 else Cv[j]
        else:
            alpha[j] -= y[j] * t
        grad += y * t * (K[:, i] - K[:, j])
        it += 1
        if monitor is not None:
            monitor.append(dual_objective(K, y, alpha))

    bias = _bias(alpha, grad, y, Cv)
    if polish:
        polished = _polish(K, y, alpha, Cv, tol)
        if polished is not None:
            alpha, bias = polished
    sv = np.flatnonzero(alpha > 0)
    return SvmModel(sv, alpha[sv].copy(), y[sv].astype(int), bias, float(C), n, it,
                    {"tol": tol, "class_weight": class_weight})


def _select(alpha, grad, y, Cv):
    """Maximal violating pair: returns ``(m - M, i, j)``."""
    up = ((y > 0) & (alpha < Cv)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < Cv)) | ((y > 0) & (alpha > 0))
    score = -y * grad
    if not up.any() or not low.any():
        return -np.inf, -1, -1
    s_up = np.where(up, score, -np.inf)
    s_low = np.where(low, score, np.inf)
    i = int(np.argmax(s_up))
    j = int(np.argmin(s_low))
    return float(s_up[i] - s_low[j]), i, j


def _polish(K, y, alpha, Cv, tol):
    free = np.flatnonzero((alpha > 0) & (alpha < Cv))
    if free.size == 0:
        return None
    fixed = np.flatnonzero(~((alpha > 0) & (alpha < Cv)))
    ay_fixed = alpha[fixed] * y[fixed]
    # [K_FF*yy  y_F] [a_F]   [1 - y_F * (K_FB (a y)_B)]
    # [y_F^T     0 ] [ b ] = [-y_B^T a_B              ]
    m = free.size
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = (y[free, None] * y[None, free]) * K[np.ix_(free, free)]
    A[:m, m] = y[free]
    A[m, :m] = y[free]
    rhs = np.empty(m + 1)
    rhs[:m] = 1.0 - y[free] * (K[np.ix_(free, fixed)] @ ay_fixed)
    rhs[m] = -float(y[fixed] @ alpha[fixed])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    cand = alpha.copy()
    cand[free] = sol[:m]
    if np.any(cand[free] <= 0) or np.any(cand[free] >= Cv[free]):
        return None
    if dual_objective(K, y, cand) < dual_objective(K, y, alpha):
        return None
    grad = y * (K @ (cand * y)) - 1.0
    gap, _, _ = _select(cand, grad, y, Cv)
    if gap > tol:
        return None
    return cand, float(sol[m])


def _bias(alpha, grad, y, Cv):
    score = -y * grad
    free = (alpha > 0) & (alpha < Cv)
    if free.any():
        return float(score[free].mean())
    up = ((y > 0) & (alpha < Cv)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < Cv)) | ((y > 0) & (alpha > 0))
    hi = score[up].max() if up.any() else score[low].min()
    lo = score[low].min() if low.any() else hi
    return float((hi + lo) / 2.0)


def decision_function(model: SvmModel, K_cross) -> np.ndarray:
    """Raw scores ``sum_i alpha_i y_i K(t, i) + b`` for each test row."""
    Kc = np.atleast_2d(np.asarray(getattr(K_cross, "values", K_cross), dtype=float))
    if Kc.shape[1] != model.n_train:
        raise ValidationError(f"cross kernel has {Kc.shape[1]} columns, model was trained "
                              f"on {model.n_train} items")
    return Kc[:, model.support_indices] @ (model.alphas * model.labels) + model.bias


def kkt_violation(model: SvmModel, K_train, y) -> float:
    """Largest KKT violation of ``model`` on its training data."""
    y = as_signed_labels(y)
    K = np.asarray(getattr(K_train, "values", K_train), dtype=float)
    alpha = np.zeros(model.n_train)
    alpha[model.support_indices] = model.alphas
    Cv = _box(y, model.C, model.params.get("class_weight"))
    margin = y * decision_function(model, K) - 1.0
    at_zero = alpha == 0
    at_c = alpha >= Cv
    free = ~at_zero & ~at_c
    viol = np.zeros(len(y))
    viol[at_zero] = np.maximum(0.0, -margin[at_zero])
    viol[free] = np.abs(margin[free])
    viol[at_c] = np.maximum(0.0, margin[at_c])
    return float(viol.max())
