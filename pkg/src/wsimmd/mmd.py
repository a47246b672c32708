"""Kernelized MMD between bags and the dataset-level distance/kernel matrices.

The patch kernel is the Gaussian ``k(x, y) = exp(-||x - y||^2 / (4 sigma^2))``.
Note the ``4 sigma^2`` denominator: a conventional RBF with ``2 l^2`` matches
when ``l = sigma * sqrt(2)``.

Between two bags the biased (V-statistic) estimator is used, so the distance of
a bag to itself is exactly zero and the derived kernel has a unit diagonal.
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ._backend import get_gram_sum
from .dataio import FeatureSet
from .errors import DegenerateDataError, FormatError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 10.0
DEFAULT_GAMMA = 4.0
DEFAULT_BLOCK_SIZE = 256
CLAMP_WARN = 1e-9
PSD_RTOL = 1e-6


@dataclass(frozen=True)
class PatchKernelConfig:
    """Gaussian patch kernel plus evaluation knobs.

    ``block_size`` bounds the scratch Gram block to ``block_size x N_J``
    doubles; ``backend`` picks ``"cython"`` or ``"python"`` (default: the
    compiled core when available).
    """

    sigma: float = DEFAULT_SIGMA
    block_size: int = DEFAULT_BLOCK_SIZE
    backend: Optional[str] = None

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"sigma must be positive and finite, got {self.sigma}")
        if self.block_size < 1:
            raise ValidationError("block_size must be >= 1")

    @property
    def scale(self):
        return 1.0 / (4.0 * self.sigma * self.sigma)


def _cfg(cfg):
    if cfg is None:
        return PatchKernelConfig()
    if isinstance(cfg, PatchKernelConfig):
        return cfg
    return PatchKernelConfig(sigma=float(cfg))


def patch_kernel(x, y, cfg=None) -> float:
    cfg = _cfg(cfg)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValidationError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(-cfg.scale * np.dot(diff, diff)))


def _patches(s):
    return s.patches if isinstance(s, FeatureSet) else np.asarray(s, dtype=np.float64)


def self_term(a, cfg=None) -> float:
    """Mean patch-kernel value within one bag, ``(1/N^2) sum k(a_i, a_i')``."""
    cfg = _cfg(cfg)
    pa = _patches(a)
    gram = get_gram_sum(cfg.backend)
    return gram(pa, pa, cfg.scale, cfg.block_size) / (pa.shape[0] * pa.shape[0])


def mmd_sq_raw(a, b, cfg=None, self_a=None, self_b=None) -> float:
    """Unclamped biased MMD^2 estimate; may be slightly negative from rounding."""
    cfg = _cfg(cfg)
    pa, pb = _patches(a), _patches(b)
    if pa.shape[1] != pb.shape[1]:
        raise ValidationError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    if self_a is None:
        self_a = self_term(pa, cfg)
    if self_b is None:
        self_b = self_term(pb, cfg)
    gram = get_gram_sum(cfg.backend)
    # the cross term runs through the same kernel as the self terms, so an
    # identical pair cancels exactly
    cross = gram(pa, pb, cfg.scale, cfg.block_size) / (pa.shape[0] * pb.shape[0])
    return self_a + self_b - 2.0 * cross


def _clamp(value, context=""):
    if value < 0.0:
        if value < -CLAMP_WARN:
            log.warning("clamped MMD^2 of %.3e to 0%s", value, context)
        return 0.0
    return value


def mmd_sq(a, b, cfg=None, self_a=None, self_b=None) -> float:
    """Biased squared MMD between two bags, clamped at 0.

    ``self_a``/``self_b`` accept precomputed :func:`self_term` values.
    """
    return _clamp(mmd_sq_raw(a, b, cfg, self_a, self_b))


# -- matrices ----------------------------------------------------------------

@dataclass
class DistanceMatrix:
    ids: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if self.values.shape != (n, n):
            raise ValidationError(f"distance matrix shape {self.values.shape} != ({n}, {n})")

    @property
    def n(self):
        return len(self.ids)

    def validate(self):
        v = self.values
        if not np.all(np.isfinite(v)):
            raise ValidationError("distance matrix has non-finite entries")
        if not np.array_equal(v, v.T):
            raise ValidationError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0):
            raise ValidationError("distance matrix diagonal is not zero")
        if np.any(v < 0):
            raise ValidationError("distance matrix has negative entries")
        return self


@dataclass
class KernelMatrix:
    ids: list
    values: np.ndarray
    gamma: Optional[float] = None
    min_eigenvalue: Optional[float] = None
    jitter: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if self.values.shape != (n, n):
            raise ValidationError(f"kernel matrix shape {self.values.shape} != ({n}, {n})")

    @property
    def n(self):
        return len(self.ids)

    def block(self, rows, cols):
        return self.values[np.ix_(rows, cols)]


def distance_matrix(sets: Sequence[FeatureSet], cfg=None, threads=1) -> DistanceMatrix:
    """All pairwise MMD^2 values between ``sets``.

    Self terms are computed once per bag, then each unordered pair once; the
    lower triangle mirrors the upper exactly.  With ``threads > 1`` pairs run
    on a thread pool (the Gram kernels release the GIL) and BLAS is pinned to
    one thread per worker.  Results do not depend on scheduling.
    """
    cfg = _cfg(cfg)
    sets = list(sets)
    if len(sets) < 2:
        raise ValidationError("distance_matrix needs at least two feature sets")
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise ValidationError(f"inconsistent feature dimensions {sorted(dims)}")
    n = len(sets)
    pairs = list(combinations(range(n), 2))

    def pair(ij):
        i, j = ij
        try:
            return mmd_sq_raw(sets[i], sets[j], cfg, selfs[i], selfs[j])
        except ValidationError as exc:
            raise ValidationError(f"pair ({i}, {j}) [{sets[i].id}, {sets[j].id}]: {exc}") from None

    if threads > 1:
        with threadpool_limits(limits=1, user_api="blas"), ThreadPoolExecutor(threads) as pool:
            selfs = list(pool.map(lambda s: self_term(s, cfg), sets))
            raw = list(pool.map(pair, pairs))
    else:
        selfs = [self_term(s, cfg) for s in sets]
        raw = [pair(p) for p in pairs]

    values = np.zeros((n, n))
    for (i, j), r in zip(pairs, raw):
        values[i, j] = values[j, i] = _clamp(r, f" for pair ({sets[i].id}, {sets[j].id})")
    return DistanceMatrix([s.id for s in sets], values)


def min_eigenvalue(values) -> float:
    return float(np.linalg.eigvalsh(values)[0])


def kernel_from_distance(dist: DistanceMatrix, gamma: float) -> KernelMatrix:
    """Mercer kernel ``exp(-gamma * D)`` with a numerical PSD check.

    If the smallest eigenvalue is below ``-1e-6 * N`` a diagonal jitter of
    ``1e-8 * trace / N`` is added and a warning logged.
    """
    gamma = float(gamma)
    if not (np.isfinite(gamma) and gamma >= 0):
        raise ValidationError(f"gamma must be finite and >= 0, got {gamma}")
    dist.validate()
    k = np.exp(-gamma * dist.values)
    np.fill_diagonal(k, 1.0)
    n = dist.n
    lam = min_eigenvalue(k)
    jitter = 0.0
    if lam < -PSD_RTOL * n:
        jitter = 1e-8 * np.trace(k) / n
        k[np.diag_indices(n)] += jitter
        after = min_eigenvalue(k)
        log.warning("kernel min eigenvalue %.3e below -%.0e*N; added diagonal jitter %.3e "
                    "(min eigenvalue now %.3e)", lam, PSD_RTOL, jitter, after)
        lam = after
    return KernelMatrix(list(dist.ids), k, gamma=gamma, min_eigenvalue=lam, jitter=jitter)


def median_inverse_gamma(dist: DistanceMatrix) -> float:
    """``1 / median`` of the strict upper triangle of ``dist``."""
    if dist.n < 2:
        raise ValidationError("need at least two items for a median distance")
    upper = dist.values[np.triu_indices(dist.n, k=1)]
    med = float(np.median(upper))
    if not med > 0:
        raise DegenerateDataError("median off-diagonal MMD^2 is zero; "
                                  "cannot derive gamma (are the feature sets identical?)")
    return 1.0 / med


# -- matrix files --------------------------------------------------------------

MATRIX_MAGIC = b"MMDK"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sBBI")
FLAG_DISTANCE, FLAG_KERNEL = 0, 1


def write_matrix(m, path) -> None:
    """Write a distance or kernel matrix; ``.csv`` suffix selects the CSV mirror."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w") as fh:
            fh.write(",".join(["id"] + list(m.ids)) + "\n")
            for rid, row in zip(m.ids, m.values):
                fh.write(",".join([rid] + [f"{v:.17g}" for v in row]) + "\n")
        return
    flag = FLAG_KERNEL if isinstance(m, KernelMatrix) else FLAG_DISTANCE
    with open(path, "wb") as fh:
        fh.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, flag, m.n))
        fh.write(np.ascontiguousarray(m.values, dtype="<f8").tobytes())
        for rid in m.ids:
            raw = rid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def read_matrix(path):
    """Read a matrix file; returns :class:`DistanceMatrix` or :class:`KernelMatrix`.

    CSV files carry no kind flag and always load as a distance matrix.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path) as fh:
            header = fh.readline().rstrip("\n").split(",")[1:]
            ids, rows = [], []
            for line in fh:
                if not line.strip():
                    continue
                cells = line.rstrip("\n").split(",")
                ids.append(cells[0])
                rows.append([float(c) for c in cells[1:]])
        if ids != header:
            raise FormatError(f"{path}: row ids do not match header")
        return DistanceMatrix(ids, np.array(rows, dtype=float).reshape(len(ids), len(ids)))
    data = path.read_bytes()
    if len(data) < _MATRIX_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, flag, n = _MATRIX_HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MATRIX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if flag not in (FLAG_DISTANCE, FLAG_KERNEL):
        raise FormatError(f"{path}: unknown matrix kind flag {flag}")
    off = _MATRIX_HEADER.size
    end = off + 8 * n * n
    if len(data) < end:
        raise FormatError(f"{path}: truncated matrix payload")
    values = np.frombuffer(data[off:end], dtype="<f8").reshape(n, n).copy()
    ids = []
    off = end
    for _ in range(n):
        if off + 4 > len(data):
            raise FormatError(f"{path}: truncated id table")
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        ids.append(data[off:off + ln].decode("utf-8"))
        off += ln
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after id table")
    if flag == FLAG_KERNEL:
        return KernelMatrix(ids, values, min_eigenvalue=min_eigenvalue(values))
    return DistanceMatrix(ids, values)
