"""Feature sets, dataset manifests, and the seeded synthetic generator.

A slide is a *bag* of patch feature vectors (a :class:`FeatureSet`).  Bags are
stored either in the compact binary ``MMDF`` format or as headerless CSV, and a
manifest CSV binds slide ids to files plus optional outcomes.
"""

import csv
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

FEATURE_MAGIC = b"MMDF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sBBII")
FEATURE_HEADER_SIZE = _FEATURE_HEADER.size  # 14 bytes

MANIFEST_COLUMNS = ("id", "path", "label", "time", "event")
DEFAULT_CENSOR_HORIZON = 10.0


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """One bag of ``n`` patch vectors of dimension ``dim`` (stored as float64)."""

    id: str
    patches: np.ndarray

    def __post_init__(self):
        arr = np.array(self.patches, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValidationError(f"{self.id}: patches must be 2-D, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise ValidationError(f"{self.id}: feature set has no patches")
        if arr.shape[1] == 0:
            raise ValidationError(f"{self.id}: feature dimension is 0")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{self.id}: non-finite feature value")
        arr.flags.writeable = False
        object.__setattr__(self, "patches", arr)

    @property
    def n(self) -> int:
        return self.patches.shape[0]

    @property
    def dim(self) -> int:
        return self.patches.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.patches, other.patches)

    def __repr__(self):
        return f"FeatureSet(id={self.id!r}, n={self.n}, dim={self.dim})"


def _is_csv(path):
    return Path(path).suffix.lower() in (".csv", ".txt")


def read_featureset(path, id=None) -> FeatureSet:
    """Read a feature set from an ``MMDF`` binary or a headerless CSV file.

    The format is chosen by extension (``.csv``/``.txt`` means CSV).  ``id``
    defaults to the file stem.
    """
    path = Path(path)
    fid = id if id is not None else path.stem
    if _is_csv(path):
        return _read_csv_features(path, fid)
    with open(path, "rb") as fh:
        head = fh.read(FEATURE_HEADER_SIZE)
        if len(head) < FEATURE_HEADER_SIZE:
            raise FormatError(f"{path}: truncated header")
        magic, version, _reserved, n, d = _FEATURE_HEADER.unpack(head)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != FEATURE_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if n == 0 or d == 0:
            raise ValidationError(f"{path}: empty feature set (n={n}, d={d})")
        payload = fh.read()
    if len(payload) != 4 * n * d:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {4 * n * d}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    try:
        return FeatureSet(fid, values)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _read_csv_features(path, fid):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise ValidationError(f"{path}: empty feature set")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError(f"{path}: ragged rows (widths {sorted(widths)})")
    try:
        return FeatureSet(fid, np.asarray(rows))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_featureset(fs: FeatureSet, path) -> None:
    """Write ``fs`` to ``path``; binary ``MMDF`` unless the suffix is ``.csv``.

    The binary format holds float32, so values are rounded to single precision.
    CSV keeps full double precision.
    """
    path = Path(path)
    try:
        if _is_csv(path):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for row in fs.patches:
                    w.writerow([repr(float(v)) for v in row])
            return
        data = fs.patches.astype("<f4")
        if not np.all(np.isfinite(data)):
            raise ValidationError(f"{fs.id}: values overflow single precision")
        with open(path, "wb") as fh:
            fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, 0, fs.n, fs.dim))
            fh.write(data.tobytes(order="C"))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write feature set {fs.id!r}: {exc.strerror}",
                      str(path)) from exc


# -- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    label: Optional[int] = None
    time: Optional[float] = None
    event: Optional[int] = None


@dataclass
class Dataset:
    """Manifest rows with their loaded feature sets, index-aligned."""

    entries: list
    sets: list = field(default_factory=list)

    @property
    def ids(self):
        return [e.id for e in self.entries]

    @property
    def dim(self):
        return self.sets[0].dim if self.sets else None

    def __len__(self):
        return len(self.entries)

    def labels(self):
        """Binary labels as an int array; raises if any row lacks one."""
        missing = [e.id for e in self.entries if e.label is None]
        if missing:
            raise ValidationError(f"missing label for {missing[:5]}")
        return np.array([e.label for e in self.entries], dtype=int)

    def outcomes(self):
        """(times, events) arrays; raises if any row lacks a time or event."""
        missing = [e.id for e in self.entries if e.time is None or e.event is None]
        if missing:
            raise ValidationError(f"missing survival outcome for {missing[:5]}")
        times = np.array([e.time for e in self.entries], dtype=float)
        events = np.array([e.event for e in self.entries], dtype=int)
        return times, events


def _parse_binary(value, col, row_id):
    if value == "":
        return None
    try:
        f = float(value)
    except ValueError:
        raise ValidationError(f"row {row_id!r}: {col}={value!r} is not numeric") from None
    if f not in (0.0, 1.0):
        raise ValidationError(f"row {row_id!r}: {col} must be 0 or 1, got {value!r}")
    return int(f)


def _parse_time(value, row_id):
    if value == "":
        return None
    try:
        t = float(value)
    except ValueError:
        raise ValidationError(f"row {row_id!r}: time={value!r} is not numeric") from None
    if not math.isfinite(t) or t < 0:
        raise ValidationError(f"row {row_id!r}: time must be finite and >= 0, got {value!r}")
    return t


def read_manifest(path) -> list:
    """Parse and validate a manifest CSV without touching feature files."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "path"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: manifest header must include 'id' and 'path'")
        entries, seen = [], set()
        for row in reader:
            rid = (row.get("id") or "").strip()
            if not rid:
                raise ValidationError(f"{path}: empty id")
            if rid in seen:
                raise ValidationError(f"{path}: duplicate id {rid!r}")
            seen.add(rid)
            label = _parse_binary((row.get("label") or "").strip(), "label", rid)
            time = _parse_time((row.get("time") or "").strip(), rid)
            event = _parse_binary((row.get("event") or "").strip(), "event", rid)
            if event == 1 and time is None:
                raise ValidationError(f"{path}: row {rid!r} has event=1 but no time")
            entries.append(ManifestEntry(rid, (row.get("path") or "").strip(),
                                         label, time, event))
    return entries


def load_manifest(path, threads=1) -> Dataset:
    """Load a manifest and every referenced feature set.

    Feature paths are resolved relative to the manifest's directory.  Row order
    is preserved: ``dataset.sets[i]`` belongs to manifest row ``i``.
    """
    path = Path(path)
    entries = read_manifest(path)
    base = path.parent

    def load(entry):
        fpath = Path(entry.path)
        if not fpath.is_absolute():
            fpath = base / fpath
        if not fpath.exists():
            raise FileNotFoundError(2, f"feature file for {entry.id!r} not found", str(fpath))
        return read_featureset(fpath, id=entry.id)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            sets = list(pool.map(load, entries))
    else:
        sets = [load(e) for e in entries]
    dims = {s.dim for s in sets}
    if len(dims) > 1:
        bad = [(s.id, s.dim) for s in sets if s.dim != sets[0].dim][:5]
        raise ValidationError(f"{path}: dimension mismatch across feature sets "
                              f"(first is {sets[0].dim}; {bad})")
    return Dataset(entries, sets)


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in entries:
            w.writerow([
                e.id, e.path,
                "" if e.label is None else e.label,
                "" if e.time is None else f"{e.time:.17g}",
                "" if e.event is None else e.event,
            ])


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthSpec:
    """Recipe for a Gaussian-blob synthetic cohort.

    ``n_sets`` is the number of bags per group (an int, or one count per
    group).  Means and scales may be scalars (broadcast over features) or
    full ``dim``-vectors.  Survival outcomes are generated when
    ``group_rates`` is given: event times are exponential with the group's
    rate, a ``censor_fraction`` of subjects is censored at a uniform point
    before their event, and everything is truncated at ``censor_horizon``.
    """

    n_sets: object
    patches_per_set: tuple
    dim: int
    group_means: list
    group_scales: list
    seed: int
    group_rates: Optional[list] = None
    censor_fraction: float = 0.0
    censor_horizon: float = DEFAULT_CENSOR_HORIZON

    @property
    def n_groups(self):
        return len(self.group_means)

    def counts(self):
        if isinstance(self.n_sets, (list, tuple)):
            return [int(c) for c in self.n_sets]
        return [int(self.n_sets)] * self.n_groups

    def validate(self):
        g = self.n_groups
        if g < 1:
            raise ValidationError("synthetic spec needs at least one group")
        if len(self.group_scales) != g:
            raise ValidationError("group_scales must have one entry per group")
        counts = self.counts()
        if len(counts) != g:
            raise ValidationError("n_sets must be an int or have one entry per group")
        if any(c < 1 for c in counts):
            raise ValidationError("every group needs at least one feature set")
        if self.dim < 1:
            raise ValidationError("dim must be positive")
        lo, hi = self.patches_per_set
        if not 1 <= lo <= hi:
            raise ValidationError(f"invalid patches_per_set range {self.patches_per_set}")
        for name, vecs in (("group_means", self.group_means), ("group_scales", self.group_scales)):
            for v in vecs:
                arr = np.broadcast_to(np.asarray(v, dtype=float), (self.dim,))
                if not np.all(np.isfinite(arr)):
                    raise ValidationError(f"{name} must be finite")
        for s in self.group_scales:
            if np.any(np.asarray(s, dtype=float) < 0):
                raise ValidationError("group_scales must be non-negative")
        if self.group_rates is not None:
            if len(self.group_rates) != g or any(not r > 0 for r in self.group_rates):
                raise ValidationError("group_rates needs one positive rate per group")
        if not 0.0 <= self.censor_fraction < 1.0:
            raise ValidationError("censor_fraction must lie in [0, 1)")
        if not self.censor_horizon > 0:
            raise ValidationError("censor_horizon must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["patches_per_set"] = tuple(d["patches_per_set"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad synthetic spec: {exc}") from None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SyntheticData:
    entries: list
    sets: list
    groups: np.ndarray

    def dataset(self):
        return Dataset(list(self.entries), list(self.sets))


def generate_synthetic(spec: SynthSpec) -> SyntheticData:
    """Draw a deterministic synthetic cohort from ``spec``.

    Patches for a bag in group ``g`` are ``mean_g + scale_g * z`` with ``z``
    standard normal.  Labels are the group index when there are at most two
    groups.
    """
    spec.validate()
    feat_seq, out_seq = np.random.SeedSequence(spec.seed).spawn(2)
    feat_rng = np.random.default_rng(feat_seq)
    out_rng = np.random.default_rng(out_seq)
    lo, hi = spec.patches_per_set
    label_groups = spec.n_groups <= 2

    entries, sets, groups = [], [], []
    k = 0
    for g, count in enumerate(spec.counts()):
        mean = np.broadcast_to(np.asarray(spec.group_means[g], dtype=float), (spec.dim,))
        scale = np.broadcast_to(np.asarray(spec.group_scales[g], dtype=float), (spec.dim,))
        for _ in range(count):
            sid = f"S{k:04d}"
            n = int(feat_rng.integers(lo, hi + 1))
            patches = mean + scale * feat_rng.standard_normal((n, spec.dim))
            # quantized so in-memory bags equal what the binary format stores
            patches = patches.astype(np.float32)
            sets.append(FeatureSet(sid, patches))
            time = event = None
            if spec.group_rates is not None:
                t_event = float(out_rng.exponential(1.0 / spec.group_rates[g]))
                censored = out_rng.random() < spec.censor_fraction
                u = float(out_rng.random())
                time, event = (u * t_event, 0) if censored else (t_event, 1)
                if time > spec.censor_horizon:
                    time, event = float(spec.censor_horizon), 0
            entries.append(ManifestEntry(sid, f"features/{sid}.mmdf",
                                         g if label_groups else None, time, event))
            groups.append(g)
            k += 1
    return SyntheticData(entries, sets, np.array(groups, dtype=int))


def write_synthetic(data: SyntheticData, out_dir) -> Path:
    """Write features, ``manifest.csv`` and ``groups.csv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    for entry, fs in zip(data.entries, data.sets):
        write_featureset(fs, out / entry.path)
    manifest = out / "manifest.csv"
    write_manifest(data.entries, manifest)
    with open(out / "groups.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "group"])
        for e, g in zip(data.entries, data.groups):
            w.writerow([e.id, int(g)])
    return manifest


def quantize(fs: FeatureSet) -> FeatureSet:
    """Round ``fs`` to single precision, i.e. what a binary round trip yields."""
    return FeatureSet(fs.id, fs.patches.astype(np.float32))


__all__ = [
    "FeatureSet", "ManifestEntry", "Dataset", "SynthSpec", "SyntheticData",
    "read_featureset", "write_featureset", "read_manifest", "load_manifest",
    "write_manifest", "generate_synthetic", "write_synthetic", "quantize",
    "FEATURE_HEADER_SIZE", "DEFAULT_CENSOR_HORIZON",
]
