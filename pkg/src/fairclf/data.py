"""Dataset representation, CSV/binary ingestion, deterministic splitting and
synthetic biased-dataset generation.

File formats
------------
CSV: header ``f0,...,f{d-1},label,g_<name1>,...,g_<nameN>``, one record per
row, features as decimal literals, label and group flags in {0,1}.

Binary: a little-endian float32 feature matrix (row-major) in one file, plus
a JSON sidecar at ``<path>.json`` holding dim, n_records, group_names, and
bit-packed base64 label/group vectors.

Group membership is a per-record bit vector, not a partition: a record may
belong to several groups or to none. Records with no group membership take
part in overall rates and the training loss but in no group-specific
constraint or metric.
"""

import base64
import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError

CSV_FORMAT = "csv"
BINARY_FORMAT = "binary"

# Class-conditional means sit at +-CLASS_AXIS on the first dimension. The
# magnitude is deliberately small relative to typical noise scales so that a
# 75-epoch run at the reference learning rate traverses the whole learning
# curve instead of converging within a few epochs.
CLASS_AXIS = 0.5

# Group-marker dimensions carry this multiple of the group's shift so that
# membership stays recoverable from features once shifts are nonzero.
MARKER_GAIN = 4.0


@dataclass(frozen=True)
class FeatureRecord:
    """One observation: dense features, binary label, group flags."""

    features: np.ndarray
    label: int
    groups: np.ndarray


class Dataset:
    """Immutable feature matrix with labels and named group memberships."""

    def __init__(self, dim, group_names, features, labels, groups):
        group_names = tuple(group_names)
        if len(set(group_names)) != len(group_names):
            raise DataError("duplicate group names")
        if any(not name for name in group_names):
            raise DataError("group names must be non-empty")
        features = np.ascontiguousarray(features, dtype=np.float32)
        labels = np.ascontiguousarray(labels, dtype=np.uint8)
        groups = np.ascontiguousarray(groups, dtype=np.uint8).reshape(
            len(labels), len(group_names)
        )
        if features.ndim != 2 or features.shape[1] != dim:
            raise DataError(f"feature matrix must be (n, {dim})")
        if labels.shape[0] != features.shape[0]:
            raise DataError("labels length must match feature rows")
        if labels.size and not (np.all((labels == 0) | (labels == 1))):
            raise DataError("labels must be 0 or 1")
        if groups.size and not np.all((groups == 0) | (groups == 1)):
            raise DataError("group flags must be 0 or 1")
        if labels.size == 0 or labels.min() == labels.max():
            raise DataError("dataset needs at least one record of each class")
        self.dim = int(dim)
        self.group_names = group_names
        self.features = features
        self.labels = labels
        self.groups = groups
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        self.groups.setflags(write=False)

    @property
    def n_records(self) -> int:
        return self.labels.shape[0]

    def __len__(self) -> int:
        return self.n_records

    def record(self, i: int) -> FeatureRecord:
        return FeatureRecord(self.features[i], int(self.labels[i]), self.groups[i])

    @property
    def records(self):
        return [self.record(i) for i in range(self.n_records)]

    def group_mask(self, name: str) -> np.ndarray:
        try:
            col = self.group_names.index(name)
        except ValueError:
            raise KeyError(f"unknown group {name!r}") from None
        return self.groups[:, col].astype(bool)

    def group_masks(self, names=None):
        """Ordered mapping name -> boolean membership vector."""
        return {n: self.group_mask(n) for n in (names or self.group_names)}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.group_names == other.group_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.groups, other.groups)
        )


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint, exhaustive train/validation/test index lists."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    @property
    def n_total(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)


def split_dataset(ds: Dataset, fractions=(0.70, 0.15, 0.15), seed: int = 0) -> SplitIndices:
    """Deterministic shuffled split; floor sizing for train and validation,
    remainder to test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = ds.n_records
    if n < 3:
        raise DataError("need at least 3 records to populate all three splits")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    return SplitIndices(
        train=perm[:n_train],
        validation=perm[n_train : n_train + n_val],
        test=perm[n_train + n_val :],
        seed=seed,
    )


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in (CSV_FORMAT, BINARY_FORMAT):
            raise ValueError(f"format must be 'csv' or 'binary', got {fmt!r}")
        return fmt
    if str(path).endswith(".csv"):
        return CSV_FORMAT
    if str(path).endswith(".bin"):
        return BINARY_FORMAT
    raise ValueError(f"cannot infer format from {path!r}; pass format explicitly")


def load_dataset(path, fmt=None) -> Dataset:
    """Read a dataset file; record order is preserved from the file."""
    fmt = _infer_format(path, fmt)
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    if fmt == CSV_FORMAT:
        return _load_csv(path)
    return _load_binary(path)


def save_dataset(ds: Dataset, path, fmt=None):
    """Write a dataset; the binary format adds a '<path>.json' sidecar."""
    fmt = _infer_format(path, fmt)
    if fmt == CSV_FORMAT:
        _save_csv(ds, path)
    else:
        _save_binary(ds, path)


def _parse_header(row):
    d = 0
    while d < len(row) and row[d] == f"f{d}":
        d += 1
    if d == 0 or d >= len(row) or row[d] != "label":
        raise DataError("header must be f0,...,f{d-1},label,g_<name>,...")
    names = []
    for col in row[d + 1 :]:
        if not col.startswith("g_") or len(col) == 2:
            raise DataError(f"bad group column {col!r}; expected g_<name>")
        names.append(col[2:])
    if len(set(names)) != len(names):
        raise DataError("duplicate group names in header")
    return d, names


def _load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        d, names = _parse_header(header)
        n_cols = len(header)
        features, labels, groups = [], [], []
        for rownum, row in enumerate(reader, start=1):
            if len(row) != n_cols:
                raise DataError(f"{path} row {rownum}: expected {n_cols} fields, got {len(row)}")
            try:
                feats = [float(v) for v in row[:d]]
            except ValueError:
                raise DataError(f"{path} row {rownum}: non-numeric feature") from None
            if not all(np.isfinite(feats)):
                raise DataError(f"{path} row {rownum}: non-finite feature")
            if row[d] not in ("0", "1"):
                raise DataError(f"{path} row {rownum}: label must be 0 or 1, got {row[d]!r}")
            flags = row[d + 1 :]
            if any(fl not in ("0", "1") for fl in flags):
                raise DataError(f"{path} row {rownum}: group flags must be 0 or 1")
            features.append(feats)
            labels.append(int(row[d]))
            groups.append([int(fl) for fl in flags])
    return Dataset(
        dim=d,
        group_names=names,
        features=np.array(features, dtype=np.float32).reshape(len(labels), d),
        labels=labels,
        groups=np.array(groups, dtype=np.uint8).reshape(len(labels), len(names)),
    )


def _fmt_f32(x) -> str:
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


def _save_csv(ds: Dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"f{i}" for i in range(ds.dim)]
            + ["label"]
            + [f"g_{n}" for n in ds.group_names]
        )
        for i in range(ds.n_records):
            writer.writerow(
                [_fmt_f32(v) for v in ds.features[i]]
                + [str(int(ds.labels[i]))]
                + [str(int(fl)) for fl in ds.groups[i]]
            )


def _pack_bits(vec) -> str:
    return base64.b64encode(np.packbits(np.asarray(vec, dtype=np.uint8))).decode()


def _unpack_bits(s: str, n: int) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(s), dtype=np.uint8)
    return np.unpackbits(raw)[:n]


def _save_binary(ds: Dataset, path):
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
    sidecar = {
        "dim": ds.dim,
        "n_records": ds.n_records,
        "group_names": list(ds.group_names),
        "labels": _pack_bits(ds.labels),
        "groups": {n: _pack_bits(ds.group_mask(n)) for n in ds.group_names},
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _load_binary(path) -> Dataset:
    sidecar_path = str(path) + ".json"
    if not os.path.exists(sidecar_path):
        raise DataError(f"{sidecar_path}: missing sidecar")
    with open(sidecar_path) as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{sidecar_path}: invalid JSON ({exc})") from None
    try:
        d = int(meta["dim"])
        n = int(meta["n_records"])
        names = list(meta["group_names"])
        labels = _unpack_bits(meta["labels"], n)
        groups = np.column_stack(
            [_unpack_bits(meta["groups"][name], n) for name in names]
        ) if names else np.zeros((n, 0), dtype=np.uint8)
    except (KeyError, TypeError) as exc:
        raise DataError(f"{sidecar_path}: malformed sidecar ({exc})") from None
    blob = np.fromfile(path, dtype="<f4")
    if blob.size != n * d:
        raise DataError(f"{path}: expected {n * d} floats, found {blob.size}")
    return Dataset(
        dim=d,
        group_names=names,
        features=blob.reshape(n, d),
        labels=labels,
        groups=groups,
    )


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic biased-dataset generator.

    Features are Gaussian around class means -CLASS_AXIS/+CLASS_AXIS on
    the first dimension.
    Each group's shift magnitude does two things: it moves that group's
    error-prone class toward the decision boundary on the class axis
    (shift > 0 squeezes the negatives upward, making the group
    false-positive-prone; shift < 0 squeezes the positives downward,
    making it false-negative-prone), and it marks members with a mean
    offset of the same size on a dedicated per-group dimension so that
    membership is recoverable from features. Zero shift leaves the
    feature distribution independent of membership.
    """

    n_records: int
    dim: int
    group_prevalence: tuple
    group_positive_rate: tuple
    overall_positive_rate: float
    group_shift: tuple
    noise_scale: float = 1.0
    seed: int = 0
    group_names: Optional[tuple] = None

    @property
    def n_groups(self) -> int:
        return len(self.group_prevalence)

    def names(self):
        if self.group_names is not None:
            return tuple(self.group_names)
        return tuple(f"g{i}" for i in range(self.n_groups))

    def validate(self):
        if self.n_records < 1:
            raise DataError("n_records must be positive")
        if self.noise_scale <= 0:
            raise DataError("noise scale must be positive")
        if not (
            len(self.group_positive_rate)
            == len(self.group_shift)
            == self.n_groups
        ):
            raise DataError("per-group parameter lists must have equal length")
        if self.group_names is not None and len(self.group_names) != self.n_groups:
            raise DataError("group_names length must match the group count")
        for p in self.group_prevalence:
            if not 0.0 <= p <= 1.0:
                raise DataError("group prevalences must lie in [0, 1]")
        for r in (*self.group_positive_rate, self.overall_positive_rate):
            if not 0.0 <= r <= 1.0:
                raise DataError("positive rates must lie in [0, 1]")
        if self.dim < 1 + self.n_groups:
            raise DataError(
                f"dim must be at least 1 + n_groups = {1 + self.n_groups} "
                "(class axis plus one marker dimension per group)"
            )


def _background_rate(cfg: SynthConfig) -> float:
    """Positive rate for group-free records that hits the overall target.

    Memberships are independent per group; a record in several groups uses
    the mean of its groups' rates. Enumerates all membership patterns.
    """
    n = cfg.n_groups
    p_empty = 1.0
    rate_mass = 0.0
    for pattern in range(1, 2**n):
        prob = 1.0
        rates = []
        for i in range(n):
            if pattern >> i & 1:
                prob *= cfg.group_prevalence[i]
                rates.append(cfg.group_positive_rate[i])
            else:
                prob *= 1.0 - cfg.group_prevalence[i]
        rate_mass += prob * (sum(rates) / len(rates))
    for i in range(n):
        p_empty *= 1.0 - cfg.group_prevalence[i]
    if p_empty < 1e-12:
        if abs(rate_mass - cfg.overall_positive_rate) > 1e-9:
            raise DataError(
                "infeasible rates: every record belongs to a group, so the "
                f"overall positive rate is fixed at {rate_mass:.4f}"
            )
        return 0.0
    q = (cfg.overall_positive_rate - rate_mass) / p_empty
    if not 0.0 <= q <= 1.0:
        raise DataError(
            "infeasible rate combination: group-free records would need a "
            f"positive rate of {q:.4f} to reach the overall target "
            f"{cfg.overall_positive_rate}"
        )
    return q


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Draw a dataset per SynthConfig; deterministic for a given seed."""
    cfg.validate()
    base_rate = _background_rate(cfg)
    rng = np.random.default_rng(cfg.seed)
    n, d, ng = cfg.n_records, cfg.dim, cfg.n_groups

    member = rng.random((n, ng)) < np.asarray(cfg.group_prevalence)
    rates = np.asarray(cfg.group_positive_rate)
    counts = member.sum(axis=1)
    sums = member @ rates
    p_pos = np.where(counts > 0, sums / np.maximum(counts, 1), base_rate)
    y = rng.random(n) < p_pos

    x = rng.normal(0.0, cfg.noise_scale, size=(n, d))
    x[:, 0] += np.where(y, CLASS_AXIS, -CLASS_AXIS)
    for i, shift in enumerate(cfg.group_shift):
        error_prone = (member[:, i] & ~y) if shift >= 0 else (member[:, i] & y)
        x[:, 0] += shift * error_prone
        x[:, 1 + i] += MARKER_GAIN * shift * member[:, i]
    return Dataset(
        dim=d,
        group_names=cfg.names(),
        features=x.astype(np.float32),
        labels=y.astype(np.uint8),
        groups=member.astype(np.uint8),
    )
