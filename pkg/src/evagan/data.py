"""Dataset construction: CSV ingestion, preprocessing, stratified split, MNIST IDX, undersampling, synthetic data."""

from __future__ import annotations

import csv
import gzip
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .networks import MAJORITY_LABEL, MINORITY_LABEL

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_SIDE = 28


class DataError(ValueError):
    pass


# ----------------------------------------------------------------- containers


@dataclass
class RawTable:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]


@dataclass
class PreprocessReport:
    original_columns: list[str]
    dropped_nan_inf_columns: list[str] = field(default_factory=list)
    dropped_zero_std_columns: list[str] = field(default_factory=list)
    clip_bounds: dict[str, list[float]] = field(default_factory=dict)
    scale_min: dict[str, float] = field(default_factory=dict)
    scale_max: dict[str, float] = field(default_factory=dict)
    rows_in: int = 0
    rows_out: int = 0

    @property
    def retained_columns(self) -> list[str]:
        return list(self.scale_min)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class TabularDataset:
    """Feature matrix with binary labels (0 = minority/botnet, 1 = majority/normal)."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    report: PreprocessReport | None = None
    value_range: tuple[float, float] = (0.0, 1.0)

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def class_counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in (MINORITY_LABEL, MAJORITY_LABEL)}


# ----------------------------------------------------------------- CSV


def load_tabular_csv(path, label_column: str, minority_value: str) -> RawTable:
    """Read a header-first CSV; rows whose label equals ``minority_value`` get label 0.

    Empty cells and the literals nan/inf are read as non-finite floats and left
    for :func:`preprocess` to drop.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not in header")
    if not body:
        raise DataError(f"{path}: no data rows")
    li = header.index(label_column)
    names = [h for i, h in enumerate(header) if i != li]
    X = np.empty((len(body), len(names)))
    y = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        y[r - 2] = MINORITY_LABEL if row[li].strip() == minority_value else MAJORITY_LABEL
        j = 0
        for i, cell in enumerate(row):
            if i == li:
                continue
            cell = cell.strip()
            try:
                X[r - 2, j] = float(cell) if cell else np.nan
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} in column {header[i]!r} at row {r}"
                ) from None
            j += 1
    return RawTable(X, y, names)


def write_tabular_csv(path, data, label_column: str = "label", minority_value: str = "bot",
                      majority_value: str = "normal") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.feature_names) + [label_column])
        for x, lab in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [minority_value if lab == MINORITY_LABEL else majority_value])


# ----------------------------------------------------------------- preprocessing


def preprocess(raw, clip_percentiles: tuple[float, float] | None = (1.0, 99.0),
               outlier_mode: str = "clip") -> TabularDataset:
    """Outlier suppression, column filtering and min-max scaling to [0, 1].

    Steps: drop columns holding NaN/Inf; suppress outliers outside the
    per-column percentile bounds (``clip`` clamps them, ``drop-rows`` removes
    the rows); drop zero-variance columns; scale each remaining column to
    [0, 1]. Non-finite columns are detected on the raw values, before any
    clamping could hide an infinity.
    """
    X = np.array(raw.features, dtype=np.float64)
    y = np.asarray(raw.labels).copy()
    names = list(raw.feature_names)
    if X.ndim != 2 or len(X) < 2:
        raise DataError("preprocessing needs at least 2 rows")
    if outlier_mode not in ("clip", "drop-rows"):
        raise DataError(f"unknown outlier mode {outlier_mode!r}")
    report = PreprocessReport(original_columns=names, rows_in=len(X))

    finite = np.all(np.isfinite(X), axis=0)
    report.dropped_nan_inf_columns = [n for n, ok in zip(names, finite) if not ok]
    X = X[:, finite]
    names = [n for n, ok in zip(names, finite) if ok]

    if clip_percentiles is not None and X.shape[1]:
        lo_p, hi_p = clip_percentiles
        lo = np.percentile(X, lo_p, axis=0)
        hi = np.percentile(X, hi_p, axis=0)
        report.clip_bounds = {n: [float(a), float(b)] for n, a, b in zip(names, lo, hi)}
        if outlier_mode == "clip":
            X = np.clip(X, lo, hi)
        else:
            keep = np.all((X >= lo) & (X <= hi), axis=1)
            X, y = X[keep], y[keep]

    if len(X):
        std = X.std(axis=0)
        keep_cols = std > 0
    else:
        keep_cols = np.zeros(X.shape[1], dtype=bool)
    report.dropped_zero_std_columns = [n for n, ok in zip(names, keep_cols) if not ok]
    X = X[:, keep_cols]
    names = [n for n, ok in zip(names, keep_cols) if ok]
    if not names:
        raise DataError("preprocessing dropped every column")

    mn, mx = X.min(axis=0), X.max(axis=0)
    X = (X - mn) / (mx - mn)
    report.scale_min = {n: float(v) for n, v in zip(names, mn)}
    report.scale_max = {n: float(v) for n, v in zip(names, mx)}
    report.rows_out = len(X)
    return TabularDataset(X, y, names, report)


# ----------------------------------------------------------------- split


def round_half_up(x) -> int:
    return int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def stratified_counts(class_sizes: list[int], fraction: float) -> list[int]:
    """Per-class train counts: floor of each share, remainders to the largest fractional parts.

    The total is ``round_half_up(fraction * n)``.
    """
    frac = Decimal(str(fraction))
    exact = [frac * n for n in class_sizes]
    counts = [int(e) for e in exact]
    total = round_half_up(frac * sum(class_sizes))
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: max(0, total - sum(counts))]:
        counts[i] += 1
    return counts


def split_indices(labels: np.ndarray, train_fraction: float = 0.7, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie in (0, 1)")
    classes = (MINORITY_LABEL, MAJORITY_LABEL)
    members = [np.flatnonzero(labels == c) for c in classes]
    for c, m in zip(classes, members):
        if len(m) < 2:
            raise DataError(f"class {c} has {len(m)} samples; stratified split needs at least 2")
    counts = stratified_counts([len(m) for m in members], train_fraction)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for m, k in zip(members, counts):
        perm = rng.permutation(m)
        train.append(perm[:k])
        test.append(perm[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(dataset: TabularDataset, train_fraction: float = 0.7, seed: int = 0):
    tr, te = split_indices(dataset.labels, train_fraction, seed)
    return dataset.subset(tr), dataset.subset(te)


# ----------------------------------------------------------------- undersampling


def undersample_minority(dataset, keep_fraction: float, seed: int = 0):
    """Keep ``ceil(keep_fraction * n_minority)`` minority rows; majority rows untouched."""
    if not 0 < keep_fraction <= 1:
        raise DataError("keep_fraction must lie in (0, 1]")
    labels = np.asarray(dataset.labels)
    minority = np.flatnonzero(labels == MINORITY_LABEL)
    if len(minority) == 0:
        raise DataError("no minority rows to undersample")
    keep = math.ceil(Decimal(str(keep_fraction)) * len(minority))
    if keep == 0:
        raise DataError("undersampling would leave no minority rows")
    kept = np.random.default_rng(seed).choice(minority, size=keep, replace=False)
    idx = np.sort(np.concatenate([np.flatnonzero(labels != MINORITY_LABEL), kept]))
    return dataset.subset(idx)


# keep fractions for the 0 / 50 / 90 / 99 % undersampling scenarios
UNDERSAMPLING_PRESETS = {0: 1.0, 50: 0.5, 90: 0.1, 99: 0.01}


# ----------------------------------------------------------------- synthetic


def synth_unbalanced(n_majority: int, n_minority: int, d: int, separation: float = 0.4,
                     seed: int = 0, center: float = 0.5, spread: float = 0.1) -> TabularDataset:
    """Two isotropic Gaussian clusters clipped to [0, 1]^d.

    Majority mean is ``center - separation/2`` in every coordinate, minority
    mean ``center + separation/2``; per-coordinate standard deviation ``spread``.
    """
    if n_majority < 1 or n_minority < 1 or d < 2:
        raise DataError("synth_unbalanced needs counts >= 1 and d >= 2")
    rng = np.random.default_rng(seed)
    maj = rng.normal(center - separation / 2, spread, size=(n_majority, d))
    mnr = rng.normal(center + separation / 2, spread, size=(n_minority, d))
    X = np.clip(np.vstack([maj, mnr]), 0.0, 1.0)
    y = np.concatenate([np.full(n_majority, MAJORITY_LABEL), np.full(n_minority, MINORITY_LABEL)])
    perm = rng.permutation(len(y))
    return TabularDataset(X[perm], y[perm].astype(np.int64), [f"f{i}" for i in range(d)])


# ----------------------------------------------------------------- MNIST / IDX


@dataclass
class MnistDataset:
    """Raw MNIST-style images (uint8, ``n x 784``) with digit labels."""

    pixels: np.ndarray
    digits: np.ndarray
    rows: int = MNIST_SIDE
    cols: int = MNIST_SIDE

    def __len__(self):
        return len(self.digits)

    def subset(self, idx) -> "MnistDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, pixels=self.pixels[idx], digits=self.digits[idx])

    @property
    def labels(self) -> np.ndarray:
        """Binary polarity: digit 0 is the minority class, everything else majority."""
        return np.where(self.digits == 0, MINORITY_LABEL, MAJORITY_LABEL).astype(np.int64)

    def only_digits(self, keep=(0, 1)) -> "MnistDataset":
        return self.subset(np.flatnonzero(np.isin(self.digits, keep)))

    def scaled(self, value_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
        lo, hi = value_range
        return lo + (hi - lo) * self.pixels.astype(np.float64) / 255.0

    def to_tabular(self, value_range: tuple[float, float] = (0.0, 1.0)) -> TabularDataset:
        names = [f"px{i}" for i in range(self.pixels.shape[1])]
        return TabularDataset(self.scaled(value_range), self.labels, names, None, tuple(value_range))


def _open(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def read_idx_images(path) -> tuple[np.ndarray, int, int]:
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 16:
        raise DataError(f"{path}: truncated IDX image header")
    magic, n, r, c = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(data) != 16 + n * r * c:
        raise DataError(f"{path}: expected {n * r * c} pixel bytes, found {len(data) - 16}")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, r * c).copy(), r, c


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 8:
        raise DataError(f"{path}: truncated IDX label header")
    magic, n = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(data) != 8 + n:
        raise DataError(f"{path}: expected {n} label bytes, found {len(data) - 8}")
    return np.frombuffer(data, dtype=np.uint8, offset=8).copy()


def load_mnist_idx(images_path, labels_path) -> MnistDataset:
    pixels, r, c = read_idx_images(images_path)
    digits = read_idx_labels(labels_path)
    if len(digits) != len(pixels):
        raise DataError(f"label count {len(digits)} does not match image count {len(pixels)}")
    return MnistDataset(pixels, digits, r, c)


def idx_images_bytes(pixels: np.ndarray, rows: int = MNIST_SIDE, cols: int = MNIST_SIDE) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(pixels), rows * cols)
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, len(pixels), rows, cols) + pixels.tobytes()


def idx_labels_bytes(digits: np.ndarray) -> bytes:
    digits = np.asarray(digits, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, len(digits)) + digits.tobytes()


def write_mnist_idx(dataset: MnistDataset, images_path, labels_path) -> None:
    Path(images_path).write_bytes(idx_images_bytes(dataset.pixels, dataset.rows, dataset.cols))
    Path(labels_path).write_bytes(idx_labels_bytes(dataset.digits))
