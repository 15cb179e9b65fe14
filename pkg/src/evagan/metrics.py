"""Per-epoch estimation metrics, black-box baseline classifiers and trace emission.

All class estimates share one polarity: values near 1 mean "normal"
(majority), values near 0 mean "botnet" (minority).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .networks import MAJORITY_LABEL, MINORITY_LABEL, StepLosses

CSV_COLUMNS = (
    "epoch",
    "gen_validity",
    "fake_min_eva",
    "real_maj_est",
    "real_min_eva",
    "d_loss_real_minority",
    "d_loss_fake_minority",
    "d_loss_majority",
    "g_loss",
    "epoch_seconds",
    "wall_seconds",
)
TIMING_COLUMNS = ("epoch_seconds", "wall_seconds")


@dataclass
class Estimates:
    gen_validity: float
    fake_min_eva: float
    real_maj_est: float
    real_min_eva: float


@dataclass
class EpochMetrics:
    epoch: int
    gen_validity: float
    fake_min_eva: float
    real_maj_est: float
    real_min_eva: float
    losses: StepLosses
    epoch_seconds: float
    wall_seconds: float

    @classmethod
    def from_parts(cls, epoch, est: Estimates | None, losses: StepLosses, seconds: float, wall: float):
        nan = float("nan")
        e = est or Estimates(nan, nan, nan, nan)
        return cls(epoch, e.gen_validity, e.fake_min_eva, e.real_maj_est, e.real_min_eva, losses, seconds, wall)

    @property
    def estimates(self) -> Estimates:
        return Estimates(self.gen_validity, self.fake_min_eva, self.real_maj_est, self.real_min_eva)

    def row(self) -> dict:
        out = {"epoch": self.epoch, **asdict(self.estimates), **asdict(self.losses)}
        out["epoch_seconds"] = self.epoch_seconds
        out["wall_seconds"] = self.wall_seconds
        return out


# ------------------------------------------------------------- estimations


def _check_n(n: int) -> None:
    if n < 1:
        raise ValueError("number of generated samples must be >= 1")


def _nonempty(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError(f"{what} slice is empty")
    return x


def gen_validity(model, n: int, rng: np.random.Generator) -> float:
    """Mean source-head output over ``n`` generated minority samples."""
    _check_n(n)
    return float(np.mean(model.discriminate(model.generate(n, rng))[:, model.source_head]))


def fake_min_eva(model, n: int, rng: np.random.Generator) -> float:
    """Mean minority-head output over ``n`` generated minority samples (0 = no evasion)."""
    _check_n(n)
    return float(np.mean(model.discriminate(model.generate(n, rng))[:, model.minority_head]))


def real_maj_est(model, test_majority: np.ndarray) -> float:
    x = _nonempty(test_majority, "majority test")
    return float(np.mean(model.discriminate(x)[:, model.majority_head]))


def real_min_eva(model, test_minority: np.ndarray) -> float:
    x = _nonempty(test_minority, "minority test")
    return float(np.mean(model.discriminate(x)[:, model.minority_head]))


def class_slices(data) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(data.labels)
    return data.features[labels == MAJORITY_LABEL], data.features[labels == MINORITY_LABEL]


def evaluate(model, test, n: int, rng: np.random.Generator) -> Estimates:
    """All four estimates; both generator-side values use one shared generated batch."""
    _check_n(n)
    majority, minority = class_slices(test)
    majority = _nonempty(majority, "majority test")
    minority = _nonempty(minority, "minority test")
    heads = model.discriminate(model.generate(n, rng))
    return Estimates(
        gen_validity=float(np.mean(heads[:, model.source_head])),
        fake_min_eva=float(np.mean(heads[:, model.minority_head])),
        real_maj_est=real_maj_est(model, majority),
        real_min_eva=real_min_eva(model, minority),
    )


def acgan_metrics(model, test, n: int, rng: np.random.Generator) -> Estimates:
    """Estimates for ACGAN: source head for validity, the single class head for the rest.

    The generated batch uses the minority label only. The fake evasion value is
    reported but is not comparable across model kinds.
    """
    if model.kind != "acgan":
        raise ValueError(f"acgan_metrics needs an ACGAN model, got {model.kind!r}")
    return evaluate(model, test, n, rng)


def make_metric_hook(test, n: int, seed: int):
    """Hook evaluating on ``test`` with a metric stream keyed by (seed, epoch)."""
    from .training import stream_rng

    def hook(model, epoch):
        return evaluate(model, test, n, stream_rng(seed, 3, epoch))

    return hook


# ------------------------------------------------------------- baselines


class LogisticRegression:
    """Full-batch gradient descent on the mean log-loss, no regularization."""

    def __init__(self, iterations: int = 500, lr: float = 0.1):
        self.iterations = iterations
        self.lr = lr

    def fit(self, X, y):
        n, d = X.shape
        self.w = np.zeros(d)
        self.b = 0.0
        for _ in range(self.iterations):
            p = _sigmoid(X @ self.w + self.b)
            err = p - y
            self.w -= self.lr * (X.T @ err) / n
            self.b -= self.lr * err.mean()
        return self

    def predict_proba(self, X):
        return _sigmoid(X @ self.w + self.b)


class KNearestNeighbors:
    """Fraction of positive labels among the ``k`` nearest (Euclidean) training rows."""

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, X, y):
        if self.k > len(X):
            raise ValueError(f"k={self.k} exceeds the {len(X)} training rows")
        self.X = X
        self.y = y.astype(np.float64)
        self._sq = np.einsum("ij,ij->i", X, X)
        return self

    def predict_proba(self, X, chunk: int = 2048):
        out = np.empty(len(X))
        for s in range(0, len(X), chunk):
            q = X[s : s + chunk]
            d2 = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ self.X.T + self._sq[None, :]
            nearest = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
            out[s : s + chunk] = self.y[nearest].mean(axis=1)
        return out


class GaussianNaiveBayes:
    """Per-feature Gaussian class conditionals with empirical priors."""

    def __init__(self, var_smoothing: float = 1e-9):
        self.var_smoothing = var_smoothing

    def fit(self, X, y):
        eps = self.var_smoothing * max(float(X.var(axis=0).max()), 1e-12)
        self.mean = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
        self.var = np.stack([X[y == c].var(axis=0) for c in (0, 1)]) + eps
        self.log_prior = np.log(np.array([np.mean(y == c) for c in (0, 1)]))
        return self

    def predict_proba(self, X):
        ll = np.stack(
            [
                self.log_prior[c]
                - 0.5 * np.sum(np.log(2 * np.pi * self.var[c]) + (X - self.mean[c]) ** 2 / self.var[c], axis=1)
                for c in (0, 1)
            ],
            axis=1,
        )
        ll -= ll.max(axis=1, keepdims=True)
        p = np.exp(ll)
        return p[:, 1] / p.sum(axis=1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


BASELINES = {"lr": LogisticRegression, "knn": KNearestNeighbors, "nb": GaussianNaiveBayes}


def fit_baseline(kind: str, train, **kwargs):
    """Fit a baseline on ``train`` (features + labels); the positive class is botnet."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {sorted(BASELINES)}")
    X = np.asarray(train.features, dtype=np.float64)
    labels = np.asarray(train.labels)
    if len(X) == 0 or len(np.unique(labels)) < 2:
        raise ValueError("baseline training needs a nonempty set with both classes")
    clf = BASELINES[kind](**kwargs).fit(X, (labels == MINORITY_LABEL).astype(np.float64))
    clf.kind = kind
    return clf


def predict(clf, X) -> np.ndarray:
    """Botnet probability for every row of ``X``."""
    return np.clip(clf.predict_proba(np.asarray(X, dtype=np.float64)), 0.0, 1.0)


def accuracy(clf, data) -> float:
    pred_bot = predict(clf, data.features) >= 0.5
    return float(np.mean(pred_bot == (np.asarray(data.labels) == MINORITY_LABEL)))


@dataclass
class BaselineResult:
    classifier: str
    real_maj_est: float
    real_min_eva: float
    fake_min_eva: float


def baseline_result(clf, test, fake: np.ndarray) -> BaselineResult:
    """Baseline estimates in the discriminator polarity (1 - botnet probability)."""
    majority, minority = class_slices(test)
    return BaselineResult(
        clf.kind,
        float(np.mean(1.0 - predict(clf, _nonempty(majority, "majority test")))),
        float(np.mean(1.0 - predict(clf, _nonempty(minority, "minority test")))),
        float(np.mean(1.0 - predict(clf, _nonempty(fake, "generated")))),
    )


# ------------------------------------------------------------- traces


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def traces_csv(records: list[EpochMetrics], include_timing: bool = True) -> str:
    columns = [c for c in CSV_COLUMNS if include_timing or c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def emit_traces(
    records: list[EpochMetrics],
    out_dir,
    manifest: dict | None = None,
    include_timing: bool = True,
    name: str = "metrics",
) -> tuple[Path, Path]:
    """Write ``<name>.csv`` (one row per epoch) and ``manifest.json``."""
    if not records:
        raise ValueError("no epochs recorded")
    from . import __version__

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    csv_path.write_text(traces_csv(records, include_timing), encoding="utf-8")
    columns = [c for c in CSV_COLUMNS if include_timing or c not in TIMING_COLUMNS]
    man = {"version": f"evagan-{__version__}", "columns": columns, "epochs": len(records)}
    man.update(manifest or {})
    man_path = out / "manifest.json"
    man_path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, man_path
