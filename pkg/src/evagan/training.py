"""Epoch loop shared by EVAGAN and ACGAN, plus the stratified real-batch sampler."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .metrics import EpochMetrics, Estimates
from .networks import MAJORITY_LABEL, MINORITY_LABEL, BatchError, GanModel, StepLosses


class TrainingError(RuntimeError):
    pass


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Independent PCG64 stream: 0 = init, 1 = training noise, 2 = sampler, 3 = metrics."""
    return np.random.default_rng([seed, stream, *extra])


class BatchSampler:
    """Draws real batches as (majority indices, minority indices).

    Each class is consumed from its own shuffled queue that is reshuffled when
    exhausted, so a scarce minority class is recycled rather than running dry.
    An epoch is ``ceil(n / batch_size)`` batches of exactly ``batch_size`` rows.
    """

    def __init__(self, labels: np.ndarray, batch_size: int, minority_share: float | None, seed: int):
        labels = np.asarray(labels)
        majority = np.flatnonzero(labels == MAJORITY_LABEL)
        minority = np.flatnonzero(labels == MINORITY_LABEL)
        if len(majority) == 0 or len(minority) == 0:
            raise BatchError("training data must contain both classes")
        if batch_size < 3:
            raise BatchError(f"batch_size must be >= 3 (1 majority + 2 minority rows for batchnorm), got {batch_size}")
        share = minority_share if minority_share is not None else len(minority) / len(labels)
        self.n_minority = int(min(batch_size - 1, max(2, math.floor(batch_size * share + 0.5))))
        self.n_majority = batch_size - self.n_minority
        self.steps_per_epoch = math.ceil(len(labels) / batch_size)
        self.rng = stream_rng(seed, 2)
        self._pools = {"majority": majority, "minority": minority}
        self._orders = {k: np.empty(0, dtype=np.int64) for k in self._pools}
        self._pos = {k: 0 for k in self._pools}

    def _take(self, which: str, k: int) -> np.ndarray:
        chunks = []
        while k > 0:
            order, pos = self._orders[which], self._pos[which]
            if pos == len(order):
                order = self.rng.permutation(self._pools[which])
                self._orders[which], pos = order, 0
            t = min(k, len(order) - pos)
            chunks.append(order[pos : pos + t])
            self._pos[which] = pos + t
            k -= t
        return np.concatenate(chunks)

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        return self._take("majority", self.n_majority), self._take("minority", self.n_minority)

    def epoch(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.next_batch() for _ in range(self.steps_per_epoch)]

    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {
            "n_minority": self.n_minority,
            "n_majority": self.n_majority,
            "steps_per_epoch": self.steps_per_epoch,
            "pos": dict(self._pos),
            "rng": self.rng.bit_generator.state,
        }
        arrays = {}
        for k in self._pools:
            arrays[f"{k}.pool"] = self._pools[k]
            arrays[f"{k}.order"] = self._orders[k]
        return meta, arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "BatchSampler":
        self = cls.__new__(cls)
        self.n_minority = meta["n_minority"]
        self.n_majority = meta["n_majority"]
        self.steps_per_epoch = meta["steps_per_epoch"]
        self._pos = dict(meta["pos"])
        self.rng = restore_rng(meta["rng"])
        self._pools = {k: arrays[f"{k}.pool"].astype(np.int64) for k in ("majority", "minority")}
        self._orders = {k: arrays[f"{k}.order"].astype(np.int64) for k in ("majority", "minority")}
        return self


def restore_rng(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


MetricHook = Callable[[GanModel, int], "Estimates | None"]


@dataclass
class TrainResult:
    steps: list[StepLosses] = field(default_factory=list)
    epochs: list[EpochMetrics] = field(default_factory=list)


def _mean_losses(steps: list[StepLosses]) -> StepLosses:
    def avg(attr):
        vals = [getattr(s, attr) for s in steps]
        return float(np.mean(vals)) if vals else float("nan")

    return StepLosses(
        avg("d_loss_real_minority"), avg("d_loss_fake_minority"), avg("d_loss_majority"), avg("g_loss")
    )


class Trainer:
    """Owns everything needed to continue training: model, noise stream, sampler, epoch counter."""

    def __init__(self, model: GanModel, data, seed: int, sampler=None, rng=None, epoch: int = 0):
        self.model = model
        self.features = np.asarray(data.features, dtype=np.float64)
        if self.features.shape[1] != model.config.feature_dim:
            raise TrainingError(
                f"feature width {self.features.shape[1]} does not match model width {model.config.feature_dim}"
            )
        self.seed = seed
        self.sampler = sampler or BatchSampler(data.labels, model.config.batch_size, model.config.minority_share, seed)
        self.rng = rng or stream_rng(seed, 1)
        self.epoch = epoch
        self.wall_seconds = 0.0
        self.index_log: list[tuple[np.ndarray, np.ndarray]] | None = None

    def run_epoch(self) -> tuple[list[StepLosses], float]:
        self.epoch += 1
        X, model, bs = self.features, self.model, self.model.config.batch_size
        batches = self.sampler.epoch()
        if self.index_log is not None:
            self.index_log.extend(batches)
        losses = []
        t0 = time.perf_counter()
        for step, (maj, mnr) in enumerate(batches):
            try:
                rec = model.d_step(X[maj], X[mnr], self.rng)
                rec.g_loss = model.g_step(bs, self.rng)
            except FloatingPointError as exc:
                raise TrainingError(f"{model.kind}: epoch {self.epoch} step {step}: {exc}") from exc
            losses.append(rec)
        seconds = time.perf_counter() - t0
        self.wall_seconds += seconds
        return losses, seconds

    def run(self, epochs: int, metric_hook: MetricHook | None = None, on_epoch_end=None) -> TrainResult:
        result = TrainResult()
        for _ in range(epochs):
            losses, seconds = self.run_epoch()
            result.steps.extend(losses)
            est = metric_hook(self.model, self.epoch) if metric_hook else None
            record = EpochMetrics.from_parts(
                self.epoch, est, _mean_losses(losses), seconds, self.wall_seconds
            )
            result.epochs.append(record)
            if on_epoch_end is not None:
                on_epoch_end(self, record)
        return result


def train_model(model: GanModel, dataset, epochs: int, metric_hook: MetricHook | None = None, seed: int = 0) -> TrainResult:
    """Per epoch: ``ceil(n / batch_size)`` discriminator steps, each followed by one generator step."""
    return Trainer(model, dataset, seed).run(epochs, metric_hook)
