"""ACGAN baseline: class-conditional generator over both labels, source + class heads."""

from __future__ import annotations

import numpy as np

from .networks import (
    MAJORITY_LABEL,
    MINORITY_LABEL,
    SOURCE_FAKE,
    SOURCE_REAL,
    BatchError,
    GanConfig,
    GanModel,
    StepLosses,
    group_loss,
    head_bce,
)

SOURCE, CLASS = 0, 1


class AcganModel(GanModel):
    kind = "acgan"
    n_labels = 2
    n_heads = 2
    source_head = SOURCE
    minority_head = CLASS
    majority_head = CLASS

    def d_step(self, real_majority, real_minority, rng):
        x = np.vstack([real_majority, real_minority])
        labels = np.concatenate(
            [np.full(len(real_majority), MAJORITY_LABEL), np.full(len(real_minority), MINORITY_LABEL)]
        )
        return acgan_d_step(self, x, labels, rng)

    def g_step(self, batch_size, rng):
        return acgan_g_step(self, batch_size, rng)


def build_acgan(config: GanConfig, rng: np.random.Generator) -> AcganModel:
    return AcganModel(config, rng)


def sample_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.int64)


def acgan_d_step(model: AcganModel, real_x: np.ndarray, real_labels: np.ndarray, rng) -> StepLosses:
    """One discriminator update on a labelled real batch plus an equal-size fake batch.

    Fake labels are drawn uniformly from {0, 1}. Source targets are real=1 /
    fake=0; the class head is trained on every row with that row's label.
    Loss groups: real majority rows, real minority rows, all fake rows.
    """
    real_labels = np.asarray(real_labels, dtype=np.int64)
    n_real = len(real_x)
    if n_real < 2 or len(real_labels) != n_real:
        raise BatchError(f"discriminator step needs >= 2 labelled real rows, got {n_real}")
    fake_labels = sample_labels(n_real, rng)
    fake = model.generator.forward(model.noise(n_real, rng), fake_labels, train=True, update_stats=False)
    x = np.vstack([real_x, fake])
    n = len(x)

    target = np.empty((n, 2))
    target[:n_real, SOURCE] = SOURCE_REAL
    target[n_real:, SOURCE] = SOURCE_FAKE
    target[:, CLASS] = np.concatenate([real_labels, fake_labels])
    mask = np.ones((n, 2), dtype=bool)

    pred = model.discriminator.forward(x, train=True)
    loss, grad = head_bce(pred, target, mask)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite discriminator loss {loss}")
    model.discriminator.backward(grad)
    model.d_optimizer.step()

    # Group losses over row subsets selected by label.
    real_maj = np.flatnonzero(real_labels == MAJORITY_LABEL)
    real_min = np.flatnonzero(real_labels == MINORITY_LABEL)
    return StepLosses(
        d_loss_real_minority=group_loss(pred[real_min], target[real_min], mask[real_min], slice(None)),
        d_loss_fake_minority=group_loss(pred, target, mask, slice(n_real, n)),
        d_loss_majority=group_loss(pred[real_maj], target[real_maj], mask[real_maj], slice(None)),
    )


def generator_objective(model: AcganModel, z: np.ndarray, labels: np.ndarray) -> float:
    """Source head toward "real", class head toward the label fed to the generator."""
    n = len(z)
    fake = model.generator.forward(z, labels, train=True)
    pred = model.discriminator.forward(fake, train=True, batch_stats=False)
    target = np.empty((n, 2))
    target[:, SOURCE] = SOURCE_REAL
    target[:, CLASS] = labels
    loss, grad = head_bce(pred, target, np.ones((n, 2), dtype=bool))
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite generator loss {loss}")
    model.generator.backward(model.discriminator.backward(grad))
    return loss


def acgan_g_step(model: AcganModel, batch_size: int, rng: np.random.Generator) -> float:
    if batch_size < 2:
        raise BatchError(f"generator step needs batch_size >= 2 (batchnorm), got {batch_size}")
    labels = sample_labels(batch_size, rng)
    loss = generator_objective(model, model.noise(batch_size, rng), labels)
    model.g_optimizer.step()
    return loss


def train_acgan(model: AcganModel, dataset, epochs: int, metric_hook=None, seed: int = 0):
    from .training import train_model

    return train_model(model, dataset, epochs, metric_hook=metric_hook, seed=seed)
