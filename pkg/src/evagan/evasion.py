"""EVAGAN: minority-only generator against a three-head discriminator.

Head order is fixed: 0 = source (real/fake), 1 = minority estimate,
2 = majority estimate. Heads 1 and 2 output the probability of the
majority polarity, so a botnet sample should score near 0 on both.
"""

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

SOURCE, MINORITY, MAJORITY = 0, 1, 2


class EvaganModel(GanModel):
    kind = "evagan"
    n_labels = 1
    n_heads = 3
    source_head = SOURCE
    minority_head = MINORITY
    majority_head = MAJORITY

    def d_step(self, real_majority, real_minority, rng):
        return d_train_step(self, real_majority, real_minority, rng)

    def g_step(self, batch_size, rng):
        return g_train_step(self, batch_size, rng)


def build_evagan(config: GanConfig, rng: np.random.Generator) -> EvaganModel:
    return EvaganModel(config, rng)


def _minority_labels(n: int) -> np.ndarray:
    return np.full(n, MINORITY_LABEL, dtype=np.int64)


def d_train_step(
    model: EvaganModel,
    real_majority: np.ndarray,
    real_minority: np.ndarray,
    rng: np.random.Generator,
) -> StepLosses:
    """One discriminator update on real majority, real minority and as many fakes as real minority rows.

    Targets per head (blank = excluded):

        rows            source  minority  majority
        real majority   (1)     1         1
        real minority   1       0         0
        fake minority   0       0

    The source head sees majority rows only when ``config.source_on_majority``.
    The generator runs with batch statistics but its running averages and
    parameters are left untouched.
    """
    a, m = len(real_majority), len(real_minority)
    if a < 1 or m < 2:
        raise BatchError(
            f"discriminator step needs >= 1 majority and >= 2 minority rows (batchnorm), got {a} and {m}"
        )
    z = model.noise(m, rng)
    fake = model.generator.forward(z, _minority_labels(m), train=True, update_stats=False)
    x = np.vstack([real_majority, real_minority, fake])
    n = len(x)
    maj, mnr, fk = slice(0, a), slice(a, a + m), slice(a + m, n)

    target = np.zeros((n, 3))
    mask = np.zeros((n, 3), dtype=bool)
    target[maj, :] = MAJORITY_LABEL
    target[maj, SOURCE] = SOURCE_REAL
    target[mnr, SOURCE] = SOURCE_REAL
    target[mnr, MINORITY] = MINORITY_LABEL
    target[mnr, MAJORITY] = MINORITY_LABEL
    target[fk, SOURCE] = SOURCE_FAKE
    target[fk, MINORITY] = MINORITY_LABEL
    mask[:, SOURCE] = True
    mask[maj, SOURCE] = model.config.source_on_majority
    mask[:, MINORITY] = True
    mask[maj, MAJORITY] = True
    mask[mnr, MAJORITY] = True

    pred = model.discriminator.forward(x, train=True)
    loss, grad = head_bce(pred, target, mask)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite discriminator loss {loss}")
    model.discriminator.backward(grad)
    model.d_optimizer.step()
    return StepLosses(
        d_loss_real_minority=group_loss(pred, target, mask, mnr),
        d_loss_fake_minority=group_loss(pred, target, mask, fk),
        d_loss_majority=group_loss(pred, target, mask, maj),
    )


def generator_objective(model: EvaganModel, z: np.ndarray) -> float:
    """Generator loss on noise ``z``; fills generator gradients, applies no update.

    Source head is pushed toward "real" and the minority head toward the
    minority label. The majority head receives a zero upstream gradient.
    """
    n = len(z)
    fake = model.generator.forward(z, _minority_labels(n), train=True)
    pred = model.discriminator.forward(fake, train=True, batch_stats=False)
    target = np.zeros((n, 3))
    target[:, SOURCE] = SOURCE_REAL
    target[:, MINORITY] = MINORITY_LABEL
    mask = np.zeros((n, 3), dtype=bool)
    mask[:, [SOURCE, MINORITY]] = True
    loss, grad = head_bce(pred, target, mask)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite generator loss {loss}")
    model.generator.backward(model.discriminator.backward(grad))
    return loss


def g_train_step(model: EvaganModel, batch_size: int, rng: np.random.Generator) -> float:
    if batch_size < 2:
        raise BatchError(f"generator step needs batch_size >= 2 (batchnorm), got {batch_size}")
    loss = generator_objective(model, model.noise(batch_size, rng))
    model.g_optimizer.step()
    return loss


def train(model: EvaganModel, dataset, epochs: int, metric_hook=None, seed: int = 0):
    """Train on ``dataset`` (features + labels); see :func:`evagan.training.train_model`."""
    from .training import train_model

    return train_model(model, dataset, epochs, metric_hook=metric_hook, seed=seed)
