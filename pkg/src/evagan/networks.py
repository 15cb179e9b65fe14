"""Shared GAN plumbing: configuration, generator/discriminator assembly, head losses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .nn import (
    Adam,
    ConditionalGenerator,
    LabelEmbedding,
    LayerSpec,
    MultiHeadNetwork,
    bce_elementwise,
    bce_loss,
    init_dense,
    init_network,
)

# Label polarity shared by every model, metric and dataset.
MINORITY_LABEL = 0
MAJORITY_LABEL = 1
SOURCE_REAL = 1
SOURCE_FAKE = 0


class ConfigError(ValueError):
    pass


class BatchError(ValueError):
    pass


@dataclass
class GanConfig:
    """Hyperparameters for both GAN variants (tabular defaults)."""

    feature_dim: int
    latent_dim: int = 32
    g_widths: tuple[int, ...] = (32, 64, 128)
    d_widths: tuple[int, ...] = (128, 64, 32)
    batch_size: int = 256
    epochs: int = 150
    lr: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-5
    output_activation: str = "sigmoid"
    # Fraction of each real batch drawn from the minority class; None keeps
    # the natural class ratio (at least 2 rows).
    minority_share: float | None = None
    # Generated samples per epoch for the generator-side estimates.
    metric_samples: int = 256
    # Scale on the Xavier limit of the discriminator heads. Small heads start
    # every output near 0.5 even when batchnorm turns a handful of minority
    # rows into large standardized values.
    head_init_gain: float = 0.1
    # Train the source head on real majority rows as well (off: minority real vs fake only).
    source_on_majority: bool = False

    def __post_init__(self):
        self.g_widths = tuple(int(w) for w in self.g_widths)
        self.d_widths = tuple(int(w) for w in self.d_widths)

    def validate(self) -> "GanConfig":
        if self.feature_dim < 1 or self.latent_dim < 1:
            raise ConfigError("feature_dim and latent_dim must be positive")
        if not self.g_widths or not self.d_widths or min(self.g_widths + self.d_widths) < 1:
            raise ConfigError("layer widths must be positive")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for batchnorm, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("invalid Adam settings")
        if not 0 < self.bn_momentum < 1:
            raise ConfigError("bn_momentum must lie in (0, 1)")
        if self.output_activation not in ("sigmoid", "tanh"):
            raise ConfigError("output_activation must be 'sigmoid' or 'tanh'")
        if self.minority_share is not None and not 0 < self.minority_share < 1:
            raise ConfigError("minority_share must lie in (0, 1)")
        if not self.head_init_gain > 0:
            raise ConfigError("head_init_gain must be positive")
        if self.metric_samples < 1:
            raise ConfigError("metric_samples must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["g_widths"] = list(self.g_widths)
        d["d_widths"] = list(self.d_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StepLosses:
    """Per-step loss record, grouped by the rows each loss was measured on."""

    d_loss_real_minority: float
    d_loss_fake_minority: float
    d_loss_majority: float
    g_loss: float = float("nan")


class GanModel:
    """Label-conditioned generator plus multi-head discriminator.

    Subclasses fix the number of generator labels, the number of heads and
    which head serves as source / minority / majority estimate.
    """

    kind = ""
    n_labels = 1
    n_heads = 1
    source_head = 0
    minority_head = 0
    majority_head = 0

    def __init__(self, config: GanConfig, rng: np.random.Generator):
        self.config = config.validate()
        c = config
        g_spec = [LayerSpec(w, "relu", True) for w in c.g_widths]
        g_spec.append(LayerSpec(c.feature_dim, c.output_activation))
        embedding = LabelEmbedding(rng.standard_normal((self.n_labels, c.latent_dim)))
        body = init_network(c.latent_dim, g_spec, rng, c.bn_momentum, c.bn_epsilon)
        self.generator = ConditionalGenerator(embedding, body)

        d_spec = [LayerSpec(w, "leaky_relu", True) for w in c.d_widths]
        trunk = init_network(c.feature_dim, d_spec, rng, c.bn_momentum, c.bn_epsilon)
        heads = [init_dense(c.d_widths[-1], 1, "sigmoid", rng, c.head_init_gain) for _ in range(self.n_heads)]
        self.discriminator = MultiHeadNetwork(trunk, heads)

        opt = dict(lr=c.lr, beta1=c.beta1, beta2=c.beta2, epsilon=c.adam_epsilon)
        self.g_optimizer = Adam(self.generator.named_parameters(), **opt)
        self.d_optimizer = Adam(self.discriminator.named_parameters(), **opt)

    def noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.config.latent_dim))

    def generate(self, n: int, rng: np.random.Generator, labels=None) -> np.ndarray:
        """Inference-mode samples; defaults to the minority label."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if labels is None:
            labels = np.full(n, MINORITY_LABEL, dtype=np.int64)
        return self.generator.forward(self.noise(n, rng), np.asarray(labels, dtype=np.int64))

    def discriminate(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode head outputs, ``[batch x n_heads]``."""
        return self.discriminator.forward(np.asarray(x, dtype=np.float64))

    def d_step(self, real_majority, real_minority, rng) -> StepLosses:
        raise NotImplementedError

    def g_step(self, batch_size, rng) -> float:
        raise NotImplementedError


def head_bce(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum over heads of the masked mean BCE, with the gradient w.r.t. ``pred``.

    Entries outside ``mask`` contribute neither loss nor gradient.
    """
    total = 0.0
    grad = np.zeros_like(pred)
    for k in range(pred.shape[1]):
        rows = mask[:, k]
        if rows.any():
            loss, g = bce_loss(pred[rows, k], target[rows, k])
            total += loss
            grad[rows, k] = g
    return total, grad


def group_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray, rows: slice) -> float:
    """Mean element-wise BCE over the masked entries of a row group."""
    m = mask[rows]
    if not m.any():
        return float("nan")
    return float(bce_elementwise(pred[rows][m], target[rows][m]).mean())
