"""Small numpy neural-network substrate.

Dense layers, batch normalization, a label embedding, sigmoid heads, binary
cross-entropy and Adam. Everything runs in float64 so analytic gradients can
be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LEAKY_SLOPE = 0.2
BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class Parameter:
    """A trainable array paired with its gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def _shape(a) -> str:
    return "x".join(str(s) for s in np.shape(a))


def _check_matrix(x: np.ndarray, n_cols: int, who: str) -> None:
    if x.ndim != 2 or x.shape[1] != n_cols:
        raise ShapeError(f"{who}: input [{_shape(x)}] does not match expected [batch x {n_cols}]")


# ---------------------------------------------------------------- activations


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act_forward(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_backward(name: str, z: np.ndarray, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad * (z > 0)
    if name == "leaky_relu":
        return grad * np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        return grad * a * (1.0 - a)
    if name == "tanh":
        return grad * (1.0 - a * a)
    return grad


ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "tanh", "identity")


# --------------------------------------------------------------------- layers


class Layer:
    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True,
                batch_stats: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class Dense(Layer):
    """Fully connected layer followed by an element-wise activation."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str = "identity"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if weights.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ShapeError(f"dense: weights [{_shape(weights)}] and bias [{_shape(bias)}] disagree")
        self.weights = Parameter("weights", np.asarray(weights, dtype=np.float64))
        self.bias = Parameter("bias", np.asarray(bias, dtype=np.float64))
        self.activation = activation
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.weights.value.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.value.shape[1]

    def forward(self, x, train=False, update_stats=True, batch_stats=True):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(
                f"dense: input [{_shape(x)}] incompatible with weights [{_shape(self.weights.value)}]"
            )
        z = x @ self.weights.value + self.bias.value
        a = _act_forward(self.activation, z)
        self._cache = (x, z, a) if train else None
        return a

    def backward(self, grad):
        if self._cache is None:
            raise StateError("dense: backward called without a preceding train-mode forward")
        x, z, a = self._cache
        if grad.shape != a.shape:
            raise ShapeError(f"dense: upstream gradient [{_shape(grad)}] vs output [{_shape(a)}]")
        dz = _act_backward(self.activation, z, a, grad)
        self.weights.grad = x.T @ dz
        self.bias.grad = dz.sum(axis=0)
        return dz @ self.weights.value.T

    def parameters(self):
        return [self.weights, self.bias]


class BatchNorm(Layer):
    """Per-column batch normalization with running statistics for inference.

    ``update_stats=False`` normalizes with batch statistics but leaves the
    running averages alone. ``batch_stats=False`` (train mode only) normalizes
    with the running averages, like inference, while still caching for
    backward; the layer is then a fixed affine map of its input.
    """

    def __init__(self, n: int, momentum: float = 0.99, epsilon: float = 1e-5):
        self.gamma = Parameter("gamma", np.ones(n))
        self.beta = Parameter("beta", np.zeros(n))
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.epsilon = epsilon
        self._cache = None

    @property
    def n(self) -> int:
        return self.gamma.value.shape[0]

    def forward(self, x, train=False, update_stats=True, batch_stats=True):
        _check_matrix(x, self.n, "batchnorm")
        if not train or not batch_stats:
            std = np.sqrt(self.running_var + self.epsilon)
            xhat = (x - self.running_mean) / std
            self._cache = (xhat, std, False) if train else None
            return self.gamma.value * xhat + self.beta.value
        if x.shape[0] < 2:
            raise ShapeError("batchnorm: train-mode batch needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        std = np.sqrt(var + self.epsilon)
        xhat = (x - mean) / std
        if update_stats:
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mean
            self.running_var = m * self.running_var + (1.0 - m) * var
        self._cache = (xhat, std, True)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, grad):
        if self._cache is None:
            raise StateError("batchnorm: backward called without a preceding train-mode forward")
        xhat, std, from_batch = self._cache
        if grad.shape != xhat.shape:
            raise ShapeError(f"batchnorm: upstream gradient [{_shape(grad)}] vs output [{_shape(xhat)}]")
        n = grad.shape[0]
        self.gamma.grad = (grad * xhat).sum(axis=0)
        self.beta.grad = grad.sum(axis=0)
        dxhat = grad * self.gamma.value
        if not from_batch:
            return dxhat / std
        return (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)) / (n * std)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        self.running_mean = np.array(buffers["running_mean"], dtype=np.float64)
        self.running_var = np.array(buffers["running_var"], dtype=np.float64)


class LabelEmbedding:
    """Lookup table mapping integer labels to dense vectors."""

    def __init__(self, table: np.ndarray):
        self.table = Parameter("table", np.asarray(table, dtype=np.float64))
        self._labels = None

    @property
    def n_labels(self) -> int:
        return self.table.value.shape[0]

    def forward(self, labels: np.ndarray, train: bool = False) -> np.ndarray:
        labels = np.asarray(labels)
        if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
            raise ShapeError(f"embedding: labels must be a 1-D integer vector, got [{_shape(labels)}]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_labels):
            raise ValueError(f"embedding: label out of range [0, {self.n_labels})")
        self._labels = labels if train else None
        return self.table.value[labels]

    def backward(self, grad: np.ndarray) -> None:
        if self._labels is None:
            raise StateError("embedding: backward called without a preceding train-mode forward")
        g = np.zeros_like(self.table.value)
        np.add.at(g, self._labels, grad)
        self.table.grad = g

    def parameters(self):
        return [self.table]


# -------------------------------------------------------------------- networks


class Network:
    """Ordered stack of layers with a flat parameter registry."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True,
                batch_stats: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train, update_stats=update_stats, batch_stats=batch_stats)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        return [
            (f"{prefix}{i}.{p.name}", p)
            for i, layer in enumerate(self.layers)
            for p in layer.parameters()
        ]

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.buffers().items():
                out[f"{prefix}{i}.{k}"] = v
        return out

    def load_buffers(self, buffers: dict[str, np.ndarray], prefix: str = "") -> None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm):
                layer.load_buffers({k: buffers[f"{prefix}{i}.{k}"] for k in ("running_mean", "running_var")})


class ConditionalGenerator:
    """Generator body fed with noise multiplied element-wise by an embedded label."""

    def __init__(self, embedding: LabelEmbedding, body: Network):
        self.embedding = embedding
        self.body = body
        self._cache = None

    def forward(self, z, labels, train=False, update_stats=True):
        e = self.embedding.forward(labels, train=train)
        if e.shape != z.shape:
            raise ShapeError(f"generator: noise [{_shape(z)}] vs embedded labels [{_shape(e)}]")
        self._cache = (z, e) if train else None
        return self.body.forward(z * e, train=train, update_stats=update_stats)

    def backward(self, grad):
        """Backpropagate into all generator parameters; returns d(loss)/d(noise)."""
        if self._cache is None:
            raise StateError("generator: backward called without a preceding train-mode forward")
        z, e = self._cache
        gh = self.body.backward(grad)
        self.embedding.backward(gh * z)
        return gh * e

    def parameters(self):
        return self.embedding.parameters() + self.body.parameters()

    def named_parameters(self):
        return [("embedding.table", self.embedding.table)] + self.body.named_parameters("body.")

    def named_buffers(self):
        return self.body.named_buffers("body.")

    def load_buffers(self, buffers):
        self.body.load_buffers(buffers, "body.")


class MultiHeadNetwork:
    """Shared trunk followed by independent one-unit sigmoid heads.

    ``forward`` returns a ``[batch x n_heads]`` matrix whose column ``k`` is head ``k``.
    """

    def __init__(self, trunk: Network, heads: Sequence[Dense]):
        for h in heads:
            if h.n_out != 1:
                raise ShapeError("heads must have exactly one output unit")
        self.trunk = trunk
        self.heads = list(heads)

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def forward(self, x, train=False, update_stats=True, batch_stats=True):
        h = self.trunk.forward(x, train=train, update_stats=update_stats, batch_stats=batch_stats)
        return np.hstack([head.forward(h, train=train) for head in self.heads])

    def backward(self, grad):
        if grad.ndim != 2 or grad.shape[1] != self.n_heads:
            raise ShapeError(f"heads: upstream gradient [{_shape(grad)}] vs {self.n_heads} heads")
        gh = sum(head.backward(grad[:, [k]]) for k, head in enumerate(self.heads))
        return self.trunk.backward(gh)

    def parameters(self):
        return self.trunk.parameters() + [p for h in self.heads for p in h.parameters()]

    def named_parameters(self):
        out = self.trunk.named_parameters("trunk.")
        for k, h in enumerate(self.heads):
            out += [(f"head{k}.{p.name}", p) for p in h.parameters()]
        return out

    def named_buffers(self):
        return self.trunk.named_buffers("trunk.")

    def load_buffers(self, buffers):
        self.trunk.load_buffers(buffers, "trunk.")


# ---------------------------------------------------------------- init


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "identity"
    batchnorm: bool = False


def init_dense(n_in: int, n_out: int, activation: str, rng: np.random.Generator, gain: float = 1.0) -> Dense:
    """He-uniform for (leaky) ReLU layers, Xavier-uniform otherwise; zero bias.

    ``gain`` scales the uniform limit.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"layer widths must be positive, got {n_in} -> {n_out}")
    if activation in ("relu", "leaky_relu"):
        limit = np.sqrt(6.0 / n_in)
    else:
        limit = np.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-gain * limit, gain * limit, size=(n_in, n_out))
    return Dense(w, np.zeros(n_out), activation)


def init_network(
    n_in: int,
    spec: Sequence[LayerSpec],
    rng: np.random.Generator,
    bn_momentum: float = 0.99,
    bn_epsilon: float = 1e-5,
) -> Network:
    layers: list[Layer] = []
    width = n_in
    for s in spec:
        layers.append(init_dense(width, s.width, s.activation, rng))
        if s.batchnorm:
            layers.append(BatchNorm(s.width, bn_momentum, bn_epsilon))
        width = s.width
    return Network(layers)


# ---------------------------------------------------------------- loss


def bce_loss(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to ``pred``.

    Predictions are clamped to ``[eps, 1 - eps]`` before the logs.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"bce: prediction [{_shape(pred)}] vs target [{_shape(target)}]")
    if pred.size == 0:
        raise ValueError("bce: empty input")
    if np.any((target < 0) | (target > 1)) or not np.all(np.isfinite(target)):
        raise ValueError("bce: targets must lie in [0, 1]")
    p = np.clip(pred, eps, 1.0 - eps)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p) * pred.size)
    return float(loss), grad


def bce_elementwise(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> np.ndarray:
    p = np.clip(pred, eps, 1.0 - eps)
    return -(target * np.log(p) + (1.0 - target) * np.log1p(-p))


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    names: Sequence[str] | None = None,
) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"adam: {len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        label = names[i] if names else f"#{i}"
        if p.shape != g.shape:
            raise ShapeError(f"adam: parameter {label} [{_shape(p)}] vs gradient [{_shape(g)}]")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam: non-finite gradient in parameter {label}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Adam:
    def __init__(self, named_params: Sequence[tuple[str, Parameter]], lr=5e-4, beta1=0.5, beta2=0.999, epsilon=1e-8):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self) -> None:
        adam_step([p.value for p in self.params], [p.grad for p in self.params], self.state, self.names)
