"""Shared test helpers: tiny configs, finite differences, toy data."""

import numpy as np

from evagan import build_acgan, build_evagan
from evagan.data import RawTable, TabularDataset, split, synth_unbalanced
from evagan.metrics import Estimates
from evagan.networks import MAJORITY_LABEL, MINORITY_LABEL, GanConfig


def tiny_config(**kw) -> GanConfig:
    base = dict(feature_dim=4, latent_dim=3, g_widths=(5, 4), d_widths=(6, 5), batch_size=8)
    base.update(kw)
    return GanConfig(**base)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def two_class(n_major=40, n_minor=10, d=4, seed=0, gap=0.5):
    """Small separable tabular set: majority near 0.25, minority near 0.75."""
    from evagan.data import TabularDataset

    rng = np.random.default_rng(seed)
    X = np.vstack([
        np.clip(rng.normal(0.5 - gap / 2, 0.05, (n_major, d)), 0, 1),
        np.clip(rng.normal(0.5 + gap / 2, 0.05, (n_minor, d)), 0, 1),
    ])
    y = np.concatenate([np.ones(n_major, dtype=np.int64), np.zeros(n_minor, dtype=np.int64)])
    return TabularDataset(X, y, [f"f{i}" for i in range(d)])


# ------------------------------------------------------------ gradient checks
#
# Each check draws a random layer and batch, uses loss = sum(out * R) for a
# random R so the upstream gradient is R, and returns the worst relative
# error over the input gradient and every parameter gradient.


def dense_grad_error(activation: str, seed: int) -> float:
    from evagan.nn import Dense

    rng = np.random.default_rng(seed)
    n_in, n_out, batch = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 7)
    layer = Dense(rng.normal(size=(n_in, n_out)), rng.normal(size=n_out), activation)
    x = rng.normal(size=(batch, n_in))
    if activation in ("relu", "leaky_relu"):
        # keep pre-activations away from the kink so differences stay smooth
        z = x @ layer.weights.value + layer.bias.value
        layer.bias.value += np.where(np.abs(z).min(axis=0) < 1e-3, 0.01, 0.0)
    R = rng.normal(size=(batch, n_out))
    f = lambda: float(np.sum(layer.forward(x, train=True) * R))
    f()
    dx = layer.backward(R)
    analytic = [dx, layer.weights.grad.copy(), layer.bias.grad.copy()]
    numeric = [numeric_grad(f, x), numeric_grad(f, layer.weights.value), numeric_grad(f, layer.bias.value)]
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def batchnorm_grad_error(seed: int, batch_stats: bool = True) -> float:
    from evagan.nn import BatchNorm

    rng = np.random.default_rng(seed)
    n, batch = rng.integers(1, 6), rng.integers(2, 8)
    layer = BatchNorm(n)
    layer.gamma.value = rng.normal(size=n)
    layer.beta.value = rng.normal(size=n)
    x = rng.normal(size=(batch, n)) * rng.uniform(0.5, 3.0, size=n)
    R = rng.normal(size=(batch, n))
    if not batch_stats:
        layer.running_mean[:] = rng.normal(size=n)
        layer.running_var[:] = rng.uniform(0.5, 2.0, size=n)
    f = lambda: float(np.sum(layer.forward(x, train=True, update_stats=False, batch_stats=batch_stats) * R))
    f()
    dx = layer.backward(R)
    analytic = [dx, layer.gamma.grad.copy(), layer.beta.grad.copy()]
    numeric = [numeric_grad(f, x), numeric_grad(f, layer.gamma.value), numeric_grad(f, layer.beta.value)]
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def embedding_grad_error(seed: int) -> float:
    from evagan.nn import LabelEmbedding

    rng = np.random.default_rng(seed)
    k, dim, batch = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 9)
    emb = LabelEmbedding(rng.normal(size=(k, dim)))
    labels = rng.integers(0, k, size=batch)
    R = rng.normal(size=(batch, dim))
    f = lambda: float(np.sum(emb.forward(labels, train=True) * R))
    f()
    emb.backward(R)
    return rel_error(emb.table.grad, numeric_grad(f, emb.table.value))


def model_grad_error(model, objective) -> float:
    """Finite-difference check of a generator objective over all generator parameters.

    ``objective()`` must run a full forward/backward and return the loss; it is
    re-run for every perturbation, so any noise it uses must be fixed.
    """
    objective()
    analytic = [p.grad.copy() for p in model.generator.parameters()]
    worst = 0.0
    for p, a in zip(model.generator.parameters(), analytic):
        worst = max(worst, rel_error(a, numeric_grad(objective, p.value)))
    return worst


# ------------------------------------------------------------ digit fixtures


def draw_digits(n_zero: int, n_one: int, seed: int = 0, extra_digits: int = 0):
    """Procedural 28x28 stand-ins: zeros are noisy rings, ones are slanted strokes.

    ``extra_digits`` adds that many images labelled 7 so class filtering has
    something to remove.
    """
    from evagan.data import MnistDataset

    rng = np.random.default_rng(seed)
    rr, cc = np.mgrid[0:28, 0:28]
    imgs, digits = [], []
    for _ in range(n_zero):
        cy, cx = 13.5 + rng.normal(0, 1, 2)
        ry, rx = rng.uniform(6, 10), rng.uniform(4, 8)
        d = np.sqrt(((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2)
        imgs.append(np.clip(255 * np.exp(-((d - 1) ** 2) / 0.02), 0, 255))
        digits.append(0)
    for _ in range(n_one):
        cx, slant, half = 13.5 + rng.normal(0, 1.5), rng.normal(0, 0.2), rng.uniform(7, 10)
        dist = np.abs(cc - (cx + slant * (rr - 13.5)))
        img = 255 * np.exp(-(dist**2) / 2.0) * (np.abs(rr - 13.5) <= half)
        imgs.append(img)
        digits.append(1)
    for _ in range(extra_digits):
        imgs.append(rng.uniform(0, 255, (28, 28)))
        digits.append(7)
    pixels = np.array(imgs).reshape(-1, 784)
    pixels = np.clip(pixels + rng.normal(0, 8, pixels.shape), 0, 255).round().astype(np.uint8)
    perm = rng.permutation(len(digits))
    return MnistDataset(pixels[perm], np.array(digits, dtype=np.uint8)[perm])


def write_digit_idx(directory, n_zero, n_one, seed=0, extra_digits=0):
    from evagan.data import write_mnist_idx

    m = draw_digits(n_zero, n_one, seed, extra_digits)
    images, labels = directory / "images-idx3-ubyte", directory / "labels-idx1-ubyte"
    write_mnist_idx(m, images, labels)
    return images, labels


# ------------------------------------------------------------ shared fixtures


def loop_metrics(model, test_x, test_y, fake):
    """Per-sample reference: one discriminator call per row, plain Python sums."""
    def head(rows, k):
        total = 0.0
        for r in rows:
            total += float(model.discriminate(r[None, :])[0, k])
        return total / len(rows)

    maj = [x for x, y in zip(test_x, test_y) if y == MAJORITY_LABEL]
    mnr = [x for x, y in zip(test_x, test_y) if y == MINORITY_LABEL]
    return Estimates(
        gen_validity=head(fake, model.source_head),
        fake_min_eva=head(fake, model.minority_head),
        real_maj_est=head(maj, model.majority_head),
        real_min_eva=head(mnr, model.minority_head),
    )


def oracle_pairs(count=100):
    """(model, test set, seed) pairs spanning both kinds, random weights and partly trained BN stats."""
    for i in range(count):
        rng = np.random.default_rng(1000 + i)
        d = int(rng.integers(2, 7))
        cfg = GanConfig(feature_dim=d, latent_dim=int(rng.integers(2, 6)), g_widths=(6, 5), d_widths=(7, 4),
                        batch_size=8)
        build = build_evagan if i % 2 == 0 else build_acgan
        model = build(cfg, rng)
        # move the running statistics away from their defaults
        model.discriminator.forward(rng.uniform(size=(16, d)), train=True)
        n = int(rng.integers(4, 30))
        y = np.r_[MAJORITY_LABEL, MINORITY_LABEL, rng.integers(0, 2, n - 2)]
        yield model, TabularDataset(rng.uniform(size=(n, d)), y, [f"f{j}" for j in range(d)]), 5000 + i


def six_column_fixture(n=20, seed=0) -> RawTable:
    rng = np.random.default_rng(seed)
    X = np.column_stack([
        rng.normal(5, 2, n),        # valid
        rng.uniform(-3, 3, n),      # valid
        rng.exponential(1.0, n),    # valid
        np.full(n, 7.0),            # constant
        rng.normal(size=n),         # will hold a NaN
        rng.normal(size=n),         # will hold an Inf
    ])
    X[4, 4] = np.nan
    X[9, 5] = np.inf
    y = np.array([0, 1] * (n // 2))
    return RawTable(X, y, ["v1", "v2", "v3", "const", "has_nan", "has_inf"])


def hand_built_idx(tmp_path):
    """Two 28x28 images written byte by byte: image 0 is a digit '0' ring, image 1 a '1' stroke."""
    img0 = bytearray(784)
    img1 = bytearray(784)
    for r in range(28):
        for c in range(28):
            d2 = (r - 13.5) ** 2 + (c - 13.5) ** 2
            if 49 <= d2 <= 100:
                img0[r * 28 + c] = 255
            if 13 <= c <= 14 and 4 <= r <= 23:
                img1[r * 28 + c] = 200
    images = b"\x00\x00\x08\x03" + b"\x00\x00\x00\x02" + b"\x00\x00\x00\x1c" + b"\x00\x00\x00\x1c" + bytes(img0) + bytes(img1)
    labels = b"\x00\x00\x08\x01" + b"\x00\x00\x00\x02" + b"\x00\x01"
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(images)
    lp.write_bytes(labels)
    return ip, lp, images, labels


def balanced_shuffled(seed=0):
    ds = synth_unbalanced(1667, 1667, 10, 0.4, seed=seed)
    labels = np.random.default_rng(seed + 1).permutation(ds.labels)
    return split(TabularDataset(ds.features, labels, ds.feature_names), 0.7, seed)
