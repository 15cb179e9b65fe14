import math

import numpy as np
import pytest

from evagan import GanConfig, build_acgan, build_evagan
from evagan.acgan import CLASS, acgan_d_step, acgan_g_step, sample_labels
from evagan.acgan import generator_objective as acgan_objective
from evagan.evasion import MAJORITY, d_train_step, g_train_step
from evagan.evasion import generator_objective as evagan_objective
from evagan.networks import MAJORITY_LABEL, MINORITY_LABEL, BatchError, ConfigError
from evagan.training import Trainer, stream_rng

from helpers import model_grad_error, tiny_config, two_class

LN2 = math.log(2)


def snapshot(net):
    return [p.value.copy() for p in net.parameters()]


def unchanged(net, snap):
    return all(np.array_equal(p.value, s) for p, s in zip(net.parameters(), snap))


def real_rows(seed=0, a=12, m=4, d=4):
    ds = two_class(a, m, d, seed)
    return ds.features[ds.labels == MAJORITY_LABEL], ds.features[ds.labels == MINORITY_LABEL]


# ------------------------------------------------------------------ build


@pytest.mark.parametrize("build, heads", [(build_evagan, 3), (build_acgan, 2)])
def test_build_shapes_and_head_range(build, heads):
    cfg = GanConfig(feature_dim=10, latent_dim=32)
    m = build(cfg, np.random.default_rng(0))
    dense = [l for l in m.generator.body.layers if hasattr(l, "weights")]
    assert [l.n_out for l in dense] == [32, 64, 128, 10]
    trunk = [l for l in m.discriminator.trunk.layers if hasattr(l, "weights")]
    assert [l.n_out for l in trunk] == [128, 64, 32]
    assert m.discriminator.n_heads == heads
    x = m.generate(7, np.random.default_rng(1))
    assert x.shape == (7, 10)
    out = m.discriminate(np.random.default_rng(2).uniform(size=(9, 10)))
    assert out.shape == (9, heads)
    assert np.all((out > 0) & (out < 1))


@pytest.mark.parametrize("build", [build_evagan, build_acgan])
def test_same_seed_builds_identical(build):
    cfg = tiny_config()
    a, b = build(cfg, np.random.default_rng(3)), build(cfg, np.random.default_rng(3))
    for na, nb in ((a.generator, b.generator), (a.discriminator, b.discriminator)):
        assert all(np.array_equal(p.value, q.value) for p, q in zip(na.parameters(), nb.parameters()))


def test_invalid_config_errors():
    with pytest.raises(ConfigError, match="batchnorm"):
        build_evagan(tiny_config(batch_size=1), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        build_acgan(tiny_config(g_widths=(0, 3)), np.random.default_rng(0))


def test_evagan_generator_has_single_label():
    m = build_evagan(tiny_config(), np.random.default_rng(0))
    assert m.generator.embedding.n_labels == 1
    with pytest.raises(ValueError):
        m.generate(2, np.random.default_rng(0), labels=[MAJORITY_LABEL, MAJORITY_LABEL])


def test_generate_single_row_in_unit_range_and_reproducible():
    m = build_evagan(tiny_config(), np.random.default_rng(0))
    x = m.generate(1, np.random.default_rng(5))
    assert x.shape == (1, 4) and np.all(np.isfinite(x)) and np.all((x >= 0) & (x <= 1))
    np.testing.assert_array_equal(x, m.generate(1, np.random.default_rng(5)))
    with pytest.raises(ValueError):
        m.generate(0, np.random.default_rng(0))


# --------------------------------------------------------- freeze contracts


@pytest.mark.parametrize("build", [build_evagan, build_acgan])
def test_d_step_freezes_generator_and_g_step_freezes_discriminator(build):
    m = build(tiny_config(), np.random.default_rng(0))
    maj, mnr = real_rows()
    g_snap, g_buf = snapshot(m.generator), {k: v.copy() for k, v in m.generator.named_buffers().items()}
    m.d_step(maj, mnr, np.random.default_rng(1))
    assert unchanged(m.generator, g_snap)
    assert all(np.array_equal(v, g_buf[k]) for k, v in m.generator.named_buffers().items())

    d_snap, d_buf = snapshot(m.discriminator), {k: v.copy() for k, v in m.discriminator.named_buffers().items()}
    m.g_step(8, np.random.default_rng(2))
    assert unchanged(m.discriminator, d_snap)
    assert all(np.array_equal(v, d_buf[k]) for k, v in m.discriminator.named_buffers().items())


def test_d_step_rejects_small_batches():
    m = build_evagan(tiny_config(), np.random.default_rng(0))
    maj, mnr = real_rows()
    with pytest.raises(BatchError):
        d_train_step(m, maj, mnr[:1], np.random.default_rng(0))
    with pytest.raises(BatchError):
        g_train_step(m, 1, np.random.default_rng(0))
    a = build_acgan(tiny_config(), np.random.default_rng(0))
    with pytest.raises(BatchError):
        acgan_d_step(a, maj[:1], np.array([1]), np.random.default_rng(0))


# --------------------------------------------------------------- cold start


@pytest.mark.parametrize("seed", range(3))
def test_cold_start_losses_near_ln2(seed):
    cfg = GanConfig(feature_dim=10)
    maj, mnr = real_rows(seed, 200, 56, 10)
    for build in (build_evagan, build_acgan):
        m = build(cfg, stream_rng(seed, 0))
        rec = m.d_step(maj, mnr, stream_rng(seed, 1))
        for v in (rec.d_loss_real_minority, rec.d_loss_fake_minority, rec.d_loss_majority):
            assert abs(v - LN2) <= 0.35, (m.kind, rec)
        g = m.g_step(256, stream_rng(seed, 1))
        assert abs(g - 2 * LN2) <= 0.7


# ---------------------------------------------------------- loss wiring


def test_evagan_generator_gradient_matches_finite_differences():
    m = build_evagan(tiny_config(), np.random.default_rng(0))
    z = np.random.default_rng(1).normal(size=(5, 3))
    assert model_grad_error(m, lambda: evagan_objective(m, z)) <= 1e-4


def test_acgan_generator_gradient_matches_finite_differences():
    m = build_acgan(tiny_config(), np.random.default_rng(0))
    z = np.random.default_rng(1).normal(size=(6, 3))
    labels = np.array([0, 1, 0, 1, 1, 0])
    assert model_grad_error(m, lambda: acgan_objective(m, z, labels)) <= 1e-4


def test_majority_head_does_not_reach_the_generator():
    m = build_evagan(tiny_config(), np.random.default_rng(0))
    z = np.random.default_rng(1).normal(size=(6, 3))
    evagan_objective(m, z)
    before = [p.grad.copy() for p in m.generator.parameters()]
    loss = evagan_objective(m, z)
    head = m.discriminator.heads[MAJORITY]
    head.weights.value += np.random.default_rng(2).normal(size=head.weights.value.shape) * 5
    head.bias.value += 3.0
    assert evagan_objective(m, z) == loss
    after = [p.grad for p in m.generator.parameters()]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_evagan_d_step_targets_by_hand():
    """Rebuild the discriminator loss from per-head means and compare with the step's groups."""
    cfg = tiny_config()
    m = build_evagan(cfg, np.random.default_rng(0))
    maj, mnr = real_rows()
    twin = build_evagan(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(9)
    fake = twin.generator.forward(twin.noise(len(mnr), np.random.default_rng(9)),
                                  np.zeros(len(mnr), dtype=np.int64), train=True, update_stats=False)
    p = twin.discriminator.forward(np.vstack([maj, mnr, fake]), train=True)
    a, k = len(maj), len(mnr)
    bce = lambda q, t: -(t * np.log(q) + (1 - t) * np.log(1 - q))
    rec = d_train_step(m, maj, mnr, rng)
    maj_terms = np.concatenate([bce(p[:a, 1], 1), bce(p[:a, 2], 1)])
    mnr_terms = np.concatenate([bce(p[a:a + k, 0], 1), bce(p[a:a + k, 1], 0), bce(p[a:a + k, 2], 0)])
    fake_terms = np.concatenate([bce(p[a + k:, 0], 0), bce(p[a + k:, 1], 0)])
    assert rec.d_loss_majority == pytest.approx(maj_terms.mean(), abs=1e-12)
    assert rec.d_loss_real_minority == pytest.approx(mnr_terms.mean(), abs=1e-12)
    assert rec.d_loss_fake_minority == pytest.approx(fake_terms.mean(), abs=1e-12)


def test_acgan_labels_cover_both_classes():
    labels = sample_labels(10_000, np.random.default_rng(0))
    assert set(np.unique(labels)) == {MINORITY_LABEL, MAJORITY_LABEL}
    m = build_acgan(tiny_config(), np.random.default_rng(0))
    assert m.generator.embedding.n_labels == 2
    assert m.minority_head == m.majority_head == CLASS


# ------------------------------------------------------- learning signals


def _median_decrease(build, attr, steps=20):
    drops = []
    for seed in range(3):
        ds = two_class(400, 100, 6, seed, gap=0.6)
        m = build(GanConfig(feature_dim=6, batch_size=64), stream_rng(seed, 0))
        tr = Trainer(m, ds, seed)
        first = last = None
        for i in range(steps):
            maj, mnr = tr.sampler.next_batch()
            rec = m.d_step(ds.features[maj], ds.features[mnr], tr.rng)
            m.g_step(64, tr.rng)
            v = attr(m, ds, rec)
            first = v if i == 0 else first
            last = v
        drops.append(first - last)
    return float(np.median(drops))


def test_evagan_majority_loss_decreases_on_separable_data():
    assert _median_decrease(build_evagan, lambda m, ds, rec: rec.d_loss_majority) > 0


def test_acgan_class_head_loss_decreases_on_separable_data():
    def class_loss(m, ds, rec):
        p = np.clip(m.discriminate(ds.features)[:, CLASS], 1e-7, 1 - 1e-7)
        y = ds.labels
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))

    assert _median_decrease(build_acgan, class_loss) > 0


def test_generated_minority_moves_toward_the_minority_cluster():
    from evagan.data import synth_unbalanced

    ds = synth_unbalanced(1500, 300, 5, separation=0.4, seed=0, center=0.6, spread=0.05)
    m = build_evagan(GanConfig(feature_dim=5, batch_size=64), stream_rng(0, 0))
    Trainer(m, ds, 0).run(40)
    mean = m.generate(2000, np.random.default_rng(1)).mean(axis=0)
    assert np.all(np.abs(mean - 0.8) <= 0.15), mean


def test_acgan_g_step_returns_finite_loss():
    m = build_acgan(tiny_config(), np.random.default_rng(0))
    assert np.isfinite(acgan_g_step(m, 8, np.random.default_rng(0)))
