"""End-to-end smoke of the python surface; plain asserts, no test framework.

Covers: schedule numbers, forward moments, dataset shapes, zero-init identity
of a steering module, a short fine-tune actually moving the output, steered
sampling determinism, the closed-form mixture identity, layout encoding, and
a checkpoint round trip.
"""

import math
import os
import sys
import tempfile

import numpy as np

import diffsteer as ds


def test_schedule():
    sched = ds.make_schedule(2, 0.1, 0.3)
    assert abs(sched.alpha_bar(1) - 0.9) < 1e-15
    assert abs(sched.alpha_bar(2) - 0.63) < 1e-15
    c = ds.derived_coefficients(sched, 2)
    assert abs(c.sigma - 3.0 / 37.0) < 1e-15
    default = ds.default_schedule()
    assert default.T == 1000
    assert abs(default.alpha_bar(1000) - 4.0358297653756835e-05) < 1e-18
    try:
        ds.make_schedule(0, 0.1, 0.2)
        raise AssertionError("expected ValueError")
    except ValueError:
        pass


def test_forward_moments():
    sched = ds.default_schedule()
    z0 = np.tile([[1.0, -2.0]], (20000, 1))
    zt = ds.forward_sample(z0, 500, sched, seed=9)
    ab = sched.alpha_bar(500)
    se = math.sqrt((1 - ab) / len(z0))
    assert abs(zt[:, 0].mean() - math.sqrt(ab) * 1.0) < 4 * se
    assert abs(zt[:, 1].mean() + math.sqrt(ab) * 2.0) < 4 * se


def test_datasets_and_conditions():
    spec = ds.default_ring_spec()
    data = ds.sample_ring_mixture(spec, 500, seed=3)
    assert data.points.shape == (500, 2)
    assert len(data.labels) == 500
    assert data.num_classes == 2
    again = ds.sample_ring_mixture(spec, 500, seed=3)
    assert np.array_equal(data.points, again.points)

    cond = ds.encode_ring_label(1, 2)
    assert np.allclose(cond.flatten(), [0.0, 1.0])

    grid = ds.encode_layout(
        [ds.LayoutBox(3, 0, 0, 4, 4), ds.LayoutBox(5, 2, 2, 6, 6)], 8, 8
    )
    assert grid.layout_labels[3, 3] == 8
    assert grid.layout_counts[3, 3] == 2
    assert grid.flat_dim == 128


def test_backbone_and_steering():
    cfg = ds.UNetConfig()
    cfg.feature_dims = [2, 4, 8]
    cfg.time_embed_dim = 8
    bb = ds.build_toy_unet(cfg, seed=11)
    assert bb.site_names() == ["E.0", "E.1", "MB.0", "ED.1", "D.0", "ED.0", "D.1"]

    z = np.array([[0.3, -0.7], [1.2, 0.4]])
    cond = ds.encode_ring_label(1, 2)
    for mode in (ds.IntegrationMode.EMD, ds.IntegrationMode.M, ds.IntegrationMode.ALL):
        sm = ds.build_steering_module(bb, mode, 2, ds.WeightPolicy.head_heavy, seed=5)
        for t in (1, 400, 1000):
            plain = bb.denoise(z, t)
            steered = ds.integrated_denoise(bb, sm, z, t, cond)
            assert np.array_equal(plain, steered), "zero-init module must be a no-op"


def test_finetune_moves_output():
    cfg = ds.UNetConfig()
    cfg.feature_dims = [2, 4, 8]
    cfg.time_embed_dim = 8
    bb = ds.build_toy_unet(cfg, seed=11)
    bb.frozen = True
    sched = ds.default_schedule()
    labeled = ds.sample_ring_mixture(ds.default_ring_spec(), 24, seed=40)
    sm = ds.build_steering_module(
        bb, ds.IntegrationMode.EMD, 2, ds.WeightPolicy.head_heavy, seed=6
    )
    tc = ds.TrainConfig()
    tc.epochs = 15
    tc.batch_size = 24
    tc.learning_rate = 1e-3
    tc.seed = 77
    losses = ds.finetune(bb, sm, labeled, sched, tc)
    assert len(losses) == 15
    assert all(math.isfinite(l) for l in losses)

    z = np.array([[0.5, 0.5]])
    cond = ds.encode_ring_label(1, 2)
    plain = bb.denoise(z, 500)
    steered = ds.integrated_denoise(bb, sm, z, 500, cond)
    assert np.abs(steered - plain).max() > 0.0, "training must move the output"

    a = ds.sample_steered(bb, sm, sched, 1, 2, 50, ds.SamplerKind.ddim, 10, seed=9)
    b = ds.sample_steered(bb, sm, sched, 1, 2, 50, ds.SamplerKind.ddim, 10, seed=9)
    assert a.shape == (50, 2)
    assert np.array_equal(a, b)


def test_oracle_identity():
    mix = ds.GaussianMixtureSpec()
    mix.components = [
        ds.GaussianComponent(np.array([0.0, 0.0]), 1.0),
        ds.GaussianComponent(np.array([4.0, 1.0]), 0.5),
    ]
    mix.weights = [0.6, 0.4]
    dm = ds.DiffusedMixture(mix, ds.default_schedule())
    err = ds.check_bayes_identity(dm, ds.square_grid(-6, 6, 21), [1, 250, 500, 750, 1000])
    assert err <= 1e-8, f"identity error {err}"
    resp = ds.gm_responsibilities(dm, np.array([0.1, 0.2]), 300)
    assert abs(sum(resp) - 1.0) < 1e-12


def test_eval_metrics():
    spec = ds.default_ring_spec()
    pts = np.array([[5.8, 0.0], [5.0, 0.7], [0.8, 0.0], [9.0, 9.0]])
    m = ds.support_accuracy(pts, 1, spec, 0.0)
    assert abs(m.accuracy - 0.5) < 1e-15
    assert abs(m.precision - 2.0 / 3.0) < 1e-15
    assert ds.ring_membership(np.array([0.8, 0.0]), spec, 0.0) == 0
    assert ds.ring_membership(np.array([2.5, 0.0]), spec, 0.0) is None
    assert abs(ds.spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12


def test_checkpoint_roundtrip():
    cfg = ds.UNetConfig()
    cfg.feature_dims = [2, 4]
    cfg.time_embed_dim = 4
    bb = ds.build_toy_unet(cfg, seed=2)
    bb.frozen = True
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bb.json")
        ds.save_backbone(bb, path)
        loaded = ds.load_backbone(path)
        z = np.array([[0.1, 0.2]])
        assert np.array_equal(loaded.denoise(z, 10), bb.denoise(z, 10))
        assert loaded.fingerprint == bb.fingerprint
        try:
            ds.load_backbone(os.path.join(tmp, "missing.json"))
            raise AssertionError("expected RuntimeError")
        except RuntimeError:
            pass


def main():
    tests = [
        test_schedule,
        test_forward_moments,
        test_datasets_and_conditions,
        test_backbone_and_steering,
        test_finetune_moves_output,
        test_oracle_identity,
        test_eval_metrics,
        test_checkpoint_roundtrip,
    ]
    for fn in tests:
        fn()
        print(f"ok {fn.__name__}")
    print(f"{len(tests)} python smoke tests passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
