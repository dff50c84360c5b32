import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scene123.errors import DataError, DomainError, OptimizationError
from scene123.field import VoxelRadianceField, field_to_bytes, march_ray, render_ray
from scene123.geometry import Pose, Ray, ViewDatabase
from scene123.training import (
    Discriminator,
    FieldTrainer,
    LossReport,
    LossWeights,
    SupportSet,
    TrainConfig,
    TransmittanceMask,
    depth_loss,
    discriminator_accuracy,
    discriminator_loss,
    discriminator_step,
    generator_adversarial_loss,
    init_field,
    optimize_field,
    psnr,
    rgb_loss,
    sample_crops,
    total_loss,
    transmittance_loss,
    write_log,
)

GOLDEN_LOGIT = -0.5042152237326936  # Discriminator.init(seed=7, zero_last=False), crop rng 11
parts_st = st.floats(0, 1e3, allow_nan=False)


class TestImageLosses:
    def test_identical(self, rng):
        a = rng.random((5, 6, 3))
        assert rgb_loss(a, a) == 0.0
        assert depth_loss(a[..., 0], a[..., 0]) == 0.0

    def test_constant_offsets(self, rng):
        a = rng.random((5, 6, 3))
        assert rgb_loss(a + 0.1, a) == pytest.approx(0.01, abs=1e-15)
        assert depth_loss(a[..., 0] + 1, a[..., 0]) == pytest.approx(1.0, abs=1e-15)

    def test_masked_matches_loop(self, rng):
        a, b = rng.random((7, 9, 3)), rng.random((7, 9, 3))
        mask = rng.random((7, 9)) < 0.5
        total, count = 0.0, 0
        for v in range(7):
            for u in range(9):
                if mask[v, u]:
                    for c in range(3):
                        total += (a[v, u, c] - b[v, u, c]) ** 2
                        count += 1
        assert rgb_loss(a, b, mask) == pytest.approx(total / count, rel=1e-13)
        d_total = sum((a[v, u, 0] - b[v, u, 0]) ** 2 for v in range(7) for u in range(9) if mask[v, u])
        assert depth_loss(a[..., 0], b[..., 0], mask) == pytest.approx(d_total / mask.sum(), rel=1e-13)

    def test_errors(self, rng):
        a = rng.random((4, 4, 3))
        with pytest.raises(DataError):
            rgb_loss(a, a, np.zeros((4, 4), bool))
        with pytest.raises(DomainError):
            rgb_loss(a, a[:3])
        with pytest.raises(DataError):
            depth_loss(a[..., 0], a[..., 0], np.zeros((4, 4), bool))


class TestTotalLoss:
    def test_default_weights(self):
        assert total_loss(LossReport(1, 1, 1, 1), LossWeights()) == pytest.approx(1.007, abs=1e-15)

    def test_zero_weights(self):
        assert total_loss(LossReport(0.3, 5, 7, 9), LossWeights(0, 0, 0)) == 0.3

    @given(parts_st, parts_st, parts_st, parts_st, parts_st, parts_st, parts_st)
    def test_arithmetic_and_linearity(self, r, d, t, g, wd, wt, wg):
        w = LossWeights(wd, wt, wg)
        value = total_loss(LossReport(r, d, t, g), w)
        assert value == pytest.approx(r + wd * d + wt * t + wg * g, rel=1e-12, abs=1e-12)
        assert value >= 0
        doubled = total_loss(LossReport(r, 2 * d, t, g), w)
        assert doubled - value == pytest.approx(wd * d, rel=1e-9, abs=1e-9)

    def test_rejects_bad_inputs(self):
        with pytest.raises(OptimizationError):
            total_loss(LossReport(1, math.nan, 0, 0), LossWeights())
        with pytest.raises(DomainError):
            LossWeights(depth=-1)


def vacuum():
    return VoxelRadianceField.constant(2, (-5, -5, -5), (5, 5, 5), density=-800)


class TestTransmittanceLoss:
    def test_vacuum_corrected_positive(self):
        s = march_ray(vacuum(), Ray((0, 0, 0), (0, 0, 1), 0.0, 2.0), 16)
        assert transmittance_loss(s, TransmittanceMask([1.0])) > 0

    def test_opaque_surface_vanishes(self):
        losses = []
        for density in (5.0, 20.0, 80.0, 320.0):
            dens = np.full((41, 2, 41), -50.0)
            dens[:, :, 20:] = density  # solid from z = 0 onward
            f = VoxelRadianceField(dens, np.zeros((41, 2, 41, 3)), (-2, -1, -2), (2, 1, 2))
            s = march_ray(f, Ray((0, 0, -1.0), (0, 0, 1), 0.0, 2.0), 64)
            losses.append(transmittance_loss(s, TransmittanceMask([1.1])))
        assert all(a > b for a, b in zip(losses, losses[1:])) and losses[-1] < 1e-12

    def test_literal_hand_value(self):
        s = march_ray(vacuum(), Ray((0, 0, 0), (0, 0, 1), 0.0, 2.0), 4)  # t = .25 .75 1.25 1.75
        loss = transmittance_loss(s, TransmittanceMask([1.0], "literal"))
        assert loss == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_corrected_zero_iff_dark_past_depth(self, rng):
        f = VoxelRadianceField(rng.normal(0, 2, (6, 6, 6)), np.zeros((6, 6, 6, 3)), (-1, -1, -1), (1, 1, 1))
        s = march_ray(f, Ray((0, 0, -0.9), (0, 0, 1), 0.0, 1.8), 32)
        spec = TransmittanceMask([0.9])
        past = s.t_values[0] > 0.9
        loss = transmittance_loss(s, spec)
        assert (loss == 0) == np.all(s.transmittances[0, :-1][past] == 0)

    def test_gradient_fd(self, rng):
        s = march_ray(vacuum(), Ray((0, 0, 0), (0, 0, 1), 0.0, 2.0), 8)
        s.transmittances = rng.uniform(0.1, 1, s.transmittances.shape)
        spec = TransmittanceMask([0.7])
        _, g = transmittance_loss(s, spec, with_grad=True)
        for i in range(8):
            old = s.transmittances[0, i]
            s.transmittances[0, i] = old + 1e-6
            up = transmittance_loss(s, spec)
            s.transmittances[0, i] = old - 1e-6
            down = transmittance_loss(s, spec)
            s.transmittances[0, i] = old
            assert g[0, i] == pytest.approx((up - down) / 2e-6, abs=1e-8)

    def test_validation(self):
        with pytest.raises(DomainError):
            TransmittanceMask([0.0])
        with pytest.raises(DomainError):
            TransmittanceMask([1.0], "sideways")


WHITE = np.ones((16, 32, 32, 3))
BLACK = np.zeros((16, 32, 32, 3))


class TestDiscriminator:
    def test_zero_init_logit(self, rng):
        d = Discriminator.init(0)
        assert np.all(d.logits(rng.random((3, 32, 32, 3))) == 0)

    def test_identical_crops_identical_logits(self, rng):
        d = Discriminator.init(1, zero_last=False)
        crop = rng.random((32, 32, 3))
        a, b = d.logits(np.stack([crop, crop]))
        assert a == b

    def test_golden_logit(self):
        d = Discriminator.init(seed=7, zero_last=False)
        crop = np.random.default_rng(11).random((32, 32, 3))
        assert float(d.logits(crop)[0]) == pytest.approx(GOLDEN_LOGIT, rel=1e-12)

    def test_finite_on_unit_inputs(self, rng):
        d = Discriminator.init(2, zero_last=False)
        assert np.all(np.isfinite(d.logits(np.stack([WHITE[0], BLACK[0], rng.random((32, 32, 3))]))))

    def test_wrong_crop_shape(self):
        with pytest.raises(DomainError):
            Discriminator.init(0).logits(np.zeros((16, 16, 3)))

    def test_zero_init_loss_is_two_ln2(self, rng):
        crops = rng.random((4, 32, 32, 3))
        assert discriminator_loss(Discriminator.init(0), crops, crops) == pytest.approx(2 * math.log(2), abs=1e-15)

    def test_r1_zero_for_constant_discriminator(self, rng):
        pen, grads = Discriminator.init(0).r1_penalty(rng.random((2, 32, 32, 3)), with_grad=True)
        assert pen == 0.0
        # zero-init last layer: penalty is flat in every parameter except w3
        assert all(np.all(g == 0) for k, g in grads.items() if k != "w3")

    def test_r1_gradient_fd(self, rng):
        d = Discriminator.init(3, hidden=(16, 8), crop_size=4, zero_last=False)
        crops = rng.random((3, 4, 4, 3))
        _, grads = d.r1_penalty(crops, with_grad=True)
        for key in ("w1", "w2", "w3"):
            idx = tuple(rng.integers(s) for s in d.params[key].shape)
            old = d.params[key][idx]
            d.params[key][idx] = old + 1e-6
            up = d.r1_penalty(crops)
            d.params[key][idx] = old - 1e-6
            down = d.r1_penalty(crops)
            d.params[key][idx] = old
            assert grads[key][idx] == pytest.approx((up - down) / 2e-6, rel=1e-4, abs=1e-9)

    def test_separates_white_from_black(self):
        d = Discriminator.init(0)
        for _ in range(200):
            discriminator_step(d, WHITE, BLACK)
        assert discriminator_accuracy(d, WHITE, BLACK) >= 0.99

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_step_errors(self):
        d = Discriminator.init(0)
        with pytest.raises(DataError):
            discriminator_step(d, WHITE[:0], BLACK)
        d.params["w3"][:] = np.nan
        with pytest.raises(OptimizationError):
            discriminator_step(d, WHITE[:2], BLACK[:2])


@pytest.fixture(scope="module")
def bright_lover():
    d = Discriminator.init(0)
    for _ in range(100):
        discriminator_step(d, WHITE, BLACK)
    return d


class TestGeneratorLoss:
    def test_zero_init(self, rng):
        loss, grad = generator_adversarial_loss(Discriminator.init(0), rng.random((2, 32, 32, 3)))
        assert loss == pytest.approx(math.log(2), abs=1e-15) and np.all(grad == 0)

    def test_pushes_dark_render_brighter(self, bright_lover):
        dark = np.full((1, 32, 32, 3), 0.1)
        loss, grad = generator_adversarial_loss(bright_lover, dark)
        assert np.mean(grad) < 0
        # finite-difference confirmation of the sign on a uniform brightening
        h = 1e-4
        up, _ = generator_adversarial_loss(bright_lover, dark + h)
        down, _ = generator_adversarial_loss(bright_lover, dark - h)
        assert (up - down) / (2 * h) < 0
        assert np.sum(grad) == pytest.approx((up - down) / (2 * h), rel=1e-4)

    def test_pixel_gradients_fd(self, rng):
        d = Discriminator.init(5, zero_last=False)
        crops = rng.random((2, 32, 32, 3))
        _, grad = generator_adversarial_loss(d, crops)
        for _ in range(8):
            idx = tuple(rng.integers(s) for s in crops.shape)
            old = crops[idx]
            crops[idx] = old + 1e-4
            up, _ = generator_adversarial_loss(d, crops)
            crops[idx] = old - 1e-4
            down, _ = generator_adversarial_loss(d, crops)
            crops[idx] = old
            fd = (up - down) / 2e-4
            assert abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-12) < 1e-3


class TestSupport:
    def test_validation(self):
        with pytest.raises(DataError):
            SupportSet([])
        with pytest.raises(DataError):
            SupportSet([np.zeros((4, 4, 3)), np.zeros((5, 4, 3))])

    def test_crops_come_from_images(self, rng):
        imgs = [np.full((40, 40, 3), 0.25), np.full((40, 40, 3), 0.75)]
        crops = sample_crops(rng, imgs, 32, 10)
        assert crops.shape == (10, 32, 32, 3)
        assert set(np.unique(crops)) <= {0.25, 0.75}
        with pytest.raises(DomainError):
            sample_crops(rng, [np.zeros((8, 8, 3))], 32, 1)


def test_psnr_values():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == 99.0
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(DomainError):
        psnr(a, a[:2])


@pytest.fixture(scope="module")
def tiny_db(scene):
    from scene123.geometry import CameraIntrinsics

    K = CameraIntrinsics.from_fov(16, 16, 60)
    return ViewDatabase([scene.render_view(Pose.identity(), K, 64)])


def tiny_cfg(**kw):
    base = dict(iters=30, batch_rays=128, n_samples=16, log_every=10, seed=4)
    base.update(kw)
    return TrainConfig(**base)


class TestOptimizeField:
    def test_zero_iterations_no_op(self, tiny_db):
        f = init_field(8, (-1, -1, -1), (1, 1, 1))
        before = field_to_bytes(f)
        _, log = optimize_field(f, tiny_db, config=tiny_cfg(iters=0))
        assert log == [] and field_to_bytes(f) == before

    def test_zero_upstream_gradient_leaves_grid(self, tiny_db):
        f = init_field(8, (-1, -1, -1), (1, 1, 1))
        trainer = FieldTrainer(f, tiny_cfg())
        before = f.packed()
        trainer.opt.step({"grid": np.zeros_like(trainer.params["grid"])})
        trainer._sync_field()
        np.testing.assert_array_equal(f.packed(), before)
        assert trainer.opt.t == 1

    def test_same_seed_same_log(self, tiny_db):
        runs = []
        for _ in range(2):
            f = init_field(8, (-1, -1, -1), (1, 1, 1))
            support = SupportSet([tiny_db.origin.image])
            cfg = tiny_cfg(crop_size=8, weights=LossWeights(dist=0.001))
            _, log = optimize_field(f, tiny_db, Discriminator.init(0, crop_size=8), support, cfg)
            runs.append((log, field_to_bytes(f)))
        assert runs[0] == runs[1]
        assert [r["iteration"] for r in runs[0][0]] == [10, 20, 30]

    def test_log_finite_and_loss_drops(self, tiny_db, tmp_path):
        f = init_field(8, (-1, -1, -1), (1, 1, 1))
        _, log = optimize_field(f, tiny_db, config=tiny_cfg(iters=60))
        keys = ("rgb", "depth", "transmittance", "dist", "total", "probe_psnr")
        assert all(math.isfinite(r[k]) for r in log for k in keys)
        assert log[-1]["rgb"] < log[0]["rgb"]
        write_log(log, tmp_path / "log.ndjson")
        assert len((tmp_path / "log.ndjson").read_text().splitlines()) == len(log)

    def test_empty_database_rejected(self, tiny_db):
        rec = tiny_db.origin.copy()
        with pytest.raises(DataError):
            FieldTrainer(init_field(4, (-1, -1, -1), (1, 1, 1)), tiny_cfg()).run(_NoValid(rec), 1)

    def test_nonfinite_aborts_with_log(self, tiny_db):
        f = init_field(8, (-1, -1, -1), (1, 1, 1))
        f.color_grid[:] = np.nan
        trainer = FieldTrainer(f, tiny_cfg())
        with pytest.raises(OptimizationError):
            trainer.run(tiny_db, 5)
        assert trainer.log[-1]["error"] == "non-finite loss"


class _NoValid:
    """Database stand-in whose single record has no valid pixels."""

    def __init__(self, rec):
        rec.mask[:] = False
        self.records = [rec]

    def __len__(self):
        return 1
