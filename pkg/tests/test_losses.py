import math

import numpy as np
import pytest
import scipy.ndimage as ndi
import torch

from thforge.config import LossConfig
from thforge.errors import InputError
from thforge.losses import (UncertaintyWeighting, boundary_band, boundary_loss,
                            dice_loss, downsample_mask, focal_loss,
                            segmentation_loss, uncertainty_total)

from conftest import central_diff, relative_error


def bce_oracle(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, 1e-7, 1 - 1e-7)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


class TestFocal:
    def test_confident_correct_is_near_zero(self):
        loss = focal_loss(torch.tensor([1.0]), torch.tensor([1.0]))
        assert float(loss) < 1e-5

    def test_hand_computed_value(self):
        # score 0.5, label 1, alpha 0.25, gamma 2: 0.25 * 0.25 * ln 2
        loss = focal_loss(torch.tensor([0.5]), torch.tensor([1.0]))
        assert float(loss) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-6)

    def test_reduces_to_bce(self):
        cfg = LossConfig(focal_alpha=1.0, focal_gamma=0.0)
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 32))
            p = rng.uniform(0.01, 0.99, size=n)
            y = rng.integers(0, 2, size=n).astype(float)
            ours = float(focal_loss(torch.tensor(p), torch.tensor(y), cfg))
            assert ours == pytest.approx(bce_oracle(p, y), abs=1e-7)

    def test_rejects_labels_outside_unit_interval(self):
        with pytest.raises(InputError):
            focal_loss(torch.tensor([0.5]), torch.tensor([2.0]))
        with pytest.raises(InputError):
            focal_loss(torch.tensor([0.5]), torch.tensor([-1.0]))

    def test_accepts_soft_labels(self):
        loss = focal_loss(torch.tensor([0.7]), torch.tensor([0.3]))
        assert float(loss) > 0

    def test_gradient_matches_finite_differences(self):
        cfg = LossConfig()
        rng = np.random.default_rng(11)
        for _ in range(10):
            p = torch.tensor(rng.uniform(0.05, 0.95, size=6), requires_grad=True)
            y = torch.tensor(rng.integers(0, 2, size=6).astype(float))
            focal_loss(p, y, cfg).backward()
            fd = central_diff(lambda t: focal_loss(t, y, cfg), p.detach().clone(),
                              range(6))
            assert relative_error(p.grad.numpy(), fd) < 1e-4


class TestDice:
    def test_perfect_overlap_is_zero(self):
        m = torch.zeros(1, 1, 8, 8)
        m[0, 0, 2:6, 2:6] = 1.0
        assert float(dice_loss(m, m)) == pytest.approx(0.0, abs=1e-6)

    def test_empty_vs_empty_is_zero(self):
        z = torch.zeros(1, 1, 8, 8)
        assert float(dice_loss(z, z)) == pytest.approx(0.0, abs=1e-12)

    def test_enumerated_half_overlap(self):
        pred = torch.zeros(1, 1, 4, 4)
        target = torch.zeros(1, 1, 4, 4)
        pred[0, 0, 0, :4] = 1.0          # |p| = 4
        target[0, 0, 0, 2:] = 1.0        # overlap 2
        target[0, 0, 1, :2] = 1.0        # |g| = 4
        cfg = LossConfig(dice_epsilon=1e-9)
        assert float(dice_loss(pred, target, cfg)) == pytest.approx(0.5, abs=1e-6)

    def test_enumerated_small_masks(self):
        # Oracle: direct formula over pixel counts for 20 random binary masks.
        rng = np.random.default_rng(5)
        cfg = LossConfig()
        for _ in range(20):
            p = rng.integers(0, 2, size=(1, 1, 6, 6)).astype(np.float64)
            g = rng.integers(0, 2, size=(1, 1, 6, 6)).astype(np.float64)
            expected = 1 - (2 * (p * g).sum() + cfg.dice_epsilon) / (
                p.sum() + g.sum() + cfg.dice_epsilon)
            got = float(dice_loss(torch.tensor(p), torch.tensor(g), cfg))
            assert got == pytest.approx(expected, abs=1e-9)

    def test_symmetry_for_binary_pred(self):
        rng = np.random.default_rng(9)
        p = torch.tensor(rng.integers(0, 2, size=(2, 1, 5, 5)).astype(np.float64))
        g = torch.tensor(rng.integers(0, 2, size=(2, 1, 5, 5)).astype(np.float64))
        assert float(dice_loss(p, g)) == pytest.approx(float(dice_loss(g, p)), abs=1e-12)

    def test_monotone_in_true_positive_pixel(self):
        target = torch.zeros(1, 1, 4, 4)
        target[0, 0, 1, 1] = 1.0
        prev = None
        for v in np.linspace(0.0, 1.0, 11):
            pred = torch.full((1, 1, 4, 4), 0.2)
            pred[0, 0, 1, 1] = float(v)
            cur = float(dice_loss(pred, target))
            if prev is not None:
                assert cur <= prev + 1e-12
            prev = cur

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            dice_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 5, 5))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            p = torch.tensor(rng.uniform(0.1, 0.9, size=(1, 1, 4, 4)), requires_grad=True)
            g = torch.tensor(rng.integers(0, 2, size=(1, 1, 4, 4)).astype(np.float64))
            dice_loss(p, g).backward()
            fd = central_diff(lambda t: dice_loss(t, g), p.detach().clone(), range(16))
            assert relative_error(p.grad.numpy().ravel(), fd) < 1e-4


def band_oracle(target: np.ndarray, k: int) -> np.ndarray:
    selem = np.ones((2 * k + 1, 2 * k + 1), dtype=bool)
    hard = target > 0.5
    return ndi.binary_dilation(hard, selem) != ndi.binary_erosion(hard, selem)


class TestBoundary:
    def test_empty_target_gives_zero(self):
        pred = torch.rand(1, 1, 8, 8)
        assert float(boundary_loss(pred, torch.zeros(1, 1, 8, 8))) == 0.0

    def test_correct_square_is_near_zero(self):
        m = torch.zeros(1, 1, 8, 8)
        m[0, 0, 2:6, 2:6] = 1.0
        assert float(boundary_loss(m, m)) < 1e-5

    def test_band_matches_morphological_oracle(self):
        m = np.zeros((8, 8))
        m[2:6, 2:6] = 1.0
        cfg = LossConfig(boundary_band_px=1)
        band = boundary_band(torch.tensor(m)[None, None], 1)[0, 0].numpy()
        assert np.array_equal(band, band_oracle(m, 1))

        rng = np.random.default_rng(21)
        pred = rng.uniform(0.05, 0.95, size=(8, 8))
        got = float(boundary_loss(torch.tensor(pred)[None, None],
                                  torch.tensor(m)[None, None], cfg))
        b = band_oracle(m, 1)
        expected = bce_oracle(pred[b], m[b])
        assert got == pytest.approx(expected, abs=1e-9)

    def test_random_bands_match_oracle(self):
        rng = np.random.default_rng(17)
        for k in (1, 2, 3):
            cfg = LossConfig(boundary_band_px=k)
            m = (rng.uniform(size=(12, 12)) > 0.6).astype(float)
            band = boundary_band(torch.tensor(m)[None, None], k)[0, 0].numpy()
            assert np.array_equal(band, band_oracle(m, k))

    def test_gradient_matches_finite_differences(self):
        m = torch.zeros(1, 1, 8, 8)
        m[0, 0, 2:6, 2:6] = 1.0
        rng = np.random.default_rng(23)
        p = torch.tensor(rng.uniform(0.2, 0.8, size=(1, 1, 8, 8)), requires_grad=True)
        boundary_loss(p, m).backward()
        fd = central_diff(lambda t: boundary_loss(t, m), p.detach().clone(), range(64))
        assert relative_error(p.grad.numpy().ravel(), fd) < 1e-4


class TestSegmentationLoss:
    def _instance(self, seed=0):
        rng = np.random.default_rng(seed)
        pred = torch.tensor(rng.uniform(0.1, 0.9, size=(1, 1, 16, 16)))
        aux = torch.tensor(rng.uniform(0.1, 0.9, size=(1, 1, 8, 8)))
        target = torch.tensor((rng.uniform(size=(1, 1, 16, 16)) > 0.7).astype(np.float64))
        return pred, aux, target

    def test_perfect_prediction_is_zero(self):
        target = torch.zeros(1, 1, 16, 16)
        target[0, 0, 4:12, 4:12] = 1.0
        aux = downsample_mask(target, 8)
        loss = segmentation_loss(target, aux, target)
        assert float(loss) < 1e-4

    def test_degenerate_weights_equal_dice(self):
        pred, aux, target = self._instance(1)
        cfg = LossConfig(w_main=1.0, w_aux=0.0, w_bound=0.0)
        assert float(segmentation_loss(pred, aux, target, cfg)) == pytest.approx(
            float(dice_loss(pred, target, cfg)), abs=1e-12)

    def test_equals_weighted_component_sum(self):
        pred, aux, target = self._instance(2)
        cfg = LossConfig()
        target_lo = downsample_mask(target, 8)
        expected = (cfg.w_main * float(dice_loss(pred, target, cfg))
                    + cfg.w_aux * float(dice_loss(aux, target_lo, cfg))
                    + cfg.w_bound * float(boundary_loss(pred, target, cfg)))
        assert float(segmentation_loss(pred, aux, target, cfg)) == pytest.approx(
            expected, abs=1e-9)

    def test_aux_target_uses_max_pooling(self):
        target = torch.zeros(1, 1, 16, 16)
        target[0, 0, 3, 3] = 1.0  # single pixel survives max-pool, not average
        lo = downsample_mask(target, 8)
        assert float(lo[0, 0, 1, 1]) == 1.0
        assert float(lo.sum()) == 1.0


class TestUncertaintyTotal:
    def test_unit_sigmas_average_losses(self):
        assert float(uncertainty_total(1.0, 2.0, 0.0, 0.0)) == pytest.approx(1.5, abs=1e-12)

    def test_hand_computed_value(self):
        # l_det=1, l_seg=2, sigma_det=1 (s=0), sigma_seg=e (s=2)
        val = float(uncertainty_total(1.0, 2.0, 0.0, 2.0))
        assert val == pytest.approx(1.635335, abs=1e-5)

    def test_stationary_when_loss_equals_variance(self):
        s = torch.zeros((), dtype=torch.float64, requires_grad=True)
        total = uncertainty_total(torch.tensor(1.0, dtype=torch.float64),
                                  torch.tensor(0.5, dtype=torch.float64),
                                  s, torch.zeros((), dtype=torch.float64))
        total.backward()
        assert float(s.grad) == pytest.approx(0.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            l1, l2 = rng.uniform(0.1, 3.0, size=2)
            s = torch.tensor(rng.uniform(-1, 1, size=2), requires_grad=True)
            uncertainty_total(l1, l2, s[0], s[1]).backward()
            fd = central_diff(lambda t: uncertainty_total(l1, l2, t[0], t[1]),
                              s.detach().clone(), range(2))
            assert relative_error(s.grad.numpy(), fd) < 1e-4

    def test_lower_bound_by_log_terms(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            l1, l2 = rng.uniform(0, 5, size=2)
            s1, s2 = rng.uniform(-3, 3, size=2)
            total = float(uncertainty_total(l1, l2, s1, s2))
            assert total >= 0.5 * (s1 + s2) - 1e-12

    def test_module_reports_sigmas(self):
        module = UncertaintyWeighting(LossConfig(init_log_var_det=2.0))
        assert module.sigma_det == pytest.approx(math.e, rel=1e-6)
        assert module.sigma_seg == pytest.approx(1.0, rel=1e-6)
