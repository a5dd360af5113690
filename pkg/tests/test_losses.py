"""
Tests for the variable-rate training objective.
"""

import math

import numpy as np
import pytest

from octave_codec.exceptions import ContractError
from octave_codec.losses import L2_WEIGHT, loss_l2, loss_msssim, loss_terms, total_loss
from octave_codec.metrics import MsSsimConfig
from octave_codec.tensor import Tensor

CFG = MsSsimConfig(scales=3)


@pytest.fixture
def batch(rng, float64):
    return Tensor(rng.uniform(0.2, 0.8, size=(2, 3, 64, 64)))


class TestLossL2:
    """Tests for the Euclidean reconstruction term."""

    def test_zero_for_perfect_reconstruction(self, batch):
        assert loss_l2(batch, [batch, batch]).item() == 0.0

    def test_per_image_norm_summed_over_rates(self, batch):
        shifted = batch + 0.1
        expected = 0.1 * math.sqrt(3 * 64 * 64)
        assert loss_l2(batch, [shifted]).item() == pytest.approx(expected)
        assert loss_l2(batch, {2: shifted, 4: shifted}).item() == pytest.approx(2 * expected)

    def test_shape_mismatch(self, batch):
        with pytest.raises(ContractError):
            loss_l2(batch, [Tensor(np.zeros((1, 3, 64, 64)))])

    def test_needs_a_reconstruction(self, batch):
        with pytest.raises(ContractError):
            loss_l2(batch, [])


class TestLossMsSsim:
    """Tests for the MS-SSIM term."""

    def test_bounded_below_by_rate_count(self, batch):
        assert loss_msssim(batch, [batch, batch, batch], CFG).item() == pytest.approx(-3.0)

    def test_worse_reconstruction_costs_more(self, batch, rng):
        mild = batch + Tensor(0.02 * rng.standard_normal(batch.shape))
        strong = batch + Tensor(0.2 * rng.standard_normal(batch.shape))
        assert loss_msssim(batch, [mild], CFG).item() < loss_msssim(batch, [strong], CFG).item()

    def test_gradients(self, gradcheck, rng):
        cfg = MsSsimConfig(scales=2, window_size=3)
        x = rng.uniform(0.2, 0.8, size=(1, 2, 8, 8))
        recon = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        assert gradcheck(lambda a, b: loss_msssim(a, [b], cfg), x, recon) < 1e-5


class TestTotalLoss:
    """Tests for the combined objective."""

    def test_weighted_sum(self, batch, rng):
        recon = batch + Tensor(0.05 * rng.standard_normal(batch.shape))
        terms = loss_terms(batch, {4: recon}, CFG)
        assert terms.total.item() == pytest.approx(L2_WEIGHT * terms.l2.item() + terms.msssim.item())
        assert total_loss(batch, [recon], CFG).item() == pytest.approx(terms.total.item())

    def test_gradient_reaches_reconstructions(self, batch, rng):
        recon = Tensor(batch.data + 0.05 * rng.standard_normal(batch.shape), requires_grad=True)
        loss_terms(batch, [recon], CFG).total.backward()
        assert recon.grad is not None
        assert np.abs(recon.grad).sum() > 0

    def test_gradients(self, gradcheck, rng):
        cfg = MsSsimConfig(scales=2, window_size=3)
        x = rng.uniform(0.2, 0.8, size=(1, 2, 8, 8))
        coarse = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        fine = np.clip(x + 0.03 * rng.standard_normal(x.shape), 0, 1)
        assert gradcheck(lambda a, b, c: total_loss(a, [b, c], cfg), x, coarse, fine) < 1e-5
