import math

import numpy as np
import pytest

from graphwarp.errors import CountMismatch, NonpositiveSigma
from graphwarp.losses import (
    WeightParams,
    motion_weight,
    motion_weights,
    nll_loss,
    total_loss,
    truncate_sigma,
)


def nll_oracle(mu, sigma, gt):
    """Straightforward loop re-derivation of the simplified NLL."""
    total = 0.0
    for m, s, y in zip(mu, sigma, gt):
        r2 = sum((yi - mi) ** 2 for yi, mi in zip(y, m))
        total += math.log(s) + r2 / s**2
    return total / len(mu)


class TestNllLoss:
    def test_exact_zero(self):
        y = np.array([[0.1, -0.2, 0.3]])
        loss = nll_loss(y, np.array([1.0]), y)
        assert loss.value == pytest.approx(0.0, abs=1e-12)

    def test_exact_log_e(self):
        y = np.array([[0.1, -0.2, 0.3]])
        loss = nll_loss(y, np.array([math.e]), y)
        assert loss.value == pytest.approx(1.0, abs=1e-12)

    def test_unit_residual_unit_sigma(self):
        mu = np.zeros((1, 3))
        gt = np.array([[1.0, 0.0, 0.0]])
        loss = nll_loss(mu, np.array([1.0]), gt)
        assert loss.value == pytest.approx(1.0, abs=1e-12)
        assert loss.grad_sigma[0] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = rng.integers(1, 8)
            mu = rng.normal(size=(n, 3))
            gt = rng.normal(size=(n, 3))
            sigma = rng.uniform(0.3, 2.0, size=n)
            assert nll_loss(mu, sigma, gt).value == pytest.approx(
                nll_oracle(mu, sigma, gt), rel=1e-12
            )

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(100):
            n = int(rng.integers(1, 6))
            mu = rng.normal(size=(n, 3))
            gt = rng.normal(size=(n, 3))
            sigma = rng.uniform(0.5, 2.0, size=n)
            loss = nll_loss(mu, sigma, gt)
            for i in range(n):
                for d in range(3):
                    mp = mu.copy()
                    mp[i, d] += h
                    mm = mu.copy()
                    mm[i, d] -= h
                    fd = (nll_loss(mp, sigma, gt).value - nll_loss(mm, sigma, gt).value) / (2 * h)
                    rel = abs(loss.grad_mu[i, d] - fd) / max(abs(fd), 1e-6)
                    assert rel < 1e-5
                sp = sigma.copy()
                sp[i] += h
                sm = sigma.copy()
                sm[i] -= h
                fd = (nll_loss(mu, sp, gt).value - nll_loss(mu, sm, gt).value) / (2 * h)
                rel = abs(loss.grad_sigma[i] - fd) / max(abs(fd), 1e-6)
                assert rel < 1e-5

    def test_sigma_stationary_point(self):
        # d/d sigma (log s + r^2/s^2) = 0 exactly at s^2 = 2 r^2
        rng = np.random.default_rng(2)
        for _ in range(20):
            gt = rng.normal(size=(1, 3))
            mu = rng.normal(size=(1, 3))
            r2 = float(((gt - mu) ** 2).sum())
            sigma = np.array([math.sqrt(2.0 * r2)])
            loss = nll_loss(mu, sigma, gt)
            assert loss.grad_sigma[0] == pytest.approx(0.0, abs=1e-12)

    def test_fixed_sigma_ranks_like_mse(self):
        rng = np.random.default_rng(3)
        gt = rng.normal(size=(10, 3))
        sigma = np.full(10, 0.7)
        losses, mses = [], []
        for _ in range(25):
            mu = gt + rng.normal(scale=rng.uniform(0.01, 1.0), size=(10, 3))
            losses.append(nll_loss(mu, sigma, gt).value)
            mses.append(float(((mu - gt) ** 2).sum()))
        assert list(np.argsort(losses)) == list(np.argsort(mses))

    def test_nonpositive_sigma(self):
        with pytest.raises(NonpositiveSigma):
            nll_loss(np.zeros((1, 3)), np.array([0.0]), np.zeros((1, 3)))

    def test_count_mismatch(self):
        with pytest.raises(CountMismatch):
            nll_loss(np.zeros((2, 3)), np.ones(2), np.zeros((3, 3)))


class TestTotalLoss:
    def test_both_zero(self):
        y = np.array([[0.2, 0.0, -0.1]])
        s = np.array([1.0])
        combined = total_loss(y, s, y, s, y)
        assert combined.value == pytest.approx(0.0, abs=1e-12)

    def test_linear_combination(self):
        # L_out = 2 (unit sigma, squared residual 2); L_temp = 3
        gt = np.zeros((1, 3))
        out_mu = np.array([[math.sqrt(2.0), 0.0, 0.0]])
        temp_mu = np.array([[math.sqrt(3.0), 0.0, 0.0]])
        s = np.array([1.0])
        combined = total_loss(out_mu, s, temp_mu, s, gt)
        assert combined.value == pytest.approx(2.3, abs=1e-12)

    def test_matches_independent_recombination(self):
        rng = np.random.default_rng(4)
        n = 6
        gt = rng.normal(size=(n, 3))
        out_mu = rng.normal(size=(n, 3))
        temp_mu = rng.normal(size=(n, 3))
        out_s = rng.uniform(0.4, 1.5, size=n)
        temp_s = rng.uniform(0.4, 1.5, size=n)
        combined = total_loss(out_mu, out_s, temp_mu, temp_s, gt)
        expected = nll_oracle(out_mu, out_s, gt) + 0.1 * nll_oracle(temp_mu, temp_s, gt)
        assert combined.value == pytest.approx(expected, rel=1e-12)
        # temporal gradients carry the 0.1 factor
        base = nll_loss(temp_mu, temp_s, gt)
        assert np.allclose(combined.temporal.grad_mu, 0.1 * base.grad_mu)


class TestTruncateSigma:
    def test_below_threshold(self):
        assert truncate_sigma(0.05) == 0.1

    def test_above_threshold(self):
        assert truncate_sigma(0.3) == 0.3

    def test_boundary(self):
        assert truncate_sigma(0.1) == 0.1

    def test_array(self):
        out = truncate_sigma(np.array([0.0, 0.09, 0.2]))
        assert np.allclose(out, [0.1, 0.1, 0.2])


class TestMotionWeight:
    def test_zero_sigma_gives_one(self):
        for mu in (np.zeros(3), np.array([5.0, 0.0, 0.0])):
            assert motion_weight(mu, 0.0) == 1.0

    def test_reference_value(self):
        w = motion_weight(np.array([0.01, 0.0, 0.0]), 0.01, WeightParams(k=4.0, epsilon=0.01))
        assert w == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_limit_large_sigma(self):
        w = motion_weight(np.array([0.05, 0.0, 0.0]), 1e6)
        assert w == pytest.approx(0.0, abs=1e-300)

    def test_range_and_monotonicity(self):
        mu = np.array([0.03, 0.01, 0.0])
        sigmas = np.linspace(0.0, 0.5, 40)
        ws = [motion_weight(mu, s) for s in sigmas]
        assert all(0.0 < w <= 1.0 for w in ws)
        assert all(a > b for a, b in zip(ws, ws[1:]))

    def test_increasing_in_motion_norm(self):
        sigma = 0.05
        norms = np.linspace(0.0, 0.5, 30)
        ws = [motion_weight(np.array([n, 0.0, 0.0]), sigma) for n in norms]
        assert all(a < b for a, b in zip(ws, ws[1:]))

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        mu = rng.normal(scale=0.05, size=(20, 3))
        sigma = rng.uniform(0.0, 0.2, size=20)
        ws = motion_weights(mu, sigma)
        for i in range(20):
            assert ws[i] == pytest.approx(motion_weight(mu[i], sigma[i]), rel=1e-12)
