"""Gaussian motion log-likelihood losses and the confidence weight.

The negative log-likelihood of per-node isotropic Gaussians reduces, up to an
affine constant, to

    L = (1/N) sum_i (log sigma_i + |y_i - mu_i|^2 / sigma_i^2)

which is the canonical value computed here. Gradients are analytic so the loss
doubles as a reference oracle for external training code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CountMismatch, NonpositiveSigma

SIGMA_MIN_DEFAULT = 0.1


@dataclass(frozen=True)
class WeightParams:
    """Constants of the confidence weight w = exp(-k sigma^2 / (|mu| + eps)^2)."""

    k: float = 4.0
    epsilon: float = 0.01

    def __post_init__(self):
        if self.k <= 0 or self.epsilon <= 0:
            raise ValueError("k and epsilon must be positive")


@dataclass(frozen=True)
class LossValue:
    """Scalar loss with per-node analytic gradients."""

    value: float
    grad_mu: np.ndarray  # (N, 3), d value / d mu_i
    grad_sigma: np.ndarray  # (N,), d value / d sigma_i


@dataclass(frozen=True)
class TotalLoss:
    """Weighted combination of the output and temporal losses.

    Gradients are kept per input; the temporal ones already include the 0.1
    combination factor.
    """

    value: float
    out: LossValue
    temporal: LossValue


def _check_gaussians(mu: np.ndarray, sigma: np.ndarray, gt: np.ndarray):
    if len(mu) != len(gt) or len(sigma) != len(mu):
        raise CountMismatch(
            f"prediction ({len(mu)}/{len(sigma)}) and ground truth ({len(gt)}) lengths differ"
        )
    if len(mu) == 0:
        raise CountMismatch("empty prediction")
    if np.any(sigma <= 0):
        raise NonpositiveSigma("all sigmas must be positive (truncate upstream)")


def nll_loss(mu: np.ndarray, sigma: np.ndarray, gt: np.ndarray) -> LossValue:
    """Simplified Gaussian NLL with analytic gradients.

    mu: (N, 3) predicted motions; sigma: (N,) standard deviations; gt: (N, 3).
    """
    mu = np.asarray(mu, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    _check_gaussians(mu, sigma, gt)
    n = len(mu)
    diff = gt - mu
    sq = (diff**2).sum(axis=1)
    value = float(np.mean(np.log(sigma) + sq / sigma**2))
    grad_mu = (2.0 / n) * (mu - gt) / sigma[:, None] ** 2
    grad_sigma = (1.0 / n) * (1.0 / sigma - 2.0 * sq / sigma**3)
    return LossValue(value, grad_mu, grad_sigma)


def total_loss(
    out_mu, out_sigma, temporal_mu, temporal_sigma, gt, temporal_weight: float = 0.1
) -> TotalLoss:
    """Output loss plus `temporal_weight` times the temporal-encoder loss."""
    out = nll_loss(out_mu, out_sigma, gt)
    temp = nll_loss(temporal_mu, temporal_sigma, gt)
    scaled = LossValue(
        temporal_weight * temp.value,
        temporal_weight * temp.grad_mu,
        temporal_weight * temp.grad_sigma,
    )
    return TotalLoss(out.value + scaled.value, out, scaled)


def truncate_sigma(sigma, sigma_min: float = SIGMA_MIN_DEFAULT):
    """Clamp sigma from below; works on scalars and arrays."""
    return np.maximum(sigma, sigma_min)


def motion_weight(mu: np.ndarray, sigma: float, params: WeightParams = WeightParams()) -> float:
    """Confidence weight in (0, 1] for a single predicted motion."""
    norm = float(np.linalg.norm(mu))
    return float(np.exp(-params.k * float(sigma) ** 2 / (norm + params.epsilon) ** 2))


def motion_weights(
    mu: np.ndarray, sigma: np.ndarray, params: WeightParams = WeightParams()
) -> np.ndarray:
    """Vectorized confidence weights for (N, 3) motions and (N,) sigmas."""
    mu = np.asarray(mu, dtype=float).reshape(-1, 3)
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    norms = np.linalg.norm(mu, axis=1)
    return np.exp(-params.k * sigma**2 / (norms + params.epsilon) ** 2)
