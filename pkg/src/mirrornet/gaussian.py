"""Diagonal Gaussian distributions used by every objective.

Networks emit an unconstrained log-variance; :meth:`DiagonalGaussian.from_logvar`
clamps it to ``[LOGVAR_MIN, LOGVAR_MAX]`` before exponentiating so the variance
is always positive and finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass(frozen=True)
class DiagonalGaussian:
    """Mean/variance pair of identical shape; variance strictly positive."""

    mean: torch.Tensor
    variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.variance.shape:
            raise ValueError(
                f"mean shape {tuple(self.mean.shape)} != variance shape {tuple(self.variance.shape)}"
            )

    @classmethod
    def from_logvar(cls, mean: torch.Tensor, logvar: torch.Tensor) -> "DiagonalGaussian":
        logvar = torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)
        return cls(mean, torch.exp(logvar))

    @classmethod
    def fixed_variance(cls, mean: torch.Tensor, variance: float) -> "DiagonalGaussian":
        """Gaussian whose variance is a constant outside any parameter set."""
        if variance <= 0:
            raise ValueError(f"variance must be positive, got {variance}")
        return cls(mean, torch.full_like(mean, variance))

    @classmethod
    def standard(cls, shape, dtype=torch.float64) -> "DiagonalGaussian":
        return cls(torch.zeros(shape, dtype=dtype), torch.ones(shape, dtype=dtype))

    @property
    def shape(self) -> torch.Size:
        return self.mean.shape

    @property
    def std(self) -> torch.Tensor:
        return torch.sqrt(self.variance)

    @property
    def logvar(self) -> torch.Tensor:
        return torch.log(self.variance)


def _check_variance(g: DiagonalGaussian) -> None:
    if not bool(torch.all(g.variance > 0)):
        raise ValueError("variance must be strictly positive")


def _reduce(values: torch.Tensor, event_ndim: int | None) -> torch.Tensor:
    if event_ndim is None:
        return values.sum()
    if event_ndim == 0:
        return values
    return values.sum(dim=tuple(range(-event_ndim, 0)))


def log_prob_elementwise(x: torch.Tensor, g: DiagonalGaussian) -> torch.Tensor:
    """Per-element Gaussian log-density, same shape as ``x``."""
    if x.shape != g.shape:
        raise ValueError(f"x shape {tuple(x.shape)} != distribution shape {tuple(g.shape)}")
    _check_variance(g)
    return -0.5 * (LOG_2PI + torch.log(g.variance) + (x - g.mean) ** 2 / g.variance)


def log_prob_diag(
    x: torch.Tensor,
    g: DiagonalGaussian,
    event_ndim: int | None = None,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Log-density of ``x`` under ``g``.

    Sums over the trailing ``event_ndim`` dimensions (all of them when None,
    giving a scalar). ``mask`` is broadcast against ``x``; elements where it is
    zero do not contribute.
    """
    values = log_prob_elementwise(x, g)
    if mask is not None:
        values = values * mask.to(values.dtype)
    return _reduce(values, event_ndim)


def kl_to_standard_normal(g: DiagonalGaussian, event_ndim: int | None = None) -> torch.Tensor:
    """Closed-form KL(g || N(0, I)) = -1/2 sum(1 + log var - mean^2 - var)."""
    _check_variance(g)
    values = -0.5 * (1.0 + torch.log(g.variance) - g.mean ** 2 - g.variance)
    return _reduce(values, event_ndim)


def entropy(g: DiagonalGaussian, event_ndim: int | None = None, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Differential entropy 1/2 sum(1 + log(2 pi var))."""
    _check_variance(g)
    values = 0.5 * (1.0 + LOG_2PI + torch.log(g.variance))
    if mask is not None:
        values = values * mask.to(values.dtype)
    return _reduce(values, event_ndim)


def sample_reparam(g: DiagonalGaussian, noise: torch.Tensor) -> torch.Tensor:
    """mean + noise * std; differentiable in mean and std."""
    if noise.shape != g.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != distribution shape {tuple(g.shape)}")
    return g.mean + noise * g.std
