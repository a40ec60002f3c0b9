"""Foreground/background split feeding the appearance and scene encoders."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

SHARPNESS = 10.0


@dataclass
class MaskedPair:
    foreground: torch.Tensor  # (B, 3, H*, W*)
    background: torch.Tensor  # (B, 3, H*, W*)
    mask: torch.Tensor  # (B, H*, W*)
    reduced: torch.Tensor  # (B, 3, H*, W*)


def sharpen_mask(raw: torch.Tensor) -> torch.Tensor:
    """Steep logistic 1 / (1 + exp(-10 x))."""
    return torch.sigmoid(SHARPNESS * raw)


def mask_from_estimator(estimate: torch.Tensor) -> torch.Tensor:
    """Sharpen the estimator's (0, 1) output around its 0.5 decision boundary.

    Swap this function out to apply the sharpening to a logit instead.
    """
    return sharpen_mask(estimate - 0.5)


def reduce_image(image: torch.Tensor, size: tuple) -> torch.Tensor:
    """Area downsampling of (B, 3, H, W) images to ``size``."""
    if tuple(image.shape[-2:]) == tuple(size):
        return image
    return F.adaptive_avg_pool2d(image, size)


def apply_mask(reduced: torch.Tensor, mask: torch.Tensor) -> MaskedPair:
    w = mask.unsqueeze(1)
    bg = reduced - reduced * w
    # re-deriving fg from bg makes fg + bg == reduced exactly in floating point
    fg = reduced - bg
    return MaskedPair(fg, bg, mask, reduced)


def split_foreground_background(image: torch.Tensor, pose: torch.Tensor, nets) -> MaskedPair:
    reduced = reduce_image(image, nets.cfg.reduced_size)
    mask = mask_from_estimator(nets.estimate_mask(reduced, pose))
    return apply_mask(reduced, mask)
