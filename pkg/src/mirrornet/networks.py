"""The seven networks: recognizers alpha, beta, gamma, delta; generators theta,
phi; mask estimator psi.

Every network is a deterministic function of its parameters and inputs. All
sampling happens in :mod:`mirrornet.gaussian` with caller-supplied noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import torch
from torch import nn
import torch.nn.functional as F

from .gaussian import DiagonalGaussian
from .heatmaps import NUM_JOINTS


@dataclass
class NetConfig:
    image_size: tuple = (64, 64)
    latent_channels: int = 32
    latent_size: tuple = (4, 4)
    width: int = 32
    res_blocks: int = 2
    alpha_backbone: str = "small-conv"
    alpha_width: int = 48
    alpha_blocks: int = 4
    mask_width: int = 16
    learned_alpha_variance: bool = False
    alpha_variance: float = 0.01
    theta_variance: float = 1.0
    phi_variance: float = 1.0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.latent_size = tuple(int(v) for v in self.latent_size)
        for img, hm in zip(self.image_size, self.heatmap_size):
            if img != 4 * hm:
                raise ValueError(f"image size {self.image_size} must be divisible by 4")
        _log2_ratio(self.heatmap_size, self.latent_size)

    @property
    def heatmap_size(self) -> tuple:
        return tuple(v // 4 for v in self.image_size)

    @property
    def reduced_size(self) -> tuple:
        return self.heatmap_size

    @property
    def latent_shape(self) -> tuple:
        return (self.latent_channels, *self.latent_size)

    @property
    def pose_shape(self) -> tuple:
        return (NUM_JOINTS, *self.heatmap_size)

    def to_dict(self) -> dict:
        return asdict(self)


FULL_SCALE = dict(
    image_size=(256, 256),
    latent_channels=256,
    latent_size=(8, 8),
    width=256,
    res_blocks=4,
    alpha_width=256,
    mask_width=64,
)


def _log2_ratio(big: tuple, small: tuple) -> int:
    ratios = {b / s for b, s in zip(big, small)}
    if len(ratios) != 1:
        raise ValueError(f"{big} and {small} must differ by one power-of-two factor")
    (ratio,) = ratios
    n = int(round(math.log2(ratio))) if ratio >= 1 else -1
    if n < 0 or 2 ** n != ratio:
        raise ValueError(f"{big} / {small} is not a power of two")
    return n


def conv3(cin, cout, stride=1, dilation=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation)


def up2(cin, cout):
    return nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)


class ResBlock(nn.Module):
    def __init__(self, ch: int, dilation: int = 1):
        super().__init__()
        self.conv1 = conv3(ch, ch, dilation=dilation)
        self.conv2 = conv3(ch, ch, dilation=dilation)

    def forward(self, x):
        return x + self.conv2(F.elu(self.conv1(F.elu(x))))


class GaussianHead(nn.Module):
    """Branching last layer: 1x1 convs for mean and log-variance, zero-initialized."""

    def __init__(self, cin: int, cout: int, learned_variance: bool = True):
        super().__init__()
        self.mean = nn.Conv2d(cin, cout, 1)
        self.logvar = nn.Conv2d(cin, cout, 1) if learned_variance else None
        for layer in (self.mean, self.logvar):
            if layer is not None:
                nn.init.zeros_(layer.weight)
                nn.init.zeros_(layer.bias)

    def forward(self, h):
        mean = self.mean(h)
        logvar = self.logvar(h) if self.logvar is not None else None
        return mean, logvar


class ConvEncoder(nn.Module):
    """Shared recognizer architecture for beta, gamma and delta."""

    def __init__(self, in_ch: int, width: int, latent_ch: int, n_down: int, res_blocks: int):
        super().__init__()
        self.stem = conv3(in_ch, width)
        self.down = nn.ModuleList([conv3(width, width, stride=2) for _ in range(n_down)])
        self.blocks = nn.Sequential(*[ResBlock(width) for _ in range(res_blocks)])
        self.head = GaussianHead(width, latent_ch)

    def forward(self, x):
        h = self.stem(x)
        for layer in self.down:
            h = layer(F.elu(h))
        h = F.elu(self.blocks(h))
        return self.head(h)


class PoseGenerator(nn.Module):
    """Transposed-conv stack from primitive latent to pose heatmap mean."""

    def __init__(self, latent_ch: int, width: int, n_up: int):
        super().__init__()
        chans = [latent_ch] + [width] * n_up
        self.ups = nn.ModuleList([up2(chans[i], chans[i + 1]) for i in range(n_up)])
        self.head = nn.ConvTranspose2d(chans[-1], NUM_JOINTS, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, z):
        h = z
        for layer in self.ups:
            h = F.elu(layer(h))
        return self.head(h)


class ImageGenerator(nn.Module):
    """U-Net over the pose heatmaps; appearance and scene latents join at the bottleneck."""

    def __init__(self, width: int, latent_ch: int, n_down: int, n_image_up: int):
        super().__init__()
        self.stem = conv3(NUM_JOINTS, width)
        self.down = nn.ModuleList([conv3(width, width, stride=2) for _ in range(n_down)])
        self.bottleneck = conv3(width + 2 * latent_ch, width)
        self.bottleneck_block = ResBlock(width)
        self.up = nn.ModuleList([up2(width, width) for _ in range(n_down)])
        self.merge = nn.ModuleList([conv3(2 * width, width) for _ in range(n_down)])
        self.image_up = nn.ModuleList([up2(width, width) for _ in range(n_image_up)])
        self.head = conv3(width, 3)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, pose, a, g):
        h = self.stem(pose)
        skips = []
        for layer in self.down:
            skips.append(h)
            h = layer(F.elu(h))
        h = self.bottleneck(torch.cat([F.elu(h), a, g], dim=1))
        h = self.bottleneck_block(h)
        for up, merge, skip in zip(self.up, self.merge, reversed(skips)):
            h = up(F.elu(h))
            h = merge(torch.cat([F.elu(h), F.elu(skip)], dim=1))
        for layer in self.image_up:
            h = layer(F.elu(h))
        return self.head(F.elu(h))


class MaskEstimator(nn.Module):
    """Two-level U-Net on the reduced image plus pose; output in (0, 1)."""

    def __init__(self, width: int):
        super().__init__()
        self.stem = conv3(3 + NUM_JOINTS, width)
        self.down = conv3(width, width, stride=2)
        self.block = ResBlock(width)
        self.up = up2(width, width)
        self.merge = conv3(2 * width, width)
        self.head = nn.Conv2d(width, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, reduced_image, pose):
        skip = self.stem(torch.cat([reduced_image, pose], dim=1))
        h = self.block(self.down(F.elu(skip)))
        h = self.up(F.elu(h))
        h = self.merge(torch.cat([F.elu(h), F.elu(skip)], dim=1))
        return torch.sigmoid(self.head(F.elu(h)))[:, 0]


class Hourglass(nn.Module):
    def __init__(self, depth: int, width: int):
        super().__init__()
        self.skip = ResBlock(width)
        self.pre = ResBlock(width)
        self.inner = Hourglass(depth - 1, width) if depth > 1 else ResBlock(width)
        self.post = ResBlock(width)

    def forward(self, x):
        low = self.post(self.inner(self.pre(F.avg_pool2d(x, 2))))
        return self.skip(x) + F.interpolate(low, scale_factor=2, mode="nearest")


def small_conv_backbone(width: int, blocks: int) -> nn.Module:
    return nn.Sequential(*[ResBlock(width, dilation=2 ** (i % 3)) for i in range(blocks)])


def hourglass_lite_backbone(width: int, blocks: int) -> nn.Module:
    return Hourglass(max(1, blocks), width)


# Larger backbones (stacked hourglass, ResNet-50, HRNet) plug in here:
# a factory (width, blocks) -> module mapping (B, width, Hs, Ws) to the same shape.
BACKBONES: dict[str, Callable[[int, int], nn.Module]] = {
    "small-conv": small_conv_backbone,
    "hourglass-lite": hourglass_lite_backbone,
}


class PoseRecognizer(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        if cfg.alpha_backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {cfg.alpha_backbone!r}; known: {sorted(BACKBONES)}")
        w = cfg.alpha_width
        self.stem = nn.ModuleList([conv3(3, w // 2, stride=2), conv3(w // 2, w, stride=2)])
        self.backbone = BACKBONES[cfg.alpha_backbone](w, cfg.alpha_blocks)
        self.head = GaussianHead(w, NUM_JOINTS, learned_variance=cfg.learned_alpha_variance)

    def forward(self, x):
        h = x
        for layer in self.stem:
            h = F.elu(layer(h))
        return self.head(F.elu(self.backbone(h)))


class MirrorNet(nn.Module):
    """Container for all seven networks with the distribution-level interface."""

    SUBNETS = ("alpha", "beta", "gamma", "delta", "theta", "phi", "psi")

    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or NetConfig()
        n_latent = _log2_ratio(cfg.heatmap_size, cfg.latent_size)
        c, w = cfg.latent_channels, cfg.width
        self.alpha = PoseRecognizer(cfg)
        self.beta = ConvEncoder(3 + NUM_JOINTS, w, c, n_latent, cfg.res_blocks)
        self.gamma = ConvEncoder(3 + NUM_JOINTS, w, c, n_latent, cfg.res_blocks)
        self.delta = ConvEncoder(NUM_JOINTS, w, c, n_latent, cfg.res_blocks)
        self.theta = ImageGenerator(w, c, n_latent, 2)
        self.phi = PoseGenerator(c, w, n_latent)
        self.psi = MaskEstimator(cfg.mask_width)

    # -- shape checks ------------------------------------------------------

    def _check(self, name, t, shape):
        if t.dim() != len(shape) + 1 or tuple(t.shape[1:]) != tuple(shape):
            raise ValueError(f"{name}: expected (B, {', '.join(map(str, shape))}), got {tuple(t.shape)}")

    def _check_pose(self, pose):
        self._check("pose", pose, self.cfg.pose_shape)

    def _check_reduced(self, name, img):
        self._check(name, img, (3, *self.cfg.reduced_size))

    # -- distribution-level interface --------------------------------------

    def recognize_pose(self, image) -> DiagonalGaussian:
        self._check("image", image, (3, *self.cfg.image_size))
        mean, logvar = self.alpha(image)
        if logvar is None:
            return DiagonalGaussian.fixed_variance(mean, self.cfg.alpha_variance)
        return DiagonalGaussian.from_logvar(mean, logvar)

    def encode_appearance(self, fg_image, pose) -> DiagonalGaussian:
        self._check_reduced("fg_image", fg_image)
        self._check_pose(pose)
        return DiagonalGaussian.from_logvar(*self.beta(torch.cat([fg_image, pose], dim=1)))

    def encode_scene(self, bg_image, pose) -> DiagonalGaussian:
        self._check_reduced("bg_image", bg_image)
        self._check_pose(pose)
        return DiagonalGaussian.from_logvar(*self.gamma(torch.cat([bg_image, pose], dim=1)))

    def encode_primitive(self, pose) -> DiagonalGaussian:
        self._check_pose(pose)
        return DiagonalGaussian.from_logvar(*self.delta(pose))

    def generate_image(self, pose, a, g) -> DiagonalGaussian:
        self._check_pose(pose)
        self._check("a", a, self.cfg.latent_shape)
        self._check("g", g, self.cfg.latent_shape)
        return DiagonalGaussian.fixed_variance(self.theta(pose, a, g), self.cfg.theta_variance)

    def generate_pose(self, z) -> DiagonalGaussian:
        self._check("z", z, self.cfg.latent_shape)
        return DiagonalGaussian.fixed_variance(self.phi(z), self.cfg.phi_variance)

    def estimate_mask(self, reduced_image, pose) -> torch.Tensor:
        self._check_reduced("reduced_image", reduced_image)
        self._check_pose(pose)
        return self.psi(reduced_image, pose)

    def subnet_parameters(self, *names: str):
        for name in names:
            yield from getattr(self, name).parameters()


def parameter_counts(net: MirrorNet) -> dict[str, int]:
    counts = {name: sum(p.numel() for p in getattr(net, name).parameters()) for name in MirrorNet.SUBNETS}
    counts["total"] = sum(counts.values())
    return counts
