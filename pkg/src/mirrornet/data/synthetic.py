"""Articulated stick-figure renderer standing in for LSP/MPII at desk scale.

Figures face the viewer, so the person's right side sits on the image's left;
that convention is preserved by horizontal flipping with label swapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..heatmaps import BONES, NUM_JOINTS, JointCoords
from .sample import Sample

BONE_PARTS = (
    "legs", "legs", "torso", "torso", "legs", "legs",
    "torso", "torso", "torso",
    "arms", "arms", "torso", "torso", "arms", "arms",
)
THICK_BONES = frozenset({(2, 6), (3, 6), (6, 7), (12, 7), (13, 7)})


@dataclass
class SyntheticConfig:
    image_size: tuple = (64, 64)
    torso_fraction: tuple = (0.17, 0.23)  # torso length / image height
    limb_radius: tuple = (1.2, 1.8)  # pixels
    torso_radius: tuple = (2.0, 3.0)
    head_fraction: float = 0.55  # head radius / neck-to-top length
    center_jitter: float = 0.08  # fraction of image size
    margin: float = 1.0  # pixels kept free around the figure
    n_shapes: tuple = (1, 3)
    pixel_noise: float = 0.02
    max_retries: int = 100


class SyntheticError(RuntimeError):
    pass


def _rot(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def sample_skeleton(rng: np.random.Generator, cfg: SyntheticConfig) -> tuple[np.ndarray, float]:
    """Joint positions (16, 2) centred near the origin, plus the torso length."""
    h, w = cfg.image_size
    t = rng.uniform(*cfg.torso_fraction) * h

    def length(f):
        return f * t * rng.uniform(0.88, 1.12)

    down = np.array([0.0, 1.0])
    torso_tilt = np.deg2rad(rng.uniform(-20, 20))
    up = _rot(-down, torso_tilt)
    # person's right is image left when facing the viewer
    right = _rot(np.array([-1.0, 0.0]), torso_tilt)

    j = np.zeros((NUM_JOINTS, 2))
    j[6] = 0.0
    j[7] = j[6] + up * t
    j[8] = j[7] + up * length(0.28)
    j[9] = j[8] + _rot(up, np.deg2rad(rng.uniform(-20, 20))) * length(0.38)
    hip = length(0.28)
    shoulder = length(0.42)
    j[2] = j[6] + right * hip
    j[3] = j[6] - right * hip
    j[12] = j[7] + right * shoulder
    j[13] = j[7] - right * shoulder

    for side, (hip_j, knee_j, ankle_j) in ((1.0, (2, 1, 0)), (-1.0, (3, 4, 5))):
        thigh = _rot(down, -side * np.deg2rad(rng.uniform(-15, 55)))
        j[knee_j] = j[hip_j] + thigh * length(0.85)
        shin = _rot(thigh, side * np.deg2rad(rng.uniform(-10, 100)))
        j[ankle_j] = j[knee_j] + shin * length(0.85)

    for side, (sh_j, el_j, wr_j) in ((1.0, (12, 11, 10)), (-1.0, (13, 14, 15))):
        upper = _rot(down, -side * np.deg2rad(rng.uniform(-20, 160)))
        j[el_j] = j[sh_j] + upper * length(0.6)
        fore = _rot(upper, np.deg2rad(rng.uniform(-140, 140)))
        j[wr_j] = j[el_j] + fore * length(0.55)
    return j, t


def segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from points (px, py) to segment ab."""
    d = b - a
    denom = float(d @ d)
    if denom == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


@dataclass
class FigureGeometry:
    """Everything needed to rasterize a figure; kept so tests can re-rasterize."""

    joints: np.ndarray
    radii: np.ndarray  # one per bone in BONES order
    head_center: np.ndarray
    head_radius: float

    def part_masks(self, height: int, width: int) -> dict[str, np.ndarray]:
        py, px = np.mgrid[0:height, 0:width].astype(np.float64)
        parts = {name: np.zeros((height, width), bool) for name in ("legs", "torso", "arms")}
        for (a, b), part, r in zip(BONES, BONE_PARTS, self.radii):
            parts[part] |= segment_distance(px, py, self.joints[a], self.joints[b]) <= r
        parts["head"] = np.hypot(px - self.head_center[0], py - self.head_center[1]) <= self.head_radius
        return parts

    def mask(self, height: int, width: int) -> np.ndarray:
        out = np.zeros((height, width), bool)
        for m in self.part_masks(height, width).values():
            out |= m
        return out


def _background(rng: np.random.Generator, cfg: SyntheticConfig) -> np.ndarray:
    import cv2

    h, w = cfg.image_size
    base = rng.uniform(0.0, 1.0, size=3)
    coarse = rng.normal(0.0, 0.15, size=(4, 4, 3)) + base
    bg = cv2.resize(coarse.astype(np.float32), (w, h), interpolation=cv2.INTER_CUBIC)
    py, px = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(cfg.n_shapes[0], cfg.n_shapes[1] + 1)):
        color = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        rx, ry = rng.uniform(0.08, 0.3) * w, rng.uniform(0.08, 0.3) * h
        if rng.random() < 0.5:
            region = (np.abs(px - cx) <= rx) & (np.abs(py - cy) <= ry)
        else:
            region = ((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2 <= 1.0
        bg[region] = 0.5 * bg[region] + 0.5 * color
    return np.clip(bg, 0.0, 1.0)


def _bbox(mask: np.ndarray) -> tuple:
    """(x, y, w, h) covering the full pixel extent of the mask."""
    ys, xs = np.nonzero(mask)
    return (float(xs.min()) - 0.5, float(ys.min()) - 0.5, float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1))


def generate_synthetic_sample(rng_seed, cfg: SyntheticConfig | None = None, sample_id: str = "") -> Sample:
    """Render one figure; bit-identical for equal ``rng_seed``."""
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng(rng_seed)
    h, w = cfg.image_size
    for _ in range(cfg.max_retries):
        joints, torso = sample_skeleton(rng, cfg)
        radii = np.array([
            rng.uniform(*cfg.torso_radius) if (a, b) in THICK_BONES else rng.uniform(*cfg.limb_radius)
            for a, b in BONES
        ])
        head_r = cfg.head_fraction * np.linalg.norm(joints[9] - joints[8])
        head_c = 0.5 * (joints[8] + joints[9])
        lo = np.minimum(joints.min(axis=0), head_c - head_r)
        hi = np.maximum(joints.max(axis=0), head_c + head_r)
        centre = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        centre = centre + rng.uniform(-cfg.center_jitter, cfg.center_jitter, size=2) * np.array([w, h])
        shift = centre - 0.5 * (lo + hi)
        pad = cfg.margin + radii.max()
        if np.all(lo + shift >= pad) and np.all(hi + shift <= np.array([w - 1, h - 1]) - pad):
            break
    else:
        raise SyntheticError(f"no in-frame figure after {cfg.max_retries} attempts (seed {rng_seed})")

    geom = FigureGeometry(joints + shift, radii, head_c + shift, float(head_r))
    parts = geom.part_masks(h, w)
    image = _background(rng, cfg)
    skin = rng.uniform(0.0, 1.0, size=3)
    colors = {"legs": rng.uniform(0.0, 1.0, size=3), "torso": rng.uniform(0.0, 1.0, size=3), "arms": skin, "head": skin}
    for name in ("legs", "torso", "arms", "head"):
        image[parts[name]] = colors[name]
    image = image + rng.normal(0.0, cfg.pixel_noise, size=image.shape)
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    mask = geom.mask(h, w)
    head = parts["head"]
    return Sample(
        image=image.transpose(2, 0, 1).astype(np.float32),
        pose=JointCoords(geom.joints, np.ones(NUM_JOINTS, bool)),
        mask=mask.astype(np.float32),
        person_bbox=_bbox(mask),
        head_bbox=_bbox(head),
        annotated=True,
        sample_id=sample_id,
        geometry=geom,
    )
