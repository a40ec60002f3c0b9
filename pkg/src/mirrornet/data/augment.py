"""Random scaling, rotation and horizontal flipping of samples."""

from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np

from ..heatmaps import SCHEMA, JointCoords
from .sample import Sample


@dataclass
class AugmentConfig:
    scale: tuple = (0.75, 1.25)
    rotation: float = 30.0  # degrees, symmetric range
    flip_prob: float = 0.5


@dataclass(frozen=True)
class AffineParams:
    scale: float = 1.0
    rotation: float = 0.0  # degrees, counter-clockwise as displayed
    flip: bool = False

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.rotation == 0.0 and not self.flip


def affine_matrix(params: AffineParams, height: int, width: int) -> np.ndarray:
    """2x3 map from source to destination pixel coordinates (pixel centres at integers)."""
    centre = ((width - 1) / 2.0, (height - 1) / 2.0)
    rot = np.vstack([cv2.getRotationMatrix2D(centre, params.rotation, params.scale), [0, 0, 1]])
    flip = np.eye(3)
    if params.flip:
        flip = np.array([[-1.0, 0.0, width - 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return (rot @ flip)[:2]


def transform_coords(coords: JointCoords, matrix: np.ndarray, flip: bool, height: int, width: int) -> JointCoords:
    pts = coords.coords @ matrix[:, :2].T + matrix[:, 2]
    visible = coords.visible.copy()
    if flip:
        perm = SCHEMA.flip_permutation
        pts, visible = pts[perm], visible[perm]
    inside = (pts[:, 0] >= 0) & (pts[:, 0] <= width - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= height - 1)
    return JointCoords(pts, visible & inside)


def _bbox_of_points(pts: np.ndarray) -> tuple:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(max(hi[0] - lo[0], 1.0)), float(max(hi[1] - lo[1], 1.0)))


def _transform_box(box, matrix) -> tuple:
    x, y, w, h = box
    corners = np.array([[x, y], [x + w, y], [x, y + h], [x + w, y + h]])
    return _bbox_of_points(corners @ matrix[:, :2].T + matrix[:, 2])


def apply_affine(sample: Sample, params: AffineParams) -> Sample:
    if params.is_identity:
        return sample
    h, w = sample.size
    m = affine_matrix(params, h, w)
    image = cv2.warpAffine(
        np.ascontiguousarray(sample.image.transpose(1, 2, 0)), m, (w, h),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101,
    )
    if image.ndim == 2:
        image = image[:, :, None]
    mask = None
    if sample.mask is not None:
        mask = cv2.warpAffine(sample.mask.astype(np.float32), m, (w, h), flags=cv2.INTER_LINEAR,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)
        mask = (mask >= 0.5).astype(np.float32)
    pose = None if sample.pose is None else transform_coords(sample.pose, m, params.flip, h, w)
    head = None if sample.head_bbox is None else _transform_box(sample.head_bbox, m)
    return replace(
        sample,
        image=np.clip(image.transpose(2, 0, 1), 0.0, 1.0).astype(np.float32),
        mask=mask,
        pose=pose,
        person_bbox=_transform_box(sample.person_bbox, m),
        head_bbox=head,
        geometry=None,
    )


def draw_params(rng: np.random.Generator, cfg: AugmentConfig) -> AffineParams:
    return AffineParams(
        scale=float(rng.uniform(*cfg.scale)),
        rotation=float(rng.uniform(-cfg.rotation, cfg.rotation)),
        flip=bool(rng.random() < cfg.flip_prob),
    )


def augment_sample(sample: Sample, rng: np.random.Generator, cfg: AugmentConfig | None = None) -> Sample:
    """Joints leaving the frame are marked invisible rather than rejected."""
    return apply_affine(sample, draw_params(rng, cfg or AugmentConfig()))
