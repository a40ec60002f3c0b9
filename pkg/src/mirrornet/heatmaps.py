"""Joint coordinates <-> per-joint heatmap stacks.

Coordinates are ``(x, y)`` in heatmap-grid cells; ``x`` indexes columns and
``y`` rows. Targets are one-hot by default; a Gaussian-blob encoder is
available but off unless asked for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

JOINT_NAMES = (
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "pelvis",
    "thorax",
    "upper_neck",
    "head_top",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
)
NUM_JOINTS = len(JOINT_NAMES)
FLIP_PAIRS = ((0, 5), (1, 4), (2, 3), (10, 15), (11, 14), (12, 13))

# parent-child pairs used for drawing stick figures
BONES = (
    (0, 1), (1, 2), (2, 6), (3, 6), (4, 3), (5, 4),
    (6, 7), (7, 8), (8, 9),
    (10, 11), (11, 12), (12, 7), (13, 7), (14, 13), (15, 14),
)

# LSP order: r-ankle, r-knee, r-hip, l-hip, l-knee, l-ankle, r-wrist, r-elbow,
# r-shoulder, l-shoulder, l-elbow, l-wrist, neck, head top
LSP14_TO_16 = (0, 1, 2, 3, 4, 5, 10, 11, 12, 13, 14, 15, 8, 9)


@dataclass(frozen=True)
class JointSchema:
    names: tuple = JOINT_NAMES
    flip_pairs: tuple = FLIP_PAIRS

    def __post_init__(self):
        if len(self.names) != 16:
            raise ValueError(f"schema needs 16 joints, got {len(self.names)}")

    @property
    def flip_permutation(self) -> np.ndarray:
        perm = np.arange(len(self.names))
        for i, j in self.flip_pairs:
            perm[i], perm[j] = j, i
        return perm


SCHEMA = JointSchema()


@dataclass
class JointCoords:
    coords: np.ndarray  # (16, 2) float, (x, y)
    visible: np.ndarray = field(default=None)  # (16,) bool

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        if self.visible is None:
            self.visible = np.ones(len(self.coords), dtype=bool)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        if len(self.coords) != NUM_JOINTS or len(self.visible) != NUM_JOINTS:
            raise ValueError(f"expected {NUM_JOINTS} joints, got {len(self.coords)}")

    def scaled(self, factor: float) -> "JointCoords":
        return JointCoords(self.coords * factor, self.visible.copy())

    def copy(self) -> "JointCoords":
        return JointCoords(self.coords.copy(), self.visible.copy())


@dataclass
class PoseHeatmaps:
    grid: np.ndarray  # (16, H, W)
    visible: np.ndarray  # (16,) bool

    @property
    def height(self) -> int:
        return self.grid.shape[1]

    @property
    def width(self) -> int:
        return self.grid.shape[2]


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode_pose(coords: JointCoords, height: int, width: int) -> PoseHeatmaps:
    """One-hot heatmap stack; invisible joints get an all-zero channel."""
    grid = np.zeros((NUM_JOINTS, height, width), dtype=np.float32)
    cells = round_half_away(coords.coords).astype(np.int64)
    for j in np.flatnonzero(coords.visible):
        col, row = cells[j]
        if not (0 <= col < width and 0 <= row < height):
            raise ValueError(
                f"joint {j} ({JOINT_NAMES[j]}) at {tuple(coords.coords[j])} is outside the "
                f"{height}x{width} grid"
            )
        grid[j, row, col] = 1.0
    return PoseHeatmaps(grid, coords.visible.copy())


def encode_pose_gaussian(coords: JointCoords, height: int, width: int, sigma: float = 1.0) -> PoseHeatmaps:
    """Unnormalized Gaussian blobs (peak 1) centred on the rounded joint cell."""
    encode_pose(coords, height, width)  # bounds check
    grid = np.zeros((NUM_JOINTS, height, width), dtype=np.float32)
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    cells = round_half_away(coords.coords)
    for j in np.flatnonzero(coords.visible):
        col, row = cells[j]
        grid[j] = np.exp(-((cols - col) ** 2 + (rows - row) ** 2) / (2.0 * sigma ** 2))
    return PoseHeatmaps(grid, coords.visible.copy())


def decode_pose(heatmaps: PoseHeatmaps) -> JointCoords:
    """Argmax per channel; ties go to the smallest row-major index."""
    coords = argmax_coords(heatmaps.grid[None])[0]
    return JointCoords(coords, heatmaps.visible.copy())


def argmax_coords(grid) -> np.ndarray:
    """(B, J, H, W) array or tensor -> (B, J, 2) integer (x, y) of each channel's max."""
    if isinstance(grid, torch.Tensor):
        grid = grid.detach().cpu().numpy()
    b, j, h, w = grid.shape
    flat = np.argmax(grid.reshape(b, j, h * w), axis=-1)
    return np.stack([flat % w, flat // w], axis=-1).astype(np.float64)


def flip_pose(coords: JointCoords, width: int, schema: JointSchema = SCHEMA) -> JointCoords:
    """Mirror horizontally and swap left/right joint labels."""
    perm = schema.flip_permutation
    flipped = coords.coords.copy()
    flipped[:, 0] = (width - 1) - flipped[:, 0]
    return JointCoords(flipped[perm], coords.visible[perm])


def flip_heatmaps(heatmaps: PoseHeatmaps, schema: JointSchema = SCHEMA) -> PoseHeatmaps:
    perm = schema.flip_permutation
    return PoseHeatmaps(heatmaps.grid[perm, :, ::-1].copy(), heatmaps.visible[perm])


def upgrade_lsp14(coords14, visible14=None) -> JointCoords:
    """Map a 14-joint LSP annotation onto the 16-joint schema.

    Pelvis is the mean of the hips, thorax the mean of the shoulders; each is
    visible only when both of its sources are.
    """
    coords14 = np.asarray(coords14, dtype=np.float64).reshape(14, 2)
    visible14 = np.ones(14, dtype=bool) if visible14 is None else np.asarray(visible14, dtype=bool)
    coords = np.zeros((NUM_JOINTS, 2))
    visible = np.zeros(NUM_JOINTS, dtype=bool)
    for src, dst in enumerate(LSP14_TO_16):
        coords[dst] = coords14[src]
        visible[dst] = visible14[src]
    coords[6] = 0.5 * (coords[2] + coords[3])
    visible[6] = visible[2] and visible[3]
    coords[7] = 0.5 * (coords[12] + coords[13])
    visible[7] = visible[12] and visible[13]
    return JointCoords(coords, visible)


def image_to_heatmap(coords: JointCoords, stride: int) -> JointCoords:
    """Pixel-centre aligned mapping from image pixels to heatmap cells."""
    return JointCoords((coords.coords + 0.5) / stride - 0.5, coords.visible.copy())


def heatmap_to_image(coords: JointCoords, stride: int) -> JointCoords:
    return JointCoords((coords.coords + 0.5) * stride - 0.5, coords.visible.copy())
