"""On-disk dataset format, annotated-subset selection and batching.

Layout of a dataset directory::

    manifest.json
    images/<id>.png      8-bit RGB
    masks/<id>.png       8-bit greyscale, optional (0 background, 255 person)

``manifest.json`` fields:

    format            "mirrornet-dataset/1"
    image_size        [H, W] that samples are delivered at
    preprocessed      true if images are already person-centred crops of
                      image_size; false to crop/scale on load
    crop_padding      square crop side = crop_padding * max(bbox w, h)
    annotation_ratio  fraction of train records flagged annotated
    seed              seed used for generation and subset selection
    records           list of objects:
        id            unique string
        image         path relative to the dataset root
        mask          optional path
        split         "train" or "test"
        annotated     bool
        joints        16 (or 14, LSP order) triples [x, y, visible]
        person_bbox   [x, y, w, h] in source-image pixels
        head_bbox     optional [x, y, w, h]
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..heatmaps import NUM_JOINTS, JointCoords, encode_pose, encode_pose_gaussian, image_to_heatmap, upgrade_lsp14
from .sample import Sample
from .synthetic import SyntheticConfig, generate_synthetic_sample

log = logging.getLogger(__name__)

FORMAT = "mirrornet-dataset/1"


class DatasetError(RuntimeError):
    pass


@dataclass
class DatasetManifest:
    root: Path
    records: list
    image_size: tuple
    annotation_ratio: float = 1.0
    preprocessed: bool = True
    crop_padding: float = 1.25
    seed: int = 0
    diagnostics: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.get("split", "train") == name]


def select_annotated(n: int, ratio: float, seed: int) -> np.ndarray:
    """Boolean flags with exactly round(ratio * n) True, chosen by a seeded shuffle."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"annotation ratio must be in (0, 1], got {ratio}")
    k = int(round(ratio * n))
    order = np.random.default_rng([seed, 0xA11]).permutation(n)
    flags = np.zeros(n, dtype=bool)
    flags[order[:k]] = True
    return flags


def generate_dataset(count: int, seed: int, cfg: SyntheticConfig | None = None, test_count: int = 0,
                     annotation_ratio: float = 1.0) -> list[Sample]:
    """``count`` training samples followed by ``test_count`` test samples."""
    cfg = cfg or SyntheticConfig()
    flags = select_annotated(count, annotation_ratio, seed) if count else np.zeros(0, bool)
    samples = []
    for i in range(count + test_count):
        s = generate_synthetic_sample([seed, i], cfg, sample_id=f"{i:06d}")
        is_train = i < count
        samples.append(replace(s, annotated=bool(flags[i]) if is_train else True,
                               split="train" if is_train else "test"))
    return samples


def _joints_to_json(pose: JointCoords) -> list:
    return [[float(x), float(y), int(v)] for (x, y), v in zip(pose.coords, pose.visible)]


def save_dataset(samples: list[Sample], root, seed: int = 0, annotation_ratio: float = 1.0) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        rec = {
            "id": s.sample_id,
            "image": f"images/{s.sample_id}.png",
            "split": s.split,
            "annotated": bool(s.annotated),
            "person_bbox": [float(v) for v in s.person_bbox],
        }
        img = np.round(s.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(img, mode="RGB").save(root / rec["image"])
        if s.mask is not None:
            (root / "masks").mkdir(exist_ok=True)
            rec["mask"] = f"masks/{s.sample_id}.png"
            Image.fromarray((s.mask > 0.5).astype(np.uint8) * 255, mode="L").save(root / rec["mask"])
        if s.pose is not None:
            rec["joints"] = _joints_to_json(s.pose)
        if s.head_bbox is not None:
            rec["head_bbox"] = [float(v) for v in s.head_bbox]
        records.append(rec)
    manifest = {
        "format": FORMAT,
        "image_size": list(samples[0].size) if samples else [0, 0],
        "preprocessed": True,
        "crop_padding": 1.25,
        "annotation_ratio": annotation_ratio,
        "seed": seed,
        "records": records,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        raw = json.loads(path.read_text())
        records = raw["records"]
        image_size = tuple(int(v) for v in raw["image_size"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"corrupt or unreadable manifest {path}: {exc}") from exc
    if raw.get("format") != FORMAT:
        raise DatasetError(f"{path}: unsupported format {raw.get('format')!r}")
    if not isinstance(records, list):
        raise DatasetError(f"{path}: 'records' must be a list")
    return DatasetManifest(
        root=path.parent,
        records=records,
        image_size=image_size,
        annotation_ratio=float(raw.get("annotation_ratio", 1.0)),
        preprocessed=bool(raw.get("preprocessed", True)),
        crop_padding=float(raw.get("crop_padding", 1.25)),
        seed=int(raw.get("seed", 0)),
    )


def _parse_joints(joints) -> JointCoords:
    arr = np.asarray(joints, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3) or arr.shape[0] not in (14, NUM_JOINTS):
        raise ValueError(f"joints must be 14 or 16 rows of [x, y, visible], got shape {arr.shape}")
    visible = arr[:, 2] > 0 if arr.shape[1] == 3 else np.ones(len(arr), bool)
    if len(arr) == 14:
        return upgrade_lsp14(arr[:, :2], visible)
    return JointCoords(arr[:, :2], visible)


def _crop_to_person(sample: Sample, size: tuple, padding: float) -> Sample:
    """Square crop centred on the person bbox, scaled to ``size``, as an affine warp."""
    import cv2

    x, y, w, h = sample.person_bbox
    side = padding * max(w, h)
    cx, cy = x + w / 2.0, y + h / 2.0
    out_h, out_w = size
    sx, sy = out_w / side, out_h / side
    # pixel i covers [i - 0.5, i + 0.5]; map the crop's extent onto the output's
    m = np.array([[sx, 0.0, -(cx - side / 2.0) * sx - 0.5],
                  [0.0, sy, -(cy - side / 2.0) * sy - 0.5]])
    image = cv2.warpAffine(np.ascontiguousarray(sample.image.transpose(1, 2, 0)), m, (out_w, out_h),
                           flags=cv2.INTER_AREA if sx < 1 else cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    mask = None
    if sample.mask is not None:
        mask = cv2.warpAffine(sample.mask.astype(np.float32), m, (out_w, out_h), flags=cv2.INTER_LINEAR)
        mask = (mask >= 0.5).astype(np.float32)

    def box(b):
        bx, by, bw, bh = b
        return (m[0, 0] * bx + m[0, 2], m[1, 1] * by + m[1, 2], m[0, 0] * bw, m[1, 1] * bh)

    pose = None
    if sample.pose is not None:
        pts = sample.pose.coords * np.array([m[0, 0], m[1, 1]]) + m[:, 2]
        pose = JointCoords(pts, sample.pose.visible.copy())
    return replace(sample, image=np.clip(image.transpose(2, 0, 1), 0, 1).astype(np.float32), mask=mask, pose=pose,
                   person_bbox=box(sample.person_bbox),
                   head_bbox=None if sample.head_bbox is None else box(sample.head_bbox))


def load_record(manifest: DatasetManifest, rec: dict) -> Sample:
    image = np.asarray(Image.open(manifest.root / rec["image"]).convert("RGB"), dtype=np.float32) / 255.0
    mask = None
    if rec.get("mask"):
        mask = (np.asarray(Image.open(manifest.root / rec["mask"]).convert("L")) > 127).astype(np.float32)
    pose = _parse_joints(rec["joints"]) if rec.get("joints") is not None else None
    sample = Sample(
        image=image.transpose(2, 0, 1).copy(),
        pose=pose,
        mask=mask,
        person_bbox=tuple(float(v) for v in rec["person_bbox"]),
        head_bbox=tuple(float(v) for v in rec["head_bbox"]) if rec.get("head_bbox") else None,
        annotated=bool(rec.get("annotated", pose is not None)),
        sample_id=str(rec["id"]),
        split=rec.get("split", "train"),
    )
    if not manifest.preprocessed:
        sample = _crop_to_person(sample, manifest.image_size, manifest.crop_padding)
    elif sample.size != manifest.image_size:
        raise ValueError(f"image is {sample.size}, manifest says {manifest.image_size}")
    return sample


def load_dataset(manifest_path, split: str | None = None) -> tuple[DatasetManifest, list[Sample]]:
    """Load every readable record in manifest order.

    Bad records are skipped and described in ``manifest.diagnostics``; a corrupt
    manifest raises :class:`DatasetError`.
    """
    manifest = read_manifest(manifest_path)
    samples = []
    for i, rec in enumerate(manifest.records):
        if split is not None and rec.get("split", "train") != split:
            continue
        try:
            samples.append(load_record(manifest, rec))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            msg = f"record {rec.get('id', i)!r}: {exc}"
            manifest.diagnostics.append(msg)
            log.warning("skipping %s", msg)
    return manifest, samples


@dataclass
class Batch:
    images: torch.Tensor  # (B, 3, H, W)
    heatmaps: torch.Tensor  # (B, 16, Hs, Ws); zero for unannotated rows
    visible: torch.Tensor  # (B, 16) bool; all False for unannotated rows
    annotated: torch.Tensor  # (B,) bool
    masks: torch.Tensor | None  # (B, Hs, Ws) area-reduced ground-truth masks

    def __len__(self):
        return len(self.images)


def pose_heatmaps(sample: Sample, heatmap_size: tuple, stride: int, blob_sigma: float = 0.0):
    """Heatmap targets for one sample; one-hot unless ``blob_sigma`` > 0."""
    coords = image_to_heatmap(sample.pose, stride)
    if blob_sigma > 0:
        hm = encode_pose_gaussian(coords, *heatmap_size, sigma=blob_sigma)
    else:
        hm = encode_pose(coords, *heatmap_size)
    return hm.grid, hm.visible


def collate(samples: list[Sample], heatmap_size: tuple, dtype=torch.float32, use_pose=None,
            blob_sigma: float = 0.0) -> Batch:
    """Stack samples; poses of unannotated samples are never exposed.

    ``use_pose`` overrides the per-sample annotated flags (for evaluation).
    """
    stride = samples[0].size[0] // heatmap_size[0]
    n = len(samples)
    grids = np.zeros((n, NUM_JOINTS, *heatmap_size), np.float32)
    visible = np.zeros((n, NUM_JOINTS), bool)
    annotated = np.array([s.annotated if use_pose is None else use_pose for s in samples], bool)
    for i, s in enumerate(samples):
        if annotated[i]:
            grids[i], visible[i] = pose_heatmaps(s, heatmap_size, stride, blob_sigma)
    masks = None
    if all(s.mask is not None for s in samples):
        m = torch.from_numpy(np.stack([s.mask for s in samples]).astype(np.float32))[:, None]
        masks = torch.nn.functional.adaptive_avg_pool2d(m, heatmap_size)[:, 0].to(dtype)
    return Batch(
        images=torch.from_numpy(np.stack([s.image for s in samples])).to(dtype),
        heatmaps=torch.from_numpy(grids).to(dtype),
        visible=torch.from_numpy(visible),
        annotated=torch.from_numpy(annotated),
        masks=masks,
    )

