import json

import numpy as np
import pytest
from PIL import Image

from mirrornet.data import (
    AffineParams,
    AugmentConfig,
    DatasetError,
    Sample,
    SyntheticConfig,
    SyntheticError,
    apply_affine,
    augment_sample,
    collate,
    generate_dataset,
    generate_synthetic_sample,
    load_dataset,
    read_manifest,
    save_dataset,
    select_annotated,
)
from mirrornet.data.synthetic import segment_distance
from mirrornet.heatmaps import BONES, JointCoords, argmax_coords, encode_pose, flip_pose, image_to_heatmap


def test_synthetic_determinism():
    a, b = generate_synthetic_sample(11), generate_synthetic_sample(11)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.pose.coords, b.pose.coords) and a.person_bbox == b.person_bbox
    assert not np.array_equal(a.image, generate_synthetic_sample(12).image)


@pytest.mark.parametrize("seed", range(20))
def test_joints_inside_bbox_and_frame(seed):
    s = generate_synthetic_sample(seed)
    x, y, w, h = s.person_bbox
    c = s.pose.coords
    assert np.all(c[:, 0] >= x) and np.all(c[:, 0] <= x + w)
    assert np.all(c[:, 1] >= y) and np.all(c[:, 1] <= y + h)
    assert s.image.dtype == np.float32 and s.image.shape == (3, 64, 64)
    assert s.image.min() >= 0 and s.image.max() <= 1
    hx, hy, hw, hh = s.head_bbox
    assert hw > 0 and hh > 0


def _oracle_mask(geom, h, w):
    """Independent scalar re-rasterization: a pixel is in the figure when its centre
    lies within a bone capsule or the head disc."""
    out = np.zeros((h, w), bool)
    hc, hr = geom.head_center, geom.head_radius
    for row in range(h):
        for col in range(w):
            if (col - hc[0]) ** 2 + (row - hc[1]) ** 2 <= hr * hr:
                out[row, col] = True
                continue
            for (a, b), r in zip(BONES, geom.radii):
                ax, ay = geom.joints[a]
                bx, by = geom.joints[b]
                vx, vy = bx - ax, by - ay
                L2 = vx * vx + vy * vy
                t = 0.0 if L2 == 0 else min(1.0, max(0.0, ((col - ax) * vx + (row - ay) * vy) / L2))
                dx, dy = col - (ax + t * vx), row - (ay + t * vy)
                if dx * dx + dy * dy <= r * r:
                    out[row, col] = True
                    break
    return out


@pytest.mark.parametrize("seed", range(10))
def test_mask_iou_against_rerasterized_skeleton(seed):
    s = generate_synthetic_sample(seed)
    oracle = _oracle_mask(s.geometry, 64, 64)
    mask = s.mask > 0.5
    iou = (mask & oracle).sum() / (mask | oracle).sum()
    assert iou >= 0.99, iou
    # a real figure, not an empty mask
    assert mask.sum() > 50


def test_segment_distance():
    px, py = np.array([0.0, 5.0, 12.0]), np.array([3.0, -4.0, 0.0])
    d = segment_distance(px, py, np.array([0.0, 0.0]), np.array([10.0, 0.0]))
    assert np.allclose(d, [3.0, 4.0, 2.0])


def test_generator_retry_cap():
    cfg = SyntheticConfig(image_size=(16, 16), torso_fraction=(0.6, 0.6), max_retries=3)
    with pytest.raises(SyntheticError, match="3 attempts"):
        generate_synthetic_sample(0, cfg)


def test_sample_invariants():
    img = np.zeros((3, 8, 8), np.float32)
    with pytest.raises(ValueError):
        Sample(img, None, None, (0, 0, 4, 4), annotated=True)
    with pytest.raises(ValueError):
        Sample(img, None, None, (0, 0, 0, 4))


def test_select_annotated_exact_and_reproducible():
    a = select_annotated(1000, 0.2, seed=4)
    assert a.sum() == 200
    assert np.array_equal(a, select_annotated(1000, 0.2, seed=4))
    assert not np.array_equal(a, select_annotated(1000, 0.2, seed=5))
    assert select_annotated(10, 1.0, 0).all()
    with pytest.raises(ValueError):
        select_annotated(10, 0.0, 0)


def test_generate_dataset_splits():
    ss = generate_dataset(10, 1, test_count=4, annotation_ratio=0.4)
    assert [s.split for s in ss].count("test") == 4
    assert sum(s.annotated for s in ss if s.split == "train") == 4
    assert all(s.annotated for s in ss if s.split == "test")


def test_save_load_roundtrip(tmp_path):
    ss = generate_dataset(3, 2, annotation_ratio=2 / 3)
    root = save_dataset(ss, tmp_path / "ds", seed=2, annotation_ratio=2 / 3)
    manifest, loaded = load_dataset(root)
    assert len(loaded) == 3 and manifest.diagnostics == []
    for a, b in zip(ss, loaded):
        assert a.annotated == b.annotated and a.sample_id == b.sample_id
        assert np.array_equal(a.image, b.image)  # images are stored at 8-bit precision
        assert np.array_equal(a.mask, b.mask)
        assert np.allclose(a.pose.coords, b.pose.coords)
    assert manifest.split("train") == manifest.records


def test_manifest_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        save_dataset(generate_dataset(3, 7), tmp_path / d, seed=7)
    for f in ("manifest.json", "images/000001.png", "masks/000002.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def _write_manifest(root, records, **extra):
    root.mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    man = {"format": "mirrornet-dataset/1", "image_size": [64, 64], "records": records, **extra}
    (root / "manifest.json").write_text(json.dumps(man))
    return root


def test_fourteen_joint_record(tmp_path):
    Image.fromarray(np.zeros((64, 64, 3), np.uint8)).save(tmp_path / "x.png")
    rng = np.random.default_rng(0)
    j14 = [[float(x), float(y), 1] for x, y in rng.uniform(5, 60, size=(14, 2))]
    root = _write_manifest(tmp_path, [{"id": "a", "image": "x.png", "joints": j14, "person_bbox": [0, 0, 64, 64],
                                        "annotated": True}])
    _, (s,) = load_dataset(root)
    hips = np.array([j14[2][:2], j14[3][:2]])
    assert np.array_equal(s.pose.coords[6], hips.mean(axis=0))


def test_bad_records_are_diagnosed(tmp_path):
    Image.fromarray(np.zeros((64, 64, 3), np.uint8)).save(tmp_path / "x.png")
    good = {"id": "ok", "image": "x.png", "person_bbox": [0, 0, 10, 10]}
    root = _write_manifest(tmp_path, [
        good,
        {"id": "missing", "image": "nope.png", "person_bbox": [0, 0, 10, 10]},
        {"id": "badjoints", "image": "x.png", "person_bbox": [0, 0, 10, 10], "joints": [[1, 2, 1]] * 5},
    ])
    manifest, samples = load_dataset(root)
    assert [s.sample_id for s in samples] == ["ok"]
    assert len(manifest.diagnostics) == 2
    assert any("missing" in d for d in manifest.diagnostics) and any("badjoints" in d for d in manifest.diagnostics)


def test_corrupt_manifest_aborts(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DatasetError):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other", "image_size": [1, 1], "records": []}))
    with pytest.raises(DatasetError, match="format"):
        read_manifest(tmp_path)


def test_unpreprocessed_records_are_cropped(tmp_path):
    big = np.zeros((200, 300, 3), np.uint8)
    big[50:150, 100:150] = 255
    Image.fromarray(big).save(tmp_path / "big.png")
    joints = [[125.0, 100.0, 1]] * 16
    root = _write_manifest(tmp_path, [{"id": "p", "image": "big.png", "joints": joints,
                                        "person_bbox": [100, 50, 50, 100], "head_bbox": [115, 50, 20, 20]}],
                           preprocessed=False, crop_padding=1.0)
    _, (s,) = load_dataset(root)
    assert s.size == (64, 64)
    # the bbox centre lands at the crop centre and the box spans the crop height
    assert np.allclose(s.pose.coords[0], (31.5, 31.5))
    assert s.person_bbox[3] == pytest.approx(64.0) and s.person_bbox[2] == pytest.approx(32.0)
    assert s.image[:, 32, 32].min() > 0.9 and s.image[:, 32, 5].max() < 0.1


def test_augment_identity():
    s = generate_synthetic_sample(0)
    assert apply_affine(s, AffineParams()) is s


def test_pure_flip_matches_codec():
    s = generate_synthetic_sample(1)
    out = apply_affine(s, AffineParams(flip=True))
    ref = flip_pose(s.pose, 64)
    assert np.allclose(out.pose.coords, ref.coords)
    assert np.array_equal(out.image, s.image[:, :, ::-1])
    assert np.array_equal(out.mask, s.mask[:, ::-1])


def test_rotation_fixes_centre():
    s = generate_synthetic_sample(2)
    c = s.pose.coords.copy()
    c[4] = (31.5, 31.5)
    s.pose = JointCoords(c)
    out = apply_affine(s, AffineParams(rotation=90.0))
    assert np.allclose(out.pose.coords[4], (31.5, 31.5))


def test_out_of_frame_joints_become_invisible():
    s = generate_synthetic_sample(4)
    out = apply_affine(s, AffineParams(scale=3.0))
    c = out.pose.coords
    outside = (c[:, 0] < 0) | (c[:, 0] > 63) | (c[:, 1] < 0) | (c[:, 1] > 63)
    assert outside.any() and not out.pose.visible[outside].any()


def test_augmentation_commutes_with_encoding():
    """Warped one-hot targets peak within one cell of the encoded warped joints."""
    import cv2

    rng = np.random.default_rng(0)
    disp = []
    for seed in range(30):
        s = generate_synthetic_sample(seed)
        p = AffineParams(scale=float(rng.uniform(0.75, 1.25)), rotation=float(rng.uniform(-30, 30)))
        out = apply_affine(s, p)
        hm_src = encode_pose(image_to_heatmap(s.pose, 4), 16, 16).grid
        # the same affine map expressed on the 16x16 grid
        from mirrornet.data.augment import affine_matrix

        m = affine_matrix(p, 64, 64)
        to_hm = np.array([[0.25, 0, -0.375], [0, 0.25, -0.375], [0, 0, 1]])
        m_hm = (to_hm @ np.vstack([m, [0, 0, 1]]) @ np.linalg.inv(to_hm))[:2]
        warped = np.stack([cv2.warpAffine(ch, m_hm, (16, 16), flags=cv2.INTER_LINEAR) for ch in hm_src])
        direct = encode_pose(image_to_heatmap(out.pose, 4), 16, 16)
        got = argmax_coords(warped[None])[0]
        want = argmax_coords(direct.grid[None])[0]
        ok = out.pose.visible & (warped.reshape(16, -1).max(1) > 0)
        disp.extend(np.abs(got - want)[ok].max(axis=1))
    disp = np.array(disp)
    assert np.mean(disp <= 1) >= 0.95


def test_augment_sample_draws_from_ranges():
    rng = np.random.default_rng(0)
    s = generate_synthetic_sample(5)
    outs = [augment_sample(s, rng, AugmentConfig()) for _ in range(3)]
    assert all(o.image.shape == s.image.shape for o in outs)
    assert augment_sample(s, np.random.default_rng(1)).pose.coords.tolist() == \
        augment_sample(s, np.random.default_rng(1)).pose.coords.tolist()


def test_collate_hides_unannotated_poses():
    ss = generate_dataset(4, 0, annotation_ratio=0.5)
    b = collate(ss, (16, 16))
    ann = np.array([s.annotated for s in ss])
    assert b.images.shape == (4, 3, 64, 64) and b.heatmaps.shape == (4, 16, 16, 16)
    assert np.array_equal(b.annotated.numpy(), ann)
    assert b.heatmaps[~b.annotated].sum() == 0 and not b.visible[~b.annotated].any()
    assert np.all(b.heatmaps[b.annotated].sum((2, 3)).numpy() == 1)
    assert b.masks.shape == (4, 16, 16)
    all_b = collate(ss, (16, 16), use_pose=True)
    assert all_b.annotated.all()
    blob = collate(ss, (16, 16), use_pose=True, blob_sigma=1.0)
    assert np.array_equal(argmax_coords(blob.heatmaps), argmax_coords(all_b.heatmaps))
