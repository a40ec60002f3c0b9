import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrornet.heatmaps import JointCoords
from mirrornet.metrics import (
    JOINT_GROUPS,
    EvalResult,
    JointHits,
    aggregate,
    format_table,
    head_size,
    mean_results,
    pck,
    pckh,
    write_report,
)


def pose(offset=(0.0, 0.0), base=None, visible=None):
    base = np.full((16, 2), 50.0) if base is None else base
    return JointCoords(base + np.asarray(offset), visible)


def test_exact_prediction_is_correct():
    gt = pose()
    assert pck(gt, gt, (100, 50)).correct.all()
    assert pckh(gt, gt, (30, 40)).correct.all()


def test_pck_hand_cases():
    gt = pose()
    assert pck(pose((12, 16)), gt, (100, 50), 0.2).correct.all()  # distance 20 = threshold
    assert not pck(pose((15, 16)), gt, (100, 50), 0.2).correct.any()  # about 21.9


def test_pckh_hand_case():
    assert head_size((30, 40)) == pytest.approx(30.0)
    assert pckh(pose((9, 12)), pose(), (30, 40), 0.5).correct.all()  # distance 15 = threshold
    assert not pckh(pose((9, 12.01)), pose(), (30, 40), 0.5).correct.any()


def test_tau_zero_only_exact():
    gt = pose()
    assert pckh(gt, gt, (30, 40), 0.0).correct.all()
    assert not pckh(pose((1e-9, 0)), gt, (30, 40), 0.0).correct.any()


def test_invisible_excluded():
    vis = np.ones(16, bool)
    vis[3] = False
    h = pck(pose((100, 0)), pose(visible=vis), (10, 10))
    assert not h.evaluated[3] and not h.correct[3] and h.evaluated.sum() == 15


def test_contract_violations():
    with pytest.raises(ValueError):
        pck(pose(), pose(), (0, 5))
    with pytest.raises(ValueError):
        pck(pose(), pose(), (5, 5), tau=0)
    with pytest.raises(ValueError):
        pckh(pose(), pose(), (5, -1))
    with pytest.raises(ValueError):
        aggregate([])


@given(st.floats(0.01, 0.5), st.floats(0.01, 0.5), st.integers(0, 1000))
def test_monotone_in_tau(t1, t2, seed):
    lo, hi = sorted((t1, t2))
    rng = np.random.default_rng(seed)
    gt, pred = pose(base=rng.uniform(0, 100, (16, 2))), pose(base=rng.uniform(0, 100, (16, 2)))
    a, b = pck(pred, gt, (80, 60), lo).correct, pck(pred, gt, (80, 60), hi).correct
    assert np.all(b[a])
    a, b = pckh(pred, gt, (20, 30), lo).correct, pckh(pred, gt, (20, 30), hi).correct
    assert np.all(b[a])


@given(st.sampled_from([0.5, 2.0, 4.0, 0.25]), st.integers(0, 1000))
def test_scale_covariance(k, seed):
    # power-of-two factors keep the scaled comparison exact
    rng = np.random.default_rng(seed)
    gt, pred = rng.uniform(0, 100, (16, 2)), rng.uniform(0, 100, (16, 2))
    a = pck(pose(base=pred), pose(base=gt), (80, 60)).correct
    b = pck(pose(base=pred * k), pose(base=gt * k), (80 * k, 60 * k)).correct
    assert np.array_equal(a, b)


def test_aggregate_simple_streams():
    all_ok = [JointHits(np.ones(16, bool), np.ones(16, bool))] * 3
    r = aggregate(all_ok)
    assert r.total == 1.0 and np.all(r.per_joint == 1.0) and all(v == 1.0 for v in r.groups.values())
    alt = [JointHits(np.full(16, i % 2 == 0), np.ones(16, bool)) for i in range(4)]
    assert np.all(aggregate(alt).per_joint == 0.5)


def test_aggregate_matches_flat_tally():
    rng = np.random.default_rng(0)
    stream = []
    for _ in range(50):
        ev = rng.random(16) < 0.8
        stream.append(JointHits(ev & (rng.random(16) < 0.6), ev))
    r = aggregate(stream)
    hits = np.zeros(16)
    cnt = np.zeros(16)
    for h in stream:
        for j in range(16):
            if h.evaluated[j]:
                cnt[j] += 1
                hits[j] += h.correct[j]
    assert np.allclose(r.per_joint, hits / cnt)
    assert r.total == pytest.approx(hits.sum() / cnt.sum())
    for name, idx in JOINT_GROUPS.items():
        assert r.groups[name] == pytest.approx(hits[list(idx)].sum() / cnt[list(idx)].sum())
    assert r.group_total == pytest.approx(np.mean(list(r.groups.values())))
    perm = rng.permutation(len(stream))
    r2 = aggregate([stream[i] for i in perm])
    assert np.array_equal(r.per_joint, r2.per_joint) and r.total == r2.total
    assert 0 <= r.total <= 1


def test_groups_cover_the_table_columns():
    assert list(JOINT_GROUPS) == ["Head", "Shoulder", "Elbow", "Wrist", "Hip", "Knee", "Ankle"]
    covered = sorted(j for idx in JOINT_GROUPS.values() for j in idx)
    assert covered == sorted(set(range(16)) - {6, 7})


def test_mean_results_and_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    results = [aggregate([JointHits(rng.random(16) < 0.7, np.ones(16, bool)) for _ in range(5)]) for _ in range(4)]
    m = mean_results(results)
    assert m.total == pytest.approx(np.mean([r.total for r in results]))
    assert mean_results(results[-1:]).total == results[-1].total
    back = EvalResult.from_dict(json.loads(json.dumps(m.to_dict())))
    assert np.allclose(back.per_joint, m.per_joint) and back.groups == m.groups
    table = format_table({"A": m}, "PCK@0.2")
    assert "Ankle" in table and "Total" in table and f"{100 * m.total:8.2f}" in table
    write_report(tmp_path / "r.jsonl", {"A": m})
    rec = json.loads((tmp_path / "r.jsonl").read_text())
    assert rec["method"] == "A" and rec["total"] == m.total
