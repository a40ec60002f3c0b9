"""PCK and PCKh keypoint accuracy.

Thresholds are inclusive: a joint at exactly the threshold distance counts as
correct. Ground-truth joints flagged invisible are excluded from every count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .heatmaps import NUM_JOINTS, JointCoords

# column layout of the report tables; pelvis and thorax belong to no group
JOINT_GROUPS = {
    "Head": (8, 9),
    "Shoulder": (12, 13),
    "Elbow": (11, 14),
    "Wrist": (10, 15),
    "Hip": (2, 3),
    "Knee": (1, 4),
    "Ankle": (0, 5),
}


@dataclass
class JointHits:
    correct: np.ndarray  # (16,) bool; False where not evaluated
    evaluated: np.ndarray  # (16,) bool


def _distances(pred: JointCoords, gt: JointCoords) -> np.ndarray:
    return np.hypot(*(pred.coords - gt.coords).T)


def hits_within(pred: JointCoords, gt: JointCoords, threshold: float) -> JointHits:
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    evaluated = gt.visible.copy()
    correct = (_distances(pred, gt) <= threshold) & evaluated
    return JointHits(correct, evaluated)


def pck(pred: JointCoords, gt: JointCoords, person_hw: tuple, tau: float = 0.2) -> JointHits:
    """Correct iff distance <= tau * max(h, w) of the person's bounding box.

    Both poses must be in the same pixel frame as the box; that is on the caller.
    """
    h, w = person_hw
    if h <= 0 or w <= 0:
        raise ValueError(f"bounding box dims must be positive, got {person_hw}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return hits_within(pred, gt, tau * max(h, w))


def head_size(head_hw: tuple) -> float:
    """60% of the head box diagonal."""
    h, w = head_hw
    return 0.6 * math.hypot(h, w)


def pckh(pred: JointCoords, gt: JointCoords, head_hw: tuple, tau: float = 0.5) -> JointHits:
    """Correct iff distance <= tau * 0.6 * diag(head box)."""
    h, w = head_hw
    if h <= 0 or w <= 0:
        raise ValueError(f"head box dims must be positive, got {head_hw}")
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    return hits_within(pred, gt, tau * head_size(head_hw))


@dataclass
class EvalResult:
    per_joint: np.ndarray  # (16,) fractions; NaN where nothing was evaluated
    n_evaluated: np.ndarray  # (16,) counts
    total: float  # mean over all evaluated joints
    groups: dict = field(default_factory=dict)
    group_total: float = float("nan")  # mean of the group columns

    def to_dict(self) -> dict:
        return {
            "per_joint": [None if np.isnan(v) else float(v) for v in self.per_joint],
            "n_evaluated": [int(v) for v in self.n_evaluated],
            "total": self.total,
            "groups": dict(self.groups),
            "group_total": self.group_total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(
            per_joint=np.array([np.nan if v is None else v for v in d["per_joint"]], dtype=np.float64),
            n_evaluated=np.array(d["n_evaluated"], dtype=np.int64),
            total=float(d["total"]),
            groups={k: float(v) for k, v in d["groups"].items()},
            group_total=float(d["group_total"]),
        )


def aggregate(results, joint_groups: dict | None = None) -> EvalResult:
    """Per-joint and grouped fractions over a stream of :class:`JointHits`.

    Group columns pool the counts of their joints.
    """
    joint_groups = JOINT_GROUPS if joint_groups is None else joint_groups
    hits = np.zeros(NUM_JOINTS, np.int64)
    counts = np.zeros(NUM_JOINTS, np.int64)
    n = 0
    for r in results:
        hits += r.correct & r.evaluated
        counts += r.evaluated
        n += 1
    if n == 0:
        raise ValueError("aggregate needs at least one result")
    with np.errstate(invalid="ignore", divide="ignore"):
        per_joint = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    total = float(hits.sum() / counts.sum()) if counts.sum() else float("nan")
    groups = {}
    for name, idx in joint_groups.items():
        c = counts[list(idx)].sum()
        groups[name] = float(hits[list(idx)].sum() / c) if c else float("nan")
    valid = [v for v in groups.values() if not math.isnan(v)]
    return EvalResult(per_joint, counts, total, groups, float(np.mean(valid)) if valid else float("nan"))


def mean_results(results: list[EvalResult]) -> EvalResult:
    """Arithmetic mean of several evaluations (e.g. the last epochs of a stage)."""
    if not results:
        raise ValueError("need at least one EvalResult")
    per_joint = np.mean([r.per_joint for r in results], axis=0)
    groups = {k: float(np.mean([r.groups[k] for r in results])) for k in results[0].groups}
    return EvalResult(
        per_joint=per_joint,
        n_evaluated=np.sum([r.n_evaluated for r in results], axis=0),
        total=float(np.mean([r.total for r in results])),
        groups=groups,
        group_total=float(np.mean([r.group_total for r in results])),
    )


def format_table(rows: dict[str, EvalResult], metric: str = "PCK@0.2", extra_columns: dict | None = None) -> str:
    """Fixed-width table, one column per joint group plus the total, values in percent."""
    names = list(JOINT_GROUPS) + ["Total"]
    extra_columns = extra_columns or {}
    extra_names = list(next(iter(extra_columns.values())).keys()) if extra_columns else []
    label_w = max([len(k) for k in rows] + [10])
    header = f"{'':<{label_w}} " + " ".join(f"{c:>12}" for c in extra_names) + (" " if extra_names else "")
    header += " ".join(f"{c:>8}" for c in names)
    lines = [f"{metric}", header, "-" * len(header)]
    for label, r in rows.items():
        extras = " ".join(f"{str(v):>12}" for v in extra_columns.get(label, {}).values())
        vals = [r.groups[c] for c in JOINT_GROUPS] + [r.total]
        line = f"{label:<{label_w}} " + (extras + " " if extras else "")
        line += " ".join(f"{100.0 * v:8.2f}" for v in vals)
        lines.append(line)
    return "\n".join(lines)


def write_report(path, rows: dict[str, EvalResult], metric: str = "PCK@0.2") -> None:
    """Line-delimited records, one per row, alongside a ``.txt`` table."""
    with open(path, "w") as fh:
        for label, r in rows.items():
            fh.write(json.dumps({"method": label, "metric": metric, **r.to_dict()}, sort_keys=True) + "\n")
