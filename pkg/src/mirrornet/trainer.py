"""Three-stage curriculum: independent pretraining, supervised MirrorNet,
semi-supervised MirrorNet.

Every stage checkpoints after each epoch into ``<out>/checkpoints/<stage>`` and
resumes from there when called again with the same config. Randomness is
derived from ``(seed, stage, epoch)``, so a resumed run continues exactly where
an uninterrupted one would have been.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import shutil
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import objectives as O
from .config import RunConfig
from .data import Sample, augment_sample, collate
from .heatmaps import JointCoords, argmax_coords, heatmap_to_image
from .masking import reduce_image
from .metrics import EvalResult, aggregate, mean_results, pck, pckh
from .networks import MirrorNet

log = logging.getLogger(__name__)

PRETRAIN_PARTS = ("psi", "alpha", "image_vae", "pose_vae")
PART_SUBNETS = {
    "psi": ("psi",),
    "alpha": ("alpha",),
    "image_vae": ("beta", "gamma", "theta"),
    "pose_vae": ("delta", "phi"),
}
MIRROR_SUBNETS = ("alpha", "beta", "gamma", "delta", "theta", "phi")


class TrainingDivergence(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainData:
    train: list
    test: list

    def __post_init__(self):
        self.annotated = [s for s in self.train if s.annotated]
        self.unannotated = [s for s in self.train if not s.annotated]


@dataclass
class TrainState:
    net: MirrorNet
    stage: str = "init"
    progress: dict = field(default_factory=dict)  # part -> completed epochs
    optimizers: dict = field(default_factory=dict)  # name -> optimizer state dict
    history: list = field(default_factory=list)  # one record per epoch

    def records(self, stage: str, part: str | None = None) -> list:
        return [r for r in self.history if r["stage"] == stage and (part is None or r.get("part") == part)]


class MetricsLog:
    """Append-only line-delimited records; no wall-clock fields, so equal runs give equal files."""

    def __init__(self, path):
        self.path = None if path is None else Path(path)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    def offset(self) -> int:
        return 0 if self.path is None else self.path.stat().st_size

    def truncate(self, offset: int) -> None:
        if self.path is not None and self.offset() > offset:
            with open(self.path, "r+b") as fh:
                fh.truncate(offset)

    def write(self, record: dict) -> None:
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


# -- randomness ---------------------------------------------------------------


def _stream(seed: int, stage: str, epoch: int) -> tuple[np.random.Generator, torch.Generator]:
    key = [int(seed), zlib.crc32(stage.encode()), int(epoch)]
    rng = np.random.default_rng(key)
    gen = torch.Generator().manual_seed(int(np.random.default_rng(key + [1]).integers(2**62)))
    return rng, gen


def set_seed(seed: int) -> None:
    torch.manual_seed(seed)


def build_net(cfg: RunConfig) -> MirrorNet:
    set_seed(cfg.seed)
    return MirrorNet(cfg.net)


# -- checkpoints --------------------------------------------------------------


def checkpoint_dir(out, stage: str) -> Path:
    return Path(out) / "checkpoints" / stage


def save_checkpoint(state: TrainState, path, cfg: RunConfig, complete: bool, log_offset: int = 0) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    for name in MirrorNet.SUBNETS:
        torch.save(getattr(state.net, name).state_dict(), tmp / f"{name}.pt")
    torch.save(state.optimizers, tmp / "optimizers.pt")
    (tmp / "history.json").write_text(json.dumps(state.history, sort_keys=True))
    manifest = {
        "stage": state.stage,
        "config_hash": cfg.hash(),
        "net_config": cfg.to_dict()["net"],
        "seed": cfg.seed,
        "progress": state.progress,
        "epoch": sum(state.progress.values()),
        "complete": complete,
        "log_offset": log_offset,
    }
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    if path.exists():
        shutil.rmtree(path)
    tmp.rename(path)


def read_checkpoint_manifest(path) -> dict:
    try:
        return json.loads((Path(path) / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"no readable checkpoint at {path}: {exc}") from exc


def load_checkpoint(path, cfg: RunConfig) -> TrainState:
    """Restore a checkpoint; its network shapes must match ``cfg.net``."""
    path = Path(path)
    manifest = read_checkpoint_manifest(path)
    if manifest["net_config"] != cfg.to_dict()["net"]:
        raise CheckpointError(f"checkpoint {path} was written for a different network config")
    net = MirrorNet(cfg.net)
    for name in MirrorNet.SUBNETS:
        getattr(net, name).load_state_dict(torch.load(path / f"{name}.pt", weights_only=True))
    return TrainState(
        net=net,
        stage=manifest["stage"],
        progress=dict(manifest["progress"]),
        optimizers=torch.load(path / "optimizers.pt", weights_only=True),
        history=json.loads((path / "history.json").read_text()),
    )


def _resume(out, stage: str, cfg: RunConfig, metrics: MetricsLog):
    """Checkpoint of this stage written under the same config, if any."""
    if out is None:
        return None, False
    path = checkpoint_dir(out, stage)
    if not (path / "manifest.json").exists():
        return None, False
    manifest = read_checkpoint_manifest(path)
    if manifest["config_hash"] != cfg.hash():
        log.warning("ignoring %s checkpoint written under another config", stage)
        return None, False
    if not manifest["complete"]:
        metrics.truncate(manifest.get("log_offset", 0))  # drop lines past the last checkpoint
    return load_checkpoint(path, cfg), bool(manifest["complete"])


# -- batches ------------------------------------------------------------------


def make_batch(samples: list, rng: np.random.Generator, cfg: RunConfig, use_pose=None, augment: bool | None = None):
    augment = cfg.curriculum.augment if augment is None else augment
    if augment:
        samples = [augment_sample(s, rng, cfg.augment) for s in samples]
    return collate(samples, cfg.net.heatmap_size, use_pose=use_pose, blob_sigma=cfg.curriculum.blob_sigma)


def _chunks(order, size: int):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def _draw_cyclic(pool_size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` indices from repeated shuffles of ``range(pool_size)``."""
    reps = math.ceil(count / pool_size)
    return np.concatenate([rng.permutation(pool_size) for _ in range(reps)])[:count]


# -- evaluation ---------------------------------------------------------------


@torch.no_grad()
def predict_poses(net: MirrorNet, samples: list, batch_size: int = 64) -> list[JointCoords]:
    """Argmax of the recognizer mean, mapped to image pixels."""
    out = []
    stride = net.cfg.image_size[0] // net.cfg.heatmap_size[0]
    for chunk in _chunks(list(samples), batch_size):
        images = torch.from_numpy(np.stack([s.image for s in chunk]))
        mean = net.recognize_pose(images).mean
        for xy in argmax_coords(mean):
            out.append(heatmap_to_image(JointCoords(xy), stride))
    return out


def evaluate_predictions(preds: list, samples: list, tau: float = 0.2, metric: str = "pck") -> EvalResult:
    hits = []
    for p, s in zip(preds, samples, strict=True):
        if s.pose is None:
            continue
        if metric == "pck":
            hits.append(pck(p, s.pose, s.person_hw, tau))
        elif metric == "pckh":
            if s.head_bbox is None:
                raise ValueError(f"sample {s.sample_id!r} has no head box for PCKh")
            hits.append(pckh(p, s.pose, (s.head_bbox[3], s.head_bbox[2]), tau))
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return aggregate(hits)


def evaluate_recognizer(net: MirrorNet, samples: list, tau: float = 0.2, metric: str = "pck") -> EvalResult:
    return evaluate_predictions(predict_poses(net, samples), samples, tau, metric)


@torch.no_grad()
def pose_vae_hit_rate(net: MirrorNet, samples: list, cfg: RunConfig, radius: float = 2.0) -> tuple[float, int]:
    """Fraction of visible joints whose decoded argmax lies within ``radius`` heatmap cells of the input's.

    Poses go through the primitive encoder's mean and the pose generator's
    mean, so the check measures the autoencoder rather than sampling noise.
    Returns the rate and the number of joints evaluated.
    """
    hits = total = 0
    for chunk in _chunks([s for s in samples if s.pose is not None], 64):
        batch = collate(chunk, cfg.net.heatmap_size, blob_sigma=cfg.curriculum.blob_sigma)
        recon = net.generate_pose(net.encode_primitive(batch.heatmaps).mean).mean
        dist = np.linalg.norm(argmax_coords(recon) - argmax_coords(batch.heatmaps), axis=-1)
        vis = batch.visible.numpy()
        hits += int((dist[vis] <= radius).sum())
        total += int(vis.sum())
    return hits / max(total, 1), total


def _eval_record(net: MirrorNet, data: TrainData, cfg: RunConfig) -> dict:
    rec = {"pck": evaluate_recognizer(net, data.test, cfg.curriculum.eval_tau).to_dict()}
    if data.test and all(s.head_bbox is not None for s in data.test):
        rec["pckh"] = evaluate_recognizer(net, data.test, 0.5, "pckh").to_dict()
    return rec


def evaluate_last_epochs(state: TrainState, stage: str, window: int, metric: str = "pck", part: str | None = None) -> EvalResult:
    """Mean of the per-epoch evaluations over the last ``window`` epochs of a stage."""
    recs = [r for r in state.records(stage, part) if metric in r]
    if window < 1 or len(recs) < window:
        raise ValueError(f"need {window} evaluated epochs of {stage!r}, history has {len(recs)}")
    return mean_results([EvalResult.from_dict(r[metric]) for r in recs[-window:]])


# -- steps --------------------------------------------------------------------


def _check_finite(breakdown: O.ElboBreakdown | dict, where: str) -> None:
    items = breakdown.items() if isinstance(breakdown, dict) else (
        (name, getattr(breakdown, name)) for name in (*O.ElboBreakdown.TERMS, "total"))
    for name, value in items:
        if not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise TrainingDivergence(f"{where}: non-finite {name}")


def _audit(bd: O.ElboBreakdown, lam: float | None, where: str) -> None:
    scale = bd.total.abs().clamp_min(1.0)
    if not bool(((bd.total - bd.signed_sum()).abs() <= 1e-6 * scale).all()):
        raise AssertionError(f"{where}: breakdown total differs from its signed term sum")
    if lam is not None:
        sup = bd.recognizer_loglik != 0
        if not torch.equal(bd.lambda_term[sup], lam * bd.recognizer_loglik[sup]):
            raise AssertionError(f"{where}: lambda term is not lam * log q(s|x)")


def _set_trainable(net: MirrorNet, names) -> list:
    names = set(names)
    params = []
    for name in MirrorNet.SUBNETS:
        flag = name in names
        for p in getattr(net, name).parameters():
            p.requires_grad_(flag)
            if flag:
                params.append(p)
    return params


def _optimizer(state: TrainState, key: str, params, cfg: RunConfig) -> torch.optim.Adam:
    opt = torch.optim.Adam(params, lr=cfg.curriculum.lr)
    if key in state.optimizers:
        opt.load_state_dict(state.optimizers[key])
    elif key == "mirror":
        _inherit_moments(state, opt)
    return opt


def _subnet_params(net: MirrorNet, names) -> list:
    return [p for name in MirrorNet.SUBNETS if name in names for p in getattr(net, name).parameters()]


def _inherit_moments(state: TrainState, opt: torch.optim.Adam) -> None:
    """Start the joint optimizer from each subnet's pretraining moments instead of from zero."""
    owned = {id(p) for p in opt.param_groups[0]["params"]}
    for part, names in PART_SUBNETS.items():
        saved = state.optimizers.get(part)
        if saved is None:
            continue
        for i, p in enumerate(_subnet_params(state.net, names)):
            if i in saved["state"] and id(p) in owned:
                opt.state[p] = {k: v.clone() for k, v in saved["state"][i].items()}


def _step(loss, groups, opt, clip: float) -> float:
    """Backprop, clip each parameter group to norm ``clip``, step; returns the pre-clip norm over all groups."""
    opt.zero_grad(set_to_none=True)
    loss.backward()
    limit = clip if clip > 0 else float("inf")
    norms = torch.stack([torch.nn.utils.clip_grad_norm_(g, limit) for g in groups if g])
    opt.step()
    return float(torch.linalg.vector_norm(norms))


def _clip_groups(net: MirrorNet, params: list, scope: str) -> list:
    if scope == "global":
        return [params]
    owned = {id(p) for p in params}
    return [[p for p in getattr(net, name).parameters() if id(p) in owned] for name in MirrorNet.SUBNETS]


def _part_loss(part: str, batch, net: MirrorNet, gen: torch.Generator):
    """Loss to minimize and the logged terms for one pretraining part."""
    if part == "psi":
        reduced = reduce_image(batch.images, net.cfg.reduced_size)
        mse = F.mse_loss(net.estimate_mask(reduced, batch.heatmaps), batch.masks)
        return mse, {"mask_mse": mse}
    if part == "alpha":
        bd = O.recognizer_objective(batch.images, batch.heatmaps, net, batch.visible)
    elif part == "image_vae":
        noise = O.draw_noise(net.cfg, len(batch), gen)
        bd = O.image_vae_elbo(batch.images, batch.heatmaps, net, noise.a, noise.g)
    elif part == "pose_vae":
        noise = O.draw_noise(net.cfg, len(batch), gen)
        bd = O.pose_vae_elbo(batch.heatmaps, net, noise.z, batch.visible)
    else:
        raise ValueError(f"unknown pretraining part {part!r}")
    return -bd.total.mean(), bd


def _log_terms(terms) -> dict:
    if isinstance(terms, O.ElboBreakdown):
        return terms.as_dict()
    return {k: float(v.detach()) for k, v in terms.items()}


def _pretrain_epoch(state, part, cfg, data, metrics, epoch, label: str = "pretrain") -> float:
    net = state.net
    pool = data.annotated
    params = _set_trainable(net, PART_SUBNETS[part])
    opt = _optimizer(state, part, params, cfg)
    rng, gen = _stream(cfg.seed, f"pretrain/{part}", epoch)
    losses = []
    for step, idx in enumerate(_chunks(rng.permutation(len(pool)), cfg.curriculum.batch_size)):
        batch = make_batch([pool[i] for i in idx], rng, cfg)
        loss, terms = _part_loss(part, batch, net, gen)
        where = f"{label}/{part} epoch {epoch} step {step}"
        _check_finite({"loss": loss} if isinstance(terms, dict) else terms, where)
        norm = _step(loss, [params], opt, cfg.curriculum.grad_clip)
        losses.append(float(loss.detach()))
        metrics.write({"kind": "step", "stage": label, "part": part, "epoch": epoch, "step": step,
                       "loss": losses[-1], "grad_norm": norm, **_log_terms(terms)})
    state.optimizers[part] = opt.state_dict()
    return float(np.mean(losses))


def _finish_epoch(state, stage, part, epoch, loss, cfg, data, metrics, evaluate: bool) -> None:
    rec = {"stage": stage, "part": part, "epoch": epoch, "loss": loss}
    if evaluate and data.test:
        rec.update(_eval_record(state.net, data, cfg))
    state.history.append(rec)
    line = {"kind": "epoch", "stage": stage, "part": part, "epoch": epoch, "loss": loss}
    if "pck" in rec:
        line["pck_total"] = rec["pck"]["total"]
    if "pckh" in rec:
        line["pckh_total"] = rec["pckh"]["total"]
    metrics.write(line)
    log.info("%s/%s epoch %d loss %.4f%s", stage, part, epoch, loss,
             f" PCK {rec['pck']['total']:.4f}" if "pck" in rec else "")


class _Halt(Exception):
    """Raised internally when a call's epoch allowance runs out."""


class _Allowance:
    def __init__(self, epochs: int | None):
        self.left = epochs

    def take(self) -> None:
        if self.left is not None:
            if self.left <= 0:
                raise _Halt
            self.left -= 1


def _budget_pretrain(cfg: RunConfig, part: str) -> int:
    c = cfg.curriculum
    return c.epochs({"psi": c.mask_epochs, "alpha": c.alpha_epochs, "image_vae": c.image_vae_epochs,
                     "pose_vae": c.pose_vae_epochs}[part])


# -- stages -------------------------------------------------------------------


def pretrain_components(cfg: RunConfig, data: TrainData, out=None, state: TrainState | None = None,
                        parts=PRETRAIN_PARTS, max_epochs: int | None = None) -> TrainState:
    """Stage 1: train psi, alpha, the image VAE and the pose VAE independently.

    psi goes first because the image VAE reads its (frozen) masks.
    ``max_epochs`` caps the epochs run by this call, leaving a resumable checkpoint.
    """
    if not data.annotated:
        raise ValueError("pretraining needs at least one annotated sample")
    metrics = MetricsLog(None if out is None else Path(out) / "metrics.jsonl")
    resumed, complete = _resume(out, "pretrain", cfg, metrics)
    if complete:
        return resumed
    state = resumed or state or TrainState(build_net(cfg))
    state.stage = "pretrain"
    path = None if out is None else checkpoint_dir(out, "pretrain")
    allowance = _Allowance(max_epochs)
    try:
        for part in parts:
            if part == "psi" and any(s.mask is None for s in data.annotated):
                warnings.warn("annotated samples lack masks; skipping mask-estimator pretraining", RuntimeWarning)
                continue
            for epoch in range(state.progress.get(part, 0), _budget_pretrain(cfg, part)):
                allowance.take()
                loss = _pretrain_epoch(state, part, cfg, data, metrics, epoch)
                _finish_epoch(state, "pretrain", part, epoch, loss, cfg, data, metrics, evaluate=part == "alpha")
                state.progress[part] = epoch + 1
                if path is not None:
                    save_checkpoint(state, path, cfg, complete=False, log_offset=metrics.offset())
    except _Halt:
        return state
    if path is not None:
        save_checkpoint(state, path, cfg, complete=True, log_offset=metrics.offset())
    return state


def train_baseline(state: TrainState, cfg: RunConfig, data: TrainData, out=None,
                   max_epochs: int | None = None) -> TrainState:
    """Comparison run: alpha alone for as many epochs as the supervised stage."""
    metrics = MetricsLog(None if out is None else Path(out) / "metrics.jsonl")
    resumed, complete = _resume(out, "baseline", cfg, metrics)
    if complete:
        return resumed
    if resumed is None:
        resumed = TrainState(copy.deepcopy(state.net), "baseline", {}, dict(state.optimizers), list(state.history))
    state = resumed
    state.stage = "baseline"
    total = sum(cfg.curriculum.epochs(e) for e in cfg.curriculum.supervised_epochs)
    path = None if out is None else checkpoint_dir(out, "baseline")
    allowance = _Allowance(max_epochs)
    try:
        for epoch in range(state.progress.get("baseline", 0), total):
            allowance.take()
            loss = _pretrain_epoch(state, "alpha", cfg, data, metrics, _offset_epoch(cfg, epoch), "baseline")
            _finish_epoch(state, "baseline", "alpha", epoch, loss, cfg, data, metrics, evaluate=True)
            state.progress["baseline"] = epoch + 1
            if path is not None:
                save_checkpoint(state, path, cfg, complete=False, log_offset=metrics.offset())
    except _Halt:
        return state
    if path is not None:
        save_checkpoint(state, path, cfg, complete=True, log_offset=metrics.offset())
    return state


def _offset_epoch(cfg: RunConfig, epoch: int) -> int:
    # continue alpha's random stream after its pretraining epochs
    return _budget_pretrain(cfg, "alpha") + epoch


def _mirror_epoch(state, stage, cfg, data, metrics, epoch, composition) -> float:
    """One epoch of joint training on the (semi-)supervised objective; psi stays frozen."""
    net = state.net
    c = cfg.curriculum
    params = _set_trainable(net, MIRROR_SUBNETS)
    opt = _optimizer(state, "mirror", params, cfg)
    rng, gen = _stream(cfg.seed, stage, epoch)
    n_ann, n_unann = composition
    if n_unann == 0:
        batches = [[data.annotated[i] for i in idx]
                   for idx in _chunks(rng.permutation(len(data.annotated)), c.batch_size)]
    else:
        n_batches = math.ceil(len(data.train) / c.batch_size)
        ann = _draw_cyclic(len(data.annotated), n_ann * n_batches, rng) if n_ann else np.zeros(0, int)
        unann = _draw_cyclic(len(data.unannotated), n_unann * n_batches, rng)
        batches = [[data.annotated[i] for i in ann[b * n_ann:(b + 1) * n_ann]]
                   + [data.unannotated[i] for i in unann[b * n_unann:(b + 1) * n_unann]]
                   for b in range(n_batches)]
    losses = []
    for step, samples in enumerate(batches):
        batch = make_batch(samples, rng, cfg)
        noise = O.draw_noise(net.cfg, len(batch), gen)
        total, bd = O.semisupervised_objective(batch.images, batch.heatmaps, batch.visible, batch.annotated,
                                               net, noise, c.lam)
        where = f"{stage} epoch {epoch} step {step}"
        _check_finite(bd, where)
        _audit(bd, c.lam, where)
        loss = -total / len(batch)
        norm = _step(loss, _clip_groups(net, params, c.clip_scope), opt, c.grad_clip)
        losses.append(float(loss.detach()))
        metrics.write({"kind": "step", "stage": stage, "epoch": epoch, "step": step, "loss": losses[-1],
                       "grad_norm": norm, "annotated": int(batch.annotated.sum()), **bd.as_dict()})
    state.optimizers["mirror"] = opt.state_dict()
    return float(np.mean(losses))


def _run_mirror_stage(state, stage, cfg, data, out, metrics, epochs: range, composition, allowance,
                      mid_checkpoint: int | None = None) -> bool:
    path = None if out is None else checkpoint_dir(out, stage)
    for epoch in epochs:
        allowance.take()
        loss = _mirror_epoch(state, stage, cfg, data, metrics, epoch, composition)
        _finish_epoch(state, stage, "mirror", epoch, loss, cfg, data, metrics, evaluate=True)
        state.progress[stage] = epoch + 1
        if path is not None:
            save_checkpoint(state, path, cfg, complete=False, log_offset=metrics.offset())
        if mid_checkpoint is not None and epoch + 1 == mid_checkpoint and out is not None:
            save_checkpoint(state, checkpoint_dir(out, "supervised_mid"), cfg, complete=True,
                            log_offset=metrics.offset())
    return True


def _with_psi_frozen(state: TrainState) -> None:
    for p in state.net.psi.parameters():
        p.requires_grad_(False)


def train_supervised(state: TrainState, cfg: RunConfig, data: TrainData, out=None,
                     max_epochs: int | None = None) -> TrainState:
    """Stage 2: joint ascent on the lambda-augmented supervised bound over annotated samples.

    The state after the first ``supervised_epochs[0]`` epochs is kept as the
    ``supervised_mid`` checkpoint, the starting point of stage 3.
    """
    if not data.annotated:
        raise ValueError("supervised training needs annotated samples")
    metrics = MetricsLog(None if out is None else Path(out) / "metrics.jsonl")
    resumed, complete = _resume(out, "supervised", cfg, metrics)
    if complete:
        return resumed
    if resumed is None:
        moments = {k: v for k, v in state.optimizers.items() if k in PART_SUBNETS}
        resumed = TrainState(copy.deepcopy(state.net), "supervised", {}, copy.deepcopy(moments), list(state.history))
    state = resumed
    state.stage = "supervised"
    _with_psi_frozen(state)
    c = cfg.curriculum
    first, second = (c.epochs(e) for e in c.supervised_epochs)
    if first == 0 and out is not None:
        save_checkpoint(state, checkpoint_dir(out, "supervised_mid"), cfg, complete=True, log_offset=metrics.offset())
    try:
        _run_mirror_stage(state, "supervised", cfg, data, out, metrics,
                          range(state.progress.get("supervised", 0), first + second),
                          (c.batch_size, 0), _Allowance(max_epochs), mid_checkpoint=first)
    except _Halt:
        return state
    if out is not None:
        save_checkpoint(state, checkpoint_dir(out, "supervised"), cfg, complete=True, log_offset=metrics.offset())
    return state


def train_semisupervised(state: TrainState, cfg: RunConfig, data: TrainData, out=None,
                         max_epochs: int | None = None, stage: str = "semi") -> TrainState:
    """Stage 3: the semi-supervised objective with a fixed per-batch composition.

    ``state`` should be the mid-stage supervised checkpoint.
    """
    c = cfg.curriculum
    composition = c.semi_composition
    if not data.unannotated or composition[1] == 0:
        if not data.unannotated and composition[1]:
            warnings.warn("no unannotated samples; semi-supervised stage falls back to supervised", RuntimeWarning)
        composition = (c.batch_size, 0)
    if composition[0] and not data.annotated:
        raise ValueError("composition asks for annotated samples but none exist")
    metrics = MetricsLog(None if out is None else Path(out) / "metrics.jsonl")
    resumed, complete = _resume(out, stage, cfg, metrics)
    if complete:
        return resumed
    if resumed is None:
        resumed = TrainState(copy.deepcopy(state.net), stage, {}, dict(state.optimizers), list(state.history))
    state = resumed
    state.stage = stage
    _with_psi_frozen(state)
    try:
        _run_mirror_stage(state, stage, cfg, data, out, metrics,
                          range(state.progress.get(stage, 0), c.epochs(c.semi_epochs)),
                          composition, _Allowance(max_epochs))
    except _Halt:
        return state
    if out is not None:
        save_checkpoint(state, checkpoint_dir(out, stage), cfg, complete=True, log_offset=metrics.offset())
    return state
