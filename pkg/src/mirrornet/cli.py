"""Command-line entry point.

    python -m mirrornet <command> [--config FILE] [--seed N] [--out DIR] [--set key=value ...]

Exit status is 0 on success, 2 for usage and configuration errors and 1 for
failures at run time; the diagnostic names the module that failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig, build, load_config, save_config
from .data import generate_dataset, load_dataset, save_dataset
from .heatmaps import JointCoords
from .metrics import EvalResult, format_table, write_report

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# mini-batch compositions of the ratio study, scaled from 128 to 16 per batch
TOY_COMPOSITIONS = ((4, 12), (6, 10), (8, 8), (10, 6), (12, 4))

log = logging.getLogger("mirrornet")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default="runs/default", help="output directory (default: %(default)s)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable")
    common.add_argument("--data", help="dataset directory; default generates data.train_count samples in memory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mirrornet", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset to <out>/dataset")
    g.add_argument("--count", type=int, help="training samples (default data.train_count)")
    g.add_argument("--test-count", type=int, help="test samples (default data.test_count)")
    g.add_argument("--annotation-ratio", type=float, help="annotated fraction (default data.annotation_ratio)")

    sub.add_parser("pretrain", parents=[common], help="stage 1: train the subnetworks independently")
    sub.add_parser("train-supervised", parents=[common], help="stage 2: supervised MirrorNet")
    sub.add_parser("train-semi", parents=[common], help="stage 3: semi-supervised MirrorNet")

    e = sub.add_parser("evaluate", parents=[common], help="PCK/PCKh report of every trained stage")
    e.add_argument("--metric", choices=("pck", "pckh"), default="pck")
    e.add_argument("--predictions", help="JSON mapping sample id to 16 [x, y] pairs; evaluated instead of a model")

    r = sub.add_parser("reconstruct", parents=[common], help="write image, pose and mask reconstructions")
    r.add_argument("--stage", default=None, help="checkpoint to use (default: latest trained stage)")
    r.add_argument("--count", type=int, default=8)

    s = sub.add_parser("sweep-composition", parents=[common], help="semi-supervised stage for each batch composition")
    s.add_argument("--compositions", default=None,
                   help="comma list like 4+12,8+8 (default: the five toy compositions)")

    v = sub.add_parser("verify", help="run the test suite")
    v.add_argument("pytest_args", nargs="*", help="extra pytest arguments")
    return p


# -- helpers ------------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.overrides, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    (out / "seed.txt").write_text(f"{cfg.seed}\n")
    return cfg


def _data(cfg: RunConfig, args):
    from .trainer import TrainData

    path = args.data or cfg.data.path
    if path:
        manifest, samples = load_dataset(path)
        for msg in manifest.diagnostics:
            print(f"warning [data]: {msg}", file=sys.stderr)
    else:
        d = cfg.data
        samples = generate_dataset(d.train_count, d.seed, replace(d.synthetic, image_size=cfg.net.image_size),
                                   d.test_count, d.annotation_ratio)
    for s in samples:
        if s.size != cfg.net.image_size:
            raise UsageError(f"dataset images are {s.size} but net.image_size is {cfg.net.image_size}")
    return TrainData([s for s in samples if s.split == "train"], [s for s in samples if s.split == "test"])


def _checkpoint(out: Path, stage: str, cfg: RunConfig):
    from .trainer import checkpoint_dir, load_checkpoint

    path = checkpoint_dir(out, stage)
    if not (path / "manifest.json").exists():
        raise UsageError(f"no {stage} checkpoint under {out}; run the earlier stages first")
    return load_checkpoint(path, cfg)


def _window_rows(state, cfg: RunConfig, metric: str, stages) -> dict:
    from .trainer import evaluate_last_epochs

    rows = {}
    for label, stage in stages:
        recs = [r for r in state.records(stage) if metric in r]
        if recs:
            rows[label] = evaluate_last_epochs(state, stage, min(cfg.curriculum.window, len(recs)), metric)
    return rows


def _report(out: Path, name: str, rows: dict, metric: str, extra_columns=None) -> str:
    label = {"pck": "PCK@0.2", "pckh": "PCKh@0.5"}[metric]
    table = format_table(rows, label, extra_columns)
    write_report(out / f"{name}.jsonl", rows, label)
    (out / f"{name}.txt").write_text(table + "\n")
    return table


STAGE_LABELS = (
    ("Baseline", "baseline"),
    ("MirrorNet (supervised)", "supervised"),
    ("MirrorNet (semi-supervised)", "semi"),
)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    d = cfg.data
    count = d.train_count if args.count is None else args.count
    test_count = d.test_count if args.test_count is None else args.test_count
    ratio = d.annotation_ratio if args.annotation_ratio is None else args.annotation_ratio
    if count < 0 or test_count < 0 or count + test_count == 0:
        raise UsageError("need a positive number of samples")
    synth = replace(d.synthetic, image_size=cfg.net.image_size)
    samples = generate_dataset(count, cfg.seed, synth, test_count, ratio)
    root = save_dataset(samples, Path(args.out) / "dataset", seed=cfg.seed, annotation_ratio=ratio)
    print(f"wrote {len(samples)} samples to {root}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .trainer import pretrain_components, train_baseline

    cfg = _config(args)
    data = _data(cfg, args)
    state = pretrain_components(cfg, data, out=args.out)
    if cfg.curriculum.baseline:
        state = train_baseline(state, cfg, data, out=args.out)
    rows = _window_rows(state, cfg, "pck", STAGE_LABELS[:1])
    if rows:
        print(_report(Path(args.out), "report_pretrain", rows, "pck"))
    return EXIT_OK


def cmd_train_supervised(args) -> int:
    from .trainer import train_supervised

    cfg = _config(args)
    data = _data(cfg, args)
    state = train_supervised(_checkpoint(Path(args.out), "pretrain", cfg), cfg, data, out=args.out)
    print(_report(Path(args.out), "report_supervised", _window_rows(state, cfg, "pck", STAGE_LABELS[1:2]), "pck"))
    return EXIT_OK


def cmd_train_semi(args) -> int:
    from .trainer import train_semisupervised

    cfg = _config(args)
    data = _data(cfg, args)
    state = train_semisupervised(_checkpoint(Path(args.out), "supervised_mid", cfg), cfg, data, out=args.out)
    print(_report(Path(args.out), "report_semi", _window_rows(state, cfg, "pck", STAGE_LABELS[2:]), "pck"))
    return EXIT_OK


def _read_predictions(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
        return {str(k): JointCoords(np.asarray(v, dtype=np.float64)[:, :2]) for k, v in raw.items()}
    except (OSError, ValueError, IndexError, TypeError) as exc:
        raise UsageError(f"cannot read predictions {path}: {exc}") from exc


def cmd_evaluate(args) -> int:
    from .trainer import checkpoint_dir, evaluate_predictions, evaluate_recognizer, load_checkpoint

    cfg = _config(args)
    out = Path(args.out)
    data = _data(cfg, args)
    tau = cfg.curriculum.eval_tau if args.metric == "pck" else 0.5
    rows: dict[str, EvalResult] = {}
    if args.predictions:
        preds = _read_predictions(args.predictions)
        missing = [s.sample_id for s in data.test if s.sample_id not in preds]
        if missing:
            raise UsageError(f"predictions lack {len(missing)} test ids, e.g. {missing[0]!r}")
        rows["predictions"] = evaluate_predictions([preds[s.sample_id] for s in data.test], data.test, tau, args.metric)
    else:
        for label, stage in STAGE_LABELS:
            path = checkpoint_dir(out, stage)
            if not (path / "manifest.json").exists():
                continue
            state = load_checkpoint(path, cfg)
            window = _window_rows(state, cfg, args.metric, [(label, stage)])
            rows.update(window)
            rows[f"{label} final"] = evaluate_recognizer(state.net, data.test, tau, args.metric)
        if not rows:
            raise UsageError(f"nothing to evaluate under {out}; train a stage or pass --predictions")
    print(_report(out, "report", rows, args.metric))
    return EXIT_OK


def _heatmap_overlay(image: np.ndarray, heatmaps: np.ndarray) -> np.ndarray:
    """Blend per-joint heatmaps, each in its own hue, over an (H, W, 3) image."""
    import cv2

    j = heatmaps.shape[0]
    hues = np.linspace(0, 179, j, endpoint=False).astype(np.uint8)
    colors = cv2.cvtColor(np.stack([hues, np.full(j, 255, np.uint8), np.full(j, 255, np.uint8)], -1)[None],
                          cv2.COLOR_HSV2RGB)[0] / 255.0
    h = np.clip(heatmaps, 0, None)
    h = h / np.maximum(h.reshape(j, -1).max(axis=1), 1e-8)[:, None, None]
    color = np.einsum("jhw,jc->hwc", h, colors)
    alpha = h.max(axis=0)[..., None]
    big = (image.shape[1], image.shape[0])
    color = cv2.resize(color.astype(np.float32), big, interpolation=cv2.INTER_NEAREST)
    alpha = cv2.resize(alpha.astype(np.float32), big, interpolation=cv2.INTER_NEAREST)[..., None]
    return np.clip((1 - alpha) * image * 0.6 + alpha * color, 0, 1)


def _png(array: np.ndarray, path: Path) -> None:
    from PIL import Image

    arr = np.round(np.clip(array, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB").save(path)


@torch.no_grad()
def cmd_reconstruct(args) -> int:
    import cv2

    from .gaussian import sample_reparam
    from .masking import split_foreground_background

    cfg = _config(args)
    out = Path(args.out)
    stage = args.stage
    if stage is None:
        from .trainer import checkpoint_dir

        done = [s for s in ("semi", "supervised", "pretrain") if (checkpoint_dir(out, s) / "manifest.json").exists()]
        if not done:
            raise UsageError(f"no checkpoint under {out}")
        stage = done[0]
    net = _checkpoint(out, stage, cfg).net
    data = _data(cfg, args)
    samples = (data.test or data.train)[: args.count]
    images = torch.from_numpy(np.stack([s.image for s in samples]))
    pose = net.recognize_pose(images).mean
    pair = split_foreground_background(images, pose, net)
    a = net.encode_appearance(pair.foreground, pose).mean
    g = net.encode_scene(pair.background, pose).mean
    recon = net.generate_image(pose, a, g).mean
    pose_recon = net.generate_pose(net.encode_primitive(pose).mean).mean
    target = out / "reconstructions"
    target.mkdir(parents=True, exist_ok=True)
    size = tuple(reversed(cfg.net.image_size))
    for i, s in enumerate(samples):
        img = s.image.transpose(1, 2, 0)
        mask = cv2.resize(pair.mask[i].numpy(), size, interpolation=cv2.INTER_NEAREST)
        panels = {
            "input": img,
            "image": recon[i].numpy().transpose(1, 2, 0),
            "pose": _heatmap_overlay(img, pose[i].numpy()),
            "pose_vae": _heatmap_overlay(img, pose_recon[i].numpy()),
            "mask": np.repeat(mask[..., None], 3, axis=-1),
        }
        for name, panel in panels.items():
            _png(panel, target / f"{s.sample_id}_{name}.png")
        _png(np.concatenate(list(panels.values()), axis=1), target / f"{s.sample_id}_strip.png")
    print(f"wrote {len(samples)} reconstructions from the {stage} checkpoint to {target}")
    return EXIT_OK


def _parse_compositions(text: str | None, batch: int) -> list[tuple[int, int]]:
    if text is None:
        comps = list(TOY_COMPOSITIONS)
    else:
        try:
            comps = [tuple(int(v) for v in item.split("+")) for item in text.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --compositions {text!r}") from exc
    for c in comps:
        if len(c) != 2 or sum(c) != batch or min(c) < 0:
            raise UsageError(f"composition {c} must be two counts summing to batch_size {batch}")
    return comps


def cmd_sweep_composition(args) -> int:
    from .trainer import evaluate_last_epochs, train_semisupervised

    cfg = _config(args)
    out = Path(args.out)
    data = _data(cfg, args)
    start = _checkpoint(out, "supervised_mid", cfg)
    rows, extra = {}, {}
    for n_ann, n_unann in _parse_compositions(args.compositions, cfg.curriculum.batch_size):
        run_cfg = build(RunConfig, {**cfg.to_dict(), "curriculum": {**cfg.to_dict()["curriculum"],
                                                                    "semi_composition": [n_ann, n_unann]}})
        stage = f"semi_{n_ann}+{n_unann}"
        state = train_semisupervised(start, run_cfg, data, out=out, stage=stage)
        label = f"{n_ann}+{n_unann}"
        rows[label] = evaluate_last_epochs(state, stage, min(cfg.curriculum.window, len(state.records(stage))))
        extra[label] = {"annotated": n_ann, "unannotated": n_unann}
    print(_report(out, "report_composition", rows, "pck", extra))
    return EXIT_OK


def cmd_verify(args) -> int:
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        raise UsageError(f"test suite not found at {tests}; verify runs from a source checkout")
    return subprocess.call([sys.executable, "-m", "pytest", str(tests), *args.pytest_args])


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train-supervised": cmd_train_supervised,
    "train-semi": cmd_train_semi,
    "evaluate": cmd_evaluate,
    "reconstruct": cmd_reconstruct,
    "sweep-composition": cmd_sweep_composition,
    "verify": cmd_verify,
}


def _failing_module(exc: BaseException) -> str:
    module = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename)
        if "mirrornet" in path.parts:
            module = path.stem
    return module


def run(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error [{_failing_module(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
