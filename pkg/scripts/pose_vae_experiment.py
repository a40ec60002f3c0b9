"""Pretrain the pose VAE alone and report how well it reconstructs held-out poses.

    python scripts/pose_vae_experiment.py [--config configs/pose_vae.yaml] [--out runs/pose_vae]
"""

import argparse
import time
from pathlib import Path

from mirrornet.config import load_config
from mirrornet.data import generate_dataset
from mirrornet.trainer import TrainData, pose_vae_hit_rate, pretrain_components


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "pose_vae.yaml"))
    p.add_argument("--out", default=None, help="checkpoint directory (default: train in memory)")
    p.add_argument("--set", dest="overrides", action="append", default=[])
    args = p.parse_args()

    cfg = load_config(args.config, args.overrides)
    d = cfg.data
    samples = generate_dataset(d.train_count, d.seed, d.synthetic, d.test_count, d.annotation_ratio)
    data = TrainData([s for s in samples if s.split == "train"], [s for s in samples if s.split == "test"])
    start = time.perf_counter()
    state = pretrain_components(cfg, data, out=args.out, parts=("pose_vae",))
    rate, joints = pose_vae_hit_rate(state.net, data.test, cfg)
    for r in state.records("pretrain", "pose_vae"):
        print(f"epoch {r['epoch']:3d}  loss {r['loss']:.2f}")
    print(f"{rate:.2%} of {joints} visible joints within 2 cells ({time.perf_counter() - start:.0f} s)")


if __name__ == "__main__":
    main()
