"""Mini-batch composition study: semi-supervised training from the mid-stage
supervised checkpoint for each (annotated, unannotated) split of a batch.

    python scripts/composition_sweep.py --out runs/toy [--compositions 4+12,8+8,12+4]

Run ``scripts/toy_experiment.py`` (or ``pretrain`` and ``train-supervised``)
on the same ``--out`` first.
"""

import argparse
import sys
from pathlib import Path

from mirrornet.cli import run


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "toy.yaml"))
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--compositions", default=None, help="comma list like 4+12,8+8 (default: all five)")
    p.add_argument("--set", dest="overrides", action="append", default=[])
    args = p.parse_args()

    argv = ["sweep-composition", "--config", args.config, "--out", args.out]
    dataset = Path(args.out) / "dataset"
    if dataset.exists():
        argv += ["--data", str(dataset)]
    if args.compositions:
        argv += ["--compositions", args.compositions]
    for o in args.overrides:
        argv += ["--set", o]
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
