"""End-to-end synthetic experiment: data, all three stages, and the PCK report.

    python scripts/toy_experiment.py [--out runs/toy] [--config configs/toy.yaml] [--set key=value ...]

Each stage resumes from its checkpoint, so an interrupted run can simply be
started again with the same arguments.
"""

import argparse
import sys
import time
from pathlib import Path

from mirrornet.cli import EXIT_OK, run


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "toy.yaml"))
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--reconstruct", type=int, default=8, help="reconstruction figures to write (0 to skip)")
    args = p.parse_args()

    common = ["--config", args.config, "--out", args.out]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    for o in args.overrides:
        common += ["--set", o]
    data = ["--data", str(Path(args.out) / "dataset")]

    start = time.perf_counter()
    steps = [["gen-data", *common]]
    steps += [[cmd, *common, *data] for cmd in ("pretrain", "train-supervised", "train-semi", "evaluate")]
    if args.reconstruct:
        steps.append(["reconstruct", *common, *data, "--count", str(args.reconstruct)])
    for argv in steps:
        print(f"== {argv[0]}", flush=True)
        code = run(argv)
        if code != EXIT_OK:
            return code
    print(f"finished in {(time.perf_counter() - start) / 60:.1f} min; report in {Path(args.out) / 'report.txt'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
