#!/usr/bin/env python3
"""Run the full synthetic pipeline end to end in a scratch directory.

synth -> reassign -> features -> train -> eval, with a small configuration
that finishes in a couple of minutes on a laptop CPU.
"""
import argparse
import json
import os
import sys

from panograph import cli

TRAIN_CONFIG = """\
epochs = 25
warmup_epochs = 5
base_lr = 0.05
batch_size = 16
seed = 0
channel_divisor = 4
inter_variant = pairwise
"""


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/pipeline")
    parser.add_argument("--classes", type=int, default=8)
    parser.add_argument("--per-class", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    data = os.path.join(args.workdir, "data")
    out = os.path.join(args.workdir, "run")
    os.makedirs(args.workdir, exist_ok=True)
    cfg_path = os.path.join(args.workdir, "train.cfg")
    with open(cfg_path, "w") as fh:
        fh.write(TRAIN_CONFIG)

    stages = [
        ["synth", "--classes", str(args.classes), "--per-class", str(args.per_class),
         "--persons", "3", "--joints", "5", "--objects", "1", "--frames", "16",
         "--seed", str(args.seed), "--out", data],
        ["reassign", "--data", data],
        ["features", "--data", data],
        ["train", "--config", cfg_path, "--data", data, "--out", out],
        ["eval", "--ckpt", os.path.join(out, "ckpt_best.pgt"), "--data", data],
    ]
    for argv in stages:
        print(f"== panograph {' '.join(argv)}")
        code = cli.main(argv)
        if code != 0:
            print(f"stage {argv[0]} failed with exit code {code}", file=sys.stderr)
            return code

    with open(os.path.join(out, "metrics.jsonl")) as fh:
        last = json.loads(fh.read().strip().splitlines()[-1])
    print(f"final epoch: train_mca={last['train_mca']:.3f} val_mca={last['val_mca']:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
