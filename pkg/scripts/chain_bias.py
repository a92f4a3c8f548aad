"""Estimation bias of clipped-min, single-critic and average+clip targets on the sparse chain.

    python3 scripts/chain_bias.py --out runs/chain_bias --jobs 4
"""

import argparse
from pathlib import Path

from discrete_sac import benchmarks, experiment
from discrete_sac.trace import MetricTrace


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/chain_bias")
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()

    for variant in ("vanilla", "single_q", "avg_qclip"):
        cfg = benchmarks.chain_config(variant, seeds=args.seeds, steps=args.steps, out=str(Path(args.out) / variant))
        dirs = experiment.run(cfg, jobs=args.jobs)
        biases = [benchmarks.final_window_mean(MetricTrace.read(d), "bias_mean", 0.25, args.steps) for d in dirs]
        print(f"{variant:10s} final-quarter bias " + " ".join(f"{b:+.4f}" for b in biases))


if __name__ == "__main__":
    main()
