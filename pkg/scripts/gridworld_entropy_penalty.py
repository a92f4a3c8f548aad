"""Entropy drift with and without the entropy penalty on the 5x5 gridworld.

Prints, per seed, the mean within-10k-step variance of the policy entropy
and the final greedy evaluation return.
"""

import argparse
from pathlib import Path

from discrete_sac import benchmarks, experiment
from discrete_sac.trace import MetricTrace


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/grid_entropy")
    p.add_argument("--steps", type=int, default=30_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()

    for variant in ("vanilla", "entropy_penalty"):
        cfg = benchmarks.grid_config(variant, seeds=args.seeds, steps=args.steps, out=str(Path(args.out) / variant))
        for seed, d in zip(args.seeds, experiment.run(cfg, jobs=args.jobs)):
            trace = MetricTrace.read(d)
            var = benchmarks.windowed_variance(trace, "entropy_mean", 10_000)
            print(f"{variant:16s} seed {seed}  entropy var {var:.3e}  final return {experiment.final_score(trace):+.3f}")


if __name__ == "__main__":
    main()
