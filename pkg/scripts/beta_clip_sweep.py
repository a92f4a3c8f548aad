"""Sweep entropy-penalty beta and Q-clip c on the chain with the average target."""

import argparse

from discrete_sac import benchmarks, experiment

GRID = {
    "agent.variant.entropy_penalty_beta": [0.1, 0.2, 0.5, 1.0],
    "agent.variant.q_clip": [0.5, 1.0, 2.0, 5.0],
}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/beta_clip_sweep")
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()

    doc = benchmarks.chain_config("full", seeds=args.seeds, steps=args.steps, out=args.out).to_json()
    doc["diagnostics"] = {}
    for row in experiment.sweep(doc, GRID, output_dir=args.out, jobs=args.jobs):
        print(f"{row['cell']}  {row['params']}  {row['final_score_mean']:+.3f} +- {row['final_score_std']:.3f}")


if __name__ == "__main__":
    main()
