"""Full method against vanilla discrete SAC on the chain and the gridworld, then a normalized report."""

import argparse
import json
from pathlib import Path

from discrete_sac import benchmarks, experiment


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--baselines", help='JSON file {env_id: {"random": x, "reference": y}}')
    args = p.parse_args()

    root = Path(args.out)
    dirs = []
    for env, make in (("chain", benchmarks.chain_config), ("grid", benchmarks.grid_config)):
        for variant in ("vanilla", "avg_qclip", "entropy_penalty", "full"):
            out = root / env / variant
            experiment.run(make(variant, seeds=args.seeds, out=str(out)), jobs=args.jobs)
            dirs.append(str(out))
    baselines = json.loads(Path(args.baselines).read_text()) if args.baselines else None
    result = experiment.report(dirs, baselines, str(root / "report"))
    for g in result["groups"]:
        print(f"{g['env_id']:10s} {g['variant']:16s} {g['final_mean']:+.3f} +- {g['final_std']:.3f}")
    print(f"report written to {root / 'report'}")


if __name__ == "__main__":
    main()
