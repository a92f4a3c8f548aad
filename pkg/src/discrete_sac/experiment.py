"""Training runs, grid sweeps and cross-run reports written to disk."""

from __future__ import annotations

import csv
import io
import itertools
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from discrete_sac import __version__
from discrete_sac.agent import DiscreteSAC, derive_seed
from discrete_sac.approximator import save_checkpoint
from discrete_sac.config import ConfigError, RunConfig, merged_with_defaults, parse_run_config, set_path
from discrete_sac.envs import make_env
from discrete_sac.oracles import measure_bias, state_distribution_similarity, visitation_distribution
from discrete_sac.trace import MetricTrace

LOSS_KEYS = ("critic_loss_1", "critic_loss_2", "policy_loss", "mean_y")


def variant_label(cfg: RunConfig) -> str:
    v = cfg.agent.variant
    if v.target_rule == "clipped_min" and v.q_clip is None and not v.entropy_penalty:
        return "vanilla"
    if v.target_rule == "single" and v.q_clip is None and not v.entropy_penalty:
        return "single_q"
    if v.target_rule == "clipped_min" and v.q_clip is None and v.entropy_penalty:
        return "entropy_penalty"
    if v.target_rule == "average" and v.q_clip is not None and not v.entropy_penalty:
        return "avg_qclip"
    if v.target_rule == "average" and v.q_clip is not None and v.entropy_penalty:
        return "full"
    parts = [v.target_rule]
    if v.q_clip is not None:
        parts.append(f"c{v.q_clip:g}")
    if v.entropy_penalty:
        parts.append(f"b{v.entropy_penalty:g}")
    return "_".join(parts)


def train_seed(cfg: RunConfig, seed: int, out_dir: Optional[Path] = None) -> MetricTrace:
    """Train one seed, evaluating every ``eval_interval`` env steps.

    Writes ``metrics.csv``, ``timing.csv``, ``manifest.json`` and a final
    checkpoint into ``out_dir`` when given.
    """
    env, mdp = make_env(cfg.env_id, cfg.env_params, seed=derive_seed(seed, "env"))
    agent = DiscreteSAC(replace(cfg.agent, seed=seed), env.observation_dim, env.num_actions)
    trace = MetricTrace()
    diag = cfg.diagnostics
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_manifest(out_dir, cfg, seed)
    start = time.perf_counter()
    pending: dict[str, list[float]] = {}
    prev_hist = None
    for step in range(1, cfg.total_env_steps + 1):
        _, metrics = agent.step(env)
        if metrics:
            for k, v in metrics.items():
                pending.setdefault(k, []).append(v)
        if step % cfg.eval_interval:
            continue
        score_mean, returns = agent.evaluate(env, cfg.eval_episodes, seed=derive_seed(seed, f"eval/{step}"))
        row = {"step": step, "score_mean": score_mean, "score_std": float(np.std(returns)), "alpha": agent.alpha}
        for k in ("entropy_mean", *LOSS_KEYS):
            row[k] = float(np.mean(pending[k])) if pending.get(k) else None
        pending = {}
        if diag.bias_interval and step % diag.bias_interval == 0:
            visitation = "uniform" if diag.bias_visitation == "uniform" else None
            rep = measure_bias(agent, mdp, visitation=visitation, seed=derive_seed(seed, f"visit/{step}"))
            row.update(q_estimate_mean=rep.q_estimate_mean, q_true_mean=rep.q_true_mean, bias_mean=rep.mean_bias)
        if diag.similarity_interval and step % diag.similarity_interval == 0:
            hist = visitation_distribution(
                mdp,
                agent.snapshot().table(mdp.num_states),
                diag.similarity_budget,
                derive_seed(seed, f"similarity/{step}"),
                env.max_episode_steps,
            )
            if prev_hist is not None:
                row["state_cosine_similarity"] = state_distribution_similarity(prev_hist, hist)
            prev_hist = hist
        trace.append(row, wall_time=time.perf_counter() - start)
    if out_dir is not None:
        trace.write(out_dir)
        save_checkpoint(
            out_dir / "checkpoint",
            {
                "policy": agent.policy,
                "critic_1": agent.critic_1,
                "critic_2": agent.critic_2,
                "target_1": agent.target_1,
                "target_2": agent.target_2,
                "log_alpha": agent.log_alpha.params,
            },
            {"critic": agent.critic_spec.to_json(), "policy": agent.policy_spec.to_json(), "env_steps": agent.env_steps},
        )
    return trace


def _write_manifest(out_dir: Path, cfg: RunConfig, seed: int) -> None:
    manifest = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "version": f"discrete-sac {__version__}",
        "env_id": cfg.env_id,
        "variant": variant_label(cfg),
        "config": cfg.to_json(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _seed_job(args):
    doc, seed, out_dir = args
    train_seed(parse_run_config(doc), seed, Path(out_dir))
    return str(out_dir)


def run(cfg: RunConfig, output_dir: Optional[str] = None, jobs: int = 1) -> list[Path]:
    """Train every seed of ``cfg``; returns the per-seed artifact directories.

    A zero-step run still writes manifests and (empty) traces.
    """
    root = Path(output_dir or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    dirs = [root / f"seed_{s}" for s in cfg.seeds]
    jobs_args = [(cfg.to_json(), s, str(d)) for s, d in zip(cfg.seeds, dirs)]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_seed_job, jobs_args))
    else:
        for a in jobs_args:
            _seed_job(a)
    return dirs


def final_score(trace: MetricTrace) -> float:
    scores = [s for s in trace.column("score_mean") if s is not None]
    if not scores:
        raise ValueError("trace has no evaluation rows")
    return scores[-1]


SUMMARY_HEADER = ("cell", "params", "num_seeds", "final_score_mean", "final_score_std")


def sweep(base_doc: dict, grid: dict[str, list], output_dir: Optional[str] = None, jobs: int = 1) -> list[dict]:
    """Run the cartesian product of ``grid`` (dotted config path -> values).

    Writes ``summary.csv`` with the mean and population std across seeds of
    each cell's final evaluation score.
    """
    canonical = merged_with_defaults(base_doc)
    for key, values in grid.items():
        set_path(canonical, key, None, must_exist=True)
        if not isinstance(values, list) or not values:
            raise ConfigError(key, "grid values must be a nonempty list")
    root = Path(output_dir or canonical["output_dir"])
    keys = list(grid)
    summary = []
    for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        doc = canonical
        for k, v in zip(keys, combo):
            doc = set_path(doc, k, v)
        cell_name = f"cell_{i:03d}"
        cfg = parse_run_config(set_path(doc, "output_dir", str(root / cell_name)))
        dirs = run(cfg, jobs=jobs)
        finals = [final_score(MetricTrace.read(d)) for d in dirs] if cfg.total_env_steps else []
        summary.append(
            {
                "cell": cell_name,
                "params": json.dumps(dict(zip(keys, combo)), sort_keys=True),
                "num_seeds": len(dirs),
                "final_score_mean": float(np.mean(finals)) if finals else None,
                "final_score_std": float(np.std(finals)) if finals else None,
            }
        )
    root.mkdir(parents=True, exist_ok=True)
    (root / "summary.csv").write_text(_summary_csv(summary))
    return summary


def _summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow(["" if r[h] is None else (repr(r[h]) if isinstance(r[h], float) else r[h]) for h in SUMMARY_HEADER])
    return buf.getvalue()


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["num_seeds"] = int(r["num_seeds"])
        for k in ("final_score_mean", "final_score_std"):
            r[k] = float(r[k]) if r[k] else None
    return rows


# --- reporting -----------------------------------------------------------


class BaselineMissing(KeyError):
    pass


def find_runs(path: str | Path) -> list[Path]:
    """Per-seed artifact directories (those holding a manifest) under ``path``."""
    path = Path(path)
    if (path / "manifest.json").exists():
        return [path]
    found = sorted(p.parent for p in path.rglob("manifest.json"))
    if not found:
        raise FileNotFoundError(f"no run manifests under {path}")
    return found


def load_run(run_dir: Path) -> tuple[dict, MetricTrace]:
    manifest = json.loads((run_dir / "manifest.json").read_text())
    return manifest, MetricTrace.read(run_dir)


def report(run_dirs: list[str], baselines: Optional[dict] = None, out_dir: Optional[str] = None) -> dict:
    """Compare groups of runs (one group per argument directory).

    For each group: final score mean/std across seeds and a step-aligned
    mean/std score curve. With ``baselines`` ({env_id: {"random", "reference"}})
    also normalized final scores and their mean/median across environments
    per variant. Writes ``report.md`` and ``report.csv`` to ``out_dir``.
    """
    from discrete_sac.oracles import normalized_score

    groups = []
    for d in run_dirs:
        runs = [load_run(p) for p in find_runs(d)]
        manifests = [m for m, _ in runs]
        env_ids = {m["env_id"] for m in manifests}
        if len(env_ids) != 1:
            raise ValueError(f"{d} mixes environments {sorted(env_ids)}")
        finals = [final_score(t) for _, t in runs]
        steps = sorted(set.intersection(*(set(r["step"] for r in t.rows if r["score_mean"] is not None) for _, t in runs)))
        curve = []
        for s in steps:
            vals = [next(r["score_mean"] for r in t.rows if r["step"] == s) for _, t in runs]
            curve.append((s, float(np.mean(vals)), float(np.std(vals))))
        group = {
            "dir": str(d),
            "env_id": env_ids.pop(),
            "variant": manifests[0].get("variant", "unknown"),
            "num_runs": len(runs),
            "final_mean": float(np.mean(finals)),
            "final_std": float(np.std(finals)),
            "curve": curve,
        }
        if baselines is not None:
            if group["env_id"] not in baselines:
                raise BaselineMissing(f"no baseline entry for environment {group['env_id']!r}")
            b = baselines[group["env_id"]]
            group["normalized_final"] = normalized_score(group["final_mean"], b["random"], b["reference"])
        groups.append(group)

    aggregates = {}
    if baselines is not None:
        by_variant: dict[str, list[float]] = {}
        for g in groups:
            by_variant.setdefault(g["variant"], []).append(g["normalized_final"])
        aggregates = {
            v: {"mean": float(np.mean(x)), "median": float(statistics.median(x)), "num_envs": len(x)}
            for v, x in by_variant.items()
        }
    result = {"groups": groups, "normalized": aggregates}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(_report_csv(groups))
        (out / "report.md").write_text(_report_md(groups, aggregates))
    return result


def _report_csv(groups: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("dir", "env_id", "variant", "num_runs", "step", "score_mean", "score_std"))
    for g in groups:
        for step, m, s in g["curve"]:
            w.writerow((g["dir"], g["env_id"], g["variant"], g["num_runs"], step, repr(m), repr(s)))
    return buf.getvalue()


def _report_md(groups: list[dict], aggregates: dict) -> str:
    lines = ["| run | env | variant | seeds | final score | normalized |", "|---|---|---|---|---|---|"]
    for g in groups:
        norm = f"{g['normalized_final']:.4f}" if "normalized_final" in g else "-"
        lines.append(
            f"| {g['dir']} | {g['env_id']} | {g['variant']} | {g['num_runs']} "
            f"| {g['final_mean']:.4f} ± {g['final_std']:.4f} | {norm} |"
        )
    if aggregates:
        lines += ["", "| variant | mean normalized | median normalized | envs |", "|---|---|---|---|"]
        for v, a in sorted(aggregates.items()):
            lines.append(f"| {v} | {a['mean']:.4f} | {a['median']:.4f} | {a['num_envs']} |")
    return "\n".join(lines) + "\n"
