"""Desk-scale benchmark configurations and the trace statistics used to compare variants."""

from __future__ import annotations

import copy
from typing import Optional

import numpy as np

from discrete_sac.config import RunConfig, parse_run_config
from discrete_sac.losses import LossVariant
from discrete_sac.trace import MetricTrace

VARIANTS = {
    "vanilla": LossVariant("clipped_min"),
    "single_q": LossVariant("single"),
    "avg_qclip": LossVariant("average", q_clip=0.5),
    "entropy_penalty": LossVariant("clipped_min", entropy_penalty=0.5),
    "full": LossVariant("average", q_clip=0.5, entropy_penalty=0.5),
}

CHAIN_PARAMS = {"N": 15, "step_penalty": -0.01, "goal_reward": 1.0, "slip_prob": 0.1, "max_episode_steps": 1000}
GRID_PARAMS = {"width": 5, "height": 5, "step_penalty": -0.01, "max_steps": 200}

# Small initial temperature and a low entropy floor: with alpha starting at 1
# the soft bonus dwarfs the 1.0 goal reward and the agent never reaches it.
AGENT = {
    "hidden_dims": [64],
    "batch_size": 64,
    "warmup_steps": 2000,
    "initial_alpha": 0.05,
    "target_entropy": 0.3,
    "lr_critic": 1e-3,
    "lr_policy": 1e-3,
    "lr_alpha": 1e-3,
    "tau": 0.005,
    "gamma": 0.99,
}


def _doc(env_id: str, params: dict, variant: LossVariant, seeds, steps: int, eval_interval: int, bias: bool, out: str) -> dict:
    agent = copy.deepcopy(AGENT)
    agent["variant"] = variant.to_json()
    return {
        "env": {"id": env_id, "params": copy.deepcopy(params)},
        "agent": agent,
        "total_env_steps": steps,
        "eval_interval": eval_interval,
        "eval_episodes": 10,
        "diagnostics": {"bias_interval": eval_interval if bias else 0},
        "output_dir": out,
        "seeds": list(seeds),
    }


def chain_config(variant: str | LossVariant, seeds=(0, 1, 2, 3, 4), steps: int = 50_000, out: str = "runs/chain") -> RunConfig:
    v = VARIANTS[variant] if isinstance(variant, str) else variant
    return parse_run_config(_doc("chain", CHAIN_PARAMS, v, seeds, steps, 1000, True, out))


def grid_config(variant: str | LossVariant, seeds=(0, 1, 2, 3, 4), steps: int = 30_000, out: str = "runs/grid") -> RunConfig:
    v = VARIANTS[variant] if isinstance(variant, str) else variant
    return parse_run_config(_doc("gridworld", GRID_PARAMS, v, seeds, steps, 1000, False, out))


def _measured(trace: MetricTrace, column: str) -> tuple[np.ndarray, np.ndarray]:
    pairs = [(r["step"], r[column]) for r in trace.rows if r[column] is not None]
    if not pairs:
        raise ValueError(f"trace has no {column!r} measurements")
    steps, values = zip(*pairs)
    return np.array(steps), np.array(values, dtype=np.float64)


def final_window_mean(trace: MetricTrace, column: str, fraction: float = 0.25, total_steps: Optional[int] = None) -> float:
    """Mean of ``column`` over rows in the last ``fraction`` of training."""
    steps, values = _measured(trace, column)
    total = total_steps if total_steps is not None else int(steps[-1])
    keep = steps > (1.0 - fraction) * total
    if not keep.any():
        raise ValueError("no measurements in the final window")
    return float(values[keep].mean())


def windowed_variance(trace: MetricTrace, column: str, window: int = 10_000) -> float:
    """Average over consecutive ``window``-step blocks of the variance of ``column`` inside each block."""
    steps, values = _measured(trace, column)
    block = (steps - 1) // window
    variances = [values[block == b].var() for b in np.unique(block) if (block == b).sum() > 1]
    if not variances:
        raise ValueError("no window holds two or more measurements")
    return float(np.mean(variances))
