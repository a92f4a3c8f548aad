"""Acceptance suite: one recorded PASS/FAIL line per criterion.

The training criteria share session-scoped runs so that each configuration is
trained once. Expect roughly half an hour on one core.
"""

import hashlib
import json
import math
import statistics
import time

import numpy as np
import pytest

import gradcheck
from acceptance_log import record
from discrete_sac import benchmarks, cli, experiment
from discrete_sac.approximator import AlphaParam, MlpSpec, init_mlp
from discrete_sac.envs import SparseChainSpec, make_chain, make_gridworld, make_random_mdp
from discrete_sac.losses import (
    TARGET_RULES,
    critic_loss,
    critic_target,
    default_target_entropy,
    policy_loss,
    temperature_loss,
)
from discrete_sac.mdp import Batch
from discrete_sac.oracles import expected_start_q, monte_carlo_return, soft_policy_evaluation
from discrete_sac.trace import MetricTrace

pytestmark = pytest.mark.acceptance


# --- 1: gradients -------------------------------------------------------------


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    spec = MlpSpec(4, (8,), 3)
    nets = {k: init_mlp(spec, rng) for k in ("q1", "q2", "t1", "t2", "pi")}
    n = 8
    batch = Batch(
        np.eye(4)[rng.integers(0, 4, size=n)],
        rng.integers(0, 3, size=n),
        rng.normal(size=n),
        np.eye(4)[rng.integers(0, 4, size=n)],
        rng.random(n) < 0.25,
        rng.uniform(0, math.log(3), size=n),
    )
    start = time.perf_counter()
    errors = {}
    for rule in TARGET_RULES:
        y = critic_target(batch, nets["t1"], nets["t2"], nets["pi"], spec, spec, 0.3, 0.99, rule)
        for c in (None, 0.05):
            fn = lambda: critic_loss(nets["q1"], nets["t1"], spec, batch, y, c)
            errors[f"critic/{rule}/c={c}"] = gradcheck.check(fn, nets["q1"], rng)
    for beta in (0.0, 0.5):
        fn = lambda: policy_loss(nets["pi"], nets["q1"], nets["q2"], spec, spec, batch, 0.3, beta)
        errors[f"policy/beta={beta}"] = gradcheck.check(fn, nets["pi"], rng)
    ap = AlphaParam.create(0.3)
    errors["temperature"] = gradcheck.check(lambda: temperature_loss(ap, batch, nets["pi"], spec, 0.5), ap.params, rng)
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and elapsed < 60 and len(errors) == 9
    record(1, ok, f"{len(errors)} losses, worst rel err {errors[worst]:.2e} ({worst}), {elapsed:.1f}s")
    assert ok, errors


# --- 2: oracle agreement ------------------------------------------------------


def _oracle_cases():
    chain_env, chain = make_chain(SparseChainSpec(length=10, slip_prob=0.1, max_episode_steps=10_000), seed=0)
    yield "chain", chain_env, chain
    grid_env, grid = make_gridworld(5, 5, max_steps=10_000, seed=0)
    yield "grid5x5", grid_env, grid
    for k in range(20):
        mdp, env = make_random_mdp(6, 3, 0.3, seed=k)
        yield f"random{k}", env, mdp


def test_soft_evaluation_matches_soft_monte_carlo():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, worst_case, count, misses = 0.0, "", 0, []
    for name, env, mdp in _oracle_cases():
        pi = rng.dirichlet(np.ones(mdp.num_actions), size=mdp.num_states)
        for alpha in (0.01, 0.2, 1.0):
            truth = expected_start_q(mdp, pi, soft_policy_evaluation(mdp, pi, alpha).q_true)
            mc = monte_carlo_return(env, pi, 20_000, mdp.gamma, soft=True, alpha=alpha, seed=count)
            z = abs(mc.mean - truth) / mc.stderr
            count += 1
            if z > worst:
                worst, worst_case = z, f"{name}/alpha={alpha}"
            if z > 3:
                misses.append(f"{name}/alpha={alpha} z={z:.2f}")
    elapsed = time.perf_counter() - start
    ok = not misses and elapsed < 300
    record(2, ok, f"{count} comparisons, worst |z| {worst:.2f} ({worst_case}), {elapsed:.0f}s" + (f", misses {misses}" if misses else ""))
    assert ok, misses


# --- shared training runs -----------------------------------------------------


class Runs:
    def __init__(self, root):
        self.root = root
        self.cache = {}

    def traces(self, env: str, variant: str) -> list[MetricTrace]:
        key = (env, variant)
        if key not in self.cache:
            make = benchmarks.chain_config if env == "chain" else benchmarks.grid_config
            cfg = make(variant, out=str(self.root / env / variant))
            self.cache[key] = (cfg, [MetricTrace.read(d) for d in experiment.run(cfg)])
        return self.cache[key][1]

    def total_steps(self, env: str, variant: str) -> int:
        self.traces(env, variant)
        return self.cache[(env, variant)][0].total_env_steps


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance_runs"))


def _final_bias(runs, variant):
    total = runs.total_steps("chain", variant)
    return [benchmarks.final_window_mean(t, "bias_mean", 0.25, total) for t in runs.traces("chain", variant)]


def _fmt(values, spec="+.4f"):
    return "[" + ", ".join(format(v, spec) for v in values) + "]"


# --- 3, 4: estimation bias on the sparse chain --------------------------------


def test_clipped_min_underestimates_and_average_clip_shrinks_bias(runs):
    vanilla = _final_bias(runs, "vanilla")
    averaged = _final_bias(runs, "avg_qclip")
    negative = sum(b < 0 for b in vanilla)
    smaller = sum(abs(a) < abs(v) for a, v in zip(averaged, vanilla))
    ok = negative >= 4 and smaller >= 4
    record(3, ok, f"clipped_min bias {_fmt(vanilla)} negative {negative}/5; average+clip {_fmt(averaged)} smaller {smaller}/5")
    assert ok


def test_single_critic_overestimates(runs):
    single = _final_bias(runs, "single_q")
    positive = sum(b > 0 for b in single)
    ok = positive >= 4
    record(4, ok, f"single-critic bias {_fmt(single)} positive {positive}/5")
    assert ok


# --- 5: entropy penalty on the gridworld ---------------------------------------


def test_entropy_penalty_stabilises_entropy(runs):
    base = runs.traces("grid", "vanilla")
    pen = runs.traces("grid", "entropy_penalty")
    var0 = [benchmarks.windowed_variance(t, "entropy_mean", 10_000) for t in base]
    var5 = [benchmarks.windowed_variance(t, "entropy_mean", 10_000) for t in pen]
    ret0 = [experiment.final_score(t) for t in base]
    ret5 = [experiment.final_score(t) for t in pen]
    calmer = sum(b < a for a, b in zip(var0, var5))
    no_worse = sum(b >= a for a, b in zip(ret0, ret5))
    ok = calmer >= 4 and no_worse >= 3
    record(
        5,
        ok,
        f"entropy variance beta=0 {_fmt(var0, '.2e')} vs beta=0.5 {_fmt(var5, '.2e')} lower {calmer}/5; "
        f"final return {_fmt(ret0)} vs {_fmt(ret5)} no worse {no_worse}/5",
    )
    assert ok


# --- 6: full method vs vanilla ------------------------------------------------


def _effect(a, b):
    pooled = math.sqrt((statistics.pvariance(a) + statistics.pvariance(b)) / 2)
    diff = statistics.fmean(b) - statistics.fmean(a)
    return diff, (diff / pooled if pooled > 0 else 0.0)


def test_full_method_not_worse_than_vanilla(runs):
    parts, ok = [], True
    for env in ("chain", "grid"):
        van = [experiment.final_score(t) for t in runs.traces(env, "vanilla")]
        full = [experiment.final_score(t) for t in runs.traces(env, "full")]
        diff, d = _effect(van, full)
        ok &= statistics.fmean(full) >= statistics.fmean(van)
        parts.append(f"{env}: vanilla {statistics.fmean(van):.3f} full {statistics.fmean(full):.3f} diff {diff:+.3f} d={d:+.2f}")
    record(6, ok, "; ".join(parts))
    assert ok


# --- 7, 8: closed-form checks -------------------------------------------------


def test_default_target_entropy_formula():
    errs = {n: abs(default_target_entropy(n) - 0.98 * math.log(n)) for n in (2, 4, 18)}
    ok = max(errs.values()) <= 1e-12
    record(7, ok, "max |err| " + f"{max(errs.values()):.1e} for n in (2, 4, 18)")
    assert ok


def test_clip_identity_and_branch_coincidence():
    rng = np.random.default_rng(8)
    spec = MlpSpec(5, (8,), 3)
    worst_inf, worst_eq = 0.0, 0.0
    for _ in range(50):
        q, t = init_mlp(spec, rng), init_mlp(spec, rng)
        n = int(rng.integers(1, 33))
        batch = Batch(
            rng.normal(size=(n, 5)),
            rng.integers(0, 3, size=n),
            rng.normal(size=n),
            rng.normal(size=(n, 5)),
            rng.random(n) < 0.3,
            np.full(n, np.nan),
        )
        y = rng.normal(size=n)
        plain = float(critic_loss(q, t, spec, batch, y, None).value)
        worst_inf = max(worst_inf, abs(float(critic_loss(q, t, spec, batch, y, 1e9).value) - plain))
        for c in (1e-3, 0.5, 5.0):
            worst_eq = max(worst_eq, abs(float(critic_loss(q, q, spec, batch, y, c).value) - plain))
    ok = worst_inf <= 1e-9 and worst_eq == 0.0
    record(8, ok, f"c=1e9 max |diff| {worst_inf:.1e}; Q=Q' max |diff| {worst_eq:.1e}")
    assert ok


# --- 9, 10: runner determinism and sweep reproducibility ---------------------


def _short_chain_doc(out, steps=3000, seeds=(0,)):
    cfg = benchmarks.chain_config("full", seeds=seeds, steps=steps, out=str(out)).to_json()
    cfg["agent"]["warmup_steps"] = 500
    cfg["eval_interval"] = 500
    cfg["diagnostics"] = {"bias_interval": 1000, "similarity_interval": 1000, "similarity_budget": 500}
    return cfg


def test_run_is_byte_identical(tmp_path):
    digests = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(_short_chain_doc(tmp_path / name, seeds=(0, 1))))
        assert cli.main(["run", str(path)]) == 0
        digests.append([hashlib.sha256((tmp_path / name / f"seed_{s}" / "metrics.csv").read_bytes()).hexdigest() for s in (0, 1)])
    ok = digests[0] == digests[1]
    record(9, ok, f"metrics.csv sha256 {digests[0][0][:12]}.. / {digests[0][1][:12]}.. identical across runs: {ok}")
    assert ok


def test_beta_clip_sweep_summary_reproducible(tmp_path):
    doc = _short_chain_doc(tmp_path / "sweep", steps=2000, seeds=(0, 1))
    doc["diagnostics"] = {}
    cfg_path, grid_path = tmp_path / "base.json", tmp_path / "grid.json"
    cfg_path.write_text(json.dumps(doc))
    grid = {"agent.variant.entropy_penalty_beta": [0.1, 0.2, 0.5, 1.0], "agent.variant.q_clip": [0.5, 1.0, 2.0, 5.0]}
    grid_path.write_text(json.dumps(grid))
    assert cli.main(["sweep", str(cfg_path), "--grid", str(grid_path)]) == 0
    rows = experiment.read_summary(tmp_path / "sweep" / "summary.csv")
    worst = 0.0
    seen = set()
    for row in rows:
        seen.add(row["params"])
        finals = [experiment.final_score(MetricTrace.read(tmp_path / "sweep" / row["cell"] / f"seed_{s}")) for s in (0, 1)]
        worst = max(worst, abs(statistics.fmean(finals) - row["final_score_mean"]), abs(statistics.pstdev(finals) - row["final_score_std"]))
    ok = len(rows) == 16 and len(seen) == 16 and worst <= 1e-9
    record(10, ok, f"{len(rows)} cells, recomputed max |diff| {worst:.1e}")
    assert ok
