"""Ground-truth values for tabular MDPs and the diagnostics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from discrete_sac.approximator import mlp_apply
from discrete_sac.losses import combine_q
from discrete_sac.mdp import CategoricalDistribution, TabularMDP, entropy_of_probs, log_softmax

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 1_000_000


class OracleConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def policy_table(policy) -> np.ndarray:
    """Accept an (S, A) array or a sequence of per-state distributions."""
    if isinstance(policy, np.ndarray):
        table = policy.astype(np.float64)
    else:
        table = np.array([p.probs if isinstance(p, CategoricalDistribution) else p for p in policy], dtype=np.float64)
    if table.ndim != 2 or np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("policy must be a row-stochastic (S, A) table")
    return table


def _neg_xlogx(pi: np.ndarray) -> np.ndarray:
    return entropy_of_probs(pi)


@dataclass(frozen=True)
class SoftEvalResult:
    q_true: np.ndarray
    v_true: np.ndarray
    iterations: int
    residual: float

    def to_json(self) -> dict:
        return {
            "q_true": self.q_true.tolist(),
            "v_true": self.v_true.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
        }


def soft_policy_evaluation(
    mdp: TabularMDP,
    policy,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SoftEvalResult:
    """Iterate Q <- R + gamma P V with V(s) = sum_a pi (Q - alpha ln pi) to a fixed point.

    Terminal states have V = 0.
    """
    pi = policy_table(policy)
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"policy shape {pi.shape} does not match MDP ({mdp.num_states}, {mdp.num_actions})")
    live = ~mdp.terminal_mask
    bonus = alpha * _neg_xlogx(pi) * live
    q = np.zeros((mdp.num_states, mdp.num_actions))
    residual = math.inf
    for it in range(1, max_iter + 1):
        v = ((pi * q).sum(axis=1) + bonus) * live
        q_new = mdp.reward + mdp.gamma * mdp.transition @ v
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        if residual < tol:
            v = ((pi * q).sum(axis=1) + bonus) * live
            return SoftEvalResult(q, v, it, residual)
    raise OracleConvergenceError(f"soft policy evaluation did not converge in {max_iter} iterations", residual)


def _soft_max(q: np.ndarray, alpha: float) -> np.ndarray:
    m = q.max(axis=1)
    if alpha == 0:
        return m
    return m + alpha * np.log(np.exp((q - m[:, None]) / alpha).sum(axis=1))


def soft_value_iteration(
    mdp: TabularMDP,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal soft Q and the Boltzmann policy pi*(a|s) proportional to exp(Q*(s, a) / alpha).

    ``alpha=0`` gives ordinary value iteration and a greedy (lowest-index) policy.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    live = ~mdp.terminal_mask
    q = np.zeros((mdp.num_states, mdp.num_actions))
    residual = math.inf
    for _ in range(max_iter):
        q_new = mdp.reward + mdp.gamma * mdp.transition @ (_soft_max(q, alpha) * live)
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        if residual < tol:
            break
    else:
        raise OracleConvergenceError(f"soft value iteration did not converge in {max_iter} iterations", residual)
    if alpha == 0:
        pi = np.eye(mdp.num_actions)[q.argmax(axis=1)]
    else:
        pi = np.exp(log_softmax(q / alpha))
    return q, pi


def optimal_value_iteration(mdp: TabularMDP, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    return soft_value_iteration(mdp, 0.0, tol, max_iter)[0]


# --- Monte-Carlo returns -------------------------------------------------

PolicyLike = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    stderr: float
    returns: np.ndarray


class EpisodeCapError(RuntimeError):
    pass


def _horizon(gamma: float, max_steps: int | None) -> tuple[int, bool]:
    """Step cap and whether hitting it is acceptable (discount tail < 1e-12)."""
    if max_steps is not None:
        return max_steps, False
    if gamma < 1.0:
        return max(1, math.ceil(math.log(1e-12) / math.log(gamma))) if gamma > 0 else 1, True
    return 100_000, False


def monte_carlo_return(
    env,
    policy: PolicyLike,
    num_episodes: int,
    gamma: float,
    soft: bool = False,
    alpha: float = 0.0,
    seed: int = 0,
    max_steps: int | None = None,
) -> MonteCarloResult:
    """Mean discounted return sum_t gamma^t r_t over sampled episodes.

    With ``soft=True`` each step t >= 1 that is not terminal also earns
    gamma^t * alpha * H(pi(.|s_t)), so the estimate targets
    E_{s0, a0 ~ pi}[Q_soft(s0, a0)].

    Tabular envs with a table policy are simulated in one vectorised sweep
    over episodes on the env's own dynamics, ignoring the env time limit;
    episodes run until termination or until the discount tail drops below
    1e-12. Other envs are stepped one at a time and must terminate.
    """
    if num_episodes < 1:
        raise ValueError("num_episodes must be positive")
    cap, tail_ok = _horizon(gamma, max_steps)
    if isinstance(policy, np.ndarray) and hasattr(env, "mdp"):
        returns = _mc_tabular(env, policy_table(policy), num_episodes, gamma, soft, alpha, seed, cap, tail_ok)
    else:
        returns = _mc_loop(env, policy, num_episodes, gamma, soft, alpha, seed, cap, tail_ok)
    stderr = float(returns.std(ddof=1) / math.sqrt(num_episodes)) if num_episodes > 1 else 0.0
    return MonteCarloResult(float(returns.mean()), stderr, returns)


def _mc_tabular(env, pi, n, gamma, soft, alpha, seed, cap, tail_ok) -> np.ndarray:
    mdp = env.mdp
    rng = np.random.default_rng(seed)
    cum_init = np.cumsum(mdp.initial_dist)
    cum_pi = np.cumsum(pi, axis=1)
    cum_p = np.cumsum(mdp.transition, axis=2)
    bonus = alpha * entropy_of_probs(pi) if soft else np.zeros(mdp.num_states)
    s = np.minimum((cum_init[None, :] <= rng.random(n)[:, None]).sum(axis=1), mdp.num_states - 1)
    alive = ~mdp.terminal_mask[s]
    ret = np.zeros(n)
    disc = 1.0
    for t in range(cap):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        st = s[idx]
        if t > 0:
            ret[idx] += disc * bonus[st]
        a = np.minimum((cum_pi[st] <= rng.random(idx.size)[:, None]).sum(axis=1), mdp.num_actions - 1)
        s2 = np.minimum((cum_p[st, a] <= rng.random(idx.size)[:, None]).sum(axis=1), mdp.num_states - 1)
        ret[idx] += disc * env.realized_reward(st, a, s2)
        s[idx] = s2
        alive[idx] = ~mdp.terminal_mask[s2]
        disc *= gamma
    else:
        if alive.any() and not tail_ok:
            raise EpisodeCapError(f"{int(alive.sum())} episode(s) did not terminate within {cap} steps")
    return ret


def _mc_loop(env, policy, n, gamma, soft, alpha, seed, cap, tail_ok) -> np.ndarray:
    rng = np.random.default_rng(seed)
    probs_of = policy if callable(policy) else (lambda obs: policy_table(policy)[int(np.argmax(obs))])
    returns = np.zeros(n)
    for ep in range(n):
        obs = env.reset(seed=int(rng.integers(2**63)))
        disc, total, done = 1.0, 0.0, False
        for t in range(cap):
            p = np.asarray(probs_of(obs), dtype=np.float64)
            if soft and t > 0:
                total += disc * alpha * float(entropy_of_probs(p))
            a = int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))
            res = env.step(a)
            total += disc * res.reward
            disc *= gamma
            obs = res.observation
            if res.done:
                if getattr(res, "truncated", False):
                    raise EpisodeCapError("environment truncated an episode before it terminated")
                done = True
                break
        if not done and not tail_ok:
            raise EpisodeCapError(f"episode {ep} did not terminate within {cap} steps")
        returns[ep] = total
    return returns


def expected_start_q(mdp: TabularMDP, policy, q: np.ndarray) -> float:
    """E_{s0 ~ initial_dist, a0 ~ pi}[q(s0, a0)]: what soft Monte-Carlo returns estimate."""
    pi = policy_table(policy)
    return float(mdp.initial_dist @ (pi * q).sum(axis=1))


# --- diagnostics ---------------------------------------------------------


def visitation_distribution(
    mdp: TabularMDP,
    policy,
    num_steps: int = 10_000,
    seed: int = 0,
    max_episode_steps: int | None = None,
) -> np.ndarray:
    """Empirical on-policy state distribution over ``num_steps`` rollout steps,
    restarting from the initial distribution at termination or time limit."""
    pi = policy_table(policy)
    rng = np.random.default_rng(seed)
    cum_init = np.cumsum(mdp.initial_dist)
    cum_pi = np.cumsum(pi, axis=1)
    cum_p = np.cumsum(mdp.transition, axis=2)
    u = rng.random((num_steps, 3))
    counts = np.zeros(mdp.num_states)
    last = mdp.num_states - 1

    def start(x):
        return min(int(np.searchsorted(cum_init, x, side="right")), last)

    s = start(u[0, 2])
    t = 0
    for i in range(num_steps):
        if mdp.terminal_mask[s] or (max_episode_steps is not None and t >= max_episode_steps):
            s, t = start(u[i, 2]), 0
        counts[s] += 1
        a = min(int(np.searchsorted(cum_pi[s], u[i, 0], side="right")), mdp.num_actions - 1)
        s = min(int(np.searchsorted(cum_p[s, a], u[i, 1], side="right")), last)
        t += 1
    return counts / counts.sum()


@dataclass(frozen=True)
class BiasReport:
    """Estimate-minus-truth biases. ``mean_bias`` and ``sign_summary`` use
    weights visitation(s) * pi(a|s) over non-terminal states."""

    mean_bias: float
    per_state_action_bias: np.ndarray
    sign_summary: float
    critic_mean_bias: tuple[float, float]
    critic_bias: tuple[np.ndarray, np.ndarray]
    q_estimate_mean: float
    q_true_mean: float
    weights: np.ndarray


def bias_weights(mdp: TabularMDP, pi: np.ndarray, visitation: np.ndarray) -> np.ndarray:
    w = np.asarray(visitation, dtype=np.float64)[:, None] * pi
    w[mdp.terminal_mask] = 0.0
    total = w.sum()
    if total <= 0:
        raise ValueError("visitation puts no mass on non-terminal states")
    return w / total


def bias_report(
    q_1: np.ndarray,
    q_2: np.ndarray,
    q_true: np.ndarray,
    rule: str,
    weights: np.ndarray,
) -> BiasReport:
    combined = combine_q(q_1, q_2, rule) - q_true
    e1, e2 = q_1 - q_true, q_2 - q_true
    support = weights > 0
    negative = float(weights[support & (combined < 0)].sum() / weights[support].sum())
    est = combine_q(q_1, q_2, rule)
    return BiasReport(
        mean_bias=float((weights * combined).sum()),
        per_state_action_bias=combined,
        sign_summary=negative,
        critic_mean_bias=(float((weights * e1).sum()), float((weights * e2).sum())),
        critic_bias=(e1, e2),
        q_estimate_mean=float((weights * est).sum()),
        q_true_mean=float((weights * q_true).sum()),
        weights=weights,
    )


def measure_bias(agent, mdp: TabularMDP, alpha: float | None = None, visitation=None, seed: int = 0) -> BiasReport:
    """Bias of the agent's online critics against the soft Q of its frozen policy.

    ``visitation`` is a state distribution, ``"uniform"``, or ``None`` for a
    10^4-step on-policy rollout estimate.
    """
    if agent.critic_spec.input_dim != mdp.num_states:
        raise ValueError("bias oracle needs a tabular env with one-hot observations")
    states = np.eye(mdp.num_states)
    pi = np.exp(log_softmax(mlp_apply(agent.policy, agent.policy_spec, states)))
    alpha = agent.alpha if alpha is None else alpha
    truth = soft_policy_evaluation(mdp, pi, alpha)
    if visitation is None:
        visitation = visitation_distribution(mdp, pi, 10_000, seed)
    elif isinstance(visitation, str):
        if visitation != "uniform":
            raise ValueError(f"unknown visitation {visitation!r}")
        visitation = np.full(mdp.num_states, 1.0 / mdp.num_states)
    weights = bias_weights(mdp, pi, visitation)
    q1 = mlp_apply(agent.critic_1, agent.critic_spec, states)
    q2 = mlp_apply(agent.critic_2, agent.critic_spec, states)
    return bias_report(q1, q2, truth.q_true, agent.config.variant.target_rule, weights)


def state_distribution_similarity(a, b) -> float:
    """Cosine similarity of two visitation histograms."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"histogram shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("histograms must be nonzero")
    return float(np.dot(a / na, b / nb))


def normalized_score(agent: float, random_baseline: float, reference: float) -> float:
    denom = reference - random_baseline
    if denom == 0:
        raise ZeroDivisionError("reference and random baseline scores coincide")
    return (agent - random_baseline) / denom
