"""Discrete SAC objectives.

Every expectation over actions is taken in closed form over the categorical
support. The three switches that distinguish the algorithm variants (critic
target rule, Q-clip range, entropy-penalty coefficient) live in
:class:`LossVariant` and only touch the loss they belong to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from discrete_sac import autodiff as ad
from discrete_sac.approximator import AlphaParam, MlpSpec, ParamSet, mlp_apply, mlp_forward
from discrete_sac.mdp import Batch, CategoricalDistribution, entropy_of_probs, log_softmax

TARGET_RULES = ("clipped_min", "single", "average")
POLICY_Q_RULES = ("min", "average", "single")


@dataclass(frozen=True)
class LossVariant:
    target_rule: str = "clipped_min"
    q_clip: Optional[float] = None
    entropy_penalty: Optional[float] = None

    def __post_init__(self):
        if self.target_rule not in TARGET_RULES:
            raise ValueError(f"unknown target_rule {self.target_rule!r}; expected one of {TARGET_RULES}")
        if self.q_clip is not None and not self.q_clip > 0:
            raise ValueError(f"q_clip must be > 0, got {self.q_clip}")
        if self.entropy_penalty is not None and not self.entropy_penalty >= 0:
            raise ValueError(f"entropy_penalty must be >= 0, got {self.entropy_penalty}")

    def to_json(self) -> dict:
        return {
            "target_rule": self.target_rule,
            "q_clip": self.q_clip,
            "entropy_penalty_beta": self.entropy_penalty,
        }

    @classmethod
    def from_json(cls, doc: dict) -> LossVariant:
        unknown = set(doc) - {"target_rule", "q_clip", "entropy_penalty_beta"}
        if unknown:
            raise ValueError(f"unknown variant field(s) {sorted(unknown)}")
        return cls(
            target_rule=doc.get("target_rule", "clipped_min"),
            q_clip=doc.get("q_clip"),
            entropy_penalty=doc.get("entropy_penalty_beta"),
        )


VANILLA = LossVariant("clipped_min")
SINGLE_Q = LossVariant("single")
FULL_METHOD = LossVariant("average", q_clip=0.5, entropy_penalty=0.5)


def default_target_entropy(num_actions: int) -> float:
    """0.98 * ln(num_actions), the usual discrete-action temperature target."""
    if num_actions < 2:
        raise ValueError("target entropy needs at least 2 actions")
    return 0.98 * math.log(num_actions)


def _xlogx_weighted(probs: np.ndarray, log_probs: np.ndarray) -> np.ndarray:
    return np.where(probs > 0, probs * np.where(probs > 0, log_probs, 0.0), 0.0)


def soft_state_value(q_values, dist: CategoricalDistribution, alpha: float):
    """sum_a pi(a) * (Q(a) - alpha * ln pi(a)); batched along leading axes."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.shape[-1] != dist.probs.shape[-1]:
        raise ValueError(f"q_values has {q.shape[-1]} actions, policy has {dist.probs.shape[-1]}")
    value = (dist.probs * q).sum(axis=-1) - alpha * _xlogx_weighted(dist.probs, dist.log_probs).sum(axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def combine_q(q1: np.ndarray, q2: np.ndarray, rule: str) -> np.ndarray:
    if rule in ("clipped_min", "min"):
        return np.minimum(q1, q2)
    if rule in ("average",):
        return 0.5 * (q1 + q2)
    if rule == "single":
        return q1
    raise ValueError(f"unknown Q combination rule {rule!r}")


def critic_target(
    batch: Batch,
    target_1: ParamSet,
    target_2: ParamSet,
    policy: ParamSet,
    critic_spec: MlpSpec,
    policy_spec: MlpSpec,
    alpha: float,
    gamma: float,
    rule: str,
) -> np.ndarray:
    """Soft bellman targets y = r + (1 - done) * gamma * V(s').

    Returned as a plain array, so nothing downstream can push gradient into it.
    """
    if rule not in TARGET_RULES:
        raise ValueError(f"unknown target rule {rule!r}")
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    q1 = mlp_apply(target_1, critic_spec, batch.next_states)
    q2 = q1 if rule == "single" else mlp_apply(target_2, critic_spec, batch.next_states)
    dist = CategoricalDistribution.from_logits(mlp_apply(policy, policy_spec, batch.next_states))
    v_next = soft_state_value(combine_q(q1, q2, rule), dist, alpha)
    return batch.rewards + np.where(batch.dones, 0.0, gamma * v_next)


def clipped_estimate(q, q_target, c: float):
    """Q' + clip(Q - Q', -c, c); always within [Q' - c, Q' + c]."""
    return q_target + np.clip(np.asarray(q) - q_target, -c, c)


def critic_loss(
    online: ParamSet,
    target: ParamSet,
    critic_spec: MlpSpec,
    batch: Batch,
    targets: np.ndarray,
    q_clip: Optional[float] = None,
) -> ad.Var:
    """Bellman loss for one critic.

    Plain: mean of 1/2 (Q(s,a) - y)^2. With a clip range c: mean of
    1/2 max((Q - y)^2, (Q' + clip(Q - Q', -c, c) - y)^2), Q' from the target
    critic and held constant.
    """
    if q_clip is not None and not q_clip > 0:
        raise ValueError(f"q_clip must be > 0, got {q_clip}")
    q = ad.gather(mlp_forward(online, critic_spec, batch.states), batch.actions)
    err = ad.square(q - targets)
    if q_clip is not None:
        q_old = mlp_apply(target, critic_spec, batch.states)[np.arange(len(batch)), batch.actions]
        q_clipped = q_old + ad.clip(q - q_old, -q_clip, q_clip)
        err = ad.maximum(err, ad.square(q_clipped - targets))
    return 0.5 * ad.mean(err)


def _policy_q(q1: np.ndarray, q2: np.ndarray, rule: str) -> np.ndarray:
    if rule not in POLICY_Q_RULES:
        raise ValueError(f"unknown policy_q_rule {rule!r}")
    return combine_q(q1, q2, rule)


def policy_loss(
    policy: ParamSet,
    online_1: ParamSet,
    online_2: ParamSet,
    critic_spec: MlpSpec,
    policy_spec: MlpSpec,
    batch: Batch,
    alpha: float,
    entropy_penalty: Optional[float] = None,
    policy_q_rule: str = "min",
) -> ad.Var:
    """mean_s sum_a pi(a|s) (alpha ln pi(a|s) - Q(s,a)), plus the optional
    beta * 1/2 * mean_s (H_behavior(s) - H(pi(.|s)))^2 entropy penalty.

    Q is computed off-tape, so critics receive no gradient from this loss.
    """
    if entropy_penalty is not None:
        if entropy_penalty < 0:
            raise ValueError("entropy_penalty must be >= 0")
        if np.any(np.isnan(batch.behavior_entropy)):
            raise ValueError("entropy penalty requested but the batch lacks behavior_entropy")
    q = _policy_q(
        mlp_apply(online_1, critic_spec, batch.states),
        mlp_apply(online_2, critic_spec, batch.states),
        policy_q_rule,
    )
    logp = ad.log_softmax(mlp_forward(policy, policy_spec, batch.states))
    probs = ad.exp(logp)
    loss = ad.mean(ad.sum(probs * (alpha * logp - q), axis=1))
    if entropy_penalty:
        ent = -ad.sum(probs * logp, axis=1)
        loss = loss + entropy_penalty * 0.5 * ad.mean(ad.square(batch.behavior_entropy - ent))
    return loss


def policy_entropy(policy: ParamSet, policy_spec: MlpSpec, states) -> np.ndarray:
    return entropy_of_probs(np.exp(log_softmax(mlp_apply(policy, policy_spec, states))))


def temperature_loss(
    alpha_param: AlphaParam,
    batch: Batch,
    policy: ParamSet,
    policy_spec: MlpSpec,
    target_entropy: float,
) -> ad.Var:
    """alpha * mean_s (H(pi(.|s)) - target_entropy); entropy held constant."""
    ent = policy_entropy(policy, policy_spec, batch.states)
    return alpha_param.var() * float(np.mean(ent - target_entropy))
