"""Discrete soft actor-critic trainer."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from discrete_sac import losses
from discrete_sac.approximator import (
    AlphaParam,
    MlpSpec,
    ParamSet,
    backward,
    clip_grad_norm,
    init_mlp,
    make_optimizer,
    mlp_apply,
    polyak_update,
)
from discrete_sac.losses import LossVariant
from discrete_sac.mdp import ReplayBuffer, Transition, entropy_of_probs, log_softmax


def derive_seed(master: int, label: str) -> int:
    """Independent 63-bit seed for one named random stream of a run."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(zlib.crc32(label.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class AgentConfig:
    variant: LossVariant = field(default_factory=LossVariant)
    gamma: float = 0.99
    lr_critic: float = 1e-3
    lr_policy: float = 1e-3
    lr_alpha: float = 1e-3
    tau: float = 0.005
    target_update_interval: int = 1
    batch_size: int = 64
    warmup_steps: int = 1000
    train_interval: int = 1
    target_entropy: Union[float, str] = "auto"
    seed: int = 0
    hidden_dims: tuple[int, ...] = (64,)
    activation: str = "relu"
    optimizer: str = "adam"
    initial_alpha: float = 1.0
    buffer_capacity: int = 100_000
    policy_q_rule: str = "min"
    grad_clip_norm: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("lr_critic", "lr_policy", "lr_alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        for name in ("target_update_interval", "batch_size", "train_interval", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")
        if isinstance(self.target_entropy, str) and self.target_entropy != "auto":
            raise ValueError("target_entropy must be a number or 'auto'")
        if self.initial_alpha <= 0:
            raise ValueError("initial_alpha must be positive")
        if self.policy_q_rule not in losses.POLICY_Q_RULES:
            raise ValueError(f"policy_q_rule must be one of {losses.POLICY_Q_RULES}")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")

    def resolve_target_entropy(self, num_actions: int) -> float:
        if self.target_entropy == "auto":
            return losses.default_target_entropy(num_actions)
        h = float(self.target_entropy)
        if not 0.0 < h <= math.log(num_actions) + 1e-12:
            raise ValueError(f"target_entropy must lie in (0, ln {num_actions}]")
        return h


class InsufficientDataError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicySnapshot:
    """Value-only copy of a policy network, safe to hand to another thread."""

    spec: MlpSpec
    params: ParamSet

    def probs(self, obs) -> np.ndarray:
        return np.exp(log_softmax(mlp_apply(self.params, self.spec, obs)))

    def table(self, num_states: int) -> np.ndarray:
        return self.probs(np.eye(num_states))


class DiscreteSAC:
    """Agent state (networks, temperature, replay, counters) plus the update rules."""

    def __init__(self, config: AgentConfig, obs_dim: int, num_actions: int):
        self.config = config
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.critic_spec = MlpSpec(obs_dim, config.hidden_dims, num_actions, config.activation)
        self.policy_spec = MlpSpec(obs_dim, config.hidden_dims, num_actions, config.activation)
        init_rng = np.random.default_rng(derive_seed(config.seed, "init"))
        self.critic_1 = init_mlp(self.critic_spec, init_rng)
        self.critic_2 = init_mlp(self.critic_spec, init_rng)
        self.policy = init_mlp(self.policy_spec, init_rng)
        self.target_1 = self.critic_1.copy()
        self.target_2 = self.critic_2.copy()
        self.log_alpha = AlphaParam.create(config.initial_alpha)
        self.target_entropy = config.resolve_target_entropy(num_actions)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim, num_actions, derive_seed(config.seed, "buffer"))
        self.rng = np.random.default_rng(derive_seed(config.seed, "policy"))
        self.opt_critic_1 = make_optimizer(config.optimizer, config.lr_critic)
        self.opt_critic_2 = make_optimizer(config.optimizer, config.lr_critic)
        self.opt_policy = make_optimizer(config.optimizer, config.lr_policy)
        self.opt_alpha = make_optimizer(config.optimizer, config.lr_alpha)
        self.env_steps = 0
        self.train_steps = 0
        self._obs: Optional[np.ndarray] = None
        self._episode_return = 0.0

    @property
    def alpha(self) -> float:
        return self.log_alpha.alpha

    def policy_probs(self, obs) -> np.ndarray:
        return np.exp(log_softmax(mlp_apply(self.policy, self.policy_spec, obs)))

    def snapshot(self) -> PolicySnapshot:
        return PolicySnapshot(self.policy_spec, self.policy.copy())

    # --- acting ----------------------------------------------------------

    def act(self, obs, deterministic: bool = False) -> int:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise ValueError(f"observation has shape {obs.shape}, expected ({self.obs_dim},)")
        probs = self.policy_probs(obs)
        if deterministic:
            return int(np.argmax(probs))
        return _sample(probs, self.rng)

    def collect(self, env, num_steps: int) -> list[float]:
        """Step ``env`` ``num_steps`` times with the stochastic policy (uniform
        during warm-up), storing transitions. Returns finished-episode returns.

        Episode progress carries over between calls.
        """
        finished = []
        uniform = np.full(self.num_actions, 1.0 / self.num_actions)
        for _ in range(num_steps):
            if self._obs is None:
                self._obs = env.reset(seed=int(self.rng.integers(2**63)))
                self._episode_return = 0.0
            obs = self._obs
            probs = uniform if self.env_steps < self.config.warmup_steps else self.policy_probs(obs)
            action = _sample(probs, self.rng)
            res = env.step(action)
            truncated = bool(getattr(res, "truncated", False))
            self.buffer.push(
                Transition(
                    obs,
                    action,
                    float(res.reward),
                    res.observation,
                    bool(res.done and not truncated),
                    float(entropy_of_probs(probs)),
                )
            )
            self.env_steps += 1
            self._episode_return += res.reward
            if res.done:
                finished.append(self._episode_return)
                self._obs = None
            else:
                self._obs = res.observation
        return finished

    def evaluate(self, env, num_episodes: int, seed: int = 0) -> tuple[float, list[float]]:
        """Undiscounted returns of the greedy policy on a fresh env copy."""
        if num_episodes < 1:
            raise ValueError("num_episodes must be positive")
        eval_env = env.fresh(seed) if hasattr(env, "fresh") else env
        ep_rng = np.random.default_rng(seed)
        returns = []
        for _ in range(num_episodes):
            obs = eval_env.reset(seed=int(ep_rng.integers(2**63)))
            total, done = 0.0, False
            while not done:
                res = eval_env.step(self.act(obs, deterministic=True))
                total += res.reward
                obs, done = res.observation, res.done
            returns.append(total)
        return float(np.mean(returns)), returns

    # --- learning --------------------------------------------------------

    def ready(self) -> bool:
        return len(self.buffer) >= self.config.batch_size and self.env_steps >= self.config.warmup_steps

    def _apply(self, loss, params: ParamSet, opt) -> float:
        backward(loss, params)
        if self.config.grad_clip_norm is not None:
            clip_grad_norm(params, self.config.grad_clip_norm)
        opt.step(params)
        return float(loss.value)

    def train_step(self, batch=None) -> dict:
        """One round of critic, policy and temperature updates on a replay batch."""
        cfg = self.config
        if batch is None:
            if len(self.buffer) < cfg.batch_size:
                raise InsufficientDataError(
                    f"replay buffer holds {len(self.buffer)} transitions, batch_size is {cfg.batch_size}"
                )
            batch = self.buffer.sample(cfg.batch_size)
        variant = cfg.variant
        alpha = self.alpha
        y = losses.critic_target(
            batch, self.target_1, self.target_2, self.policy,
            self.critic_spec, self.policy_spec, alpha, cfg.gamma, variant.target_rule,
        )
        critic_losses = []
        for online, target, opt in (
            (self.critic_1, self.target_1, self.opt_critic_1),
            (self.critic_2, self.target_2, self.opt_critic_2),
        ):
            with online.record():
                loss = losses.critic_loss(online, target, self.critic_spec, batch, y, variant.q_clip)
                critic_losses.append(self._apply(loss, online, opt))

        with self.policy.record():
            loss = losses.policy_loss(
                self.policy, self.critic_1, self.critic_2, self.critic_spec, self.policy_spec,
                batch, alpha, variant.entropy_penalty, cfg.policy_q_rule,
            )
            pi_loss = self._apply(loss, self.policy, self.opt_policy)

        with self.log_alpha.params.record():
            loss = losses.temperature_loss(self.log_alpha, batch, self.policy, self.policy_spec, self.target_entropy)
            self._apply(loss, self.log_alpha.params, self.opt_alpha)
        ent = losses.policy_entropy(self.policy, self.policy_spec, batch.states)

        self.train_steps += 1
        if self.train_steps % cfg.target_update_interval == 0:
            polyak_update(self.target_1, self.critic_1, cfg.tau)
            polyak_update(self.target_2, self.critic_2, cfg.tau)
        return {
            "critic_loss_1": critic_losses[0],
            "critic_loss_2": critic_losses[1],
            "policy_loss": pi_loss,
            "alpha": self.alpha,
            "entropy_mean": float(ent.mean()),
            "mean_y": float(np.mean(y)),
        }

    def step(self, env) -> tuple[list[float], Optional[dict]]:
        """Collect one env step, then train if the cadence says so."""
        finished = self.collect(env, 1)
        metrics = None
        if self.ready() and self.env_steps % self.config.train_interval == 0:
            metrics = self.train_step()
        return finished, metrics


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    return int(min(np.searchsorted(np.cumsum(probs), rng.random(), side="right"), len(probs) - 1))


def with_variant(config: AgentConfig, variant: LossVariant) -> AgentConfig:
    return replace(config, variant=variant)
