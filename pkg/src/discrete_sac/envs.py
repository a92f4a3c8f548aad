"""Desk-scale discrete environments, each paired with its exact TabularMDP.

Observations are one-hot state indicators. Time-limit truncation ends an
episode with ``done=True`` and ``truncated=True``; learners bootstrap
through it as if the episode had continued.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from discrete_sac.mdp import TabularMDP


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool = False


class EnvStateError(RuntimeError):
    pass


class TabularEnv:
    """Samples trajectories from a TabularMDP.

    Rewards are the deterministic ``R[s, a]``; the next state is drawn from
    ``P[s, a]``.
    """

    def __init__(self, mdp: TabularMDP, max_episode_steps: int, env_id: str = "tabular", seed: int | None = None):
        if max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")
        self.mdp = mdp
        self.max_episode_steps = int(max_episode_steps)
        self.env_id = env_id
        self._cum = np.cumsum(mdp.transition, axis=2)
        self._cum[..., -1] = 1.0
        self._eye = np.eye(mdp.num_states)
        self.rng = np.random.default_rng(seed)
        self.state: int | None = None
        self.t = 0
        self._done = True

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    @property
    def observation_dim(self) -> int:
        return self.mdp.num_states

    def observe(self, s: int) -> np.ndarray:
        return self._eye[s].copy()

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        init = self.mdp.initial_dist
        self.state = int(np.searchsorted(np.cumsum(init), self.rng.random(), side="right"))
        self.state = min(self.state, self.mdp.num_states - 1)
        self.t = 0
        self._done = bool(self.mdp.terminal_mask[self.state])
        return self.observe(self.state)

    def step(self, action: int) -> StepResult:
        if self._done:
            raise EnvStateError("step() called on a finished episode; call reset()")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} outside [0, {self.num_actions})")
        s = self.state
        s_next = int(np.searchsorted(self._cum[s, action], self.rng.random(), side="right"))
        s_next = min(s_next, self.mdp.num_states - 1)
        reward = float(self.realized_reward(np.array([s]), np.array([action]), np.array([s_next]))[0])
        self.state = s_next
        self.t += 1
        terminal = bool(self.mdp.terminal_mask[self.state])
        truncated = not terminal and self.t >= self.max_episode_steps
        self._done = terminal or truncated
        return StepResult(self.observe(self.state), reward, self._done, truncated)

    def realized_reward(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        """Reward for vectors of (s, a, s') outcomes; its mean over s' is R[s, a]."""
        return self.mdp.reward[s, a]

    def fresh(self, seed: int | None = None) -> TabularEnv:
        return TabularEnv(self.mdp, self.max_episode_steps, self.env_id, seed)


@dataclass(frozen=True)
class SparseChainSpec:
    length: int = 10
    step_penalty: float = -0.01
    goal_reward: float = 1.0
    max_episode_steps: int = 100
    slip_prob: float = 0.0
    gamma: float = 0.99

    def validate(self) -> None:
        if self.length < 3:
            raise ValueError("chain length must be >= 3")
        if self.step_penalty > 0:
            raise ValueError("step_penalty must be <= 0")
        if not self.goal_reward > 0:
            raise ValueError("goal_reward must be > 0")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError("slip_prob must lie in [0, 1)")


LEFT, RIGHT = 0, 1


def make_chain(spec: SparseChainSpec, seed: int | None = None) -> tuple[TabularEnv, TabularMDP]:
    """Chain 0..N-1 starting at 0 with the terminal goal at N-1.

    ``right`` advances one state (slipping back one with ``slip_prob``),
    ``left`` retreats; both clamp at state 0. Every step pays ``step_penalty``;
    the step entering the goal additionally pays ``goal_reward``.
    """
    spec.validate()
    n = spec.length
    goal = n - 1
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    for s in range(n):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        back = max(s - 1, 0)
        P[s, LEFT, back] = 1.0
        P[s, RIGHT, s + 1] += 1.0 - spec.slip_prob
        P[s, RIGHT, back] += spec.slip_prob
        for a in (LEFT, RIGHT):
            R[s, a] = spec.step_penalty + P[s, a, goal] * spec.goal_reward
    init = np.zeros(n)
    init[0] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[goal] = True
    mdp = TabularMDP(P, R, init, terminal, spec.gamma)
    return _ChainEnv(mdp, spec, seed), mdp


class _ChainEnv(TabularEnv):
    """Chain env; the goal bonus is paid only when the goal is actually reached."""

    def __init__(self, mdp: TabularMDP, spec: SparseChainSpec, seed=None):
        super().__init__(mdp, spec.max_episode_steps, "chain", seed)
        self.spec = spec

    def realized_reward(self, s, a, s_next):
        return self.spec.step_penalty + np.where(s_next == self.mdp.num_states - 1, self.spec.goal_reward, 0.0)

    def fresh(self, seed=None) -> _ChainEnv:
        return _ChainEnv(self.mdp, self.spec, seed)


GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


def make_gridworld(
    width: int,
    height: int,
    walls=(),
    goal=None,
    step_penalty: float = -0.01,
    max_steps: int = 100,
    start=(0, 0),
    goal_reward: float = 1.0,
    gamma: float = 0.99,
    seed: int | None = None,
) -> tuple[TabularEnv, TabularMDP]:
    """Deterministic 4-action grid; cells are (row, col), state = row * width + col.

    Every move costs ``step_penalty``; bumping a wall or the border leaves the
    agent in place. Entering the goal also pays ``goal_reward`` and ends the
    episode.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    walls = {tuple(w) for w in walls}
    goal = (height - 1, width - 1) if goal is None else tuple(goal)
    start = tuple(start)
    for name, cell in (("goal", goal), ("start", start)):
        if not (0 <= cell[0] < height and 0 <= cell[1] < width) or cell in walls:
            raise ValueError(f"{name} cell {cell} is off-grid or a wall")
    if start == goal:
        raise ValueError("start and goal coincide")
    if grid_shortest_path(width, height, walls, start, goal) is None:
        raise ValueError(f"goal {goal} is unreachable from start {start}")

    n = width * height
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    g = goal[0] * width + goal[1]
    for r in range(height):
        for c in range(width):
            s = r * width + c
            if s == g:
                P[s, :, s] = 1.0
                continue
            for a, (dr, dc) in enumerate(GRID_MOVES):
                nr, nc = r + dr, c + dc
                if not (0 <= nr < height and 0 <= nc < width) or (nr, nc) in walls:
                    nr, nc = r, c
                s2 = nr * width + nc
                P[s, a, s2] = 1.0
                R[s, a] = step_penalty + (goal_reward if s2 == g else 0.0)
    init = np.zeros(n)
    init[start[0] * width + start[1]] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[g] = True
    mdp = TabularMDP(P, R, init, terminal, gamma)
    return TabularEnv(mdp, max_steps, "gridworld", seed), mdp


def grid_shortest_path(width, height, walls, start, goal) -> int | None:
    """BFS path length from start to goal, or None if unreachable."""
    walls = {tuple(w) for w in walls}
    dist = {tuple(start): 0}
    queue = deque([tuple(start)])
    while queue:
        cell = queue.popleft()
        if cell == tuple(goal):
            return dist[cell]
        for dr, dc in GRID_MOVES:
            nxt = (cell[0] + dr, cell[1] + dc)
            if 0 <= nxt[0] < height and 0 <= nxt[1] < width and nxt not in walls and nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return None


def make_random_mdp(
    num_states: int,
    num_actions: int,
    reward_sparsity: float,
    seed: int,
    gamma: float = 0.9,
    concentration: float = 1.0,
    max_episode_steps: int = 200,
) -> tuple[TabularMDP, TabularEnv]:
    """Dirichlet transition rows, rewards 0 w.p. ``reward_sparsity`` else U[-1, 1].

    No terminal states; the start state is uniform.
    """
    if num_states < 2:
        raise ValueError("num_states must be >= 2")
    if num_actions < 1:
        raise ValueError("num_actions must be >= 1")
    if not 0.0 <= reward_sparsity <= 1.0:
        raise ValueError("reward_sparsity must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(num_states, concentration), size=(num_states, num_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    R[rng.random((num_states, num_actions)) < reward_sparsity] = 0.0
    init = np.full(num_states, 1.0 / num_states)
    mdp = TabularMDP(P, R, init, np.zeros(num_states, dtype=bool), gamma)
    return mdp, TabularEnv(mdp, max_episode_steps, "random_mdp", seed)


ENV_IDS = ("chain", "gridworld", "random_mdp")


def make_env(env_id: str, params: dict, seed: int | None = None) -> tuple[TabularEnv, TabularMDP]:
    """Build a built-in environment from its string id and parameter block."""
    params = dict(params)
    if env_id == "chain":
        allowed = set(SparseChainSpec.__dataclass_fields__)
        if "N" in params:
            params["length"] = params.pop("N")
        _reject_unknown(env_id, params, allowed)
        return make_chain(SparseChainSpec(**params), seed)
    if env_id == "gridworld":
        allowed = {"width", "height", "walls", "goal", "step_penalty", "max_steps", "start", "goal_reward", "gamma"}
        _reject_unknown(env_id, params, allowed)
        return make_gridworld(seed=seed, **params)
    if env_id == "random_mdp":
        allowed = {"num_states", "num_actions", "reward_sparsity", "gamma", "concentration", "max_episode_steps", "mdp_seed"}
        _reject_unknown(env_id, params, allowed)
        mdp_seed = params.pop("mdp_seed", 0)
        mdp, env = make_random_mdp(seed=mdp_seed, **params)
        env.rng = np.random.default_rng(seed)
        return env, mdp
    raise ValueError(f"unknown environment id {env_id!r}; expected one of {ENV_IDS}")


def _reject_unknown(env_id, params, allowed):
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown parameter(s) for {env_id!r}: {sorted(unknown)}")
