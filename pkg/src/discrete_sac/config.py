"""Run configuration: JSON schema, validation, dotted-path overrides, hashing."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from discrete_sac.agent import AgentConfig
from discrete_sac.envs import ENV_IDS
from discrete_sac.losses import LossVariant


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the first bad entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Diagnostics:
    bias_interval: int = 0  # 0 disables
    similarity_interval: int = 0
    similarity_budget: int = 2000
    bias_visitation: str = "on_policy"


@dataclass(frozen=True)
class RunConfig:
    env_id: str = "chain"
    env_params: dict = field(default_factory=dict)
    agent: AgentConfig = field(default_factory=AgentConfig)
    total_env_steps: int = 10_000
    eval_interval: int = 1000
    eval_episodes: int = 10
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    output_dir: str = "runs/default"
    seeds: tuple[int, ...] = (0,)

    def to_json(self) -> dict:
        agent = dataclasses.asdict(self.agent)
        agent["variant"] = self.agent.variant.to_json()
        agent["hidden_dims"] = list(self.agent.hidden_dims)
        return {
            "env": {"id": self.env_id, "params": copy.deepcopy(self.env_params)},
            "agent": agent,
            "total_env_steps": self.total_env_steps,
            "eval_interval": self.eval_interval,
            "eval_episodes": self.eval_episodes,
            "diagnostics": dataclasses.asdict(self.diagnostics),
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
        }

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json()).encode()).hexdigest()


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def default_document() -> dict:
    return RunConfig().to_json()


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_keys(doc: dict, allowed: set, prefix: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown field")


def parse_agent(doc: dict, prefix: str = "agent.") -> AgentConfig:
    _expect(isinstance(doc, dict), prefix.rstrip("."), "must be an object")
    fields = {f.name: f for f in dataclasses.fields(AgentConfig)}
    _check_keys(doc, set(fields), prefix)
    kwargs = {}
    for name, value in doc.items():
        path = prefix + name
        if name == "variant":
            _expect(isinstance(value, dict), path, "must be an object")
            try:
                kwargs[name] = LossVariant.from_json(value)
            except ValueError as exc:
                raise ConfigError(path, str(exc)) from None
            continue
        if name in ("batch_size", "warmup_steps", "train_interval", "target_update_interval", "seed", "buffer_capacity"):
            _expect(_is_int(value), path, "must be an integer")
        elif name == "hidden_dims":
            _expect(isinstance(value, list) and all(_is_int(h) for h in value), path, "must be a list of integers")
            value = tuple(value)
        elif name in ("activation", "optimizer", "policy_q_rule"):
            _expect(isinstance(value, str), path, "must be a string")
        elif name == "target_entropy":
            _expect(value == "auto" or _is_num(value), path, "must be a number or 'auto'")
        elif name == "grad_clip_norm":
            _expect(value is None or _is_num(value), path, "must be a number or null")
        else:
            _expect(_is_num(value), path, "must be a number")
        kwargs[name] = value
    try:
        cfg = AgentConfig(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        bad = next((n for n in fields if msg.startswith(n) or f" {n} " in msg), None)
        raise ConfigError(prefix + (bad or "?"), msg) from None
    if cfg.optimizer not in ("adam", "sgd"):
        raise ConfigError(prefix + "optimizer", "must be 'adam' or 'sgd'")
    if cfg.activation not in ("relu", "tanh"):
        raise ConfigError(prefix + "activation", "must be 'relu' or 'tanh'")
    return cfg


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a JSON config document; missing fields take defaults."""
    _expect(isinstance(doc, dict), "<root>", "config must be a JSON object")
    _check_keys(doc, {"env", "agent", "total_env_steps", "eval_interval", "eval_episodes", "diagnostics", "output_dir", "seeds"}, "")
    env = doc.get("env", {"id": "chain", "params": {}})
    _expect(isinstance(env, dict), "env", "must be an object")
    _check_keys(env, {"id", "params"}, "env.")
    env_id = env.get("id", "chain")
    _expect(env_id in ENV_IDS, "env.id", f"unknown environment {env_id!r}; expected one of {ENV_IDS}")
    env_params = env.get("params", {})
    _expect(isinstance(env_params, dict), "env.params", "must be an object")

    agent = parse_agent(doc.get("agent", {}))

    total = doc.get("total_env_steps", 10_000)
    _expect(_is_int(total) and total >= 0, "total_env_steps", "must be a non-negative integer")
    eval_interval = doc.get("eval_interval", 1000)
    _expect(_is_int(eval_interval) and eval_interval >= 1, "eval_interval", "must be a positive integer")
    _expect(total == 0 or eval_interval <= total, "eval_interval", "must not exceed total_env_steps")
    eval_episodes = doc.get("eval_episodes", 10)
    _expect(_is_int(eval_episodes) and eval_episodes >= 1, "eval_episodes", "must be a positive integer")

    diag_doc = doc.get("diagnostics", {})
    _expect(isinstance(diag_doc, dict), "diagnostics", "must be an object")
    _check_keys(diag_doc, {f.name for f in dataclasses.fields(Diagnostics)}, "diagnostics.")
    diag = Diagnostics(**diag_doc)
    for name in ("bias_interval", "similarity_interval"):
        v = getattr(diag, name)
        _expect(_is_int(v) and v >= 0, f"diagnostics.{name}", "must be a non-negative integer")
        _expect(v % eval_interval == 0, f"diagnostics.{name}", "must be a multiple of eval_interval")
    _expect(_is_int(diag.similarity_budget) and diag.similarity_budget >= 1, "diagnostics.similarity_budget", "must be a positive integer")
    _expect(diag.bias_visitation in ("on_policy", "uniform"), "diagnostics.bias_visitation", "must be 'on_policy' or 'uniform'")

    output_dir = doc.get("output_dir", "runs/default")
    _expect(isinstance(output_dir, str) and output_dir != "", "output_dir", "must be a non-empty string")
    seeds = doc.get("seeds", [0])
    _expect(isinstance(seeds, list) and len(seeds) > 0 and all(_is_int(s) for s in seeds), "seeds", "must be a nonempty list of integers")
    _expect(len(set(seeds)) == len(seeds), "seeds", "must be distinct")

    cfg = RunConfig(env_id, env_params, agent, total, eval_interval, eval_episodes, diag, output_dir, tuple(seeds))
    _check_env(cfg)
    return cfg


def _check_env(cfg: RunConfig) -> None:
    from discrete_sac.envs import make_env

    try:
        env, _ = make_env(cfg.env_id, cfg.env_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError("env.params", str(exc)) from None
    try:
        cfg.agent.resolve_target_entropy(env.num_actions)
    except ValueError as exc:
        raise ConfigError("agent.target_entropy", str(exc)) from None


def set_path(doc: dict, dotted: str, value: Any, must_exist: bool = False) -> dict:
    """Return a copy of ``doc`` with ``dotted`` (e.g. ``agent.variant.q_clip``) set."""
    out = copy.deepcopy(doc)
    keys = dotted.split(".")
    node = out
    for i, key in enumerate(keys[:-1]):
        if key not in node or not isinstance(node[key], dict):
            if must_exist:
                raise ConfigError(dotted, "unknown config path")
            node[key] = {}
        node = node[key]
    if must_exist and keys[-1] not in node:
        raise ConfigError(dotted, "unknown config path")
    node[keys[-1]] = value
    return out


def merged_with_defaults(doc: dict) -> dict:
    """The canonical document: every field present, defaults filled in."""
    return parse_run_config(doc).to_json()


def parse_override(text: str) -> tuple[str, Any]:
    """``path=value`` with ``value`` read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ConfigError(text, "override must look like path=value")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    for text in overrides:
        path, value = parse_override(text)
        doc = set_path(doc, path, value)
    return doc


def resolve_output_dir(cfg: RunConfig, root: Optional[str]) -> str:
    import os

    if root and not os.path.isabs(cfg.output_dir):
        return os.path.join(root, cfg.output_dir)
    return cfg.output_dir
