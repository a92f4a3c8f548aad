"""Small MLP critics/policies, optimizers, target averaging and checkpoints."""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from discrete_sac import autodiff as ad
from discrete_sac.autodiff import Var
from discrete_sac.mdp import CategoricalDistribution

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_json(cls, doc: dict) -> MlpSpec:
        return cls(doc["input_dim"], tuple(doc["hidden_dims"]), doc["output_dim"], doc["activation"])


class ParamSet:
    """Ordered named tensors plus same-shaped gradient slots.

    All tensors are views into one flat float64 buffer (``data``), gradients
    into a second (``grad_data``), so optimizers and target averaging touch
    a single array. Updates must therefore be in place.

    While inside :meth:`record`, :meth:`vars` hands out leaf ``Var``s that
    collect gradients; otherwise it hands out constants.
    """

    def __init__(self, values: dict):
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
        total = int(np.sum([a.size for a in arrays.values()], dtype=np.int64))
        self.data = np.zeros(total)
        self.grad_data = np.zeros(total)
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        offset = 0
        for k, a in arrays.items():
            n = a.size
            self.values[k] = self.data[offset : offset + n].reshape(a.shape)
            self.values[k][...] = a
            self.grads[k] = self.grad_data[offset : offset + n].reshape(a.shape)
            offset += n
        self._leaves: dict[str, Var] | None = None

    def __repr__(self):
        return f"ParamSet({ {k: v.shape for k, v in self.values.items()} })"

    def zero_grad(self) -> None:
        self.grad_data[:] = 0.0

    @property
    def num_params(self) -> int:
        return self.data.size

    def copy(self) -> ParamSet:
        return ParamSet(self.values)

    def flat(self) -> np.ndarray:
        return self.data.copy()

    def assign(self, name: str, value) -> None:
        self.values[name][...] = value

    def vars(self) -> dict[str, Var]:
        if self._leaves is not None:
            return self._leaves
        return {k: Var(v) for k, v in self.values.items()}

    @contextlib.contextmanager
    def record(self):
        self._leaves = {k: Var(v, requires_grad=True) for k, v in self.values.items()}
        try:
            yield self
        finally:
            self._leaves = None


def backward(loss: Var, *params: ParamSet) -> None:
    """Fill the gradient slots of ``params`` with d(loss)/d(param).

    Each ParamSet must be recording; parameters the loss does not depend on
    get zero gradient.
    """
    for p in params:
        if p._leaves is None:
            raise ad.NoRecordedForward("ParamSet is not recording; wrap the forward pass in params.record()")
    ad.backward_var(loss)
    for p in params:
        for k, leaf in p._leaves.items():
            p.grads[k][...] = 0.0 if leaf.grad is None else leaf.grad
            leaf.grad = None


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    values = {}
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        bound = 1.0 / math.sqrt(fan_in)
        values[f"w{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        values[f"b{i}"] = rng.uniform(-bound, bound, size=(fan_out,))
    return ParamSet(values)


def zeros_mlp(spec: MlpSpec) -> ParamSet:
    values = {}
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        values[f"w{i}"] = np.zeros((fan_in, fan_out))
        values[f"b{i}"] = np.zeros(fan_out)
    return ParamSet(values)


def _check_input(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {spec.input_dim}")
    return x


def mlp_forward(params: ParamSet, spec: MlpSpec, x) -> Var:
    """Outputs for a batch ``x`` of shape (B, input_dim) or a single vector."""
    x = _check_input(spec, x)
    single = x.ndim == 1
    h = Var(x[None, :] if single else x)
    p = params.vars()
    act = ad.relu if spec.activation == "relu" else ad.tanh
    n_layers = len(spec.layer_dims)
    for i in range(n_layers):
        h = ad.matmul(h, p[f"w{i}"]) + p[f"b{i}"]
        if i < n_layers - 1:
            h = act(h)
    if single:
        return Var(h.value[0]) if not h.requires_grad else _row(h)
    return h


def _row(h: Var) -> Var:
    return ad._node(h.value[0], (h,), lambda g: (g[None, :],))


def mlp_apply(params: ParamSet, spec: MlpSpec, x) -> np.ndarray:
    """Gradient-free forward pass on raw arrays."""
    h = _check_input(spec, x)
    n_layers = len(spec.layer_dims)
    for i in range(n_layers):
        h = h @ params.values[f"w{i}"] + params.values[f"b{i}"]
        if i < n_layers - 1:
            h = np.maximum(h, 0.0) if spec.activation == "relu" else np.tanh(h)
    return h


def forward_q(params: ParamSet, spec: MlpSpec, state) -> np.ndarray:
    return mlp_apply(params, spec, state)


def forward_policy(params: ParamSet, spec: MlpSpec, state) -> CategoricalDistribution:
    return CategoricalDistribution.from_logits(mlp_apply(params, spec, state))


@dataclass
class AlphaParam:
    """Temperature parameterised as exp(log_alpha) so it stays positive."""

    params: ParamSet

    @classmethod
    def create(cls, initial_alpha: float = 1.0) -> AlphaParam:
        if initial_alpha <= 0:
            raise ValueError("initial alpha must be positive")
        return cls(ParamSet({"log_alpha": np.array(math.log(initial_alpha))}))

    @property
    def log_alpha(self) -> float:
        return float(self.params.values["log_alpha"])

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def var(self) -> Var:
        return ad.exp(self.params.vars()["log_alpha"])


class NonFiniteGradientError(FloatingPointError):
    pass


def _check_grads(params: ParamSet) -> None:
    if np.isfinite(params.grad_data).all():
        return
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in tensor {name!r}")


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    total = float(np.linalg.norm(params.grad_data))
    if total > max_norm > 0:
        params.grad_data *= max_norm / total
    return total


@dataclass
class SGD:
    lr: float

    def step(self, params: ParamSet) -> None:
        _check_grads(params)
        params.data -= self.lr * params.grad_data


@dataclass
class Adam:
    """Adam with bias-corrected first and second moments."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def step(self, params: ParamSet) -> None:
        _check_grads(params)
        g = params.grad_data
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * g
        self.v *= b2
        self.v += (1.0 - b2) * g * g
        if self.lr == 0:
            return
        m_hat = self.m / (1.0 - b1**self.t)
        v_hat = self.v / (1.0 - b2**self.t)
        params.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, lr: float):
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def sgd_step(params: ParamSet, lr: float, optimizer_state=None) -> ParamSet:
    """One update of ``params`` from their stored gradients.

    ``optimizer_state`` is an :class:`Adam` instance for the adaptive rule;
    ``None`` means plain gradient descent.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    opt = SGD(lr) if optimizer_state is None else optimizer_state
    opt.lr = lr
    opt.step(params)
    return params


def polyak_update(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.values.keys() != online.values.keys():
        raise ValueError("target and online parameter names differ")
    for k, v in online.values.items():
        if target.values[k].shape != v.shape:
            raise ValueError(f"shape mismatch for {k!r}: {target.values[k].shape} vs {v.shape}")
    if tau == 1.0:
        target.data[:] = online.data
    else:
        target.data *= 1.0 - tau
        target.data += tau * online.data
    return target


def save_checkpoint(path: str | Path, tensors: dict[str, ParamSet], meta: dict | None = None) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian f64 blob)."""
    path = Path(path)
    index = []
    offset = 0
    chunks = []
    for group, ps in tensors.items():
        for name, v in ps.values.items():
            index.append({"group": group, "name": name, "shape": list(v.shape), "offset": offset})
            offset += v.size
            chunks.append(np.ascontiguousarray(v, dtype="<f8").ravel())
    manifest = {"version": CHECKPOINT_VERSION, "spec": meta or {}, "tensors": index, "count": offset}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    path.with_suffix(".bin").write_bytes(blob.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, ParamSet], dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if blob.size != manifest["count"]:
        raise ValueError("checkpoint blob size does not match manifest")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for entry in manifest["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = blob[entry["offset"] : entry["offset"] + n].reshape(entry["shape"]).astype(np.float64)
        groups.setdefault(entry["group"], {})[entry["name"]] = arr
    return {g: ParamSet(v) for g, v in groups.items()}, manifest["spec"]
