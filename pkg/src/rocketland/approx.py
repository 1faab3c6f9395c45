"""Small MLPs with reverse-mode gradients and Adam.

``Tensor`` records a tape of numpy operations; only the handful of ops the
policy/value losses need are supported.  Inference during rollouts uses the
plain numpy forward (:func:`mlp_apply`), which builds no graph.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_VERSION = 1


class NonFiniteLoss(FloatingPointError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "_parents")

    def __init__(self, data, parents=()):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents  # sequence of (tensor, vjp)

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other):
        if not isinstance(other, Tensor):
            return Tensor(self.data + other, ((self, lambda g: _unbroadcast(g, self.shape)),))
        return Tensor(self.data + other.data, (
            (self, lambda g: _unbroadcast(g, self.shape)),
            (other, lambda g: _unbroadcast(g, other.shape)),
        ))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            c = other
            return Tensor(self.data * c, ((self, lambda g: _unbroadcast(g * c, self.shape)),))
        a, b = self.data, other.data
        return Tensor(a * b, (
            (self, lambda g: _unbroadcast(g * b, self.shape)),
            (other, lambda g: _unbroadcast(g * a, other.shape)),
        ))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1
        return self * (1.0 / other)

    def __pow__(self, k: float):
        a = self.data
        return Tensor(a ** k, ((self, lambda g: g * k * a ** (k - 1)),))

    def __matmul__(self, other):
        a, b = self.data, other.data
        return Tensor(a @ b, (
            (self, lambda g: g @ b.T),
            (other, lambda g: a.T @ g),
        ))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor(out, ((self, lambda g: g * (1.0 - out * out)),))

    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, ((self, lambda g: g * out),))

    def log(self):
        a = self.data
        return Tensor(np.log(a), ((self, lambda g: g / a),))

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), ((self, vjp),))

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def clip(self, lo, hi):
        a = self.data
        mask = (a >= lo) & (a <= hi)
        return Tensor(np.clip(a, lo, hi), ((self, lambda g: g * mask),))

    def minimum(self, other):
        pick = self.data <= other.data
        return Tensor(np.where(pick, self.data, other.data), (
            (self, lambda g: _unbroadcast(g * pick, self.shape)),
            (other, lambda g: _unbroadcast(g * ~pick, other.shape)),
        ))

    def backward(self):
        order, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p, _ in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t.grad is None:
                continue
            for p, vjp in t._parents:
                g = vjp(t.grad)
                p.grad = g if p.grad is None else p.grad + g


def value_and_grad(loss_fn, params: dict) -> tuple[float, dict]:
    """Evaluate ``loss_fn(tensor_params)`` and its exact gradient w.r.t. every entry."""
    leaves = {k: Tensor(v) for k, v in params.items()}
    loss = loss_fn(leaves)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss is {value}")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return value, grads


def grad(loss_fn, params: dict) -> dict:
    return value_and_grad(loss_fn, params)[1]


# ---------------------------------------------------------------- networks

def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    a = rng.standard_normal(shape if shape[0] >= shape[1] else shape[::-1])
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def init_mlp(rng: np.random.Generator, sizes: tuple[int, ...], out_gain: float) -> dict:
    params = {}
    n = len(sizes) - 1
    for i in range(n):
        gain = np.sqrt(2.0) if i < n - 1 else out_gain
        params[f"W{i}"] = orthogonal(rng, (sizes[i], sizes[i + 1]), gain)
        params[f"b{i}"] = np.zeros(sizes[i + 1])
    return params


def init_policy(rng: np.random.Generator, obs_dim: int, act_dim: int = 4,
                hidden: tuple[int, ...] = (256, 256), dtype=np.float64, log_std: float = 0.0) -> dict:
    params = init_mlp(rng, (obs_dim, *hidden, act_dim), out_gain=0.01)
    params["log_std"] = np.full(act_dim, float(log_std))
    return {k: v.astype(dtype) for k, v in params.items()}


def init_value(rng: np.random.Generator, obs_dim: int, hidden: tuple[int, ...] = (256, 256),
               dtype=np.float64) -> dict:
    params = init_mlp(rng, (obs_dim, *hidden, 1), out_gain=1.0)
    return {k: v.astype(dtype) for k, v in params.items()}


def _n_layers(params: dict) -> int:
    return sum(1 for k in params if k.startswith("W"))


def mlp_apply(params: dict, x: np.ndarray) -> np.ndarray:
    """Graph-free forward pass: tanh hidden layers, linear output."""
    n = _n_layers(params)
    h = x
    for i in range(n):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        if i < n - 1:
            h = np.tanh(h)
    return h


def mlp_tensor(params: dict, x) -> Tensor:
    n = _n_layers(params)
    h = x if isinstance(x, Tensor) else Tensor(x)
    for i in range(n):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        if i < n - 1:
            h = h.tanh()
    return h


def policy_forward(params: dict, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = mlp_apply(params, obs)
    log_std = np.clip(params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    return mean, np.broadcast_to(log_std, mean.shape)


def value_forward(params: dict, obs: np.ndarray) -> np.ndarray:
    return mlp_apply(params, obs)[..., 0]


def gaussian_logprob(mean, log_std, action):
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_logprob_sample(mean: np.ndarray, log_std: np.ndarray,
                            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``mean + exp(log_std) * z`` and return it with its log density."""
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    z = rng.standard_normal(np.shape(mean))
    action = mean + np.exp(log_std) * z
    logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * np.shape(mean)[-1] * LOG_2PI
    return action, logp


def gaussian_entropy(log_std) -> float:
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


# ---------------------------------------------------------------- Adam

@dataclass
class OptState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float = 3e-4) -> "OptState":
        return cls(lr=lr, m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, opt: OptState) -> tuple[dict, OptState]:
    t = opt.step + 1
    new_params, m, v = {}, {}, {}
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * g
        v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * g * g
        update = opt.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + opt.eps)
        new_params[k] = (p - update).astype(p.dtype)
    return new_params, OptState(opt.lr, opt.beta1, opt.beta2, opt.eps, t, m, v)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | Path, groups: dict[str, dict], meta: dict) -> None:
    """Write parameter groups (e.g. policy, value, optimizer moments) to one ``.npz``."""
    arrays = {}
    for gname, group in groups.items():
        for k, v in group.items():
            arrays[f"{gname}/{k}"] = np.asarray(v)
    meta = {"version": CHECKPOINT_VERSION, **meta}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, dict], dict]:
    groups: dict[str, dict] = {}
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        for key in data.files:
            if key == "__meta__":
                continue
            gname, k = key.split("/", 1)
            groups.setdefault(gname, {})[k] = data[key]
    return groups, meta


def opt_to_group(opt: OptState) -> dict:
    out = {f"m.{k}": v for k, v in opt.m.items()}
    out.update({f"v.{k}": v for k, v in opt.v.items()})
    out["__hyper__"] = np.array([opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step], dtype=np.float64)
    return out


def opt_from_group(group: dict) -> OptState:
    lr, b1, b2, eps, step = group["__hyper__"]
    m = {k[2:]: v for k, v in group.items() if k.startswith("m.")}
    v = {k[2:]: v for k, v in group.items() if k.startswith("v.")}
    return OptState(float(lr), float(b1), float(b2), float(eps), int(step), m, v)
