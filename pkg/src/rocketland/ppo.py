"""PPO with GAE, entropy bonus, target-KL early stop and the smoothness penalty.

Sign convention: the surrogate objective is *maximized*; the functions that
feed the optimizer return its negation as a loss.

The smoothness penalty enters at the advantage level: each sample's
advantage is reduced by ``eps_s * ||delta_a||^2`` before the clipped
surrogate, so larger increments are discouraged through the score function.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from rocketland.approx import (
    LOG_2PI,
    LOG_STD_MAX,
    LOG_STD_MIN,
    NonFiniteLoss,
    OptState,
    Tensor,
    adam_step,
    mlp_tensor,
    value_and_grad,
    value_forward,
)
from rocketland.config import PpoConfig

log = logging.getLogger(__name__)


def compute_gae(rewards, values, gamma: float, lam: float,
                last_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for one contiguous segment.

    ``last_value`` bootstraps a segment cut before termination; a true
    termination uses the default 0.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(rewards) == 0:
        raise ValueError("empty trajectory")
    T = len(rewards)
    adv = np.empty(T)
    next_v = float(last_value)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_v - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_v = values[t]
    return adv, adv + values


def clipped_surrogate(ratio, adv, clip: float) -> np.ndarray:
    """Per-sample ``min(rho A, clip(rho, 1-eps, 1+eps) A)``."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def ppo_surrogate(ratio, adv, clip: float = 0.2, entropy: float = 0.0, entropy_coef: float = 0.0) -> float:
    return float(np.mean(clipped_surrogate(ratio, adv, clip)) + entropy_coef * entropy)


def smoothness_term(deltas, eps_s: float, incremental: bool = True) -> float:
    """``eps_s`` times the batch mean of squared increment norms."""
    if not incremental:
        raise ValueError("smoothness penalty requires incremental actions")
    d = np.asarray(deltas, dtype=float).reshape(-1, np.shape(deltas)[-1])
    return float(eps_s * np.mean(np.sum(d * d, axis=1)))


def value_loss(value_params: dict, obs, returns) -> float:
    v = value_forward(value_params, obs)
    return float(np.mean((v - returns) ** 2))


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray  # pre-clip sampled actions
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    values_old: np.ndarray
    delta_sq: np.ndarray | None = None  # ||applied increment||^2 per sample

    def __len__(self) -> int:
        return len(self.obs)

    def take(self, idx) -> "Batch":
        return Batch(*(None if a is None else a[idx] for a in (
            self.obs, self.actions, self.logp_old, self.advantages, self.returns,
            self.values_old, self.delta_sq)))


def policy_objective_terms(p: dict, batch: Batch, cfg: PpoConfig):
    """Build the (negated) policy loss graph; returns (loss, logp_new tensor, entropy)."""
    mean = mlp_tensor(p, batch.obs)
    log_std = p["log_std"].clip(LOG_STD_MIN, LOG_STD_MAX)
    z = (mean - batch.actions) * (-log_std).exp()
    d = batch.actions.shape[1]
    logp = (z * z).sum(axis=1) * -0.5 - log_std.sum() - 0.5 * d * LOG_2PI
    ratio = (logp - batch.logp_old).exp()
    adv = batch.advantages
    if cfg.smoothness_coef > 0 and batch.delta_sq is not None:
        adv = adv - cfg.smoothness_coef * batch.delta_sq
    adv = adv.astype(batch.obs.dtype)
    surr = (ratio * adv).minimum(ratio.clip(1.0 - cfg.clip, 1.0 + cfg.clip) * adv).mean()
    entropy = log_std.sum() + 0.5 * d * (1.0 + LOG_2PI)
    loss = -(surr + entropy * cfg.entropy_coef)
    return loss, logp, surr, entropy


def policy_loss(p: dict, batch: Batch, cfg: PpoConfig) -> Tensor:
    return policy_objective_terms(p, batch, cfg)[0]


def value_loss_tensor(p: dict, batch: Batch) -> Tensor:
    v = mlp_tensor(p, batch.obs)
    err = v - batch.returns[:, None]
    return (err * err).mean()


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def explained_variance(pred: np.ndarray, target: np.ndarray) -> float:
    var = np.var(target)
    return float("nan") if var == 0 else float(1.0 - np.var(target - pred) / var)


def train_iteration(batch: Batch, policy: dict, value: dict, popt: OptState, vopt: OptState,
                    cfg: PpoConfig, rng: np.random.Generator):
    """Run up to ``cfg.grad_steps`` minibatch updates.

    Returns (policy, value, popt, vopt, metrics).  On a non-finite loss the
    inputs are returned unchanged with ``metrics['fault'] = 1``.
    """
    n = len(batch)
    mb = max(1, int(cfg.batch_size * cfg.minibatch_fraction)) if n >= cfg.batch_size else max(1, n // 4)
    mb = min(mb, n)
    per_epoch = max(1, n // mb)
    metrics = {"kl": 0.0, "surrogate": float("nan"), "entropy": float("nan"), "value_loss": float("nan"),
               "explained_variance": explained_variance(batch.values_old, batch.returns),
               "policy_steps": 0, "fault": 0}
    start = (policy, value, popt, vopt)
    perm = None
    policy_active = True
    vlosses = []
    steps = max(cfg.grad_steps, cfg.value_grad_steps)
    try:
        for i in range(steps):
            if i % per_epoch == 0:
                perm = rng.permutation(n)
            j = i % per_epoch
            sub = batch.take(perm[j * mb:(j + 1) * mb])
            if policy_active and i < cfg.grad_steps:
                terms = {}

                def loss_fn(t):
                    loss, logp, surr, ent = policy_objective_terms(t, sub, cfg)
                    terms.update(logp=logp.data, surr=float(surr.data), ent=float(ent.data))
                    return loss

                _, g = value_and_grad(loss_fn, policy)
                kl = float(np.mean(sub.logp_old - terms["logp"]))
                metrics["kl"] = kl
                if i > 0 and kl > cfg.target_kl:
                    policy_active = False
                else:
                    if i == 0:
                        metrics["surrogate"] = terms["surr"]
                        metrics["entropy"] = terms["ent"]
                    policy, popt = adam_step(policy, g, popt)
                    metrics["policy_steps"] += 1
            if i < cfg.value_grad_steps:
                vl, vg = value_and_grad(lambda t: value_loss_tensor(t, sub), value)
                vlosses.append(vl)
                value, vopt = adam_step(value, vg, vopt)
            elif not policy_active:
                break
    except NonFiniteLoss as exc:
        log.warning("aborting PPO iteration: %s", exc)
        policy, value, popt, vopt = start
        metrics["fault"] = 1
        return policy, value, popt, vopt, metrics
    if any(not np.all(np.isfinite(v)) for v in (*policy.values(), *value.values())):
        policy, value, popt, vopt = start
        metrics["fault"] = 1
        return policy, value, popt, vopt, metrics
    metrics["value_loss"] = float(np.mean(vlosses)) if vlosses else float("nan")
    return policy, value, popt, vopt, metrics
