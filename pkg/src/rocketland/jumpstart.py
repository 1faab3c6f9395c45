"""Jump-start orchestration: guide-then-explore rollouts and horizon schedules.

Each episode begins with the guide in control for ``floor(H)`` steps, after
which the stochastic exploration policy takes over until termination.  Only
exploration-phase transitions are logged for training.  The horizon ``H`` is
drawn per episode from a schedule:

* ``none``: H = 0.
* ``rajs_metric``: H ~ U(0, h_bar * beta), beta decreases by ``alpha`` each
  iteration in which the moving success rate reaches ``p_thresh``.
* ``rajs_ramp``: as above, beta a linear ramp in environment steps.
* ``jsrl_random``: H ~ U(0, h_bar), never annealed.
* ``jsrl_curriculum``: H = (1 - k/n) h_bar, k stepped on the success metric.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from rocketland.approx import gaussian_logprob_sample, load_checkpoint, mlp_apply, policy_forward, value_forward
from rocketland.config import RunConfig, ScheduleConfig
from rocketland.environment import BASE_OBS_DIM, LandingEnv, TerminalKind, VecLandingEnv
from rocketland.guide import PidGuide
from rocketland.ppo import Batch, compute_gae, normalize

VARIANTS = ("none", "rajs_metric", "rajs_ramp", "jsrl_random", "jsrl_curriculum")


@dataclass
class ScheduleState:
    variant: str = "rajs_metric"
    beta: float = 1.0
    h_bar: float = 18.0
    alpha: float = 1.0 / 1500.0
    p_thresh: float = 0.3
    success: float = 0.0  # moving success rate P
    window: int = 500
    k: int = 0
    n: int = 4
    ramp_start: int = 0
    ramp_end: int = 1
    episodes_since_k: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown schedule variant {self.variant!r}")
        if self.h_bar < 0:
            raise ValueError("h_bar must be non-negative")

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "ScheduleState":
        return cls(variant=cfg.variant, h_bar=cfg.h_bar, alpha=cfg.alpha, p_thresh=cfg.p_thresh,
                   window=cfg.window, n=cfg.curriculum_n, ramp_start=cfg.ramp_start, ramp_end=cfg.ramp_end,
                   beta=0.0 if cfg.variant == "none" else 1.0)

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


def curriculum_horizon(k: int, n: int, h_bar: float) -> float:
    if not 0 <= k <= n:
        raise ValueError(f"curriculum stage k={k} outside [0, {n}]")
    return (1.0 - k / n) * h_bar


def sample_guide_horizon(state: ScheduleState, rng: np.random.Generator) -> float:
    v = state.variant
    if v == "none":
        return 0.0
    if v == "jsrl_random":
        return float(rng.uniform(0.0, state.h_bar))
    if v == "jsrl_curriculum":
        return curriculum_horizon(state.k, state.n, state.h_bar)
    upper = state.h_bar * state.beta
    return 0.0 if upper <= 0 else float(rng.uniform(0.0, upper))


def update_success_metric(p: float, kind, window: int = 500) -> float:
    hit = 1.0 if int(kind) == TerminalKind.GOAL else 0.0
    return p + (hit - p) / window


def update_annealing(state: ScheduleState, env_steps: int = 0) -> ScheduleState:
    """Once-per-iteration schedule update; returns a new state."""
    v = state.variant
    if v == "rajs_metric":
        if state.success >= state.p_thresh:
            return dataclasses.replace(state, beta=max(state.beta - state.alpha, 0.0))
        return state
    if v == "rajs_ramp":
        span = max(state.ramp_end - state.ramp_start, 1)
        beta = float(np.clip(1.0 - (env_steps - state.ramp_start) / span, 0.0, 1.0))
        return dataclasses.replace(state, beta=min(beta, state.beta))
    if v == "jsrl_curriculum":
        if (state.k < state.n and state.success >= state.p_thresh
                and state.episodes_since_k >= state.window):
            return dataclasses.replace(state, k=state.k + 1, episodes_since_k=0)
        return state
    return state


# ---------------------------------------------------------------- policies

class GaussianPolicy:
    """Wraps policy parameters for rollout-time sampling."""

    def __init__(self, params: dict):
        self.params = params
        self.dtype = params["W0"].dtype
        self.obs_dim = params["W0"].shape[0]

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        mean, log_std = policy_forward(self.params, obs.astype(self.dtype))
        a, logp = gaussian_logprob_sample(mean.astype(np.float64), log_std.astype(np.float64), rng)
        return a, logp

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return mlp_apply(self.params, obs.astype(self.dtype)).astype(np.float64)


class PidGuidePolicy:
    """Guide interface over :class:`PidGuide`: reads raw plant states."""

    incremental = False

    def __init__(self, cfg: RunConfig, n: int):
        self._pid = PidGuide(cfg.guide, cfg.plant, n)

    def reset(self, idx) -> None:
        self._pid.reset(idx)

    def act(self, env: VecLandingEnv, idx: np.ndarray) -> np.ndarray:
        return self._pid.act(env.states, idx)


class CheckpointGuide:
    """A frozen trained policy acting deterministically as the guide.

    A policy trained on the base observation is fed the base slice and its
    output applied as an absolute command.
    """

    def __init__(self, params: dict, env_incremental: bool):
        self.policy = GaussianPolicy(params)
        if self.policy.obs_dim == BASE_OBS_DIM:
            self.incremental = False
        elif self.policy.obs_dim == BASE_OBS_DIM + 4 and env_incremental:
            self.incremental = True
        else:
            raise ValueError(
                f"guide policy expects {self.policy.obs_dim}-dim observations; "
                f"environment provides {BASE_OBS_DIM} (base) "
                f"{'and ' + str(BASE_OBS_DIM + 4) + ' (incremental)' if env_incremental else 'only'}")

    @classmethod
    def from_path(cls, path: str, env_incremental: bool) -> "CheckpointGuide":
        groups, _ = load_checkpoint(path)
        return cls(groups["policy"], env_incremental)

    def reset(self, idx) -> None:
        pass

    def act(self, env: VecLandingEnv, idx: np.ndarray) -> np.ndarray:
        obs = env.observe(idx) if self.incremental else env.base_observe(idx)
        return np.clip(self.policy.mean(obs), -1.0, 1.0)


def make_guide(cfg: RunConfig, n: int):
    kind = cfg.guide.kind
    if kind == "pid":
        return PidGuidePolicy(cfg, n)
    if kind.startswith("checkpoint:"):
        return CheckpointGuide.from_path(kind.split(":", 1)[1], cfg.env.incremental)
    raise ValueError(f"unknown guide kind {kind!r}")


# ---------------------------------------------------------------- single episode

@dataclass
class RolloutRecord:
    horizon: float
    guide_steps: int
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    applied: np.ndarray  # absolute commands over the whole episode
    kind: TerminalKind
    length: int

    @property
    def n_logged(self) -> int:
        return len(self.rewards)


def rollout_episode(guide, policy: GaussianPolicy, horizon: float, env: LandingEnv,
                    rng: np.random.Generator, max_steps: int = 100_000) -> RolloutRecord:
    """Guide for ``floor(horizon)`` steps, then the stochastic policy to termination."""
    obs = env.reset(rng)
    vec = env._vec
    idx = np.array([0])
    guide.reset(idx)
    n_guide = int(np.floor(horizon))
    guide_steps = 0
    kind = TerminalKind.NONE
    o_buf, a_buf, lp_buf, r_buf, applied = [], [], [], [], []
    for t in range(max_steps):
        if t < n_guide:
            a = guide.act(vec, idx)[0]
            obs, r, kind = env.step(a, absolute=not getattr(guide, "incremental", False), repeat=1)
            guide_steps += 1
        else:
            a, lp = policy.sample(obs[None], rng)
            o_buf.append(obs)
            a_buf.append(a[0])
            lp_buf.append(lp[0])
            obs, r, kind = env.step(a[0])
            r_buf.append(r)
        applied.append(env.prev_action)
        if kind != TerminalKind.NONE:
            break
    dim = env.obs_dim
    return RolloutRecord(
        horizon=horizon, guide_steps=guide_steps,
        obs=np.array(o_buf).reshape(-1, dim), actions=np.array(a_buf).reshape(-1, 4),
        logp=np.array(lp_buf), rewards=np.array(r_buf), applied=np.array(applied).reshape(-1, 4),
        kind=kind, length=guide_steps + len(r_buf))


# ---------------------------------------------------------------- batched collection

class F2Accumulator:
    """Running per-slot F2 over the applied (absolute) commands."""

    def __init__(self, n: int):
        self.p1 = np.zeros((n, 4))
        self.p2 = np.zeros((n, 4))
        self.total = np.zeros((n, 4))
        self.count = np.zeros(n, dtype=np.int64)

    def reset(self, i: int) -> None:
        self.total[i] = 0.0
        self.count[i] = 0

    def push(self, idx: np.ndarray, applied: np.ndarray) -> None:
        c = self.count[idx]
        full = c >= 2
        if full.any():
            j = idx[full]
            self.total[j] += np.abs(applied[full] + self.p2[j] - 2.0 * self.p1[j])
        self.p2[idx] = self.p1[idx]
        self.p1[idx] = applied
        self.count[idx] += 1

    def value(self, i: int):
        return None if self.count[i] < 3 else self.total[i] / (self.count[i] - 2)



@dataclass
class EpisodeSummary:
    kind: int
    horizon: float
    guide_steps: int
    length: int
    beta_at_start: float
    f2: float | None = None  # mean over channels


@dataclass
class _Segment:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    delta_sq: list = field(default_factory=list)


class RolloutCollector:
    """Persistent set of environment slots producing PPO batches.

    Episodes carry over between iterations; a segment cut at an iteration
    boundary is bootstrapped with the value of its last observation.
    """

    def __init__(self, cfg: RunConfig, n_envs: int, seed, track_reference=None):
        self.cfg = cfg
        self.n = n_envs
        self.rng = np.random.default_rng(seed)
        self.env = VecLandingEnv(cfg, n_envs, track_reference)
        self.guide = make_guide(cfg, n_envs)
        self.guide_left = np.zeros(n_envs, dtype=np.int64)
        self.horizon = np.zeros(n_envs)
        self.beta_start = np.zeros(n_envs)
        self.obs = np.zeros((n_envs, self.env.obs_dim))
        self.segments = [_Segment() for _ in range(n_envs)]
        self.f2 = F2Accumulator(n_envs)
        self.env_steps = 0  # control steps
        self.decisions = 0  # logged exploration steps
        self._started = False

    def _reset(self, i: int, sched: ScheduleState) -> None:
        self.obs[i] = self.env.reset_slot(i, self.rng)
        h = sample_guide_horizon(sched, self.rng)
        self.horizon[i] = h
        self.guide_left[i] = int(np.floor(h))
        self.beta_start[i] = sched.beta
        self.guide.reset(np.array([i]))
        self.f2.reset(i)

    def collect(self, policy: GaussianPolicy, value_params: dict, sched: ScheduleState,
                n_transitions: int) -> tuple[dict, list[EpisodeSummary]]:
        """Step until at least ``n_transitions`` exploration transitions are logged."""
        if not self._started:
            for i in range(self.n):
                self._reset(i, sched)
            self._started = True
        episodes: list[EpisodeSummary] = []
        out = {k: [] for k in ("obs", "actions", "logp", "adv", "ret", "values", "delta_sq")}
        logged = 0
        gamma, lam = self.cfg.ppo.gamma, self.cfg.ppo.lam
        incremental = self.cfg.env.incremental
        all_idx = np.arange(self.n)

        def flush(i: int, last_value: float) -> None:
            seg = self.segments[i]
            if not seg.rewards:
                return
            adv, ret = compute_gae(seg.rewards, seg.values, gamma, lam, last_value)
            out["obs"].append(np.asarray(seg.obs))
            out["actions"].append(np.asarray(seg.actions))
            out["logp"].append(np.asarray(seg.logp))
            out["values"].append(np.asarray(seg.values))
            out["delta_sq"].append(np.asarray(seg.delta_sq))
            out["adv"].append(adv)
            out["ret"].append(ret)
            self.segments[i] = _Segment()

        repeat = self.cfg.env.action_repeat
        guide_absolute = not getattr(self.guide, "incremental", False)

        def finish(i: int, kind: int) -> None:
            flush(i, 0.0)
            f2 = self.f2.value(i)
            episodes.append(EpisodeSummary(kind, float(self.horizon[i]), int(np.floor(self.horizon[i])),
                                           int(self.env.steps[i]), float(self.beta_start[i]),
                                           None if f2 is None else float(np.mean(f2))))
            self._reset(i, sched)

        while logged < n_transitions:
            eidx = all_idx[self.guide_left == 0]
            gidx = all_idx[self.guide_left > 0]
            # guided slots advance one control step per guide call, up to `repeat` calls
            for _ in range(repeat if len(gidx) else 0):
                g = gidx[self.guide_left[gidx] > 0]
                if len(g) == 0:
                    break
                a = self.guide.act(self.env, g)
                obs, _, kinds, applied = self.env.step(g, a, np.full(len(g), guide_absolute), repeat=1)
                self.f2.push(g, applied)
                self.env_steps += len(g)
                self.guide_left[g] -= 1
                self.obs[g] = obs
                for j in np.flatnonzero(kinds != TerminalKind.NONE):
                    self.guide_left[g[j]] = 0
                    finish(g[j], int(kinds[j]))
                gidx = g[kinds == TerminalKind.NONE]
            if len(eidx) == 0:
                continue
            a, lp = policy.sample(self.obs[eidx], self.rng)
            v = value_forward(value_params, self.obs[eidx].astype(policy.dtype)).astype(np.float64)
            before = self.env.steps[eidx].copy()
            obs, rewards, kinds, applied = self.env.step(eidx, a, None, repeat=repeat)
            taken = self.env.steps[eidx] - before
            self.env_steps += int(taken.sum())
            for r in range(repeat):
                m = taken > r
                self.f2.push(eidx[m], applied[m])
            for j, i in enumerate(eidx):
                seg = self.segments[i]
                seg.obs.append(self.obs[i].copy())
                seg.actions.append(a[j].copy())
                seg.logp.append(lp[j])
                seg.values.append(v[j])
                seg.rewards.append(rewards[j])
                if incremental:
                    d = np.clip(a[j], -1.0, 1.0)
                    seg.delta_sq.append(float(d @ d))
                else:
                    seg.delta_sq.append(0.0)
            logged += len(eidx)
            self.decisions += len(eidx)
            self.obs[eidx] = obs
            for j in np.flatnonzero(kinds != TerminalKind.NONE):
                finish(eidx[j], int(kinds[j]))
        # cut live segments and bootstrap
        live = [i for i in range(self.n) if self.segments[i].rewards]
        if live:
            boot = value_forward(value_params, self.obs[live].astype(policy.dtype)).astype(np.float64)
            for j, i in enumerate(live):
                flush(i, float(boot[j]))
        data = {k: (np.concatenate(v) if v else np.zeros((0,))) for k, v in out.items()}
        return data, episodes


def make_batch(data: dict, dtype, normalize_advantages: bool = True) -> Batch:
    adv = data["adv"]
    if normalize_advantages and len(adv) > 1:
        adv = normalize(adv)
    return Batch(obs=data["obs"].astype(dtype), actions=data["actions"].astype(dtype),
                 logp_old=data["logp"].astype(dtype), advantages=adv.astype(dtype),
                 returns=data["ret"].astype(dtype), values_old=data["values"].astype(dtype),
                 delta_sq=data["delta_sq"].astype(dtype))


def merge_data(parts: list[dict]) -> dict:
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
