"""Deterministic evaluation and the landing statistics report.

Episode ``i`` of an evaluation with seed ``s`` draws its initial state and
wind from ``default_rng([s, i])``, so results do not depend on how episodes
are batched.  Learned policies act with their Gaussian mean.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rocketland.approx import load_checkpoint
from rocketland.config import RunConfig
from rocketland.dynamics import IDX, STATE_FIELDS
from rocketland.environment import CONSTRAINED, TerminalKind, VecLandingEnv, obs_dim, terminal_errors
from rocketland.jumpstart import F2Accumulator, GaussianPolicy, PidGuidePolicy

ERROR_UNITS = {"x": "m", "z": "m", "vx": "m/s", "vy": "m/s", "vz": "m/s",
               "phi": "deg", "psi": "deg", "dphi": "deg/s", "dpsi": "deg/s"}


def fluctuation_f2(actions) -> np.ndarray:
    """Mean absolute second difference per channel, ``(T, C)`` -> ``(C,)``."""
    a = np.asarray(actions, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if len(a) < 3:
        raise ValueError("F2 needs at least three actions")
    return np.mean(np.abs(a[2:] + a[:-2] - 2.0 * a[1:-1]), axis=0)


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        return float("nan")
    rank = max(1, math.ceil(q / 100.0 * len(v)))
    return float(v[rank - 1])


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class EvalReport:
    episodes: int
    success_rate: float
    landing_rate: float
    breakdown: dict[str, float]  # terminal kind -> fraction of all episodes
    satisfaction: dict[str, float]  # per constraint, over landed trials
    p99: dict[str, float]  # nearest-rank 99th percentile |error|, landed trials
    f2: np.ndarray  # mean F2 per channel (pitch, yaw, roll, thrust)
    success_ci: tuple[float, float] = (0.0, 1.0)
    rows: list[dict] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {"episodes": self.episodes, "success_rate": self.success_rate,
                "landing_rate": self.landing_rate, "success_ci": list(self.success_ci),
                "breakdown": self.breakdown, "satisfaction": self.satisfaction, "p99": self.p99,
                "f2": self.f2.tolist(), "f2_mean": float(np.mean(self.f2))}

    def table(self) -> str:
        lines = [f"episodes        {self.episodes}",
                 f"success rate    {self.success_rate:.4f}  (95% CI {self.success_ci[0]:.4f}-{self.success_ci[1]:.4f})",
                 f"landing rate    {self.landing_rate:.4f}",
                 f"speed reversal  {self.breakdown.get('SPEED_REVERSAL', 0.0):.4f}",
                 f"fuel exhausted  {self.breakdown.get('FUEL_EXHAUSTION', 0.0):.4f}",
                 f"infeasible      {self.breakdown.get('EARLY_INFEASIBLE', 0.0):.4f}",
                 "",
                 f"{'state':<6} {'satisfied':>10} {'p99 error':>12}"]
        for name in CONSTRAINED:
            lines.append(f"{name:<6} {self.satisfaction[name]:>10.4f} {self.p99[name]:>10.3f} {ERROR_UNITS[name]}")
        lines.append("")
        lines.append("F2 (pitch yaw roll thrust): " + " ".join(f"{v:.5f}" for v in self.f2))
        return "\n".join(lines)


def build_report(rows: list[dict]) -> EvalReport:
    n = len(rows)
    kinds = np.array([r["kind"] for r in rows])
    landed = (kinds == TerminalKind.GOAL) | (kinds == TerminalKind.FAILED_LANDING)
    success = kinds == TerminalKind.GOAL
    errs = np.array([[r[f"err_{c}"] for c in CONSTRAINED] for r in rows]).reshape(n, len(CONSTRAINED))
    sat = np.array([[r[f"ok_{c}"] for c in CONSTRAINED] for r in rows], dtype=bool).reshape(n, len(CONSTRAINED))
    breakdown = {k.name: float(np.mean(kinds == k)) if n else 0.0 for k in TerminalKind if k != TerminalKind.NONE}
    satisfaction = {c: float(np.mean(sat[landed, j])) if landed.any() else float("nan")
                    for j, c in enumerate(CONSTRAINED)}
    p99 = {c: nearest_rank(errs[landed, j], 99.0) for j, c in enumerate(CONSTRAINED)}
    f2 = np.array([r["f2"] for r in rows if r["f2"] is not None])
    f2_mean = f2.mean(axis=0) if len(f2) else np.full(4, np.nan)
    k = int(success.sum())
    return EvalReport(n, k / n if n else 0.0, float(landed.mean()) if n else 0.0, breakdown, satisfaction,
                      p99, f2_mean, wilson_interval(k, n), rows)


def load_policy(path: str | Path, cfg: RunConfig) -> GaussianPolicy:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    groups, _ = load_checkpoint(path)
    policy = GaussianPolicy(groups["policy"])
    expected = obs_dim(cfg.env.incremental)
    if policy.obs_dim != expected:
        raise ValueError(f"checkpoint policy takes {policy.obs_dim}-dim observations, "
                         f"environment produces {expected} (incremental={cfg.env.incremental})")
    return policy


def evaluate(cfg: RunConfig, policy: GaussianPolicy | None, n_episodes: int, seed: int,
             batch_envs: int = 256, trajectory_episodes: int = 0, trajectory_stride: int = 10,
             max_steps: int = 20000) -> tuple[EvalReport, list[dict]]:
    """Run ``n_episodes`` deterministic episodes; ``policy=None`` evaluates the PID guide.

    Returns the report and downsampled trajectory rows for the first
    ``trajectory_episodes`` episodes.
    """
    n_slots = max(1, min(batch_envs, n_episodes))
    env = VecLandingEnv(cfg, n_slots)
    guide = PidGuidePolicy(cfg, n_slots) if policy is None else None
    if policy is not None and policy.obs_dim != env.obs_dim:
        raise ValueError(f"policy takes {policy.obs_dim}-dim observations, environment produces {env.obs_dim}")
    f2 = F2Accumulator(n_slots)
    episode_of = np.full(n_slots, -1)
    start_mass = np.zeros(n_slots)
    rows: list[dict | None] = [None] * n_episodes
    traj: list[dict] = []
    next_ep = 0
    absolute = np.full(n_slots, policy is None)
    repeat = 1 if policy is None else cfg.env.action_repeat

    def start(i: int) -> None:
        nonlocal next_ep
        env.reset_slot(i, np.random.default_rng([seed, next_ep]))
        if guide is not None:
            guide.reset(np.array([i]))
        f2.reset(i)
        episode_of[i] = next_ep
        start_mass[i] = env.states[i, IDX["mass"]]
        next_ep += 1

    for i in range(n_slots):
        start(i)
    while True:
        idx = np.flatnonzero(~env.done)
        if len(idx) == 0:
            break
        if guide is not None:
            actions = guide.act(env, idx)
        else:
            actions = policy.mean(env.observe(idx))
        before = env.steps[idx].copy()
        _, _, kinds, applied = env.step(idx, actions, absolute[idx], repeat)
        taken = env.steps[idx] - before
        for r in range(repeat):
            m = taken > r
            f2.push(idx[m], applied[m])
        over = env.steps[idx] >= max_steps
        for j, i in enumerate(idx):
            ep = episode_of[i]
            if ep < trajectory_episodes and (env.steps[i] // repeat) % max(1, trajectory_stride // repeat) == 0:
                traj.append({"episode": int(ep), "t": int(env.steps[i]),
                             **dict(zip(STATE_FIELDS, env.states[i].tolist())),
                             **dict(zip(("u_pitch", "u_yaw", "u_roll", "u_thrust"), applied[j].tolist()))})
            kind = kinds[j]
            if kind == TerminalKind.NONE and over[j]:
                kind = TerminalKind.FAULT
                env.done[i] = True
            if kind != TerminalKind.NONE:
                rows[ep] = _terminal_row(cfg, ep, int(kind), env.states[i], start_mass[i], f2.value(i),
                                         int(env.steps[i]))
                if next_ep < n_episodes:
                    start(i)
    return build_report(rows), traj


def _terminal_row(cfg: RunConfig, ep: int, kind: int, state: np.ndarray, m0: float, f2, steps: int) -> dict:
    err = terminal_errors(state[None], cfg.reward)[0]
    half = np.array([cfg.reward.terminal[c][1] for c in CONSTRAINED])
    row = {"episode": ep, "kind": kind, "kind_name": TerminalKind(kind).name, "steps": steps,
           "fuel_used": float(m0 - state[IDX["mass"]]), "final_mass": float(state[IDX["mass"]]),
           "f2": None if f2 is None else np.asarray(f2).tolist()}
    for j, c in enumerate(CONSTRAINED):
        row[f"err_{c}"] = float(err[j] * half[j])
        row[f"ok_{c}"] = bool(err[j] <= 1.0)
    row["mass_ok"] = bool(state[IDX["mass"]] >= cfg.plant.dry_mass)
    return row


def write_eval_csv(path: str | Path, rows: list[dict]) -> None:
    header = ["episode", "kind_name", "steps", "fuel_used", "final_mass",
              *[f"err_{c}" for c in CONSTRAINED], "f2_pitch", "f2_yaw", "f2_roll", "f2_thrust"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            f2 = r["f2"] or [float("nan")] * 4
            w.writerow([r["episode"], r["kind_name"], r["steps"], r["fuel_used"], r["final_mass"],
                        *[r[f"err_{c}"] for c in CONSTRAINED], *f2])


def write_trajectories_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
