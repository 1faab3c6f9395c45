"""Training driver: rollouts, PPO updates and schedule updates in a loop.

Artifacts in the run directory:

* ``manifest.json``: config snapshot, overrides, seed, worker count, code version
* ``config.yaml``: resolved configuration
* ``metrics.csv``: one row per iteration
* ``checkpoints/latest.npz`` and ``checkpoints/iter_XXXXX.npz``
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import multiprocessing as mp
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rocketland import __version__
from rocketland.approx import (
    OptState,
    init_policy,
    init_value,
    load_checkpoint,
    opt_from_group,
    opt_to_group,
    save_checkpoint,
)
from rocketland.config import RunConfig, dump_config, to_dict
from rocketland.environment import TerminalKind, TrackReference, obs_dim
from rocketland.jumpstart import (
    GaussianPolicy,
    RolloutCollector,
    ScheduleState,
    make_batch,
    merge_data,
    update_annealing,
    update_success_metric,
)
from rocketland.ppo import train_iteration

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "iteration", "env_steps", "decisions", "success_rate", "batch_success", "batch_landed", "episodes", "beta", "horizon_cap",
    "surrogate", "kl", "entropy", "value_loss", "explained_variance", "policy_steps", "fault",
    "f2", "guided_after_anneal", "transitions",
)


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def nominal_track_reference(cfg: RunConfig) -> TrackReference:
    """Guide trajectory from the nominal initial state, keyed on altitude."""
    from rocketland.dynamics import IDX
    from rocketland.environment import VecLandingEnv
    from rocketland.guide import PidGuide

    nominal = copy.deepcopy(cfg)
    nominal.init = type(cfg.init)(center=dict(cfg.init.center),
                                  half_range={k: 0.0 for k in cfg.init.half_range}, wind_max=0.0)
    nominal.reward = type(cfg.reward)()
    env = VecLandingEnv(nominal, 1)
    env.reset_slot(0, np.random.default_rng(0))
    guide = PidGuide(cfg.guide, cfg.plant, 1)
    idx = np.array([0])
    ys, vals = [], []
    fields = ["x", "z", "vx", "vy", "vz"]
    while not env.done[0]:
        s = env.states[0]
        ys.append(s[IDX["y"]])
        vals.append([s[IDX[f]] for f in fields])
        env.step(idx, guide.act(env.states, idx), np.array([True]))
    return TrackReference(np.array(ys), np.array(vals))


# ---------------------------------------------------------------- workers

def _worker_main(conn, cfg: RunConfig, n_envs: int, seed: int, track_reference) -> None:
    collector = RolloutCollector(cfg, n_envs, seed, track_reference)
    while True:
        msg = conn.recv()
        if msg is None:
            break
        policy_params, value_params, sched, n = msg
        data, episodes = collector.collect(GaussianPolicy(policy_params), value_params, sched, n)
        conn.send((data, episodes, collector.env_steps, collector.decisions))
    conn.close()


class WorkerPool:
    """Persistent rollout workers, one collector each (seed_i = seed ^ i)."""

    def __init__(self, cfg: RunConfig, seed: int, track_reference=None):
        self.n = max(1, cfg.workers)
        self.local = None
        self.procs = []
        if self.n == 1:
            self.local = RolloutCollector(cfg, cfg.envs_per_worker, seed, track_reference)
            return
        ctx = mp.get_context("fork")
        self.conns = []
        for i in range(self.n):
            parent, child = ctx.Pipe()
            p = ctx.Process(target=_worker_main, args=(child, cfg, cfg.envs_per_worker, seed ^ i, track_reference),
                            daemon=True)
            p.start()
            self.conns.append(parent)
            self.procs.append(p)
        self._steps = [0] * self.n
        self._decisions = [0] * self.n

    @property
    def env_steps(self) -> int:
        return self.local.env_steps if self.local else sum(self._steps)

    @property
    def decisions(self) -> int:
        return self.local.decisions if self.local else sum(self._decisions)

    def collect(self, policy: dict, value: dict, sched: ScheduleState, n: int):
        if self.local is not None:
            return self.local.collect(GaussianPolicy(policy), value, sched, n)
        share = -(-n // self.n)
        for c in self.conns:
            c.send((policy, value, sched, share))
        parts, episodes = [], []
        for i, c in enumerate(self.conns):
            data, eps, steps, decisions = c.recv()
            parts.append(data)
            episodes.extend(eps)
            self._steps[i] = steps
            self._decisions[i] = decisions
        return merge_data(parts), episodes

    def close(self) -> None:
        for c in getattr(self, "conns", []):
            c.send(None)
        for p in self.procs:
            p.join(timeout=5)


# ---------------------------------------------------------------- driver

@dataclass
class TrainState:
    policy: dict
    value: dict
    popt: OptState
    vopt: OptState
    sched: ScheduleState
    iteration: int = 0
    env_steps: int = 0
    decisions: int = 0

    def budget_used(self, unit: str) -> int:
        return self.decisions if unit == "decision" else self.env_steps


def _dtype(cfg: RunConfig):
    return np.dtype(cfg.ppo.dtype)


def initial_state(cfg: RunConfig) -> TrainState:
    rng = np.random.default_rng([cfg.seed, 0xA11CE])
    dim = obs_dim(cfg.env.incremental)
    policy = init_policy(rng, dim, 4, tuple(cfg.ppo.hidden), _dtype(cfg), cfg.ppo.init_log_std)
    value = init_value(rng, dim, tuple(cfg.ppo.hidden), _dtype(cfg))
    return TrainState(policy, value, OptState.for_params(policy, cfg.ppo.lr), OptState.for_params(value, cfg.ppo.lr),
                      ScheduleState.from_config(cfg.schedule))


def save_state(path: Path, st: TrainState, cfg: RunConfig) -> None:
    meta = {"iteration": st.iteration, "env_steps": st.env_steps, "decisions": st.decisions, "schedule": st.sched.snapshot(),
            "obs_dim": int(st.policy["W0"].shape[0]), "incremental": cfg.env.incremental, "seed": cfg.seed}
    save_checkpoint(path, {"policy": st.policy, "value": st.value,
                           "popt": opt_to_group(st.popt), "vopt": opt_to_group(st.vopt)}, meta)


def load_state(path: Path) -> TrainState:
    groups, meta = load_checkpoint(path)
    return TrainState(groups["policy"], groups["value"], opt_from_group(groups["popt"]),
                      opt_from_group(groups["vopt"]), ScheduleState(**meta["schedule"]),
                      meta["iteration"], meta["env_steps"], meta.get("decisions", 0))


def write_manifest(out: Path, cfg: RunConfig, overrides: list[str], extra: dict | None = None) -> None:
    manifest = {"seed": cfg.seed, "workers": cfg.workers, "code_version": code_version(),
                "overrides": list(overrides), "config": to_dict(cfg), **(extra or {})}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=list))
    (out / "config.yaml").write_text(dump_config(cfg))


def train(cfg: RunConfig, overrides: list[str] | None = None, resume: bool = True,
          progress=None) -> TrainState:
    """Run training to the step budget or until annealing is complete and success has plateaued."""
    out = Path(cfg.out)
    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    latest = ckdir / "latest.npz"
    metrics_path = out / "metrics.csv"

    if resume and latest.exists():
        st = load_state(latest)
        log.info("resuming from %s at iteration %d", latest, st.iteration)
        rows = _read_metrics(metrics_path, st.iteration)
    else:
        st = initial_state(cfg)
        rows = []
        write_manifest(out, cfg, overrides or [])
        save_state(latest, st, cfg)
    _write_metrics(metrics_path, rows)

    if st.budget_used(cfg.budget_unit) >= cfg.total_steps:
        return st

    track = nominal_track_reference(cfg) if cfg.reward.mode == "track" else None
    pool = WorkerPool(cfg, cfg.seed ^ (st.iteration << 20), track)
    base_steps, base_decisions = st.env_steps, st.decisions
    learn_rng = np.random.default_rng([cfg.seed, 0x1EA2, st.iteration])
    dtype = _dtype(cfg)
    anneal_done = st.sched.variant in ("rajs_metric", "rajs_ramp") and st.sched.beta == 0.0
    best, best_iter = -np.inf, st.iteration
    try:
        while st.budget_used(cfg.budget_unit) < cfg.total_steps:
            data, episodes = pool.collect(st.policy, st.value, st.sched, cfg.ppo.batch_size)
            st.env_steps = base_steps + pool.env_steps
            st.decisions = base_decisions + pool.decisions
            p = st.sched.success
            guided_after = 0
            for ep in episodes:
                p = update_success_metric(p, ep.kind, st.sched.window)
                if ep.beta_at_start == 0.0 and anneal_done and ep.horizon > 0:
                    guided_after += 1
            st.sched.success = p
            st.sched.episodes_since_k += len(episodes)

            batch = make_batch(data, dtype, cfg.ppo.normalize_advantages)
            st.policy, st.value, st.popt, st.vopt, m = train_iteration(
                batch, st.policy, st.value, st.popt, st.vopt, cfg.ppo, learn_rng)
            st.sched = update_annealing(st.sched, st.env_steps)
            if not anneal_done and st.sched.variant in ("rajs_metric", "rajs_ramp") and st.sched.beta == 0.0:
                anneal_done = True
                best, best_iter = st.sched.success, st.iteration + 1
            st.iteration += 1

            goals = sum(1 for e in episodes if e.kind == TerminalKind.GOAL)
            landed = sum(1 for e in episodes if e.kind in (TerminalKind.GOAL, TerminalKind.FAILED_LANDING))
            f2s = [e.f2 for e in episodes if e.f2 is not None]
            row = {"iteration": st.iteration, "env_steps": st.env_steps, "decisions": st.decisions,
                   "success_rate": st.sched.success,
                   "batch_success": goals / len(episodes) if episodes else float("nan"),
                   "batch_landed": landed / len(episodes) if episodes else float("nan"),
                   "episodes": len(episodes), "beta": st.sched.beta,
                   "horizon_cap": _horizon_cap(st.sched),
                   "f2": float(np.mean(f2s)) if f2s else float("nan"),
                   "guided_after_anneal": guided_after, "transitions": len(batch),
                   **{k: m[k] for k in ("surrogate", "kl", "entropy", "value_loss", "explained_variance",
                                        "policy_steps", "fault")}}
            rows.append(row)
            _append_metric(metrics_path, row)
            if progress:
                progress(row)
            if st.iteration % cfg.checkpoint_every == 0:
                save_state(ckdir / f"iter_{st.iteration:05d}.npz", st, cfg)
                save_state(latest, st, cfg)

            if st.sched.success > best + cfg.plateau_delta:
                best, best_iter = st.sched.success, st.iteration
            annealed = st.sched.variant not in ("rajs_metric", "rajs_ramp") or st.sched.beta == 0.0
            if annealed and st.iteration - best_iter >= cfg.plateau_window:
                log.info("success plateaued at %.3f; stopping", st.sched.success)
                break
    finally:
        pool.close()
    save_state(latest, st, cfg)
    return st


def _horizon_cap(s: ScheduleState) -> float:
    if s.variant == "none":
        return 0.0
    if s.variant == "jsrl_random":
        return s.h_bar
    if s.variant == "jsrl_curriculum":
        return (1.0 - s.k / s.n) * s.h_bar
    return s.h_bar * s.beta


def _write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        w.writerows(rows)


def _append_metric(path: Path, row: dict) -> None:
    with open(path, "a", newline="") as fh:
        csv.DictWriter(fh, fieldnames=METRIC_FIELDS).writerow(row)


def _read_metrics(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(r["iteration"]) <= upto]
