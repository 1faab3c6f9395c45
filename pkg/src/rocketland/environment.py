"""Goal-oriented landing MDP on top of the plant.

Rewards are sparse: zero on every intermediate step, and on touchdown the
logarithmic proximity reward ``max(b - ln(1 + p * max_i e_i), 0)`` where
``e_i`` are terminal errors normalized by the constraint half-widths.  Other
terminations (fuel, speed reversal, kinematic infeasibility) pay nothing.
"""
from __future__ import annotations

import csv
import enum
from pathlib import Path

import numpy as np

from rocketland import dynamics
from rocketland.config import EnvConfig, RewardConfig, RunConfig
from rocketland.dynamics import IDX, NSTATE

CONSTRAINED = ("x", "z", "vx", "vy", "vz", "phi", "psi", "dphi", "dpsi")
_C_IDX = np.array([IDX[n] for n in CONSTRAINED])

# (field, scale, compression) ; compression c > 0 means sign(v) ln(1 + |v|/scale) / c
OBS_SPEC = (
    ("x", 5.0, 2.5), ("y", 10.0, 2.7), ("z", 5.0, 2.5),
    ("vx", 1.0, 2.1), ("vy", 1.0, 3.0), ("vz", 1.0, 2.1),
    ("phi", 10.0, 0.0), ("psi", 10.0, 0.0), ("gamma", 10.0, 0.0),
    ("dphi", 5.0, 0.0), ("dpsi", 5.0, 0.0), ("dgamma", 5.0, 0.0),
)
BASE_OBS_DIM = len(OBS_SPEC) + 1  # plus axial load
LOAD_SCALE = 50.0


class TerminalKind(enum.IntEnum):
    NONE = 0
    GOAL = 1
    FAILED_LANDING = 2
    FUEL_EXHAUSTION = 3
    SPEED_REVERSAL = 4
    EARLY_INFEASIBLE = 5
    FAULT = 6


class EpisodeOver(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


def _targets(cfg: RewardConfig) -> tuple[np.ndarray, np.ndarray]:
    target = np.array([cfg.terminal[n][0] for n in CONSTRAINED], dtype=float)
    rng = np.array([cfg.terminal[n][1] for n in CONSTRAINED], dtype=float)
    if np.any(rng == 0):
        raise ValueError("terminal half-width must be nonzero")
    return target, rng


def terminal_errors(states: np.ndarray, cfg: RewardConfig) -> np.ndarray:
    """Normalized absolute terminal errors, shape (N, 9)."""
    target, rng = _targets(cfg)
    return np.abs((states[:, _C_IDX] - target) / rng)


def proximity_reward_from_error(max_e, p: float = 0.1, b: float = 3.5):
    return np.maximum(b - np.log1p(p * np.asarray(max_e, dtype=float)), 0.0)


def proximity_reward(terminal_state, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    arr = terminal_state.to_array() if hasattr(terminal_state, "to_array") else np.asarray(terminal_state)
    e = terminal_errors(arr.reshape(1, -1), cfg)
    return float(proximity_reward_from_error(e.max(axis=1), cfg.p, cfg.b)[0])


def min_feasible_altitude(vy, a_max1: float = 40.0, a_max2: float = 8.0, v_sw: float = -60.0):
    """Lowest altitude from which full deceleration can still stop the descent."""
    vy = np.asarray(vy, dtype=float)
    if np.any(vy >= 0):
        raise ValueError("min_feasible_altitude requires vy < 0")
    upper = (vy * vy - v_sw * v_sw) / (2.0 * a_max1) + v_sw * v_sw / (2.0 * a_max2)
    lower = vy * vy / (2.0 * a_max2)
    out = np.where(vy <= v_sw, upper, lower)
    return float(out) if out.ndim == 0 else out


def classify_batch(states: np.ndarray, env: EnvConfig, reward: RewardConfig,
                   dry_mass: float, v_sw: float) -> np.ndarray:
    y = states[:, IDX["y"]]
    vy = states[:, IDX["vy"]]
    mass = states[:, IDX["mass"]]
    kinds = np.zeros(len(states), dtype=np.int64)
    landed = y <= 0
    ok = np.all(terminal_errors(states, reward) <= 1.0, axis=1) & (mass >= dry_mass)
    kinds[landed & ok] = TerminalKind.GOAL
    kinds[landed & ~ok] = TerminalKind.FAILED_LANDING
    rest = ~landed
    fuel = rest & (mass <= dry_mass)
    kinds[fuel] = TerminalKind.FUEL_EXHAUSTION
    rest &= ~fuel
    rev = rest & (vy >= 0)
    kinds[rev] = TerminalKind.SPEED_REVERSAL
    rest &= ~rev
    if env.early_termination and rest.any():
        idx = np.flatnonzero(rest)
        ymin = min_feasible_altitude(vy[idx], env.a_max1, env.a_max2, v_sw)
        ymin = ymin - env.touchdown_allowance ** 2 / (2.0 * env.a_max2)
        early = idx[y[idx] <= ymin]
        kinds[early] = TerminalKind.EARLY_INFEASIBLE
    return kinds


def classify_terminal(state, env: EnvConfig | None = None, reward: RewardConfig | None = None,
                      dry_mass: float = 40000.0, v_sw: float = -60.0) -> TerminalKind:
    arr = state.to_array() if hasattr(state, "to_array") else np.asarray(state)
    k = classify_batch(arr.reshape(1, -1), env or EnvConfig(), reward or RewardConfig(), dry_mass, v_sw)
    return TerminalKind(int(k[0]))


def wrap_incremental(prev_action, delta, k: float = 0.4) -> np.ndarray:
    """Absolute command after applying a scaled increment, clipped to [-1, 1]."""
    return np.clip(np.asarray(prev_action) + k * np.asarray(delta), -1.0, 1.0)


def observe_batch(states: np.ndarray, loads: np.ndarray, prev_action: np.ndarray | None = None) -> np.ndarray:
    n = len(states)
    dim = BASE_OBS_DIM + (4 if prev_action is not None else 0)
    out = np.empty((n, dim))
    for j, (name, scale, comp) in enumerate(OBS_SPEC):
        v = states[:, IDX[name]]
        if name == "phi":
            v = v - 90.0
        if comp > 0:
            out[:, j] = np.sign(v) * np.log1p(np.abs(v) / scale) / comp
        else:
            out[:, j] = v / scale
    out[:, len(OBS_SPEC)] = loads / LOAD_SCALE
    if prev_action is not None:
        out[:, BASE_OBS_DIM:] = prev_action
    return out


def obs_dim(incremental: bool) -> int:
    return BASE_OBS_DIM + (4 if incremental else 0)


class TrackReference:
    """Nominal trajectory keyed on altitude, for the tracking-reward ablation."""

    FIELDS = ("x", "z", "vx", "vy", "vz")
    SCALES = np.array([50.0, 50.0, 5.0, 5.0, 5.0])

    def __init__(self, altitude: np.ndarray, values: np.ndarray):
        order = np.argsort(altitude)
        self.altitude = np.asarray(altitude)[order]
        self.values = np.asarray(values)[order]

    def error(self, states: np.ndarray) -> np.ndarray:
        y = states[:, IDX["y"]]
        ref = np.stack([np.interp(y, self.altitude, self.values[:, j]) for j in range(len(self.FIELDS))], axis=1)
        cur = states[:, [IDX[f] for f in self.FIELDS]]
        return np.sum(((cur - ref) / self.SCALES) ** 2, axis=1)


class VecLandingEnv:
    """``n`` independent landing episodes advanced in lockstep.

    Slots are reset individually with their own generator; stepping only
    touches slots listed in ``active``.
    """

    def __init__(self, cfg: RunConfig, n: int, track_reference: TrackReference | None = None):
        self.cfg = cfg
        self.n = n
        self.params = dynamics.pack_params(cfg.plant)
        self.incremental = cfg.env.incremental
        self.states = np.zeros((n, NSTATE))
        self.winds = np.zeros((n, 2))
        self.wind_vec = np.zeros((n, 2))
        self.prev_action = np.zeros((n, 4))
        self.steps = np.zeros(n, dtype=np.int64)
        self.done = np.ones(n, dtype=bool)
        self.kind = np.zeros(n, dtype=np.int64)
        self.track_reference = track_reference
        if cfg.reward.mode == "track" and track_reference is None:
            raise ValueError("tracking reward needs a reference trajectory")

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.incremental)

    def reset_slot(self, i: int, rng: np.random.Generator) -> np.ndarray:
        init = self.cfg.init
        self.states[i] = dynamics.sample_initial_states(rng, 1, init)[0]
        self.winds[i] = dynamics.sample_winds(rng, 1, init.wind_max)[0]
        self.wind_vec[i] = dynamics.wind_vectors(self.winds[i:i + 1])[0]
        self.prev_action[i] = self.states[i, 13:17]
        self.steps[i] = 0
        self.done[i] = False
        self.kind[i] = TerminalKind.NONE
        return self.observe(np.array([i]))[0]

    def observe(self, idx: np.ndarray | None = None) -> np.ndarray:
        idx = np.arange(self.n) if idx is None else idx
        s = self.states[idx]
        loads = dynamics.axial_load_batch(s, self.wind_vec[idx], self.params)
        return observe_batch(s, loads, self.prev_action[idx] if self.incremental else None)

    def base_observe(self, idx: np.ndarray | None = None) -> np.ndarray:
        idx = np.arange(self.n) if idx is None else idx
        s = self.states[idx]
        loads = dynamics.axial_load_batch(s, self.wind_vec[idx], self.params)
        return observe_batch(s, loads, None)

    def step(self, idx: np.ndarray, actions: np.ndarray, absolute: np.ndarray | None = None,
             repeat: int = 1):
        """Step slots ``idx``; returns (obs, reward, kind, applied_action).

        The command is held for ``repeat`` control steps or until the episode
        ends, whichever comes first.
        """
        idx = np.asarray(idx, dtype=np.int64)
        if np.any(self.done[idx]):
            raise EpisodeOver("step called on a finished episode")
        a = np.clip(np.asarray(actions, dtype=np.float64), -1.0, 1.0)
        if self.incremental:
            applied = wrap_incremental(self.prev_action[idx], a, self.cfg.env.k)
            if absolute is not None:
                applied = np.where(absolute[:, None], a, applied)
        else:
            applied = a
        self.prev_action[idx] = applied
        rewards = np.zeros(len(idx))
        kinds = np.zeros(len(idx), dtype=np.int64)
        live = np.arange(len(idx))
        for _ in range(repeat):
            j = idx[live]
            sub = np.ascontiguousarray(self.states[j])
            fault = dynamics.step_batch(sub, applied[live], self.wind_vec[j], self.params)
            self.steps[j] += 1
            k = classify_batch(sub, self.cfg.env, self.cfg.reward,
                               self.cfg.plant.dry_mass, self.cfg.plant.v_switch)
            k[fault] = TerminalKind.FAULT
            landed = (k == TerminalKind.GOAL) | (k == TerminalKind.FAILED_LANDING)
            if landed.any():
                e = terminal_errors(sub[landed], self.cfg.reward).max(axis=1)
                rewards[live[landed]] = proximity_reward_from_error(e, self.cfg.reward.p, self.cfg.reward.b)
            if self.cfg.reward.mode == "track":
                ok = k == TerminalKind.NONE
                rewards[live[ok]] += -self.cfg.reward.track_weight * self.track_reference.error(sub[ok])
            if fault.any():
                sub[fault] = np.nan_to_num(sub[fault])
            self.states[j] = sub
            kinds[live] = k
            live = live[k == TerminalKind.NONE]
            if len(live) == 0:
                break
        self.kind[idx] = kinds
        self.done[idx] = kinds != TerminalKind.NONE
        obs = self.observe(idx)
        return obs, rewards, kinds, applied


class LandingEnv:
    """Single-episode convenience wrapper around :class:`VecLandingEnv`."""

    def __init__(self, cfg: RunConfig | None = None, track_reference: TrackReference | None = None):
        self.cfg = cfg or RunConfig()
        self._vec = VecLandingEnv(self.cfg, 1, track_reference)
        self._idx = np.array([0])
        self.trace: list[dict] = []

    @property
    def state(self) -> dynamics.RocketState:
        return dynamics.RocketState.from_array(self._vec.states[0])

    @property
    def raw_state(self) -> np.ndarray:
        return self._vec.states[0].copy()

    @property
    def wind(self) -> dynamics.Wind:
        return dynamics.Wind(*self._vec.winds[0])

    @property
    def done(self) -> bool:
        return bool(self._vec.done[0])

    @property
    def prev_action(self) -> np.ndarray:
        return self._vec.prev_action[0].copy()

    @property
    def obs_dim(self) -> int:
        return self._vec.obs_dim

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.trace = []
        return self._vec.reset_slot(0, rng)

    def step(self, action, absolute: bool = False, repeat: int | None = None):
        """One decision; the command is held for ``repeat`` control steps (default from config)."""
        if self.done:
            raise EpisodeOver("episode already ended; call reset()")
        repeat = self.cfg.env.action_repeat if repeat is None else repeat
        obs, r, k, applied = self._vec.step(self._idx, np.asarray(action, dtype=float).reshape(1, 4),
                                            np.array([absolute]), repeat)
        self.trace.append({"t": int(self._vec.steps[0]), "state": self._vec.states[0].copy(),
                           "action": applied[0].copy(), "reward": float(r[0]), "kind": int(k[0])})
        return obs[0], float(r[0]), TerminalKind(int(k[0]))

    def write_trace(self, path: str | Path) -> None:
        write_trace_csv(path, self.trace)


def write_trace_csv(path: str | Path, rows: list[dict]) -> None:
    header = ["t", *dynamics.STATE_FIELDS, "u_pitch", "u_yaw", "u_roll", "u_thrust", "reward", "kind"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([row["t"], *row["state"].tolist(), *row["action"].tolist(), row["reward"],
                        TerminalKind(row["kind"]).name])
