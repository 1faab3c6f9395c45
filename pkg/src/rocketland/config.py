"""Configuration dataclasses and YAML loading.

Every section is a plain dataclass with defaults embedded, so an empty config
file yields a complete, runnable configuration.  Overrides use dotted keys
(``ppo.entropy_coef=0.01``) and are parsed as YAML scalars.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


@dataclass
class PlantConfig:
    stage1_thrust_min: float = 0.9e6  # N
    stage1_thrust_max: float = 2.5e6
    stage2_thrust_min: float = 0.25e6
    stage2_thrust_max: float = 0.9e6
    isp: float = 300.0  # s
    g0: float = 9.80665  # Isp reference gravity
    gravity: float = 9.81
    gimbal_limit_deg: float = 8.0
    lever_arm: float = 15.0  # m, nozzle below center of mass
    drag_area: float = 10.0  # Cd * A, m^2
    air_density: float = 1.2
    actuator_tau: float = 0.1  # s
    dry_mass: float = 40000.0
    v_switch: float = -60.0
    pitch_gyration_radius: float = 12.0  # m, I = m * r^2
    roll_gyration_radius: float = 2.0
    roll_torque_max: float = 5.0e4  # N*m
    substep: float = 0.0025
    control_interval: float = 0.01

    @property
    def substeps(self) -> int:
        n = round(self.control_interval / self.substep)
        if n < 1 or abs(n * self.substep - self.control_interval) > 1e-12:
            raise ValueError("control_interval must be an integer multiple of substep")
        return n


@dataclass
class InitConfig:
    """Centers and half-ranges of the uniform initial-state distribution."""

    center: dict[str, float] = field(default_factory=lambda: {
        "x": 50.0, "y": 2000.0, "z": 0.0,
        "vx": -10.0, "vy": -300.0, "vz": 0.0,
        "phi": 90.0, "psi": 0.0, "gamma": 0.0,
        "dphi": 0.0, "dpsi": 0.0, "dgamma": 0.0,
        "mass": 50000.0,
    })
    half_range: dict[str, float] = field(default_factory=lambda: {
        "x": 500.0, "y": 10.0, "z": 500.0,
        "vx": 50.0, "vy": 50.0, "vz": 50.0,
        "phi": 0.5, "psi": 0.5, "gamma": 0.5,
        "dphi": 0.1, "dpsi": 0.1, "dgamma": 0.1,
        "mass": 500.0,
    })
    wind_max: float = 15.0
    trim_thrust: float = 0.0


@dataclass
class RewardConfig:
    p: float = 0.1
    b: float = 3.5
    gamma: float = 0.995
    # component -> (target, half-width); vy window [-1, 0] centered at -0.5
    terminal: dict[str, tuple[float, float]] = field(default_factory=lambda: {
        "x": (0.0, 5.0), "z": (0.0, 5.0),
        "vx": (0.0, 1.0), "vy": (-0.5, 0.5), "vz": (0.0, 1.0),
        "phi": (90.0, 3.0), "psi": (0.0, 3.0),
        "dphi": (0.0, 1.5), "dpsi": (0.0, 1.5),
    })
    mode: str = "proximity"  # or "track" for the tracking-reward ablation
    track_weight: float = 1e-3


@dataclass
class EnvConfig:
    early_termination: bool = True
    a_max1: float = 40.0
    a_max2: float = 8.0
    # admissible touchdown speed; shifts the infeasibility bound down by v^2 / (2 a_max2)
    touchdown_allowance: float = 1.0
    incremental: bool = False
    k: float = 0.4
    action_repeat: int = 1  # control steps per policy decision


@dataclass
class GuideGains:
    kind: str = "pid"  # "pid" or "checkpoint:<path>"
    a_ref1: float = 25.0  # m/s^2, reference deceleration per stage
    a_ref2: float = 5.5
    v_td: float = 0.5  # touchdown speed target, m/s
    k_flare: float = 1.0  # final approach v_ref = -(v_td + k_flare * y), 1/s
    kp_v: float = 3.0  # vertical speed error -> acceleration, 1/s
    ki_v: float = 1.0
    k_pos: float = 0.2  # horizontal position -> velocity setpoint, 1/s
    v_h_max: float = 40.0
    k_vel: float = 0.6  # horizontal velocity error -> acceleration, 1/s
    tilt_max_deg: float = 12.0
    tilt_fade_alt: float = 40.0  # tilt limit ramps to zero below this altitude, m
    att_wn: float = 3.0  # attitude loop natural frequency, rad/s
    att_zeta: float = 0.8
    kd_roll: float = 0.2


@dataclass
class PpoConfig:
    gamma: float = 0.995
    lam: float = 0.97
    clip: float = 0.2
    target_kl: float = 0.01
    entropy_coef: float = 0.007
    batch_size: int = 20000
    grad_steps: int = 30
    minibatch_fraction: float = 0.25
    lr: float = 3e-4
    hidden: tuple[int, ...] = (256, 256)
    init_log_std: float = 0.0
    smoothness_coef: float = 0.0
    normalize_advantages: bool = True
    value_grad_steps: int = 30
    dtype: str = "float32"


@dataclass
class ScheduleConfig:
    variant: str = "rajs_metric"  # none | rajs_metric | rajs_ramp | jsrl_random | jsrl_curriculum
    h_bar: float = 18.0
    alpha: float = 1.0 / 1500.0
    p_thresh: float = 0.3
    window: int = 500
    ramp_start: int = 0
    ramp_end: int = 1
    curriculum_n: int = 4


@dataclass
class EvalConfig:
    episodes: int = 10000
    seed: int = 12345
    batch_envs: int = 256


@dataclass
class RunConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    init: InitConfig = field(default_factory=InitConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    guide: GuideGains = field(default_factory=GuideGains)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    total_steps: int = 20_000_000
    budget_unit: str = "control"  # "control" steps or policy "decision" steps
    workers: int = 1
    envs_per_worker: int = 256
    checkpoint_every: int = 50
    plateau_window: int = 50
    plateau_delta: float = 0.01
    out: str = "runs/default"


def to_dict(cfg: Any) -> dict:
    return dataclasses.asdict(cfg)


def _coerce(template: Any, value: Any) -> Any:
    if isinstance(template, tuple) and isinstance(value, list):
        if len(template) == len(value):
            return tuple(_coerce(t, v) for t, v in zip(template, value))
        return tuple(value)
    if isinstance(template, bool):
        return bool(value)
    if isinstance(template, (int, float)) and isinstance(value, str):
        # YAML 1.1 reads "1e6" as a string
        try:
            value = float(value)
        except ValueError:
            raise TypeError(f"expected a number, got {value!r}") from None
    if isinstance(template, float) and isinstance(value, (int, float)):
        return float(value)
    if isinstance(template, int) and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def _apply(obj: Any, data: dict, prefix: str = "") -> None:
    for key, value in data.items():
        name = f"{prefix}{key}"
        if not hasattr(obj, key):
            raise KeyError(f"unknown config key: {name}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise TypeError(f"config section {name} expects a mapping")
            _apply(current, value, name + ".")
        elif isinstance(current, dict) and isinstance(value, dict):
            merged = dict(current)
            for k, v in value.items():
                if k not in current:
                    raise KeyError(f"unknown config key: {name}.{k}")
                merged[k] = _coerce(current[k], v)
            setattr(obj, key, merged)
        else:
            setattr(obj, key, _coerce(current, value))


def parse_override(item: str) -> dict:
    """Turn ``a.b.c=value`` into a nested mapping."""
    if "=" not in item:
        raise ValueError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        extends = data.pop("extends", None)
        if extends:
            cfg = load_config(Path(path).parent / extends)
        _apply(cfg, data)
    for item in overrides or []:
        _apply(cfg, parse_override(item))
    return cfg


def apply_overrides(cfg: RunConfig, data: dict) -> RunConfig:
    cfg = copy.deepcopy(cfg)
    _apply(cfg, data)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    def plain(v: Any) -> Any:
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    return yaml.safe_dump(plain(to_dict(cfg)), sort_keys=False)
