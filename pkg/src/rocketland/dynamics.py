"""Simplified 6-DOF rocket plant.

Rigid body with a single gimballed thrust line acting ``lever_arm`` metres
below the center of mass.  Frame: origin on the landing pad, ``y`` up, ``x``
north, ``z`` east.  Attitude uses pitch/yaw/roll Euler angles in degrees with
the body axis

    b = (cos(phi) cos(psi), sin(phi) cos(psi), -sin(psi))

so ``phi = 90`` is upright.  Pitch, yaw and roll accelerations are driven
independently by the two gimbal channels and a direct roll torque; kinematic
coupling between Euler rates is neglected.

The batched integrator lives in a compiled extension when available, with a
numpy fallback of identical arithmetic.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from rocketland.config import InitConfig, PlantConfig

_FORCE = os.environ.get("ROCKETLAND_BACKEND", "").lower()

from rocketland import _plant_py  # noqa: E402

if _FORCE == "python":
    _ext = None
else:
    try:
        from rocketland import _plant_ext as _ext
    except ImportError:
        if _FORCE == "cython":
            raise
        _ext = None

BACKEND = "cython" if _ext is not None else "python"

STATE_FIELDS = (
    "x", "y", "z", "vx", "vy", "vz",
    "phi", "psi", "gamma", "dphi", "dpsi", "dgamma",
    "mass", "a_pitch", "a_yaw", "a_roll", "a_thrust", "stage",
)
NSTATE = len(STATE_FIELDS)
IDX = {name: i for i, name in enumerate(STATE_FIELDS)}
KINEMATIC = STATE_FIELDS[:13]


class PlantFault(RuntimeError):
    """Integration produced a non-finite state."""


def kernel_backends() -> dict:
    out = {"python": _plant_py.step_batch}
    if _ext is not None:
        out["cython"] = _ext.step_batch
    return out


def step_batch(state: np.ndarray, command: np.ndarray, wind: np.ndarray,
               params: np.ndarray, backend: str | None = None) -> np.ndarray:
    """In-place batched step.  ``wind`` is (N, 2) horizontal (wx, wz) velocity."""
    fn = kernel_backends()[backend or BACKEND]
    return fn(state, np.ascontiguousarray(command, dtype=np.float64),
              np.ascontiguousarray(wind, dtype=np.float64), params)


def pack_params(cfg: PlantConfig) -> np.ndarray:
    return np.array([
        cfg.stage1_thrust_min, cfg.stage1_thrust_max,
        cfg.stage2_thrust_min, cfg.stage2_thrust_max,
        cfg.isp * cfg.g0,
        cfg.gravity,
        np.deg2rad(cfg.gimbal_limit_deg),
        cfg.lever_arm,
        0.5 * cfg.air_density * cfg.drag_area,
        cfg.actuator_tau,
        cfg.dry_mass,
        cfg.v_switch,
        cfg.pitch_gyration_radius ** 2,
        cfg.roll_gyration_radius ** 2,
        cfg.roll_torque_max,
        cfg.substep,
        float(cfg.substeps),
    ], dtype=np.float64)


@dataclass
class Wind:
    speed: float = 0.0
    direction: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.speed * np.cos(self.direction),
                         self.speed * np.sin(self.direction)])


@dataclass
class RocketState:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    phi: float = 90.0
    psi: float = 0.0
    gamma: float = 0.0
    dphi: float = 0.0
    dpsi: float = 0.0
    dgamma: float = 0.0
    mass: float = 50000.0
    actuator_state: np.ndarray = field(default_factory=lambda: np.zeros(4))
    stage: int = 1

    def to_array(self) -> np.ndarray:
        out = np.empty(NSTATE)
        for i, name in enumerate(KINEMATIC):
            out[i] = getattr(self, name)
        out[13:17] = self.actuator_state
        out[17] = self.stage
        return out

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RocketState":
        kw = {name: float(arr[i]) for i, name in enumerate(KINEMATIC)}
        return cls(**kw, actuator_state=np.array(arr[13:17], dtype=float), stage=int(arr[17]))


def sample_initial_states(rng: np.random.Generator, n: int, init: InitConfig) -> np.ndarray:
    """Draw ``n`` initial states uniformly from center +/- half-range."""
    out = np.zeros((n, NSTATE))
    for name in KINEMATIC:
        c = init.center[name]
        r = init.half_range[name]
        out[:, IDX[name]] = c + r * (2.0 * rng.random(n) - 1.0)
    out[:, IDX["a_thrust"]] = init.trim_thrust
    out[:, IDX["stage"]] = 1
    return out


def sample_initial_state(rng: np.random.Generator, init: InitConfig | None = None) -> RocketState:
    return RocketState.from_array(sample_initial_states(rng, 1, init or InitConfig())[0])


def sample_winds(rng: np.random.Generator, n: int, wind_max: float = 15.0) -> np.ndarray:
    """(n, 2) array of (speed, direction)."""
    speed = wind_max * rng.random(n)
    direction = 2.0 * np.pi * rng.random(n)
    return np.stack([speed, direction], axis=1)


def sample_wind(rng: np.random.Generator, wind_max: float = 15.0) -> Wind:
    speed, direction = sample_winds(rng, 1, wind_max)[0]
    return Wind(float(speed), float(direction))


def wind_vectors(winds: np.ndarray) -> np.ndarray:
    return np.stack([winds[:, 0] * np.cos(winds[:, 1]), winds[:, 0] * np.sin(winds[:, 1])], axis=1)


def step_plant(state: RocketState, command, wind: Wind, config: PlantConfig) -> RocketState:
    """Advance one control interval.  Raises :class:`PlantFault` on blow-up."""
    arr = state.to_array()[None, :]
    cmd = np.asarray(command, dtype=np.float64).reshape(1, 4)
    fault = step_batch(arr, cmd, wind.vector[None, :], pack_params(config))
    if fault[0]:
        raise PlantFault("non-finite plant state")
    return RocketState.from_array(arr[0])


def axial_load_batch(state: np.ndarray, wind_vec: np.ndarray, params: np.ndarray) -> np.ndarray:
    return _plant_py.axial_load_batch(state, wind_vec, params)


def axial_load(state: RocketState, config: PlantConfig, wind: Wind | None = None) -> float:
    """Specific force along the body axis (thrust plus axial drag, no gravity), m/s^2."""
    wind = wind or Wind()
    return float(axial_load_batch(state.to_array()[None, :], wind.vector[None, :],
                                  pack_params(config))[0])
