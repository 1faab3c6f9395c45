"""PID guide controller.

Tracks a two-segment constant-deceleration descent profile with a PI loop on
vertical speed, leans the thrust axis against horizontal position/velocity
error, and holds attitude with a thrust-scheduled PD loop.  It reads the raw
plant state, never the RL observation.

The controller is deliberately plain: it lands the nominal case and loses
precision under dispersed initial conditions and wind.
"""
from __future__ import annotations

import numpy as np

from rocketland.config import GuideGains, PlantConfig
from rocketland.dynamics import IDX

DEG = np.pi / 180.0


def reference_speed(y, stage, gains: GuideGains, plant: PlantConfig):
    """Reference vertical velocity (negative) and feed-forward deceleration."""
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    v_sw = plant.v_switch
    y_sw = (v_sw * v_sw - gains.v_td ** 2) / (2.0 * gains.a_ref2)
    low = -np.sqrt(gains.v_td ** 2 + 2.0 * gains.a_ref2 * np.minimum(y, y_sw))
    high = -np.sqrt(v_sw * v_sw + 2.0 * gains.a_ref1 * np.maximum(y - y_sw, 0.0))
    flare = -(gains.v_td + gains.k_flare * y)
    upper = (y > y_sw) & (np.asarray(stage) == 1)
    v_ref = np.where(y > y_sw, high, np.maximum(low, flare))
    a_ff = np.where(upper, gains.a_ref1, gains.a_ref2)
    a_ff = np.where((y <= y_sw) & (flare > low), gains.k_flare * -flare, a_ff)
    return v_ref, a_ff


def guide_action(states: np.ndarray, integ: np.ndarray, gains: GuideGains,
                 plant: PlantConfig) -> tuple[np.ndarray, np.ndarray]:
    """Batched guide law.

    Parameters
    ----------
    states : (N, 18) raw plant states
    integ : (N,) vertical-speed integrator values

    Returns
    -------
    actions : (N, 4) commands in [-1, 1] (pitch, yaw, roll, thrust)
    integ : updated integrator values
    """
    states = np.atleast_2d(states)
    dt = plant.control_interval
    y = states[:, IDX["y"]]
    vy = states[:, IDX["vy"]]
    mass = states[:, IDX["mass"]]
    stage = states[:, IDX["stage"]]

    v_ref, a_ff = reference_speed(y, stage, gains, plant)
    err = vy - v_ref
    integ = np.clip(integ + err * dt, -20.0, 20.0)
    a_cmd = a_ff - gains.kp_v * err - gains.ki_v * integ

    # horizontal: position -> velocity setpoint -> acceleration -> tilt
    pos = states[:, [IDX["x"], IDX["z"]]]
    vel = states[:, [IDX["vx"], IDX["vz"]]]
    v_h_ref = np.clip(-gains.k_pos * pos, -gains.v_h_max, gains.v_h_max)
    a_h = gains.k_vel * (v_h_ref - vel)
    lift = np.maximum(a_cmd + plant.gravity, 1.0)
    tilt = np.degrees(np.arctan2(a_h, lift[:, None]))
    tilt_max = gains.tilt_max_deg * np.clip(y / gains.tilt_fade_alt, 0.0, 1.0)
    tilt = np.clip(tilt, -tilt_max[:, None], tilt_max[:, None])
    phi_sp = 90.0 - tilt[:, 0]
    psi_sp = -tilt[:, 1]

    tmin = np.where(stage == 1, plant.stage1_thrust_min, plant.stage2_thrust_min)
    tmax = np.where(stage == 1, plant.stage1_thrust_max, plant.stage2_thrust_max)
    cos_tilt = np.cos(np.radians(np.hypot(tilt[:, 0], tilt[:, 1])))
    thrust = mass * (a_cmd + plant.gravity) / cos_tilt
    u_thrust = 2.0 * (thrust - tmin) / (tmax - tmin) - 1.0
    thrust_est = np.clip(thrust, tmin, tmax)

    # attitude: desired angular acceleration mapped through gimbal authority
    wn, zeta = gains.att_wn, gains.att_zeta
    inertia = mass * plant.pitch_gyration_radius ** 2
    authority = thrust_est * plant.lever_arm * np.radians(plant.gimbal_limit_deg) / inertia  # rad/s^2
    alpha_p = wn * wn * (phi_sp - states[:, IDX["phi"]]) - 2 * zeta * wn * states[:, IDX["dphi"]]
    alpha_y = wn * wn * (psi_sp - states[:, IDX["psi"]]) - 2 * zeta * wn * states[:, IDX["dpsi"]]
    u_pitch = alpha_p * DEG / authority
    u_yaw = alpha_y * DEG / authority
    u_roll = -gains.kd_roll * states[:, IDX["dgamma"]]

    actions = np.clip(np.stack([u_pitch, u_yaw, u_roll, u_thrust], axis=1), -1.0, 1.0)
    return actions, integ


class PidGuide:
    """Stateful batched wrapper holding per-slot integrators."""

    def __init__(self, gains: GuideGains, plant: PlantConfig, n: int = 1):
        self.gains = gains
        self.plant = plant
        self.integ = np.zeros(n)

    def reset(self, idx) -> None:
        self.integ[idx] = 0.0

    def act(self, states: np.ndarray, idx: np.ndarray) -> np.ndarray:
        a, self.integ[idx] = guide_action(states[idx], self.integ[idx], self.gains, self.plant)
        return a
