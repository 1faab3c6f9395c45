"""Pure-numpy plant kernel, vectorized across a batch of rockets.

Mirrors ``_plant_ext.pyx`` exactly; used when the compiled extension is not
available or when ``ROCKETLAND_BACKEND=python`` is set.
"""
import numpy as np

DEG = np.pi / 180.0
NCONT = 17  # continuous state entries integrated by RK4; index 17 is the stage


def _deriv(s, u, wind, stage, p):
    phi = s[:, 6] * DEG
    psi = s[:, 7] * DEG
    mass = s[:, 12]
    act = s[:, 13:17]

    tmin = np.where(stage == 1, p[0], p[2])
    tmax = np.where(stage == 1, p[1], p[3])
    thrust = tmin + 0.5 * (act[:, 3] + 1.0) * (tmax - tmin)
    thrust = np.where(mass > p[10], thrust, 0.0)

    dp = act[:, 0] * p[6]
    dy = act[:, 1] * p[6]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    cdp, sdp = np.cos(dp), np.sin(dp)
    cdy, sdy = np.cos(dy), np.sin(dy)

    # body axis and the two unit vectors it moves along under pitch / yaw
    bx, by, bz = cphi * cpsi, sphi * cpsi, -spsi
    ex, ey = -sphi, cphi
    fx, fy, fz = -cphi * spsi, -sphi * spsi, -cpsi
    dx = cdy * (cdp * bx - sdp * ex) - sdy * fx
    dyv = cdy * (cdp * by - sdp * ey) - sdy * fy
    dz = cdy * (cdp * bz) - sdy * fz

    rvx = s[:, 3] - wind[:, 0]
    rvy = s[:, 4]
    rvz = s[:, 5] - wind[:, 1]
    speed = np.sqrt(rvx * rvx + rvy * rvy + rvz * rvz)
    kd = p[8] * speed

    out = np.empty_like(s)
    out[:, 0:3] = s[:, 3:6]
    out[:, 3] = (thrust * dx - kd * rvx) / mass
    out[:, 4] = (thrust * dyv - kd * rvy) / mass - p[5]
    out[:, 5] = (thrust * dz - kd * rvz) / mass
    out[:, 6:9] = s[:, 9:12]
    inertia = mass * p[12]
    out[:, 9] = p[7] * thrust * sdp * cdy / inertia / DEG
    out[:, 10] = p[7] * thrust * sdy / inertia / DEG
    out[:, 11] = p[14] * act[:, 2] / (mass * p[13]) / DEG
    out[:, 12] = -thrust / p[4]
    out[:, 13:17] = (u - act) / p[9]
    return out


def step_batch(state, command, wind, params):
    """Advance every row of ``state`` (N, 18) by one control interval in place.

    Returns a boolean array flagging rows whose state became non-finite.
    """
    h = params[15]
    nsub = int(params[16])
    u = np.clip(command, -1.0, 1.0)
    stage = state[:, 17].copy()
    s = state[:, :NCONT].copy()
    for _ in range(nsub):
        k1 = _deriv(s, u, wind, stage, params)
        k2 = _deriv(s + 0.5 * h * k1, u, wind, stage, params)
        k3 = _deriv(s + 0.5 * h * k2, u, wind, stage, params)
        k4 = _deriv(s + h * k3, u, wind, stage, params)
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s[:, 12] = np.maximum(s[:, 12], params[10])
        np.clip(s[:, 13:17], -1.0, 1.0, out=s[:, 13:17])
        stage = np.where((stage == 1) & (s[:, 4] >= params[11]), 2.0, stage)
    state[:, :NCONT] = s
    state[:, 17] = stage
    return ~np.isfinite(state).all(axis=1)


def axial_load_batch(state, wind, params):
    phi = state[:, 6] * DEG
    psi = state[:, 7] * DEG
    mass = state[:, 12]
    act = state[:, 13:17]
    stage = state[:, 17]
    tmin = np.where(stage == 1, params[0], params[2])
    tmax = np.where(stage == 1, params[1], params[3])
    thrust = tmin + 0.5 * (act[:, 3] + 1.0) * (tmax - tmin)
    thrust = np.where(mass > params[10], thrust, 0.0)
    along = np.cos(act[:, 0] * params[6]) * np.cos(act[:, 1] * params[6])
    bx = np.cos(phi) * np.cos(psi)
    by = np.sin(phi) * np.cos(psi)
    bz = -np.sin(psi)
    rvx = state[:, 3] - wind[:, 0]
    rvy = state[:, 4]
    rvz = state[:, 5] - wind[:, 1]
    speed = np.sqrt(rvx * rvx + rvy * rvy + rvz * rvz)
    drag_axial = -params[8] * speed * (rvx * bx + rvy * by + rvz * bz)
    return (thrust * along + drag_axial) / mass
