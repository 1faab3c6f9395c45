# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled plant kernel.  Same arithmetic as ``_plant_py`` one row at a time."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, isfinite

cnp.import_array()

cdef enum:
    NCONT = 17
cdef double DEG = 3.141592653589793 / 180.0


cdef inline void deriv(const double* s, const double* u, double wx, double wz,
                       double stage, const double* p, double* out) noexcept nogil:
    cdef double phi = s[6] * DEG
    cdef double psi = s[7] * DEG
    cdef double mass = s[12]
    cdef double tmin, tmax, thrust
    if stage == 1:
        tmin = p[0]
        tmax = p[1]
    else:
        tmin = p[2]
        tmax = p[3]
    thrust = tmin + 0.5 * (s[16] + 1.0) * (tmax - tmin)
    if not (mass > p[10]):
        thrust = 0.0
    cdef double dp = s[13] * p[6]
    cdef double dy = s[14] * p[6]
    cdef double cphi = cos(phi), sphi = sin(phi)
    cdef double cpsi = cos(psi), spsi = sin(psi)
    cdef double cdp = cos(dp), sdp = sin(dp)
    cdef double cdy = cos(dy), sdy = sin(dy)
    cdef double bx = cphi * cpsi, by = sphi * cpsi, bz = -spsi
    cdef double ex = -sphi, ey = cphi
    cdef double fx = -cphi * spsi, fy = -sphi * spsi, fz = -cpsi
    cdef double dx = cdy * (cdp * bx - sdp * ex) - sdy * fx
    cdef double dyv = cdy * (cdp * by - sdp * ey) - sdy * fy
    cdef double dz = cdy * (cdp * bz) - sdy * fz
    cdef double rvx = s[3] - wx
    cdef double rvy = s[4]
    cdef double rvz = s[5] - wz
    cdef double speed = sqrt(rvx * rvx + rvy * rvy + rvz * rvz)
    cdef double kd = p[8] * speed
    cdef double inertia = mass * p[12]
    cdef int i
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = (thrust * dx - kd * rvx) / mass
    out[4] = (thrust * dyv - kd * rvy) / mass - p[5]
    out[5] = (thrust * dz - kd * rvz) / mass
    out[6] = s[9]
    out[7] = s[10]
    out[8] = s[11]
    out[9] = p[7] * thrust * sdp * cdy / inertia / DEG
    out[10] = p[7] * thrust * sdy / inertia / DEG
    out[11] = p[14] * s[15] / (mass * p[13]) / DEG
    out[12] = -thrust / p[4]
    for i in range(4):
        out[13 + i] = (u[i] - s[13 + i]) / p[9]


def step_batch(double[:, ::1] state, double[:, ::1] command, double[:, ::1] wind,
               double[::1] params):
    """Advance every row of ``state`` (N, 18) by one control interval in place."""
    cdef Py_ssize_t n = state.shape[0]
    cdef Py_ssize_t r
    cdef int j, sub
    cdef int nsub = <int>params[16]
    cdef double h = params[15]
    cdef double s[NCONT]
    cdef double tmp[NCONT]
    cdef double k1[NCONT]
    cdef double k2[NCONT]
    cdef double k3[NCONT]
    cdef double k4[NCONT]
    cdef double u[4]
    cdef double stage, wx, wz, v
    fault = np.zeros(n, dtype=bool)
    cdef cnp.uint8_t[::1] fv = fault.view(np.uint8)
    with nogil:
        for r in range(n):
            for j in range(NCONT):
                s[j] = state[r, j]
            for j in range(4):
                v = command[r, j]
                if v > 1.0:
                    v = 1.0
                elif v < -1.0:
                    v = -1.0
                u[j] = v
            stage = state[r, 17]
            wx = wind[r, 0]
            wz = wind[r, 1]
            for sub in range(nsub):
                deriv(s, u, wx, wz, stage, &params[0], k1)
                for j in range(NCONT):
                    tmp[j] = s[j] + 0.5 * h * k1[j]
                deriv(tmp, u, wx, wz, stage, &params[0], k2)
                for j in range(NCONT):
                    tmp[j] = s[j] + 0.5 * h * k2[j]
                deriv(tmp, u, wx, wz, stage, &params[0], k3)
                for j in range(NCONT):
                    tmp[j] = s[j] + h * k3[j]
                deriv(tmp, u, wx, wz, stage, &params[0], k4)
                for j in range(NCONT):
                    s[j] = s[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                if s[12] < params[10]:
                    s[12] = params[10]
                for j in range(13, 17):
                    if s[j] > 1.0:
                        s[j] = 1.0
                    elif s[j] < -1.0:
                        s[j] = -1.0
                if stage == 1 and s[4] >= params[11]:
                    stage = 2.0
            fv[r] = 0
            for j in range(NCONT):
                state[r, j] = s[j]
                if not isfinite(s[j]):
                    fv[r] = 1
            state[r, 17] = stage
    return fault
