"""Compiled Euler-Maruyama loop for the built-in three-state example.

Closed-form fields only; the generic loop in ``simulate`` is the reference
implementation and the two are cross-checked in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK, NONFINITE, GUARD, SINGULAR_B = 0, 1, 2, 3
IDEALISTIC, ZERO_NOISE, HYBRID, OPEN_LOOP = 0, 1, 2, 3
MODE_X, MODE_Z = 0, 1


@njit(cache=True, nogil=True)
def _x_of_z(z, x):
    s2 = z[0] - z[2]
    x[2] = -(z[1] + s2) / 2.0
    x[0] = z[2] + x[2]
    x[1] = math.asin(s2) if abs(s2) < 1.0 else math.nan


@njit(cache=True, nogil=True)
def _z_of_x(x, z):
    s2 = math.sin(x[1])
    z[0] = x[0] + s2 - x[2]
    z[1] = -s2 - 2.0 * x[2]
    z[2] = x[0] - x[2]


@njit(cache=True, nogil=True)
def _coeffs(x):
    s2, c2 = math.sin(x[1]), math.cos(x[1])
    q = x[0] * x[0] * s2 / (c2 * c2)
    c_d = 2.0 * s2 - 4.0 * x[2] - 2.0 * x[0] * s2 + 6.0 * q
    c_s = 4.0 * x[0]
    b = -2.0 * math.exp(x[2])
    p_d = s2 - 2.0 * x[2] + 2.0 * q
    p_s = 2.0 * x[0]
    return c_d, c_s, b, p_d, p_s


@njit(cache=True, nogil=True)
def _fgl(x, f, g, l):
    s2, c2 = math.sin(x[1]), math.cos(x[1])
    f[0] = s2 * (1.0 + x[0])
    f[1] = -2.0 * math.tan(x[1])
    f[2] = 2.0 * x[2] + x[0] * s2 - 2.0 * s2 * x[0] * x[0] / (c2 * c2)
    e = math.exp(x[2])
    g[0] = e
    g[1] = 0.0
    g[2] = e
    l[0] = x[0]
    l[1] = -2.0 * x[0] / c2
    l[2] = -x[0]


@njit(cache=True, nogil=True)
def run_example(mode, family, track, x0, dW, dt, eps_steps, d0, d1, beta, alpha, omega,
                v_const, delta, guard, stride,
                out_t, out_x, out_z, out_u, out_W, out_flag,
                j_step, j_xpre, j_xpost, j_zpre, j_zpost, j_ustar, j_dz, j_dwhat, j_skip, j_lnorm):
    n_steps = dW.shape[0]
    x = x0.copy()
    z = np.empty(3)
    _z_of_x(x, z)
    f = np.empty(3)
    g = np.empty(3)
    l = np.empty(3)
    xs = x.copy()
    us = 0.0
    W = 0.0
    n_jumps = 0
    eps = eps_steps * dt
    u = 0.0
    for i in range(n_steps):
        t = i * dt
        if track == 1:
            wt = omega * t
            cw, sw = math.cos(wt), math.sin(wt)
            yr = beta + alpha * cw
            yr1 = -alpha * omega * sw
            yr2 = -alpha * omega * omega * cw
            v = yr2 - d0 * (z[0] - yr) - d1 * (z[1] - yr1)
        else:
            v = v_const
        c_d, c_s, b, p_d, p_s = _coeffs(x)
        if family == OPEN_LOOP:
            u = v_const
        elif not abs(b) > 1e-9:
            return SINGULAR_B, i, n_jumps
        elif family == IDEALISTIC:
            u = (-c_d - c_s * (dW[i] / dt) + v) / b
        else:
            u = (-c_d + v) / b
        if family == HYBRID and i % eps_steps == 0:
            us = u
        if i % stride == 0:
            q = i // stride
            out_t[q] = t
            out_u[q] = u
            out_W[q] = W
            for j in range(3):
                out_x[q, j] = x[j]
                out_z[q, j] = z[j]
        if mode == MODE_Z:
            z1 = z[0] + z[1] * dt
            z2 = z[1] + (c_d + b * u) * dt + c_s * dW[i]
            z3 = z[2] + p_d * dt + p_s * dW[i]
            z[0] = z1
            z[1] = z2
            z[2] = z3
            _x_of_z(z, x)
        else:
            _fgl(x, f, g, l)
            for j in range(3):
                x[j] = x[j] + (f[j] + g[j] * u) * dt + l[j] * dW[i]
            _z_of_x(x, z)
        W += dW[i]
        for j in range(3):
            if not (math.isfinite(x[j]) and math.isfinite(z[j])):
                return NONFINITE, i + 1, n_jumps
        if abs(x[1]) > guard:
            return GUARD, i + 1, n_jumps
        if family == HYBRID and (i + 1) % eps_steps == 0:
            _fgl(xs, f, g, l)
            ll = l[0] * l[0] + l[1] * l[1] + l[2] * l[2]
            lnorm = math.sqrt(ll)
            j_step[n_jumps] = i + 1
            j_lnorm[n_jumps] = lnorm
            for j in range(3):
                j_xpre[n_jumps, j] = x[j]
                j_zpre[n_jumps, j] = z[j]
            if lnorm <= delta:
                j_skip[n_jumps] = 1
                j_dwhat[n_jumps] = 0.0
                j_ustar[n_jumps] = 0.0
                j_dz[n_jumps] = 0.0
            else:
                acc = 0.0
                for j in range(3):
                    acc += l[j] * (x[j] - xs[j] - (f[j] + g[j] * us) * eps)
                dwh = acc / ll
                c_s_start = 4.0 * xs[0]
                b_end = -2.0 * math.exp(x[2])
                if not abs(b_end) > 1e-9:
                    return SINGULAR_B, i + 1, n_jumps
                ustar = -c_s_start * dwh / b_end
                dz = b_end * ustar
                z[1] = z[1] + dz
                _x_of_z(z, x)
                j_skip[n_jumps] = 0
                j_dwhat[n_jumps] = dwh
                j_ustar[n_jumps] = ustar
                j_dz[n_jumps] = dz
            for j in range(3):
                j_xpost[n_jumps, j] = x[j]
                j_zpost[n_jumps, j] = z[j]
                xs[j] = x[j]
            n_jumps += 1
            if (i + 1) % stride == 0:
                out_flag[(i + 1) // stride] = 1
    q = n_steps // stride
    out_t[q] = n_steps * dt
    out_u[q] = math.nan
    out_W[q] = W
    for j in range(3):
        out_x[q, j] = x[j]
        out_z[q, j] = z[j]
    return OK, n_steps, n_jumps
