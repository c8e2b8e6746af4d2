"""Pure-Python bolted-joint kernel, used when the compiled extension is absent.

The fifth internal state is ``ln T`` while the tension law is active, so the
tension stays positive and the decay is not stiff in the integrated variable.
When the tension is frozen (no loosening law, or zero initial tension) the
fifth state simply carries the constant tension.
"""

from __future__ import annotations

import bisect
import math

import numpy as np

from . import _dopri
from ._layout import (
    P_ALPHA, P_BETA, P_C_LO, P_C_SO, P_CD, P_CI, P_ETA, P_GCONST, P_GD, P_GI,
    P_GMODE, P_K_LO, P_K_SO, P_KI, P_M_LO, P_M_SO, P_RHO, P_TMODE,
    GAMMA_CONST, GAMMA_MODEL, LOG_TENSION_MAX, TENSION_LOG,
)

CLAMP = 700.0


def _exp_inf(x):
    """``exp`` that saturates to inf like the C library instead of raising."""
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _clamp(a):
    return CLAMP if a > CLAMP else (-CLAMP if a < -CLAMP else a)


def make_force(ft, fv):
    ft = [float(v) for v in ft]
    fv = [float(v) for v in fv]
    n = len(ft)

    def force(t):
        if n == 0 or t < ft[0] or t > ft[-1]:
            return 0.0
        if n == 1:
            return fv[0]
        i = bisect.bisect_right(ft, t) - 1
        if i >= n - 1:
            return fv[-1]
        w = (t - ft[i]) / (ft[i + 1] - ft[i])
        return fv[i] + w * (fv[i + 1] - fv[i])

    return force


def make_step_cap(ft, sup_lo, sup_hi):
    ft = [float(v) for v in ft]
    dt_tol = 1e-9 * (ft[1] - ft[0]) if len(ft) > 1 else 0.0

    def cap(t):
        if t < sup_lo - dt_tol:
            return sup_lo - t
        if t < sup_hi - dt_tol:
            j = bisect.bisect_right(ft, t + dt_tol)
            if j < len(ft):
                return ft[j] - t
        return math.inf

    return cap


def make_rhs(params, ft, fv):
    p = [float(v) for v in params]
    m_lo, c_lo, k_lo = p[P_M_LO], p[P_C_LO], p[P_K_LO]
    m_so, c_so, k_so = p[P_M_SO], p[P_C_SO], p[P_K_SO]
    k_i, alpha, beta = p[P_KI], p[P_ALPHA], p[P_BETA]
    c_d, c_i, eta = p[P_CD], p[P_CI], p[P_ETA]
    gmode, gconst = int(p[P_GMODE]), p[P_GCONST]
    g_d, g_i, rho = p[P_GD], p[P_GI], p[P_RHO]
    log_tension = int(p[P_TMODE]) == TENSION_LOG
    force = make_force(ft, fv)
    exp = math.exp

    def rhs(t, y):
        x_lo, v_lo, x_so, v_so, s = y
        tension = _exp_inf(s) if log_tension else s
        kc = k_i / (1.0 + exp(_clamp(alpha * (tension - beta))))
        cc = c_d - c_i / (1.0 + exp(_clamp(eta * tension)))
        vr = v_lo - v_so
        xr = x_lo - x_so
        a_lo = (force(t) - c_lo * v_lo - cc * vr - k_lo * x_lo - kc * xr) / m_lo
        a_so = (-c_so * v_so + cc * vr - k_so * x_so + kc * xr) / m_so
        ds = 0.0
        if log_tension:
            if gmode == GAMMA_CONST:
                g = gconst
            elif gmode == GAMMA_MODEL:
                g = 10.0 ** (g_d - g_i / (1.0 + exp(_clamp(rho * tension))))
            else:
                g = 0.0
            v2 = vr * vr
            ds = -g * v2 * v2
        return [v_lo, a_lo, v_so, a_so, ds]

    return rhs


def integrate_bolt(params, ft, fv, sup_lo, sup_hi, y0, t0, t1, rtol, atol,
                   t_out, record_steps, h0, h_max, max_steps):
    rhs = make_rhs(params, ft, fv)
    cap = make_step_cap(ft, sup_lo, sup_hi)
    log_tension = int(params[P_TMODE]) == TENSION_LOG
    # On the log state an absolute error of rtol is a relative error of rtol in T.
    atol_v = [atol] * 4 + [atol + rtol if log_tension else atol]
    rtol_v = [rtol] * 4 + [0.0 if log_tension else rtol]

    def guard(y):
        if log_tension and y[4] > LOG_TENSION_MAX:
            return _dopri.STATUS_OVERFLOW
        return _dopri.STATUS_OK

    return _dopri.dopri5(
        rhs, t0, list(np.asarray(y0, dtype=float)), t1,
        rtol=rtol_v, atol=atol_v, t_out=t_out, step_cap=cap,
        record_steps=record_steps, h0=h0, h_max=h_max, max_steps=max_steps,
        guard=guard,
    )
