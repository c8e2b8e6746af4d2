# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Dormand-Prince 5(4) loop for the bolted-joint system.

Mirrors ``_dopri.dopri5`` with the right-hand side of ``_fallback.make_rhs``
inlined. Returns a plain tuple; ``dynamics`` wraps it.
"""

import numpy as np

from libc.math cimport exp, fabs, sqrt, pow, isfinite, INFINITY

DEF NS = 5

cdef double CLAMP = 700.0

cdef double C2 = 1.0 / 5.0, C3 = 3.0 / 10.0, C4 = 4.0 / 5.0, C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double A71 = 35.0 / 384.0, A73 = 500.0 / 1113.0, A74 = 125.0 / 192.0, A75 = -2187.0 / 6784.0, A76 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0, E5 = -17253.0 / 339200.0
cdef double E6 = 22.0 / 525.0, E7 = -1.0 / 40.0
cdef double D1 = -12715105075.0 / 11282082432.0, D3 = 87487479700.0 / 32700410799.0
cdef double D4 = -10690763975.0 / 1880347072.0, D5 = 701980252875.0 / 199316789632.0
cdef double D6 = -1453857185.0 / 822651844.0, D7 = 69997945.0 / 29380423.0

cdef double SAFE = 0.9, FAC_MIN = 0.2, FAC_MAX = 10.0, BETA = 0.04
cdef double EXPO1 = 0.2 - 0.04 * 0.75
cdef double EPS = 2.220446049250313e-16

cdef enum:
    STATUS_OK = 0
    STATUS_UNDERFLOW = 1
    STATUS_NONFINITE = 2
    STATUS_MAX_STEPS = 3
    STATUS_OVERFLOW = 4


cdef struct Model:
    double m_lo, c_lo, k_lo, m_so, c_so, k_so
    double k_i, alpha, beta, c_d, c_i, eta
    int gmode
    double gconst, g_d, g_i, rho
    int log_tension


cdef struct Force:
    const double* t
    const double* v
    Py_ssize_t n
    Py_ssize_t hint


cdef inline double _clamp(double a) nogil:
    if a > CLAMP:
        return CLAMP
    if a < -CLAMP:
        return -CLAMP
    return a


cdef inline double _force(Force* f, double t) nogil:
    cdef Py_ssize_t i
    cdef double w
    if f.n == 0 or t < f.t[0] or t > f.t[f.n - 1]:
        return 0.0
    if f.n == 1:
        return f.v[0]
    i = f.hint
    if i > f.n - 2:
        i = f.n - 2
    while i > 0 and f.t[i] > t:
        i -= 1
    while i < f.n - 2 and f.t[i + 1] <= t:
        i += 1
    f.hint = i
    w = (t - f.t[i]) / (f.t[i + 1] - f.t[i])
    return f.v[i] + w * (f.v[i + 1] - f.v[i])


cdef inline void _rhs(Model* m, Force* f, double t, double* y, double* dy) nogil:
    cdef double tension, kc, cc, vr, xr, g, v2
    if m.log_tension:
        tension = exp(y[4])
    else:
        tension = y[4]
    kc = m.k_i / (1.0 + exp(_clamp(m.alpha * (tension - m.beta))))
    cc = m.c_d - m.c_i / (1.0 + exp(_clamp(m.eta * tension)))
    vr = y[1] - y[3]
    xr = y[0] - y[2]
    dy[0] = y[1]
    dy[1] = (_force(f, t) - m.c_lo * y[1] - cc * vr - m.k_lo * y[0] - kc * xr) / m.m_lo
    dy[2] = y[3]
    dy[3] = (-m.c_so * y[3] + cc * vr - m.k_so * y[2] + kc * xr) / m.m_so
    dy[4] = 0.0
    if m.log_tension:
        if m.gmode == 1:
            g = m.gconst
        elif m.gmode == 2:
            g = pow(10.0, m.g_d - m.g_i / (1.0 + exp(_clamp(m.rho * tension))))
        else:
            g = 0.0
        v2 = vr * vr
        dy[4] = -g * v2 * v2


cdef inline double _step_cap(Force* f, double t, double sup_lo, double sup_hi, double dt_tol) nogil:
    cdef Py_ssize_t lo, hi, mid
    if t < sup_lo - dt_tol:
        return sup_lo - t
    if t < sup_hi - dt_tol:
        # first sample strictly after t + dt_tol (bisect_right)
        lo = 0
        hi = f.n
        while lo < hi:
            mid = (lo + hi) // 2
            if f.t[mid] <= t + dt_tol:
                lo = mid + 1
            else:
                hi = mid
        if lo < f.n:
            return f.t[lo] - t
    return INFINITY


def integrate_bolt(double[::1] params, double[::1] ft, double[::1] fv,
                   double sup_lo, double sup_hi, y0, double t0, double t1,
                   double rtol, double atol, t_out, bint record_steps,
                   double h0, double h_max, long max_steps):
    cdef Model m
    cdef Force f
    cdef double y[NS]
    cdef double ys[NS]
    cdef double ynew[NS]
    cdef double k1[NS]
    cdef double k2[NS]
    cdef double k3[NS]
    cdef double k4[NS]
    cdef double k5[NS]
    cdef double k6[NS]
    cdef double k7[NS]
    cdef double atol_v[NS]
    cdef double rtol_v[NS]
    cdef double ydiff[NS]
    cdef double bspl[NS]
    cdef double r4[NS]
    cdef double r5[NS]
    cdef double sk[NS]
    cdef int i, status = STATUS_OK
    cdef long n_acc = 0, n_rej = 0, nfev = 0
    cdef double t, h, h_new, err, e, fac, fac11, facold = 1e-4, t_new, th, th1
    cdef double dnf, dny, der2, der12, h1, span, dt_tol
    cdef bint last_rejected = False
    cdef Py_ssize_t i_out = 0, n_out

    m.m_lo = params[0]; m.c_lo = params[1]; m.k_lo = params[2]
    m.m_so = params[3]; m.c_so = params[4]; m.k_so = params[5]
    m.k_i = params[6]; m.alpha = params[7]; m.beta = params[8]
    m.c_d = params[9]; m.c_i = params[10]; m.eta = params[11]
    m.gmode = <int>params[12]; m.gconst = params[13]
    m.g_d = params[14]; m.g_i = params[15]; m.rho = params[16]
    m.log_tension = <int>params[17] == 1

    f.n = ft.shape[0]
    f.t = &ft[0] if f.n > 0 else NULL
    f.v = &fv[0] if f.n > 0 else NULL
    f.hint = 0
    dt_tol = 1e-9 * (ft[1] - ft[0]) if f.n > 1 else 0.0

    cdef double[::1] tout = np.ascontiguousarray(t_out if t_out is not None else np.empty(0), dtype=float)
    n_out = tout.shape[0]
    y_out_arr = np.full((n_out, NS), np.nan)
    cdef double[:, ::1] y_out = y_out_arr

    for i in range(NS):
        y[i] = float(y0[i])
        atol_v[i] = atol
        rtol_v[i] = rtol
    if m.log_tension:
        atol_v[4] = atol + rtol
        rtol_v[4] = 0.0

    steps_t = []
    steps_y = []
    if record_steps:
        steps_t.append(t0)
        steps_y.append([y[i] for i in range(NS)])

    t = t0
    while i_out < n_out and tout[i_out] <= t:
        for i in range(NS):
            y_out[i_out, i] = y[i]
        i_out += 1

    _rhs(&m, &f, t, y, k1)
    nfev += 1
    for i in range(NS):
        if not isfinite(k1[i]):
            status = STATUS_NONFINITE
    span = t1 - t0
    if span > 0:
        if h_max > span:
            h_max = span
    else:
        h_max = 0.0

    h = 0.0
    if status == STATUS_OK and span > 0:
        if h0 > 0:
            h = h0
        else:
            dnf = 0.0
            dny = 0.0
            for i in range(NS):
                sk[i] = atol_v[i] + rtol_v[i] * fabs(y[i])
                dnf += (k1[i] / sk[i]) ** 2
                dny += (y[i] / sk[i]) ** 2
            dnf /= NS
            dny /= NS
            if dnf <= 1e-10 or dny <= 1e-10:
                h = 1e-6
            else:
                h = 0.01 * sqrt(dny / dnf)
            if h > h_max:
                h = h_max
            for i in range(NS):
                ys[i] = y[i] + h * k1[i]
            _rhs(&m, &f, t + h, ys, k2)
            nfev += 1
            der2 = 0.0
            for i in range(NS):
                der2 += ((k2[i] - k1[i]) / sk[i]) ** 2
            der2 = sqrt(der2 / NS) / h
            der12 = fabs(der2)
            if sqrt(dnf) > der12:
                der12 = sqrt(dnf)
            if der12 <= 1e-15:
                h1 = h * 1e-3
                if h1 < 1e-6:
                    h1 = 1e-6
            else:
                h1 = pow(0.01 / der12, 0.2)
            h = 100.0 * h
            if h1 < h:
                h = h1
            if h_max < h:
                h = h_max

    while status == STATUS_OK and t < t1:
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAX_STEPS
            break
        if h > h_max:
            h = h_max
        fac = _step_cap(&f, t, sup_lo, sup_hi, dt_tol)
        if fac < h:
            h = fac
        if t + 1.01 * h >= t1:
            h = t1 - t
        if h <= 10.0 * EPS * (fabs(t) if fabs(t) > 1.0 else 1.0):
            status = STATUS_UNDERFLOW
            break

        for i in range(NS):
            ys[i] = y[i] + h * A21 * k1[i]
        _rhs(&m, &f, t + C2 * h, ys, k2)
        for i in range(NS):
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(&m, &f, t + C3 * h, ys, k3)
        for i in range(NS):
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(&m, &f, t + C4 * h, ys, k4)
        for i in range(NS):
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _rhs(&m, &f, t + C5 * h, ys, k5)
        for i in range(NS):
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
        _rhs(&m, &f, t + h, ys, k6)
        for i in range(NS):
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
        _rhs(&m, &f, t + h, ynew, k7)
        nfev += 6

        err = 0.0
        for i in range(NS):
            sk[i] = atol_v[i] + rtol_v[i] * (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i]))
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            err += (e / sk[i]) ** 2
        err = sqrt(err / NS)

        if not isfinite(err):
            n_rej += 1
            h *= FAC_MIN
            last_rejected = True
            continue

        fac11 = pow(err, EXPO1)
        if err <= 1.0:
            fac = fac11 / pow(facold, BETA)
            fac = fac / SAFE
            if fac > 1.0 / FAC_MIN:
                fac = 1.0 / FAC_MIN
            if fac < 1.0 / FAC_MAX:
                fac = 1.0 / FAC_MAX
            h_new = h / fac
            facold = err if err > 1e-4 else 1e-4
            if last_rejected and h_new > h:
                h_new = h
            last_rejected = False

            t_new = t + h
            if i_out < n_out and tout[i_out] <= t_new:
                for i in range(NS):
                    ydiff[i] = ynew[i] - y[i]
                    bspl[i] = h * k1[i] - ydiff[i]
                    r4[i] = ydiff[i] - h * k7[i] - bspl[i]
                    r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                while i_out < n_out and tout[i_out] <= t_new:
                    th = (tout[i_out] - t) / h
                    th1 = 1.0 - th
                    for i in range(NS):
                        y_out[i_out, i] = y[i] + th * (ydiff[i] + th1 * (bspl[i] + th * (r4[i] + th1 * r5[i])))
                    i_out += 1

            t = t_new
            for i in range(NS):
                y[i] = ynew[i]
                k1[i] = k7[i]
            n_acc += 1
            if record_steps:
                steps_t.append(t)
                steps_y.append([y[i] for i in range(NS)])
            for i in range(NS):
                if not isfinite(y[i]):
                    status = STATUS_NONFINITE
            if status == STATUS_OK and m.log_tension and y[4] > 709.0:
                status = STATUS_OVERFLOW
            h = h_new
        else:
            fac = fac11 / SAFE
            if fac > 1.0 / FAC_MIN:
                fac = 1.0 / FAC_MIN
            h = h / fac
            n_rej += 1
            last_rejected = True

    return (
        status,
        y_out_arr,
        np.asarray(steps_t, dtype=float),
        np.asarray(steps_y, dtype=float).reshape(-1, NS),
        n_acc,
        n_rej,
        nfev,
        t,
        np.array([y[i] for i in range(NS)]),
    )
