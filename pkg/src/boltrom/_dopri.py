"""Pure-Python Dormand-Prince 5(4) integrator with PI step control.

This is the reference implementation of the stepping loop. The compiled
kernel in ``_kernels.pyx`` follows it line for line for the bolted-joint
right-hand side; keep the two in sync.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Butcher tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0)
A71, A73, A74, A75, A76 = (
    35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0)
# error coefficients (5th order minus embedded 4th order)
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0,
    22.0 / 525.0, -1.0 / 40.0)
# dense output
D1, D3, D4, D5, D6, D7 = (
    -12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0)

SAFE = 0.9
FAC_MIN = 0.2   # smallest allowed h_new / h
FAC_MAX = 10.0  # largest allowed h_new / h
BETA = 0.04
EXPO1 = 0.2 - BETA * 0.75

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAX_STEPS = 3
STATUS_OVERFLOW = 4

STATUS_MESSAGES = {
    STATUS_OK: "ok",
    STATUS_UNDERFLOW: "step size underflow",
    STATUS_NONFINITE: "non-finite state",
    STATUS_MAX_STEPS: "maximum number of steps exceeded",
    STATUS_OVERFLOW: "tension overflow",
}


@dataclass
class IntegrationResult:
    status: int
    y_out: np.ndarray
    step_t: np.ndarray
    step_y: np.ndarray
    n_accepted: int
    n_rejected: int
    nfev: int
    t_last: float
    y_last: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def message(self) -> str:
        return STATUS_MESSAGES.get(self.status, "unknown status")


def _weights(y0, y1, atol, rtol):
    return [a + r * max(abs(p), abs(q)) for p, q, a, r in zip(y0, y1, atol, rtol)]


def _initial_step(fun, t0, y0, f0, atol, rtol, h_max):
    n = len(y0)
    sk = [a + r * abs(v) for v, a, r in zip(y0, atol, rtol)]
    dnf = sum((f / s) ** 2 for f, s in zip(f0, sk)) / n
    dny = sum((v / s) ** 2 for v, s in zip(y0, sk)) / n
    if dnf <= 1e-10 or dny <= 1e-10:
        h = 1e-6
    else:
        h = 0.01 * math.sqrt(dny / dnf)
    h = min(h, h_max)
    y1 = [v + h * f for v, f in zip(y0, f0)]
    f1 = fun(t0 + h, y1)
    der2 = math.sqrt(sum(((b - a) / s) ** 2 for a, b, s in zip(f0, f1, sk)) / n) / h
    der12 = max(abs(der2), math.sqrt(dnf))
    if der12 <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / der12) ** 0.2
    return min(100.0 * h, h1, h_max)


def dopri5(fun, t0, y0, t1, *, rtol, atol, t_out=None, step_cap=None,
           record_steps=False, h0=0.0, h_max=math.inf, max_steps=50_000_000,
           guard=None):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1``.

    Parameters
    ----------
    fun : callable
        ``fun(t, y) -> list`` with ``y`` a list of floats.
    rtol, atol : float or sequence of float
        Per-component tolerances. The error weight of component ``i`` is
        ``atol[i] + rtol[i] * max(|y_old[i]|, |y_new[i]|)``.
    t_out : array_like, optional
        Increasing output times inside ``[t0, t1]``, filled by dense output.
    step_cap : callable, optional
        ``step_cap(t) -> float`` upper bound on the next step from ``t``.
    guard : callable, optional
        ``guard(y) -> int`` status check on every accepted state; a non-zero
        return stops the integration with that status.

    Returns
    -------
    IntegrationResult
    """
    y = [float(v) for v in y0]
    n = len(y)
    atol_v = [float(atol)] * n if np.isscalar(atol) else [float(a) for a in atol]
    rtol_v = [float(rtol)] * n if np.isscalar(rtol) else [float(r) for r in rtol]
    t_out = np.empty(0) if t_out is None else np.asarray(t_out, dtype=float)
    n_out = len(t_out)
    y_out = np.full((n_out, n), np.nan)
    steps_t, steps_y = [], []
    if record_steps:
        steps_t.append(t0)
        steps_y.append(list(y))

    direction_span = t1 - t0
    t = float(t0)
    i_out = 0
    while i_out < n_out and t_out[i_out] <= t:
        y_out[i_out] = y
        i_out += 1

    nfev = 0
    n_acc = 0
    n_rej = 0
    status = STATUS_OK

    k1 = fun(t, y)
    nfev += 1
    if not all(math.isfinite(v) for v in k1):
        status = STATUS_NONFINITE
    h_max = min(h_max, direction_span) if direction_span > 0 else 0.0
    if status == STATUS_OK and direction_span > 0:
        h = h0 if h0 > 0 else _initial_step(fun, t, y, k1, atol_v, rtol_v, h_max)
        nfev += 0 if h0 > 0 else 1
    else:
        h = 0.0
    facold = 1e-4
    last_rejected = False

    while status == STATUS_OK and t < t1:
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAX_STEPS
            break
        h = min(h, h_max)
        if step_cap is not None:
            h = min(h, step_cap(t))
        if t + 1.01 * h >= t1:
            h = t1 - t
        if h <= 10.0 * np.finfo(float).eps * max(abs(t), 1.0):
            status = STATUS_UNDERFLOW
            break

        ys = [y[i] + h * A21 * k1[i] for i in range(n)]
        k2 = fun(t + C2 * h, ys)
        ys = [y[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(n)]
        k3 = fun(t + C3 * h, ys)
        ys = [y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]) for i in range(n)]
        k4 = fun(t + C4 * h, ys)
        ys = [y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
              for i in range(n)]
        k5 = fun(t + C5 * h, ys)
        ys = [y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i]
                          + A65 * k5[i]) for i in range(n)]
        k6 = fun(t + h, ys)
        y_new = [y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i]
                             + A76 * k6[i]) for i in range(n)]
        k7 = fun(t + h, y_new)
        nfev += 6

        sk = _weights(y, y_new, atol_v, rtol_v)
        err = 0.0
        for i in range(n):
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                     + E7 * k7[i])
            err += (e / sk[i]) ** 2
        err = math.sqrt(err / n)

        if not math.isfinite(err):
            n_rej += 1
            h *= FAC_MIN
            last_rejected = True
            continue

        fac11 = err ** EXPO1
        if err <= 1.0:
            fac = fac11 / facold ** BETA
            fac = max(1.0 / FAC_MAX, min(1.0 / FAC_MIN, fac / SAFE))
            h_new = h / fac
            facold = max(err, 1e-4)
            if last_rejected:
                h_new = min(h_new, h)
            last_rejected = False

            t_new = t + h
            if i_out < n_out and t_out[i_out] <= t_new:
                ydiff = [y_new[i] - y[i] for i in range(n)]
                bspl = [h * k1[i] - ydiff[i] for i in range(n)]
                r4 = [ydiff[i] - h * k7[i] - bspl[i] for i in range(n)]
                r5 = [h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                           + D7 * k7[i]) for i in range(n)]
                while i_out < n_out and t_out[i_out] <= t_new:
                    th = (t_out[i_out] - t) / h
                    th1 = 1.0 - th
                    y_out[i_out] = [y[i] + th * (ydiff[i] + th1 * (bspl[i] + th * (r4[i] + th1 * r5[i])))
                                    for i in range(n)]
                    i_out += 1

            t = t_new
            y = y_new
            k1 = k7
            n_acc += 1
            if record_steps:
                steps_t.append(t)
                steps_y.append(list(y))
            if not all(math.isfinite(v) for v in y):
                status = STATUS_NONFINITE
                break
            if guard is not None:
                status = guard(y)
            h = h_new
        else:
            h = h / min(1.0 / FAC_MIN, fac11 / SAFE)
            n_rej += 1
            last_rejected = True

    return IntegrationResult(
        status=status,
        y_out=y_out,
        step_t=np.asarray(steps_t, dtype=float),
        step_y=np.asarray(steps_y, dtype=float).reshape(-1, n),
        n_accepted=n_acc,
        n_rejected=n_rej,
        nfev=nfev,
        t_last=t,
        y_last=np.asarray(y, dtype=float),
    )
