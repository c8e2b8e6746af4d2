"""Coupled-oscillator equations of motion with the bolt tension as a state.

The state is ``(x_lo, v_lo, x_so, v_so, T)``. The two oscillators are
coupled through a spring and damper whose coefficients depend on ``T``, and
the tension decays as ``dT/dt = -gamma(T) (v_lo - v_so)**4 T``.

Integration uses an explicit Dormand-Prince 5(4) pair with PI step control.
A compiled kernel is used when available, otherwise a pure-Python loop with
identical stepping logic. Set ``BOLTROM_PURE_PYTHON=1`` to force the latter.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import _dopri, _fallback
from ._layout import (
    GAMMA_CONST, GAMMA_MODEL, GAMMA_NONE, N_PARAMS, TENSION_FROZEN, TENSION_LOG,
)
from .joint_models import (
    REF_DAMPING, REF_LOOSENING, REF_STIFFNESS, DampingModel, LooseningModel,
    StiffnessModel, coupling_damping, coupling_stiffness, loosening_rate,
)

try:
    from ._kernels import integrate_bolt as _compiled_integrate
except ImportError:  # extension not built
    _compiled_integrate = None

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10


def available_backends() -> list[str]:
    return ["compiled", "python"] if _compiled_integrate is not None else ["python"]


def default_backend() -> str:
    if _compiled_integrate is None or os.environ.get("BOLTROM_PURE_PYTHON"):
        return "python"
    return "compiled"


class SimulationError(RuntimeError):
    """Integration failed; carries the last accepted time and state."""

    def __init__(self, message: str, t: float, state: "State", status: int):
        super().__init__(f"{message} at t={t:.9g} s")
        self.t = t
        self.state = state
        self.status = status


@dataclass(frozen=True)
class OscillatorParams:
    mass: float
    stiffness: float
    damping: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.stiffness > 0:
            raise ValueError(f"stiffness must be positive, got {self.stiffness}")
        if not self.damping >= 0:
            raise ValueError(f"damping must be non-negative, got {self.damping}")

    @property
    def natural_frequency(self) -> float:
        """Undamped natural frequency in rad/s."""
        return math.sqrt(self.stiffness / self.mass)


@dataclass(frozen=True)
class SystemModel:
    """Both oscillators, the joint models and the loosening law.

    ``gamma_override`` (a constant rate) takes precedence over
    ``loosening_model``; with neither, the tension is frozen.
    """

    lo: OscillatorParams
    so: OscillatorParams
    stiffness_model: StiffnessModel
    damping_model: DampingModel
    loosening_model: Optional[LooseningModel] = None
    gamma_override: Optional[float] = None

    def gamma(self, tension):
        if self.gamma_override is not None:
            return np.full_like(np.asarray(tension, dtype=float), self.gamma_override) \
                if np.ndim(tension) else float(self.gamma_override)
        if self.loosening_model is not None:
            return loosening_rate(self.loosening_model, tension)
        return np.zeros_like(np.asarray(tension, dtype=float)) if np.ndim(tension) else 0.0

    @property
    def tension_active(self) -> bool:
        return self.gamma_override is not None or self.loosening_model is not None

    def with_gamma(self, gamma: Optional[float]) -> "SystemModel":
        return replace(self, gamma_override=None if gamma is None else float(gamma))

    def without_loosening(self) -> "SystemModel":
        return replace(self, loosening_model=None, gamma_override=None)


# Uncoupled identification of the rig and the stiffness corrections applied
# once the bolt is tightened.
REF_LO_UNCOUPLED = OscillatorParams(mass=8.625, stiffness=8148.7, damping=8.200)
REF_SO_UNCOUPLED = OscillatorParams(mass=0.9888, stiffness=76500.0, damping=2.696)
LO_STIFFNESS_CORRECTION = 1.10
SO_STIFFNESS_CORRECTION = 1.20
REF_LO = OscillatorParams(mass=8.625, stiffness=8963.6, damping=8.200)
REF_SO = OscillatorParams(mass=0.9888, stiffness=91800.0, damping=2.696)

REF_SYSTEM = SystemModel(
    lo=REF_LO, so=REF_SO,
    stiffness_model=REF_STIFFNESS, damping_model=REF_DAMPING,
    loosening_model=REF_LOOSENING,
)


class State(NamedTuple):
    """One system state; fields may also be equally shaped arrays."""

    x_lo: float
    v_lo: float
    x_so: float
    v_so: float
    tension: float


@dataclass(frozen=True)
class ForceSignal:
    """Sampled force, linearly interpolated and zero outside its samples."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=float)
        v = np.ascontiguousarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("force times and values must be 1-D arrays of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("force times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("force values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls) -> "ForceSignal":
        return cls(np.empty(0), np.empty(0))

    def __call__(self, t):
        return interpolate_force(self, t)

    def support(self, fraction: float = 1e-3) -> tuple[float, float]:
        """Time span where ``|F|`` exceeds ``fraction`` of its peak.

        Widened by one sample on each side; ``(inf, inf)`` for a zero signal.
        """
        if self.values.size == 0:
            return math.inf, math.inf
        mag = np.abs(self.values)
        peak = mag.max()
        if peak == 0.0:
            return math.inf, math.inf
        idx = np.flatnonzero(mag > fraction * peak)
        lo = max(idx[0] - 1, 0)
        hi = min(idx[-1] + 1, self.values.size - 1)
        return float(self.times[lo]), float(self.times[hi])


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (n, 5)
    dense: bool = True
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 5)
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states differ in length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return self.times.size

    def state(self, i: int) -> State:
        return State(*(float(v) for v in self.states[i]))

    @property
    def x_lo(self):
        return self.states[:, 0]

    @property
    def v_lo(self):
        return self.states[:, 1]

    @property
    def x_so(self):
        return self.states[:, 2]

    @property
    def v_so(self):
        return self.states[:, 3]

    @property
    def tension(self):
        return self.states[:, 4]


def interpolate_force(f: ForceSignal, t):
    """Linear interpolation inside the sampled span, exactly zero outside."""
    if f.times.size == 0:
        return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0
    out = np.interp(t, f.times, f.values, left=0.0, right=0.0)
    return out if np.ndim(t) else float(out)


def eom_rhs(sys: SystemModel, t, s: State, f: ForceSignal) -> State:
    """Time derivative of the state; vectorizes over array-valued fields."""
    s = State(*s)
    if not all(np.all(np.isfinite(v)) for v in s):
        raise ValueError("non-finite state passed to eom_rhs")
    tension = np.asarray(s.tension, dtype=float)
    kc = coupling_stiffness(sys.stiffness_model, tension)
    cc = coupling_damping(sys.damping_model, tension)
    vr = s.v_lo - s.v_so
    xr = s.x_lo - s.x_so
    lo, so = sys.lo, sys.so
    a_lo = (interpolate_force(f, t) - lo.damping * s.v_lo - cc * vr
            - lo.stiffness * s.x_lo - kc * xr) / lo.mass
    a_so = (-so.damping * s.v_so + cc * vr - so.stiffness * s.x_so + kc * xr) / so.mass
    v2 = vr * vr
    t_dot = -sys.gamma(tension) * v2 * v2 * tension
    return State(s.v_lo, a_lo, s.v_so, a_so, t_dot)


def _pack(sys: SystemModel, tension0: float) -> tuple[np.ndarray, float]:
    p = np.zeros(N_PARAMS)
    p[0:3] = sys.lo.mass, sys.lo.damping, sys.lo.stiffness
    p[3:6] = sys.so.mass, sys.so.damping, sys.so.stiffness
    sm, dm = sys.stiffness_model, sys.damping_model
    p[6:12] = sm.k_I, sm.alpha, sm.beta, dm.c_D, dm.c_I, dm.eta
    if sys.gamma_override is not None:
        p[12], p[13] = GAMMA_CONST, sys.gamma_override
    elif sys.loosening_model is not None:
        lm = sys.loosening_model
        p[12] = GAMMA_MODEL
        p[14:17] = lm.gamma_d, lm.gamma_I, lm.rho
    else:
        p[12] = GAMMA_NONE
    # dT/dt is proportional to T, so zero tension stays exactly zero
    if sys.tension_active and tension0 > 0:
        p[17] = TENSION_LOG
        s0 = math.log(tension0)
    else:
        p[17] = TENSION_FROZEN
        s0 = tension0
    return p, s0


def simulate(sys: SystemModel, f: ForceSignal, T0: float, t_span: tuple[float, float],
             tol: tuple[float, float] = (DEFAULT_RTOL, DEFAULT_ATOL), *,
             t_eval=None, output_rate: Optional[float] = None,
             record_steps: bool = False, support_fraction: float = 1e-3,
             max_steps: int = 50_000_000, backend: Optional[str] = None) -> Trajectory:
    """Integrate the coupled system from rest with initial tension ``T0``.

    Output times are ``t_eval`` if given, otherwise a uniform grid at
    ``output_rate`` Hz starting at ``t_span[0]``. With ``record_steps`` every
    accepted step is merged into the output; with no grid at all the
    trajectory consists of the accepted steps only.

    While inside the force's support the step size is limited so that every
    force sample is landed on; an impulse a few samples wide cannot be
    stepped over.

    Raises
    ------
    SimulationError
        On step-size underflow, non-finite states or tension overflow.
    """
    t0, t1 = (float(v) for v in t_span)
    rtol, atol = (float(v) for v in tol)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    if not (T0 >= 0 and math.isfinite(T0)):
        raise ValueError(f"initial tension must be finite and non-negative, got {T0}")
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")

    if t_eval is None and output_rate is not None:
        n = int(math.floor((t1 - t0) * output_rate + 1e-9)) + 1
        t_eval = t0 + np.arange(n) / output_rate
    if t_eval is not None:
        t_eval = np.ascontiguousarray(t_eval, dtype=float)
        if t_eval.size and (t_eval[0] < t0 or t_eval[-1] > t1 * (1 + 1e-15) + 1e-15):
            raise ValueError("t_eval must lie inside t_span")
        if t_eval.size > 1 and not np.all(np.diff(t_eval) > 0):
            raise ValueError("t_eval must be strictly increasing")
        t_eval = np.minimum(t_eval, t1)
    else:
        record_steps = True

    params, s0 = _pack(sys, T0)
    y0 = np.array([0.0, 0.0, 0.0, 0.0, s0])
    sup_lo, sup_hi = f.support(support_fraction)
    backend = backend or default_backend()
    args = (params, f.times, f.values, sup_lo, sup_hi, y0, t0, t1, rtol, atol,
            t_eval, record_steps, 0.0, math.inf, int(max_steps))
    if backend == "compiled":
        if _compiled_integrate is None:
            raise RuntimeError("compiled kernel is not available")
        res = _dopri.IntegrationResult(*_compiled_integrate(*args))
    elif backend == "python":
        res = _fallback.integrate_bolt(*args)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    log_tension = params[17] == TENSION_LOG

    def to_physical(y):
        # relative to the start so an undisturbed tension comes back bit-exact
        y = np.array(y, dtype=float, copy=True)
        if log_tension:
            with np.errstate(over="ignore"):
                y[..., 4] = T0 * np.exp(y[..., 4] - s0)
        return y

    if res.status != _dopri.STATUS_OK:
        last = to_physical(res.y_last)
        raise SimulationError(res.message, res.t_last, State(*map(float, last)), res.status)

    stats = {"n_accepted": res.n_accepted, "n_rejected": res.n_rejected,
             "nfev": res.nfev, "backend": backend}
    if t_eval is None:
        return Trajectory(res.step_t, to_physical(res.step_y), dense=False, stats=stats)
    times, states = t_eval, to_physical(res.y_out)
    if record_steps:
        times = np.concatenate([times, res.step_t])
        states = np.concatenate([states, to_physical(res.step_y)])
        times, idx = np.unique(times, return_index=True)
        states = states[idx]
    return Trajectory(times, states, dense=True, stats=stats)


def window_mean(times, values, lo: float, hi: float) -> float:
    times = np.asarray(times, dtype=float)
    mask = (times >= lo) & (times <= hi)
    if not mask.any():
        raise ValueError(f"no samples inside window [{lo}, {hi}] s")
    return float(np.mean(np.asarray(values, dtype=float)[mask]))


def tension_change_series(times, tension, t_impact: float = 0.5,
                          initial_window=(-0.5, -0.1), final_window=(1.5, 7.5)):
    """Mean tension before and after an impact, and their difference.

    Windows are relative to ``t_impact``; the defaults give [0, 0.4] s and
    [2, 8] s for an impact at 0.5 s.
    """
    times = np.asarray(times, dtype=float)
    i_lo, i_hi = t_impact + initial_window[0], t_impact + initial_window[1]
    f_lo, f_hi = t_impact + final_window[0], t_impact + final_window[1]
    slack = 1e-9
    if times.size == 0 or times[0] > i_lo + slack or times[-1] < f_hi - slack:
        raise ValueError(
            f"tension record [{times[0] if times.size else math.nan:.4g}, "
            f"{times[-1] if times.size else math.nan:.4g}] s does not cover "
            f"[{i_lo:.4g}, {f_hi:.4g}] s")
    t_init = window_mean(times, tension, i_lo - slack, i_hi + slack)
    t_final = window_mean(times, tension, f_lo - slack, f_hi + slack)
    return t_init, t_final, t_final - t_init


def tension_change(traj: Trajectory, t_impact: float = 0.5, **windows):
    """``(T_initial, T_final, delta)``; negative delta means loosening."""
    return tension_change_series(traj.times, traj.tension, t_impact, **windows)
