"""Derivative-free identification of the per-case loosening rate.

Each measurement case gets one constant γ, chosen so that simulating the
case reproduces its measured final tension. The search is a generalized
pattern search (coordinate polling with mesh expansion and contraction).
"""

from __future__ import annotations

import math
import sys
from functools import partial
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dynamics import (
    DEFAULT_ATOL, DEFAULT_RTOL, SimulationError, SystemModel, simulate,
    tension_change_series,
)

EPS = sys.float_info.epsilon


class IdentificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PatternSearchOptions:
    mesh_tolerance: float = 1e-12
    function_tolerance: float = EPS
    step_tolerance: float = EPS
    max_evals: int = 10**10
    max_iters: int = 10**10
    initial_mesh: Optional[float] = None
    expansion: float = 2.0
    contraction: float = 0.5
    complete_poll: bool = False
    log_transform: bool = False

    def __post_init__(self):
        for name in ("mesh_tolerance", "function_tolerance", "step_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.expansion > 1:
            raise ValueError("expansion factor must exceed 1")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction factor must lie in (0, 1)")
        if self.initial_mesh is not None and not self.initial_mesh > 0:
            raise ValueError("initial mesh must be positive")
        if self.max_evals < 1 or self.max_iters < 1:
            raise ValueError("evaluation and iteration caps must be positive")


@dataclass(frozen=True)
class PatternSearchResult:
    x: Union[float, np.ndarray]
    fun: float
    evals: int
    iterations: int
    mesh: float
    reason: str
    failed_evals: int = 0

    def __iter__(self):
        # unpacks as (x, f, evals)
        return iter((self.x, self.fun, self.evals))


def signed_log(g):
    """``sgn(g) log10(1 + |g|)``: monotone, odd, and near-linear around 0."""
    g = np.asarray(g, dtype=float)
    return np.sign(g) * np.log10(1.0 + np.abs(g))


def signed_exp(u):
    """Inverse of :func:`signed_log`."""
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.expm1(np.abs(u) * math.log(10.0))


def _safe_eval(objective, x):
    try:
        v = float(objective(x))
    except (ArithmeticError, ValueError, SimulationError):
        return math.nan
    return v


def pattern_search(objective: Callable, x0, lower, upper,
                   opts: PatternSearchOptions = PatternSearchOptions(), *,
                   map_fn: Optional[Callable] = None) -> PatternSearchResult:
    """Minimize ``objective`` over a box by generalized pattern search.

    Polls ``x ± mesh e_i`` in the order ``+e_1, -e_1, +e_2, ...``. The first
    improving point is accepted, or the best one when ``opts.complete_poll``
    is set (ties go to the lower index). Success multiplies the mesh by
    ``expansion``, failure by ``contraction``. Poll points are clipped to
    the box; non-finite values and exceptions count as rejected points.

    ``map_fn`` (e.g. ``Executor.map``) evaluates a whole poll set at once;
    the accepted point is the same as in the sequential poll.

    With ``opts.log_transform`` the search runs on ``signed_log(x)``.

    Scalar ``x0`` gives a scalar ``x`` in the result. The result unpacks as
    ``(x, f, evals)``.
    """
    scalar = np.ndim(x0) == 0
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    lo = np.broadcast_to(np.asarray(lower, dtype=float), x0.shape).copy()
    hi = np.broadcast_to(np.asarray(upper, dtype=float), x0.shape).copy()
    if np.any(lo > x0) or np.any(x0 > hi):
        raise ValueError("x0 must lie within the bounds")

    if opts.log_transform:
        fwd, inv = signed_log, signed_exp
    else:
        def fwd(v):
            return np.asarray(v, dtype=float)
        inv = fwd
    u = fwd(x0)
    u_lo, u_hi = fwd(lo), fwd(hi)

    def to_x(uu):
        xx = np.clip(inv(uu), lo, hi)
        return float(xx[0]) if scalar else xx

    if opts.initial_mesh is not None:
        mesh = opts.initial_mesh
    else:
        room = u_hi - u
        if not np.all(np.isfinite(room)) or np.max(room) <= 0:
            room = u_hi - u_lo
        room = room[np.isfinite(room) & (room > 0)]
        mesh = 0.1 * float(np.min(room)) if room.size else 1.0

    f = _safe_eval(objective, to_x(u))
    evals, failed = 1, 0
    if not math.isfinite(f):
        raise IdentificationError("objective is not finite at the initial point")

    n = u.size
    directions = [(i, s) for i in range(n) for s in (1.0, -1.0)]
    it = 0
    reason = "max_iters"
    while it < opts.max_iters:
        if mesh < opts.mesh_tolerance:
            reason = "mesh_tolerance"
            break
        if mesh < EPS * max(1.0, float(np.max(np.abs(u)))):
            # polls would no longer move x in floating point
            reason = "mesh_resolution"
            break
        if evals >= opts.max_evals:
            reason = "max_evals"
            break
        it += 1
        points = []
        for i, s in directions:
            cand = u.copy()
            cand[i] = min(max(cand[i] + s * mesh, u_lo[i]), u_hi[i])
            if not np.array_equal(cand, u):
                points.append(cand)
        best = None
        if map_fn is not None:
            values = list(map_fn(partial(_safe_eval, objective), [to_x(p) for p in points]))
            evals += len(values)
            for k, v in enumerate(values):
                v = float(v) if v is not None else math.nan
                if not math.isfinite(v):
                    failed += 1
                elif v < f and (best is None or v < best[1]):
                    best = (k, v)
                    if not opts.complete_poll:
                        break
        else:
            for k, p in enumerate(points):
                if evals >= opts.max_evals:
                    break
                v = _safe_eval(objective, to_x(p))
                evals += 1
                if not math.isfinite(v):
                    failed += 1
                elif v < f and (best is None or v < best[1]):
                    best = (k, v)
                    if not opts.complete_poll:
                        break
        if best is None:
            mesh *= opts.contraction
            continue
        k, v = best
        step = float(np.max(np.abs(points[k] - u)))
        improvement = f - v
        u, f = points[k], v
        mesh *= opts.expansion
        if improvement < opts.function_tolerance:
            reason = "function_tolerance"
            break
        if step < opts.step_tolerance:
            reason = "step_tolerance"
            break
    return PatternSearchResult(to_x(u), f, evals, it, mesh, reason, failed)


# --------------------------------------------------------------------------
# loosening-rate identification

@dataclass(frozen=True)
class GammaIdentification:
    case_id: str
    gamma: float
    objective_final: float
    evaluations: int
    preload: float = math.nan
    tension_final: float = math.nan
    reason: str = ""
    status: str = "ok"

    def __post_init__(self):
        if not self.objective_final >= 0:
            raise ValueError("objective must be non-negative")

    @property
    def loosening(self) -> bool:
        return self.gamma > 0


@dataclass(frozen=True)
class CaseError:
    """Per-case failure record from a batch."""

    case_id: str
    message: str
    preload: float = math.nan
    status: str = "error"


@dataclass(frozen=True)
class GammaSearchSettings:
    x0: float = 1e8
    lower: float = -1e10
    upper: float = 1e10
    options: PatternSearchOptions = field(default_factory=PatternSearchOptions)
    tol: tuple[float, float] = (DEFAULT_RTOL, DEFAULT_ATOL)
    initial_window: tuple[float, float] = (-0.5, -0.1)
    final_window: tuple[float, float] = (1.5, 7.5)


def _measured_tensions(case, settings: GammaSearchSettings):
    times = case.tension.time
    t_init, t_final, _ = tension_change_series(
        times, case.tension.values, case.t_impact,
        settings.initial_window, settings.final_window)
    return t_init, t_final


class GammaObjective:
    """``|T_final(simulated with constant γ) - T_final(measured)|``.

    Picklable, so poll sets can be evaluated in worker processes.
    """

    def __init__(self, case, system: SystemModel, settings: GammaSearchSettings):
        self.system = system.without_loosening()
        self.force = case.force
        self.t_impact = case.t_impact
        self.settings = settings
        self.tension0, self.target = _measured_tensions(case, settings)
        t_end = case.t_impact + settings.final_window[1]
        times = case.tension.time
        self.t_eval = times[(times >= 0.0) & (times <= t_end + 1e-9)]
        self.t_span = (min(0.0, float(self.t_eval[0])), float(self.t_eval[-1]))

    def final_tension(self, gamma: float) -> float:
        s = self.settings
        traj = simulate(self.system.with_gamma(float(gamma)), self.force, self.tension0,
                        self.t_span, tol=s.tol, t_eval=self.t_eval)
        _, t_final, _ = tension_change_series(traj.times, traj.tension, self.t_impact,
                                              s.initial_window, s.final_window)
        return t_final

    def __call__(self, gamma: float) -> float:
        try:
            return abs(self.final_tension(gamma) - self.target)
        except SimulationError:
            return math.nan


def identify_gamma(case, system: SystemModel,
                   settings: GammaSearchSettings = GammaSearchSettings(), *,
                   map_fn: Optional[Callable] = None) -> GammaIdentification:
    """Constant loosening rate reproducing one case's measured final tension.

    ``system`` supplies the oscillators and the stiffness and damping
    models; any loosening model it carries is ignored.
    """
    objective = GammaObjective(case, system, settings)
    res = pattern_search(objective, settings.x0, settings.lower, settings.upper,
                         settings.options, map_fn=map_fn)
    if res.iterations > 0 and res.failed_evals == res.evals - 1:
        raise IdentificationError(f"case {case.case_id}: every poll simulation failed")
    return GammaIdentification(case.case_id, float(res.x), float(res.fun), res.evals,
                               objective.tension0, objective.target, res.reason)


def _identify_one(args):
    case, system, settings = args
    try:
        return identify_gamma(case, system, settings)
    except Exception as exc:  # isolate per-case failures
        preload = getattr(case, "preload", math.nan)
        return CaseError(getattr(case, "case_id", "?"), f"{type(exc).__name__}: {exc}",
                         preload)


def batch_identify(cases: Sequence, system: SystemModel,
                   settings: GammaSearchSettings = GammaSearchSettings(), *,
                   jobs: int = 1) -> list:
    """Identify every case independently, preserving order.

    Failures become :class:`CaseError` entries instead of aborting the batch.
    """
    work = [(c, system, settings) for c in cases]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_identify_one, work))
    return [_identify_one(w) for w in work]
