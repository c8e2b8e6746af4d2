"""Least-squares fitting of the constitutive models and the calibration curve.

Nonlinear fits use a Levenberg-Marquardt iteration with central-difference
Jacobians, run on parameters scaled by the magnitude of the initial guess.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .joint_models import (
    CalibrationPolynomial, DampingModel, LooseningModel, StiffnessModel,
    coupling_damping, coupling_stiffness,
)

STIFFNESS_GUESS = (1e6, -0.1, 5.0)
DAMPING_GUESS = (2000.0, 2000.0, 0.01)
GAMMA_GUESS = (12.0, 8.0, -0.0035)

# R² tolerance for a zero-variance target
_DEGENERATE_SS = 1e-30


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    r_squared: float
    residuals: np.ndarray
    converged: bool
    iterations: int
    cost: float = 0.0
    names: tuple[str, ...] = field(default=())
    cost_history: tuple[float, ...] = field(default=())

    def as_dict(self) -> dict[str, float]:
        names = self.names or tuple(f"p{i}" for i in range(self.params.size))
        return dict(zip(names, map(float, self.params)))


def r_squared(y, yhat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``.

    A constant target gives 1 for an exact prediction and nan otherwise.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError("y and yhat differ in shape")
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res < _DEGENERATE_SS else float("nan")
    return 1.0 - ss_res / ss_tot


def _jacobian(fun, z, r0):
    # central differences in scaled coordinates; fun returns residuals
    n = z.size
    jac = np.empty((r0.size, n))
    for j in range(n):
        h = max(1e-6 * abs(z[j]), 1e-8)
        zp = z.copy()
        zm = z.copy()
        zp[j] += h
        zm[j] -= h
        jac[:, j] = (fun(zp) - fun(zm)) / (2.0 * h)
    return jac


def nlls_fit(model: Callable, x, y, p0: Sequence[float],
             bounds: Optional[tuple[Sequence[float], Sequence[float]]] = None, *,
             project: Optional[Callable] = None, names: Sequence[str] = (),
             max_iter: int = 10_000, tol: float = 1e-12) -> FitResult:
    """Minimize ``sum((y - model(x, p))**2)`` by Levenberg-Marquardt.

    Parameters
    ----------
    model : callable
        ``model(x, p) -> yhat`` with ``p`` a 1-D array.
    bounds : (lower, upper), optional
        Box bounds enforced by projecting every trial point.
    project : callable, optional
        Extra projection ``p -> p`` applied after the box bounds.

    Notes
    -----
    The damping starts at ``1e-3 * max(diag(JᵀJ))`` and moves by a factor
    of ten. Iteration stops once the relative cost decrease or the scaled
    step norm stays below ``tol`` for three consecutive iterations.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise FitError("x and y differ in length")
    if y.size < p0.size:
        raise FitError(f"{y.size} data points cannot determine {p0.size} parameters")
    scale = np.where(p0 != 0, np.abs(p0), 1.0)
    lower = upper = None
    if bounds is not None:
        lower = np.broadcast_to(np.asarray(bounds[0], dtype=float), p0.shape)
        upper = np.broadcast_to(np.asarray(bounds[1], dtype=float), p0.shape)
        if np.any(lower > upper):
            raise FitError("lower bound exceeds upper bound")

    def feasible(p):
        if lower is not None:
            p = np.clip(p, lower, upper)
        if project is not None:
            p = np.asarray(project(p), dtype=float)
        return p

    def residual(z):
        return y - np.asarray(model(x, feasible(z * scale)), dtype=float)

    z = feasible(p0) / scale
    r = residual(z)
    if not np.all(np.isfinite(r)):
        raise FitError("model output is not finite at the initial guess")
    cost = float(r @ r)
    exact = _DEGENERATE_SS * max(1.0, float(y @ y))
    history = [cost]
    lam = None
    quiet = 0
    it = 0
    converged = cost <= exact
    while not converged and it < max_iter:
        it += 1
        jac = _jacobian(residual, z, r)
        a = jac.T @ jac
        g = jac.T @ r
        if lam is None:
            lam = 1e-3 * max(float(np.max(np.diag(a))), 1e-300)
        accepted = False
        while lam < 1e300:
            try:
                step = np.linalg.solve(a + lam * np.eye(z.size), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            z_new = feasible((z + step) * scale) / scale
            r_new = residual(z_new)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent at any damping: a minimum to working precision
            converged = True
            break
        rel_drop = (cost - cost_new) / cost if cost > 0 else 0.0
        step_norm = float(np.linalg.norm(z_new - z)) / max(float(np.linalg.norm(z)), 1e-300)
        z, r, cost = z_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 10.0, 1e-300)
        quiet = quiet + 1 if (rel_drop < tol or step_norm < tol) else 0
        if quiet >= 3 or cost <= exact:
            converged = True
    p = feasible(z * scale)
    return FitResult(params=p, r_squared=r_squared(y, y - r), residuals=r,
                     converged=bool(converged), iterations=it, cost=cost,
                     names=tuple(names), cost_history=tuple(history))


def _check_xy(t, v, minimum: int, what: str):
    t = np.asarray(t, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if t.size != v.size:
        raise FitError(f"{what}: tension and value arrays differ in length")
    if t.size < minimum:
        raise FitError(f"{what}: need at least {minimum} points, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise FitError(f"{what}: data contain non-finite values")
    return t, v


def _stiffness_curve(t, p):
    return coupling_stiffness(StiffnessModel(max(p[0], 1e-300), p[1], p[2]), t)


def fit_stiffness_model(tension, stiffness, p0=STIFFNESS_GUESS, bounds=None):
    """Logistic stiffness fit; returns ``(StiffnessModel, FitResult)``."""
    t, k = _check_xy(tension, stiffness, 4, "stiffness fit")
    res = nlls_fit(_stiffness_curve, t, k, p0, bounds, names=("k_I", "alpha", "beta"))
    k_i, alpha, beta = res.params
    if not k_i > 0:
        raise FitError(f"stiffness fit gave non-positive plateau k_I = {k_i}")
    return StiffnessModel(float(k_i), float(alpha), float(beta)), res


def _damping_curve(t, p):
    return coupling_damping(DampingModel(p[0], p[1], p[2]), t)


def _nonnegative_plateau(p):
    # raise c_D until the high-tension plateau is non-negative
    limit = DampingModel(*p).high_tension_limit
    if limit < 0:
        p = p.copy()
        p[0] -= limit
    return p


def fit_damping_model(tension, damping, p0=DAMPING_GUESS, bounds=None):
    """Reversed-logistic damping fit with ``c_D - c_I >= 0``."""
    t, c = _check_xy(tension, damping, 4, "damping fit")
    res = nlls_fit(_damping_curve, t, c, p0, bounds, project=_nonnegative_plateau,
                   names=("c_D", "c_I", "eta"))
    model = DampingModel(*map(float, res.params)).canonical()
    return model, replace(res, params=np.array([model.c_D, model.c_I, model.eta]))


def _log10_gamma(t, p):
    return LooseningModel(p[0], p[1], p[2]).log10_rate(t)


def _gamma_curve(t, p):
    return 10.0 ** _log10_gamma(t, p)


def fit_gamma_model(tension, gamma, p0=GAMMA_GUESS, bounds=None, space: str = "log10"):
    """Loosening-rate fit over positive γ values.

    ``space="log10"`` fits the exponent (residuals in decades), the default;
    ``space="linear"`` fits γ itself.
    """
    t, g = _check_xy(tension, gamma, 4, "loosening-rate fit")
    bad = np.flatnonzero(~(g > 0))
    if bad.size:
        i = int(bad[0])
        raise FitError(f"loosening-rate fit needs positive gamma; index {i} has {g[i]!r}")
    names = ("gamma_d", "gamma_I", "rho")
    if space == "log10":
        res = nlls_fit(_log10_gamma, t, np.log10(g), p0, bounds, names=names)
    elif space == "linear":
        res = nlls_fit(_gamma_curve, t, g, p0, bounds, names=names)
    else:
        raise ValueError(f"unknown fit space {space!r}")
    model = LooseningModel(*map(float, res.params)).canonical()
    return model, replace(res, params=np.array([model.gamma_d, model.gamma_I, model.rho]))


def fit_zero_intercept_polynomial(strain, force, degree: int = 3):
    """Least-squares polynomial through the origin.

    Returns ``(CalibrationPolynomial, FitResult)``; coefficients are
    highest degree first.
    """
    x, y = _check_xy(strain, force, degree, "calibration fit")
    if degree < 1:
        raise FitError("degree must be at least 1")
    powers = np.arange(degree, 0, -1)
    basis = x[:, None] ** powers[None, :]
    # column scaling keeps the normal matrix well conditioned
    norms = np.linalg.norm(basis, axis=0)
    if np.any(norms == 0):
        raise FitError("calibration data are rank deficient (all strains zero)")
    scaled = basis / norms
    coef, _, rank, _ = np.linalg.lstsq(scaled, y, rcond=None)
    if rank < degree:
        raise FitError(f"calibration data are rank deficient (rank {rank} < {degree})")
    coef = coef / norms
    poly = CalibrationPolynomial(coef)
    yhat = poly(x)
    resid = y - yhat
    names = tuple(f"a{p}" for p in powers)
    res = FitResult(params=coef, r_squared=r_squared(y, yhat), residuals=resid,
                    converged=True, iterations=1, cost=float(resid @ resid), names=names)
    return poly, res
