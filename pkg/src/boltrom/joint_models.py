"""Tension-dependent constitutive models of the bolted lap joint.

All evaluators accept a scalar or a numpy array of tensions (N) and return
the same shape. Logistic arguments are clamped so that extreme tensions
saturate at the model plateaus instead of overflowing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

EXP_CLAMP = 700.0


def _logistic_denominator(arg):
    return 1.0 + np.exp(np.clip(arg, -EXP_CLAMP, EXP_CLAMP))


def _as_output(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class CalibrationPolynomial:
    """Strain-to-force calibration with no constant term.

    ``coeffs`` are ordered highest degree first and multiply
    ``strain**n, ..., strain**1``.
    """

    coeffs: tuple[float, ...]

    def __init__(self, coeffs: Sequence[float]):
        coeffs = tuple(float(c) for c in coeffs)
        if not coeffs:
            raise ValueError("calibration polynomial needs at least one coefficient")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs)

    def __call__(self, strain):
        return strain_to_tension(self, strain)


@dataclass(frozen=True)
class StiffnessModel:
    """Logistic coupling stiffness ``k_I / (1 + exp(alpha (T - beta)))``."""

    k_I: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.k_I > 0:
            raise ValueError(f"k_I must be positive, got {self.k_I}")

    def __call__(self, tension):
        return coupling_stiffness(self, tension)


@dataclass(frozen=True)
class DampingModel:
    """Reversed logistic coupling damping ``c_D - c_I / (1 + exp(eta T))``."""

    c_D: float
    c_I: float
    eta: float

    def __call__(self, tension):
        return coupling_damping(self, tension)

    @property
    def high_tension_limit(self) -> float:
        """Value approached as ``T -> +inf``."""
        if self.eta < 0:
            return self.c_D - self.c_I
        if self.eta > 0:
            return self.c_D
        return self.c_D - 0.5 * self.c_I

    def canonical(self) -> "DampingModel":
        """Same curve written with a non-negative depth ``c_I``.

        ``(c_D, c_I, eta)`` and ``(c_D - c_I, -c_I, -eta)`` describe the
        same function of T.
        """
        if self.c_I >= 0:
            return self
        return DampingModel(self.c_D - self.c_I, -self.c_I, -self.eta)


@dataclass(frozen=True)
class LooseningModel:
    """Loosening rate ``10 ** (gamma_d - gamma_I / (1 + exp(rho T)))``."""

    gamma_d: float
    gamma_I: float
    rho: float

    def __call__(self, tension):
        return loosening_rate(self, tension)

    def canonical(self) -> "LooseningModel":
        """Same curve written with a non-negative depth ``gamma_I``."""
        if self.gamma_I >= 0:
            return self
        return LooseningModel(self.gamma_d - self.gamma_I, -self.gamma_I, -self.rho)

    def log10_rate(self, tension):
        """Exponent of the loosening rate (the quantity fitted in log space)."""
        t = np.asarray(tension, dtype=float)
        return _as_output(self.gamma_d - self.gamma_I / _logistic_denominator(self.rho * t))


# Values identified for the experimental rig.
REF_CALIBRATION = CalibrationPolynomial((-575.63, 2363.7, 2718.7))
REF_STIFFNESS = StiffnessModel(k_I=9.763e5, alpha=-0.0608, beta=2.003)
REF_DAMPING = DampingModel(c_D=1853.0, c_I=1717.4, eta=-0.00922)
REF_LOOSENING = LooseningModel(gamma_d=11.79, gamma_I=7.974, rho=-0.00362)


def strain_to_tension(p: CalibrationPolynomial, strain):
    """Evaluate the calibration polynomial by Horner's rule.

    The multiplication by ``strain`` after the loop is what makes the value
    at zero strain exactly zero.
    """
    eps = np.asarray(strain, dtype=float)
    acc = np.zeros_like(eps)
    for c in p.coeffs:
        acc = acc * eps + c
    return _as_output(acc * eps)


def coupling_stiffness(m: StiffnessModel, tension):
    t = np.asarray(tension, dtype=float)
    return _as_output(m.k_I / _logistic_denominator(m.alpha * (t - m.beta)))


def coupling_damping(m: DampingModel, tension):
    t = np.asarray(tension, dtype=float)
    return _as_output(m.c_D - m.c_I / _logistic_denominator(m.eta * t))


def loosening_rate(m: LooseningModel, tension):
    t = np.asarray(tension, dtype=float)
    exponent = m.gamma_d - m.gamma_I / _logistic_denominator(m.rho * t)
    return _as_output(np.power(10.0, exponent))
