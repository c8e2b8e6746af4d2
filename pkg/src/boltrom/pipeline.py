"""Case-level identification chain shared by the CLI and the tests.

Acceleration records are decimated to the tension rate, converted to
displacement, and the first mode is read from the LO displacement. The
coupling elements follow from either the undamped closed forms or the exact
damped inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import modal
from .dynamics import OscillatorParams, tension_change_series
from .fitting import fit_damping_model, fit_gamma_model, fit_stiffness_model
from .sigproc import accel_to_displacement, decimate

INVERSION_METHODS = ("damped", "undamped")


@dataclass(frozen=True)
class ModalSettings:
    cutoff: float = 5.0
    order: int = 3
    settle: float = 0.5
    window: float = 3.0
    reject_above: float = 17.0
    min_prominence: float = 0.01
    reference_peak: int = 2
    method: str = "damped"
    initial_window: tuple[float, float] = (-0.5, -0.1)

    def __post_init__(self):
        if self.method not in INVERSION_METHODS:
            raise ValueError(f"unknown inversion method {self.method!r}")
        if not (self.window > 0 and self.settle >= 0 and self.cutoff > 0):
            raise ValueError("modal window, settle time and cutoff must be positive")


@dataclass(frozen=True)
class ModalRow:
    case_id: str
    preload: float
    f1: float
    zeta1: float
    k_c: float
    c_c: float
    warnings: str = ""

    @property
    def flagged(self) -> bool:
        return bool(self.warnings)


def case_displacement(case, settings: ModalSettings, channel: str = "lo"):
    accel = case.accel_lo if channel == "lo" else case.accel_so
    factor = int(round(case.fs_fast / case.fs_tension))
    slow = decimate(accel, factor) if factor > 1 else accel
    _, disp = accel_to_displacement(slow, settings.cutoff, settings.order)
    return disp


def case_preload(case, settings: ModalSettings) -> float:
    t = case.tension.time
    lo = case.t_impact + settings.initial_window[0]
    hi = case.t_impact + settings.initial_window[1]
    mask = (t >= lo - 1e-9) & (t <= hi + 1e-9)
    if not mask.any():
        raise ValueError(f"case {case.case_id}: no tension samples before the impact")
    return float(np.mean(case.tension.values[mask]))


def estimate_case(case, settings: ModalSettings, channel: str = "lo") -> modal.ModalEstimate:
    disp = case_displacement(case, settings, channel)
    return modal.estimate_modal(disp, start=case.t_impact + settings.settle,
                                window=settings.window, reject_above=settings.reject_above,
                                min_prominence=settings.min_prominence,
                                reference=settings.reference_peak)


def invert_coupling(lo: OscillatorParams, so: OscillatorParams, est: modal.ModalEstimate,
                    method: str = "damped"):
    """``(k_c, c_C, warnings)`` from a first-mode estimate."""
    notes = []
    if method == "damped":
        k_c, c_c = modal.coupling_from_damped_mode(lo, so, est.f1, est.zeta1)
        if k_c < 0:
            notes.append("negative coupling stiffness")
    else:
        k_c = modal.coupling_stiffness_from_frequency(lo, so, est.omega1)
        inv = modal.coupling_damping_from_zeta(lo, so, k_c, est.zeta1, est.omega1)
        c_c = inv.c_c
    if c_c < 0:
        notes.append("negative coupling damping")
    return k_c, c_c, "; ".join(notes)


def identify_modal_case(case, lo: OscillatorParams, so: OscillatorParams,
                        settings: ModalSettings = ModalSettings()) -> ModalRow:
    """One row of the modal table; inversion failures become flagged rows."""
    preload = case_preload(case, settings)
    est = estimate_case(case, settings)
    try:
        k_c, c_c, notes = invert_coupling(lo, so, est, settings.method)
    except modal.SingularInversionError as exc:
        return ModalRow(case.case_id, preload, est.f1, est.zeta1, math.nan, math.nan,
                        f"singular: {exc}")
    except modal.OutOfRangeError as exc:
        return ModalRow(case.case_id, preload, est.f1, est.zeta1, math.nan, math.nan,
                        f"out of range: {exc}")
    return ModalRow(case.case_id, preload, est.f1, est.zeta1, k_c, c_c, notes)


def identify_sdof_case(case, mass: float, settings: ModalSettings):
    """``(f, ζ, k, c)`` of a single oscillator from an uncoupled record."""
    est = estimate_case(case, settings)
    k, c = modal.sdof_params(est.f1, est.zeta1, mass)
    return est.f1, est.zeta1, k, c


def usable_rows(rows: Sequence[ModalRow], keep_warnings: bool = False):
    out = []
    for r in rows:
        if not (math.isfinite(r.k_c) and math.isfinite(r.c_c)):
            continue
        if r.flagged and not keep_warnings:
            continue
        out.append(r)
    return out


def fit_joint_models(rows: Sequence[ModalRow], keep_warnings: bool = False):
    """Stiffness and damping fits over the usable modal rows."""
    use = usable_rows(rows, keep_warnings)
    t = np.array([r.preload for r in use])
    k = np.array([r.k_c for r in use])
    c = np.array([r.c_c for r in use])
    stiffness, k_fit = fit_stiffness_model(t, k)
    damping, c_fit = fit_damping_model(t, c)
    return (stiffness, k_fit), (damping, c_fit)


def fit_loosening_model(preload, gamma, space: str = "log10"):
    """Loosening-rate fit at the initial tensions; every γ must be positive."""
    return fit_gamma_model(np.asarray(preload, dtype=float), np.asarray(gamma, dtype=float),
                           space=space)


def measured_tension_change(case, initial_window=(-0.5, -0.1), final_window=(1.5, 7.5)):
    return tension_change_series(case.tension.time, case.tension.values, case.t_impact,
                                 initial_window, final_window)
