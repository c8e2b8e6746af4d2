"""Synthetic measurement cases standing in for the test rig.

A case is simulated with the truth model. Accelerations come from the
equations of motion evaluated on the stored states, and tension is sampled
at the slower bolt-gauge rate. Gaussian noise is added from a seeded
generator, so a case is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dynamics import (
    ForceSignal, OscillatorParams, State, SystemModel, eom_rhs, simulate,
)
from .joint_models import DampingModel, StiffnessModel
from .sigproc import TimeSeries

FAST_RATE = 19200.0
TENSION_RATE = 4800.0
PRETRIGGER = 0.5
DURATION = 30.5
PULSE_WIDTH = 2e-3
SYNTH_TOL = (1e-10, 1e-14)

TEST_TYPES = ("uncoupled", "coupled-low", "loosening")

# a joint that transmits nothing, for single-oscillator tests
NULL_STIFFNESS = StiffnessModel(k_I=1e-12, alpha=0.0, beta=0.0)
NULL_DAMPING = DampingModel(c_D=0.0, c_I=0.0, eta=0.0)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise.

    ``level`` adds, per channel, a standard deviation equal to that fraction
    of the noise-free channel's standard deviation over the record (a
    noise-to-signal ratio), on top of the absolute ``accel_rms`` and
    ``tension_rms``. ``ambient_tone`` is ``(Hz, m/s²)``.
    """

    accel_rms: float = 0.0
    tension_rms: float = 0.0
    ambient_tone: Optional[tuple[float, float]] = None
    seed: int = 0
    level: float = 0.0

    def __post_init__(self):
        if self.accel_rms < 0 or self.tension_rms < 0 or self.level < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if self.ambient_tone is not None:
            f, a = self.ambient_tone
            if not (f > 0 and a >= 0):
                raise ValueError("ambient tone needs a positive frequency")

    @property
    def is_zero(self) -> bool:
        return (self.accel_rms == 0 and self.tension_rms == 0 and self.level == 0
                and (self.ambient_tone is None or self.ambient_tone[1] == 0))


@dataclass(frozen=True)
class MeasurementCase:
    case_id: str
    test_type: str
    force: ForceSignal
    accel_lo: TimeSeries
    accel_so: TimeSeries
    tension: TimeSeries
    preload: float
    fs_fast: float = FAST_RATE
    fs_tension: float = TENSION_RATE
    t_impact: float = PRETRIGGER
    amplitude: float = math.nan
    seed: int = 0

    def __post_init__(self):
        if self.test_type not in TEST_TYPES:
            raise ValueError(f"unknown test type {self.test_type!r}")
        if not (self.fs_fast > 0 and self.fs_tension > 0):
            raise ValueError("sample rates must be positive")
        if not self.preload >= 0:
            raise ValueError("preload must be non-negative")
        if len(self.accel_lo) != len(self.accel_so) or len(self.accel_lo) != self.force.times.size:
            raise ValueError("force and acceleration records differ in length")


def impulse_force(amplitude: float, width: float = PULSE_WIDTH, t0: float = PRETRIGGER,
                  fs: float = FAST_RATE, duration: Optional[float] = None) -> ForceSignal:
    """Half-sine pulse ``A sin(π (t - t0) / w)`` on ``[t0, t0 + w]``, sampled at ``fs``.

    Samples run from 0 to ``duration`` (default: one sample past the pulse).
    """
    if not (amplitude >= 0 and width > 0 and fs > 0 and t0 >= 0):
        raise ValueError("impulse needs amplitude >= 0, width > 0, fs > 0, t0 >= 0")
    t_end = t0 + width + 1.0 / fs if duration is None else duration
    n = int(math.floor(t_end * fs + 1e-9)) + 1
    t = np.arange(n) / fs
    phase = (t - t0) / width
    inside = (phase >= 0) & (phase <= 1)
    v = np.zeros(n)
    v[inside] = amplitude * np.sin(math.pi * phase[inside])
    # sin(pi) is not exactly zero in floating point
    v[inside & (phase >= 1)] = 0.0
    return ForceSignal(t, np.maximum(v, 0.0))


def decoupled(osc: OscillatorParams, partner: Optional[OscillatorParams] = None) -> SystemModel:
    """System in which ``osc`` is driven alone, as in the uncoupled tests."""
    return SystemModel(osc, partner or osc, NULL_STIFFNESS, NULL_DAMPING)


def _resample_force(force: ForceSignal, times: np.ndarray) -> ForceSignal:
    return ForceSignal(times, np.interp(times, force.times, force.values, left=0.0, right=0.0))


def _noisy(rng, x: np.ndarray, absolute: float, level: float) -> np.ndarray:
    sigma = math.hypot(absolute, level * float(np.std(x)) if x.size else 0.0)
    if sigma == 0:
        return x
    return x + rng.normal(0.0, sigma, x.size)


def synth_case(truth: SystemModel, preload: float, impulse: ForceSignal,
               noise: NoiseSpec = NoiseSpec(), duration: float = DURATION,
               pretrigger: float = PRETRIGGER, *, case_id: str = "case",
               test_type: str = "coupled-low", fs_fast: float = FAST_RATE,
               fs_tension: float = TENSION_RATE, tol=SYNTH_TOL) -> MeasurementCase:
    """Simulate one record of ``duration`` seconds with the impact at ``pretrigger``.

    ``impulse`` is given in absolute time; it is resampled onto the fast
    grid of the record.
    """
    if not duration > pretrigger >= 0:
        raise ValueError("duration must exceed the pretrigger")
    ratio = fs_fast / fs_tension
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        raise ValueError("fast rate must be an integer multiple of the tension rate")
    ratio = int(round(ratio))
    n = int(math.floor(duration * fs_fast + 1e-9)) + 1
    times = np.arange(n) / fs_fast
    force = _resample_force(impulse, times)

    traj = simulate(truth, force, preload, (0.0, float(times[-1])), tol=tol, t_eval=times)
    deriv = eom_rhs(truth, traj.times, State(*traj.states.T), force)
    a_lo = np.asarray(deriv.v_lo, dtype=float)
    a_so = np.asarray(deriv.v_so, dtype=float)
    tension = traj.tension[::ratio]

    if not noise.is_zero:
        rng = np.random.default_rng(noise.seed)
        a_lo = _noisy(rng, a_lo, noise.accel_rms, noise.level)
        a_so = _noisy(rng, a_so, noise.accel_rms, noise.level)
        tension = _noisy(rng, tension, noise.tension_rms, noise.level)
        if noise.ambient_tone is not None:
            f_hz, amp = noise.ambient_tone
            phase = rng.uniform(0.0, 2.0 * math.pi, 2)
            a_lo = a_lo + amp * np.sin(2.0 * math.pi * f_hz * times + phase[0])
            a_so = a_so + amp * np.sin(2.0 * math.pi * f_hz * times + phase[1])

    return MeasurementCase(
        case_id=case_id, test_type=test_type, force=force,
        accel_lo=TimeSeries(a_lo, dt=1.0 / fs_fast),
        accel_so=TimeSeries(a_so, dt=1.0 / fs_fast),
        tension=TimeSeries(tension, dt=ratio / fs_fast),
        preload=float(preload), fs_fast=fs_fast, fs_tension=fs_fast / ratio,
        t_impact=pretrigger, amplitude=float(np.max(impulse.values, initial=0.0)),
        seed=noise.seed)


def synth_uncoupled_case(osc: OscillatorParams, impulse: ForceSignal,
                         noise: NoiseSpec = NoiseSpec(), duration: float = DURATION,
                         pretrigger: float = PRETRIGGER, **kw) -> MeasurementCase:
    """Single-oscillator impact record; the response is in ``accel_lo``."""
    kw.setdefault("test_type", "uncoupled")
    return synth_case(decoupled(osc), 0.0, impulse, noise, duration, pretrigger, **kw)


def case_seed(base: int, index: int) -> int:
    return int(base) + int(index)


def synth_campaign(truth: SystemModel, preloads: Sequence[float],
                   amplitudes: Sequence[float], noise: NoiseSpec = NoiseSpec(), *,
                   pairing: str = "paired", test_type: str = "coupled-low",
                   width: float = PULSE_WIDTH, duration: float = DURATION,
                   pretrigger: float = PRETRIGGER, id_prefix: Optional[str] = None,
                   fs_fast: float = FAST_RATE, fs_tension: float = TENSION_RATE,
                   tol=SYNTH_TOL) -> list[MeasurementCase]:
    """Cases over a preload/amplitude grid.

    ``pairing="paired"`` zips the grids (a single amplitude is broadcast);
    ``"cartesian"`` takes every combination, preloads varying slowest.
    Case ``i`` gets id ``{prefix}{i:03d}`` and noise seed ``noise.seed + i``.
    """
    preloads = [float(p) for p in preloads]
    amplitudes = [float(a) for a in amplitudes]
    if not preloads:
        raise ValueError("preload grid is empty")
    if not amplitudes:
        raise ValueError("amplitude grid is empty")
    if pairing == "paired":
        if len(amplitudes) == 1:
            amplitudes = amplitudes * len(preloads)
        if len(amplitudes) != len(preloads):
            raise ValueError("paired grids must have equal length")
        grid = list(zip(preloads, amplitudes))
    elif pairing == "cartesian":
        grid = [(p, a) for p in preloads for a in amplitudes]
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    prefix = id_prefix if id_prefix is not None else {
        "coupled-low": "low", "loosening": "loose", "uncoupled": "sdof"}[test_type]
    cases = []
    for i, (preload, amp) in enumerate(grid):
        pulse = impulse_force(amp, width, pretrigger, fs_fast)
        case_noise = replace(noise, seed=case_seed(noise.seed, i))
        cases.append(synth_case(truth, preload, pulse, case_noise, duration, pretrigger,
                                case_id=f"{prefix}{i:03d}", test_type=test_type,
                                fs_fast=fs_fast, fs_tension=fs_tension, tol=tol))
    return cases


def relative_velocity_moment(system: SystemModel, preload: float, width: float = PULSE_WIDTH,
                             pretrigger: float = PRETRIGGER, t_end: float = 8.0,
                             fs: float = FAST_RATE, tol=SYNTH_TOL) -> float:
    """``∫ (v_LO - v_SO)⁴ dt`` for a unit-amplitude pulse with the tension frozen."""
    pulse = impulse_force(1.0, width, pretrigger, fs)
    n = int(math.floor(t_end * fs + 1e-9)) + 1
    times = np.arange(n) / fs
    traj = simulate(system.without_loosening(), pulse, preload, (0.0, float(times[-1])),
                    tol=tol, t_eval=times, record_steps=True)
    vr = traj.v_lo - traj.v_so
    return float(np.trapezoid((vr * vr) ** 2, traj.times))


def amplitude_for_drop(truth: SystemModel, preload: float, drop_fraction: float,
                       width: float = PULSE_WIDTH, pretrigger: float = PRETRIGGER,
                       **kw) -> float:
    """Pulse amplitude giving roughly a fractional tension drop ``drop_fraction``.

    Treats γ as constant at its preload value and the motion as linear, so
    ``ln(T_final / T0) = -γ(T0) A⁴ ∫ v_r⁴ dt`` at unit amplitude.
    """
    if not 0 < drop_fraction < 1:
        raise ValueError("drop fraction must lie in (0, 1)")
    gamma = float(truth.gamma(preload))
    if not gamma > 0:
        raise ValueError("truth model does not loosen at this preload")
    moment = relative_velocity_moment(truth, preload, width, pretrigger, **kw)
    return (-math.log1p(-drop_fraction) / (gamma * moment)) ** 0.25
