"""Two-oscillator modal algebra and time-domain modal estimation.

The closed-form part maps between the coupling elements (k_c, c_C) and the
first mode (ω1, ζ1) of the coupled system. The estimation part recovers
(ω1, ζ1) from a free-decay record by averaging peak spacings and by the
logarithmic decrement of the positive peaks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.signal import peak_prominences

from .dynamics import OscillatorParams
from .sigproc import TimeSeries

TWO_PI = 2.0 * math.pi


class SingularInversionError(ValueError):
    """The requested inversion has a vanishing denominator."""


class OutOfRangeError(ValueError):
    """The inversion produced a physically inadmissible value."""


class ModalWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# closed-form 2-DOF algebra

def _eigenvalues(lo: OscillatorParams, so: OscillatorParams, k_c: float):
    """Roots of det(K - λM) = 0, smallest first, without cancellation."""
    ml, ms = lo.mass, so.mass
    kl, ks = lo.stiffness + k_c, so.stiffness + k_c
    b = ml * ks + ms * kl
    c = kl * ks - k_c * k_c
    disc = (ml * ks - ms * kl) ** 2 + 4.0 * ml * ms * k_c * k_c
    big = (b + math.sqrt(disc)) / (2.0 * ml * ms)
    small = c / (ml * ms * big)
    return small, big


def eigenfrequencies_2dof(lo: OscillatorParams, so: OscillatorParams, k_c: float):
    """Undamped natural frequencies ``(ω1, ω2)`` in rad/s, ``ω1 <= ω2``."""
    if not k_c >= 0:
        raise ValueError(f"coupling stiffness must be non-negative, got {k_c}")
    lam1, lam2 = _eigenvalues(lo, so, k_c)
    return math.sqrt(lam1), math.sqrt(lam2)


def theoretical_max_frequency(lo: OscillatorParams, so: OscillatorParams) -> float:
    """First natural frequency (Hz) of the rigidly coupled system."""
    return math.sqrt((lo.stiffness + so.stiffness) / (lo.mass + so.mass)) / TWO_PI


def coupling_stiffness_from_frequency(lo: OscillatorParams, so: OscillatorParams,
                                      omega1: float, ceiling_rtol: float = 5e-4) -> float:
    """Coupling stiffness that places the first natural frequency at ``omega1``.

    Solving det(K - ω²M) = 0 for k_c gives ``k_c = -a b / (a + b)`` with
    ``a = k_LO - m_LO ω²`` and ``b = k_SO - m_SO ω²``. The denominator
    vanishes at the rigid-coupling ceiling. Frequencies within a relative
    gap ``ceiling_rtol`` of the ceiling are refused: k_c is unbounded there
    for any realistic frequency error.
    """
    w2 = omega1 * omega1
    a = lo.stiffness - lo.mass * w2
    b = so.stiffness - so.mass * w2
    den = a + b
    # den = (k_LO + k_SO) (1 - (ω/ω_max)²)
    gap = 1.0 - (1.0 - ceiling_rtol) ** 2
    if den <= gap * (lo.stiffness + so.stiffness):
        f_max = theoretical_max_frequency(lo, so)
        raise SingularInversionError(
            f"first frequency {omega1 / TWO_PI:.6g} Hz is at or above the "
            f"rigid-coupling ceiling {f_max:.6g} Hz")
    k_c = -a * b / den
    if k_c < 0:
        raise OutOfRangeError(
            f"first frequency {omega1 / TWO_PI:.6g} Hz lies below both uncoupled "
            f"frequencies (k_c = {k_c:.6g} N/m)")
    return k_c + 0.0


def mass_normalized_first_mode(lo: OscillatorParams, so: OscillatorParams,
                               k_c: float) -> np.ndarray:
    """First mode shape with φᵀMφ = 1 and a positive first entry."""
    if not k_c >= 0:
        raise ValueError(f"coupling stiffness must be non-negative, got {k_c}")
    lam1, _ = _eigenvalues(lo, so, k_c)
    # two equivalent null vectors of K - λM; the larger one is better conditioned
    u_a = np.array([so.stiffness + k_c - so.mass * lam1, k_c])
    u_b = np.array([k_c, lo.stiffness + k_c - lo.mass * lam1])
    u = u_a if np.hypot(*u_a) >= np.hypot(*u_b) else u_b
    if u[0] < 0 or (u[0] == 0 and u[1] < 0):
        u = -u
    return u / math.sqrt(lo.mass * u[0] ** 2 + so.mass * u[1] ** 2)


def modal_damping_coefficient(phi, c_lo: float, c_so: float, c_c: float) -> float:
    """``φᵀCφ`` for C = [[c_LO + c_C, -c_C], [-c_C, c_SO + c_C]]."""
    u_l, u_s = float(phi[0]), float(phi[1])
    return c_lo * u_l * u_l + c_so * u_s * u_s + c_c * (u_l - u_s) ** 2


class DampingInversion(NamedTuple):
    c_c: float
    warning: Optional[str]


def radicand(lo: OscillatorParams, so: OscillatorParams, k_c: float) -> float:
    """Quantity under the square root in the closed-form damping inversion."""
    ml, ms = lo.mass, so.mass
    d = so.stiffness * ml - lo.stiffness * ms
    return k_c * k_c * (ml + ms) ** 2 + 2.0 * k_c * (ml - ms) * d + d * d


def coupling_damping_from_zeta(lo: OscillatorParams, so: OscillatorParams, k_c: float,
                               zeta1: float, omega1: float) -> DampingInversion:
    """Coupling damping that gives the first mode a damping ratio ``zeta1``.

    Evaluates ``c_C = A / B`` in closed form. ``B`` is computed through the
    identity ``M P - k_c M² - D (m_LO - m_SO) = 4 m_LO m_SO D² / (M (P + P_lin))``
    with ``M = m_LO + m_SO`` and ``P_lin = k_c M + D (m_LO - m_SO) / M``,
    which avoids cancellation at large k_c. A negative result is returned
    with a warning string rather than raised.
    """
    ml, ms = lo.mass, so.mass
    kl, ks = lo.stiffness, so.stiffness
    cl, cs = lo.damping, so.damping
    m_tot = ml + ms
    d = ks * ml - kl * ms
    rad = radicand(lo, so, k_c)
    if not rad > 0:
        raise SingularInversionError(
            "uncoupled frequencies coincide; the damping inversion is singular")
    p = math.sqrt(rad)
    a = ((ml * (k_c + ks) - ms * (k_c + kl)) * (ml * cs - ms * cl)
         + (4.0 * ml * ms * zeta1 * omega1 - ml * cs - ms * cl) * p)
    p_lin = k_c * m_tot + d * (ml - ms) / m_tot
    if p_lin > 0:
        b = 4.0 * ml * ms * d * d / (m_tot * (p + p_lin))
    else:
        b = (ms * kl - ml * ks) * (ml - ms) - k_c * m_tot ** 2 + m_tot * p
    if b == 0:
        raise SingularInversionError("damping inversion denominator vanishes")
    c_c = a / b
    warning = None
    if c_c < 0:
        warning = "negative coupling damping"
    return DampingInversion(c_c + 0.0, warning)


def damped_first_eigenvalue(lo: OscillatorParams, so: OscillatorParams,
                            k_c: float, c_c: float) -> complex:
    """Upper-half-plane root of det(λ²M + λC + K) for the first mode."""
    m = np.diag([lo.mass, so.mass])
    k = np.array([[lo.stiffness + k_c, -k_c], [-k_c, so.stiffness + k_c]])
    c = np.array([[lo.damping + c_c, -c_c], [-c_c, so.damping + c_c]])
    a = np.block([[np.zeros((2, 2)), np.eye(2)],
                  [-np.linalg.solve(m, k), -np.linalg.solve(m, c)]])
    ev = np.linalg.eigvals(a)
    ev = ev[ev.imag > 0]
    if ev.size == 0:
        raise ValueError("first mode is overdamped")
    return complex(ev[np.argmin(ev.imag)])


def coupling_from_damped_mode(lo: OscillatorParams, so: OscillatorParams,
                              f_d: float, zeta1: float):
    """Coupling stiffness and damping reproducing a measured damped first mode.

    With ``q = k_c + c_C λ`` the characteristic equation of the damped
    system factors to ``q = -a_LO a_SO / (a_LO + a_SO)`` where
    ``a = m λ² + c λ + k``; the undamped inversion is the special case
    ``λ = iω``. The eigenvalue is built from the free-decay observables:
    damped frequency ``f_d`` and ratio ``ζ = -Re λ / |λ|``.

    Returns ``(k_c, c_C)``.
    """
    if not (f_d > 0 and 0 <= zeta1 < 1):
        raise ValueError("need f_d > 0 and 0 <= zeta1 < 1")
    w_d = TWO_PI * f_d
    lam = complex(-zeta1 * w_d / math.sqrt(1.0 - zeta1 * zeta1), w_d)
    a_lo = lo.mass * lam * lam + lo.damping * lam + lo.stiffness
    a_so = so.mass * lam * lam + so.damping * lam + so.stiffness
    den = a_lo + a_so
    if den == 0:
        raise SingularInversionError("damped inversion denominator vanishes")
    q = -a_lo * a_so / den
    c_c = q.imag / w_d
    return q.real - c_c * lam.real, c_c


def sdof_params(f: float, zeta: float, m: float):
    """Stiffness and damping of a single oscillator from ``(f, ζ, m)``."""
    if not (f > 0 and m > 0 and zeta >= 0):
        raise ValueError("sdof_params needs f > 0, m > 0, zeta >= 0")
    w = TWO_PI * f
    return m * w * w, 2.0 * zeta * w * m


# --------------------------------------------------------------------------
# time-domain estimation

@dataclass(frozen=True)
class PeakList:
    """Extrema in time order.

    ``times`` and ``amplitudes`` are refined by a parabola through each
    extremum and its two neighbours; ``values`` are the raw samples.
    """

    indices: np.ndarray
    values: np.ndarray
    polarity: np.ndarray
    times: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.indices.size > 1 and not np.all(np.diff(self.indices) > 0):
            raise ValueError("peak indices must be strictly increasing")

    def __len__(self):
        return self.indices.size

    def positive(self) -> "PeakList":
        return self._select(self.polarity > 0)

    def negative(self) -> "PeakList":
        return self._select(self.polarity < 0)

    def _select(self, mask) -> "PeakList":
        return PeakList(self.indices[mask], self.values[mask], self.polarity[mask],
                        self.times[mask], self.amplitudes[mask])


def _local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima; a plateau reports its first sample."""
    if x.size < 3:
        return np.empty(0, dtype=int)
    # collapse runs of equal values so plateaus look like single samples
    keep = np.concatenate(([True], x[1:] != x[:-1]))
    start = np.flatnonzero(keep)
    v = x[start]
    inner = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])) + 1
    return start[inner]


def _refine(x: np.ndarray, idx: np.ndarray, dt: float):
    # vertex of the parabola through (i-1, i, i+1)
    t = idx.astype(float)
    amp = x[idx].astype(float)
    ok = (idx > 0) & (idx < x.size - 1)
    i = idx[ok]
    y0, y1, y2 = x[i - 1], x[i], x[i + 1]
    den = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den != 0, 0.5 * (y0 - y2) / den, 0.0)
    off = np.clip(off, -0.5, 0.5)
    t[ok] = i + off
    amp[ok] = y1 - 0.25 * (y0 - y2) * off
    return t * dt, amp


def find_peaks(signal: TimeSeries, min_prominence: float = 0.01) -> PeakList:
    """Local maxima and minima whose prominence exceeds a fraction of max |x|."""
    x = signal.values
    if x.size < 3:
        raise ValueError("peak finding needs at least three samples")
    if not signal.is_uniform:
        raise ValueError("peak finding needs a uniformly sampled series")
    scale = float(np.max(np.abs(x)))
    empty = np.empty(0)
    if scale == 0:
        return PeakList(empty.astype(int), empty, empty.astype(int), empty, empty)
    threshold = min_prominence * scale
    idx_parts, pol_parts = [], []
    for sign in (1, -1):
        y = sign * x
        idx = _local_maxima(y)
        if idx.size:
            prom = peak_prominences(y, idx)[0]
            idx = idx[prom > threshold]
        idx_parts.append(idx)
        pol_parts.append(np.full(idx.size, sign, dtype=int))
    idx = np.concatenate(idx_parts)
    pol = np.concatenate(pol_parts)
    order = np.argsort(idx, kind="stable")
    idx, pol = idx[order], pol[order]
    t_pos, a_pos = _refine(x, idx[pol > 0], signal.dt)
    t_neg, a_neg = _refine(-x, idx[pol < 0], signal.dt)
    times = np.empty(idx.size)
    amps = np.empty(idx.size)
    times[pol > 0], amps[pol > 0] = t_pos, a_pos
    times[pol < 0], amps[pol < 0] = t_neg, -a_neg
    return PeakList(idx, x[idx].copy(), pol, signal.t0 + times, amps)


def peak_frequencies(peaks: PeakList) -> np.ndarray:
    """Frequency implied by each consecutive pair of peaks.

    Opposite polarities are half a period apart, equal polarities a full period.
    """
    dt = np.diff(peaks.times)
    same = peaks.polarity[1:] == peaks.polarity[:-1]
    return np.where(same, 1.0, 0.5) / dt


def frequency_from_peaks(peaks: PeakList, reject_above: float = 17.0):
    """Mean of the pairwise frequencies at or below ``reject_above``.

    Returns ``(f1, n_intervals_used)``.
    """
    f = peak_frequencies(peaks) if len(peaks) > 1 else np.empty(0)
    f = f[f <= reject_above]
    if f.size < 2:
        raise ValueError(f"only {f.size} valid peak interval(s); need at least 2")
    return float(np.mean(f)), int(f.size)


def frequency_from_average_period(signal: TimeSeries, window: float = 3.0,
                                  reject_above: float = 17.0, start: Optional[float] = None,
                                  min_prominence: float = 0.01) -> float:
    """First natural frequency (Hz) from peak spacing over ``[start, start + window)``."""
    t0 = signal.t0 if start is None else start
    peaks = find_peaks(signal.window(t0, t0 + window), min_prominence)
    return frequency_from_peaks(peaks, reject_above)[0]


def log_decrement_ratios(peaks: PeakList, reference: int = 2):
    """Per-peak damping ratios from the positive peaks, relative to ``reference``.

    ``reference`` is 1-based among the positive peaks. Returns an array of
    ζ_k; pairs with non-positive amplitudes are skipped.
    """
    amps = peaks.positive().amplitudes
    if amps.size < reference + 1:
        raise ValueError(f"need at least {reference + 1} positive peaks, got {amps.size}")
    a_ref = amps[reference - 1]
    later = amps[reference:]
    k = np.arange(1, later.size + 1, dtype=float)
    ok = (later > 0) & (a_ref > 0)
    delta = np.log(a_ref / later[ok]) / k[ok]
    return delta / np.sqrt(4.0 * math.pi ** 2 + delta ** 2)


def damping_from_log_decrement(peaks: PeakList, reference: int = 2) -> float:
    """Mean damping ratio of the positive-peak logarithmic decrements."""
    zeta = log_decrement_ratios(peaks, reference)
    if zeta.size == 0:
        raise ValueError("no usable peak pairs for the logarithmic decrement")
    return float(np.mean(zeta))


@dataclass(frozen=True)
class ModalEstimate:
    f1: float
    zeta1: float
    n_intervals_used: int
    n_peaks_used: int

    def __post_init__(self):
        if not self.f1 > 0:
            raise ValueError(f"f1 must be positive, got {self.f1}")
        if not self.zeta1 >= 0:
            raise ValueError(f"zeta1 must be non-negative, got {self.zeta1}")

    @property
    def omega1(self) -> float:
        return TWO_PI * self.f1


def estimate_modal(signal: TimeSeries, start: Optional[float] = None, window: float = 3.0,
                   reject_above: float = 17.0, min_prominence: float = 0.01,
                   reference: int = 2) -> ModalEstimate:
    """Average-period frequency and log-decrement damping from one decay record."""
    t0 = signal.t0 if start is None else start
    peaks = find_peaks(signal.window(t0, t0 + window), min_prominence)
    f1, n_int = frequency_from_peaks(peaks, reject_above)
    zeta = damping_from_log_decrement(peaks, reference)
    if zeta < 0:
        warnings.warn(f"log decrement gave negative damping {zeta:.3g}; clipped to 0",
                      ModalWarning, stacklevel=2)
        zeta = 0.0
    return ModalEstimate(f1, zeta, n_int, int(len(peaks.positive())))
