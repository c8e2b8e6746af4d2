"""Measurement conditioning: Butterworth filtering, integration, decimation.

Filters are second-order-section cascades designed through the bilinear
transform with frequency prewarping (``scipy.signal.butter``). Zero-phase
filtering pads the record by odd reflection over ``3 * order`` samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal as _signal


@dataclass(frozen=True)
class TimeSeries:
    """Sampled signal, either uniform (``t0``, ``dt``) or on explicit times."""

    values: np.ndarray
    dt: Optional[float] = None
    t0: float = 0.0
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("time series values must be 1-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("time series values must be finite")
        object.__setattr__(self, "values", v)
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            if t.shape != v.shape:
                raise ValueError("times and values differ in length")
            if t.size > 1 and not np.all(np.diff(t) > 0):
                raise ValueError("times must be strictly increasing")
            object.__setattr__(self, "times", t)
        elif self.dt is None or not self.dt > 0:
            raise ValueError("uniform time series needs dt > 0")

    @classmethod
    def uniform(cls, values, fs: float, t0: float = 0.0) -> "TimeSeries":
        return cls(values, dt=1.0 / fs, t0=t0)

    def __len__(self):
        return self.values.size

    @property
    def is_uniform(self) -> bool:
        return self.times is None

    @property
    def time(self) -> np.ndarray:
        if self.times is not None:
            return self.times
        return self.t0 + self.dt * np.arange(self.values.size)

    @property
    def fs(self) -> float:
        self._require_uniform()
        return 1.0 / self.dt

    def _require_uniform(self):
        if not self.is_uniform:
            raise ValueError("operation needs a uniformly sampled series")

    def with_values(self, values) -> "TimeSeries":
        if self.is_uniform:
            return TimeSeries(values, dt=self.dt, t0=self.t0)
        return TimeSeries(values, times=self.times)

    def window(self, t_lo: float, t_hi: float) -> "TimeSeries":
        """Samples with ``t_lo <= t < t_hi``."""
        t = self.time
        mask = (t >= t_lo) & (t < t_hi)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ValueError(f"no samples in [{t_lo}, {t_hi})")
        if self.is_uniform:
            return TimeSeries(self.values[idx], dt=self.dt, t0=float(t[idx[0]]))
        return TimeSeries(self.values[idx], times=t[idx])

    def resample_uniform(self, fs: float) -> "TimeSeries":
        t = self.time
        n = int(np.floor((t[-1] - t[0]) * fs + 1e-9)) + 1
        tu = t[0] + np.arange(n) / fs
        return TimeSeries(np.interp(tu, t, self.values), dt=1.0 / fs, t0=float(t[0]))


@dataclass(frozen=True)
class FilterSpec:
    cutoff: float
    sample_rate: float
    order: int = 3
    kind: str = "highpass"

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("filter order must be at least 1")
        if not 0 < self.cutoff < self.sample_rate / 2:
            raise ValueError(
                f"cutoff {self.cutoff} Hz must lie in (0, {self.sample_rate / 2}) Hz")
        if self.kind not in ("highpass", "lowpass"):
            raise ValueError(f"unsupported filter kind {self.kind!r}")


def butterworth_sos(spec: FilterSpec) -> np.ndarray:
    return _signal.butter(spec.order, spec.cutoff, btype=spec.kind,
                          fs=spec.sample_rate, output="sos")


def butterworth_highpass(spec: FilterSpec) -> np.ndarray:
    """High-pass SOS coefficients, shape ``(n_sections, 6)``."""
    if spec.kind != "highpass":
        raise ValueError("butterworth_highpass needs a highpass FilterSpec")
    return butterworth_sos(spec)


def sos_response(sos: np.ndarray, f, fs: float):
    """Complex frequency response of an SOS cascade at ``f`` Hz."""
    z = np.exp(2j * np.pi * np.asarray(f, dtype=float) / fs)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h = h * (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
    return h


def _filter_order(sos: np.ndarray) -> int:
    # trailing zero coefficients mark a first-order section
    n = 2 * len(sos)
    n -= min(int(np.sum(sos[:, 2] == 0)), int(np.sum(sos[:, 5] == 0)))
    return n


def filtfilt(sos: np.ndarray, x: TimeSeries) -> TimeSeries:
    """Forward-backward filtering; net magnitude ``|H|**2``, zero phase."""
    sos = np.asarray(sos, dtype=float)
    padlen = 3 * _filter_order(sos)
    if len(x) <= padlen:
        raise ValueError(f"signal of {len(x)} samples is too short to filter "
                         f"(needs more than {padlen})")
    y = _signal.sosfiltfilt(sos, x.values, padtype="odd", padlen=padlen)
    return x.with_values(y)


def highpass(x: TimeSeries, cutoff: float, order: int = 3) -> TimeSeries:
    return filtfilt(butterworth_highpass(FilterSpec(cutoff, x.fs, order)), x)


def cumtrapz(x: TimeSeries) -> TimeSeries:
    """Cumulative trapezoidal integral starting at zero."""
    if len(x) < 2:
        raise ValueError("cumtrapz needs at least two samples")
    v = x.values
    if x.is_uniform:
        # scale once after summing so a constant integrates without drift
        total = 0.5 * x.dt * np.cumsum(v[1:] + v[:-1])
    else:
        total = np.cumsum(0.5 * np.diff(x.times) * (v[1:] + v[:-1]))
    return x.with_values(np.concatenate(([0.0], total)))


def accel_to_displacement(a: TimeSeries, cutoff: float, order: int = 3):
    """High-pass, integrate, high-pass, integrate, high-pass.

    Returns ``(velocity, displacement)``.
    """
    a._require_uniform()
    a_f = highpass(a, cutoff, order)
    vel = highpass(cumtrapz(a_f), cutoff, order)
    disp = highpass(cumtrapz(vel), cutoff, order)
    return vel, disp


def decimate(x: TimeSeries, factor: int, order: int = 8, cutoff_ratio: float = 0.8) -> TimeSeries:
    """Zero-phase Butterworth anti-alias filter, then keep every ``factor``-th sample."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    x._require_uniform()
    cutoff = cutoff_ratio * (x.fs / factor) / 2.0
    sos = butterworth_sos(FilterSpec(cutoff, x.fs, order, kind="lowpass"))
    y = filtfilt(sos, x).values[::factor]
    return TimeSeries(y, dt=x.dt * factor, t0=x.t0)


def align_by_peak(a: TimeSeries, b: TimeSeries) -> tuple[float, TimeSeries]:
    """Shift ``b`` so its global maximum coincides with that of ``a``.

    Returns ``(offset, b_on_a)`` where ``offset = t_peak(b) - t_peak(a)`` and
    ``b_on_a`` is the shifted ``b`` linearly resampled onto ``a``'s times
    (zero outside its span).
    """
    for name, s in (("first", a), ("second", b)):
        if len(s) == 0 or np.ptp(s.values) == 0:
            raise ValueError(f"{name} signal is flat; cannot align by peak")
    ta = a.time[int(np.argmax(a.values))]
    tb_all = b.time
    tb = tb_all[int(np.argmax(b.values))]
    offset = float(tb - ta)
    resampled = np.interp(a.time, tb_all - offset, b.values, left=0.0, right=0.0)
    return offset, a.with_values(resampled)


def magnitude_spectrum(x: TimeSeries) -> tuple[np.ndarray, np.ndarray]:
    """One-sided amplitude spectrum ``(freqs, |X|)`` for plotting."""
    x._require_uniform()
    n = len(x)
    spec = np.abs(np.fft.rfft(x.values)) * 2.0 / n
    return np.fft.rfftfreq(n, x.dt), spec
