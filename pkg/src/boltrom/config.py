"""Job configuration: TOML tables mapped onto frozen dataclasses.

Every default mirrors the reference rig and identification settings. A
table that is absent from a file takes its defaults; a table that is
present must be complete for the joint models, and unknown keys are
rejected, so typos fail before any computation starts.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib
import tomli_w

from .dynamics import (
    DEFAULT_ATOL, DEFAULT_RTOL, LO_STIFFNESS_CORRECTION, SO_STIFFNESS_CORRECTION,
    OscillatorParams, SystemModel,
)
from .identify import EPS, GammaSearchSettings, PatternSearchOptions
from .joint_models import (
    REF_DAMPING, REF_LOOSENING, REF_STIFFNESS, DampingModel, LooseningModel,
    StiffnessModel,
)
from .pipeline import INVERSION_METHODS, ModalSettings
from .synth import FAST_RATE, PULSE_WIDTH, SYNTH_TOL, TENSION_RATE, NoiseSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    input: str = "."
    output: str = "out"


@dataclass(frozen=True)
class OscillatorConfig:
    """Uncoupled identification of one oscillator plus its coupled-state correction."""

    mass: float
    stiffness: float
    damping: float
    stiffness_correction: float = 1.0

    def params(self, corrected: bool = True) -> OscillatorParams:
        k = self.stiffness * (self.stiffness_correction if corrected else 1.0)
        return OscillatorParams(self.mass, k, self.damping)


@dataclass(frozen=True)
class SystemConfig:
    lo: OscillatorConfig = OscillatorConfig(8.625, 8148.7, 8.200, LO_STIFFNESS_CORRECTION)
    so: OscillatorConfig = OscillatorConfig(0.9888, 76500.0, 2.696, SO_STIFFNESS_CORRECTION)
    stiffness: Optional[StiffnessModel] = REF_STIFFNESS
    damping: Optional[DampingModel] = REF_DAMPING
    loosening: Optional[LooseningModel] = REF_LOOSENING

    def oscillators(self) -> tuple[OscillatorParams, OscillatorParams]:
        return self.lo.params(), self.so.params()

    def model(self, require_loosening: bool = False) -> SystemModel:
        missing = [n for n in ("stiffness", "damping") if getattr(self, n) is None]
        if require_loosening and self.loosening is None:
            missing.append("loosening")
        if missing:
            raise ConfigError("system config lacks model(s): " + ", ".join(missing))
        lo, so = self.oscillators()
        return SystemModel(lo, so, self.stiffness, self.damping, self.loosening)


@dataclass(frozen=True)
class SignalConfig:
    cutoff_uncoupled: float = 2.0
    cutoff_coupled: float = 5.0
    order: int = 3
    settle: float = 0.5
    window: float = 3.0
    reject_above: float = 17.0
    min_prominence: float = 0.01
    reference_peak: int = 2
    method: str = "damped"


@dataclass(frozen=True)
class WindowConfig:
    """Absolute times in the record, for an impact at the pretrigger time."""

    initial: tuple[float, float] = (0.0, 0.4)
    final: tuple[float, float] = (2.0, 8.0)


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    synth_rtol: float = SYNTH_TOL[0]
    synth_atol: float = SYNTH_TOL[1]


@dataclass(frozen=True)
class OptimizerConfig:
    x0: float = 1e8
    lower: float = -1e10
    upper: float = 1e10
    mesh_tolerance: float = 1e-12
    function_tolerance: float = EPS
    step_tolerance: float = EPS
    max_evals: int = 10**10
    complete_poll: bool = False
    log_transform: bool = False
    gamma_fit_space: str = "log10"


@dataclass(frozen=True)
class SynthConfig:
    pretrigger: float = 0.5
    duration_low: float = 30.5
    duration_loosening: float = 30.5
    fs_fast: float = FAST_RATE
    fs_tension: float = TENSION_RATE
    pulse_width: float = PULSE_WIDTH
    low_amplitude: float = 30.0
    loosening_amplitude: float = 1608.7
    # > 0 sizes each loosening pulse for this fractional tension drop
    target_drop: float = 1e-3
    preload_min: float = 5.8
    preload_max: float = 3013.0
    n_low: int = 58
    n_loosening: int = 84
    spacing: str = "geometric"
    n_uncoupled: int = 0
    uncoupled_amplitude: float = 30.0

    def preloads(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty(0)
        if self.spacing == "geometric":
            return np.geomspace(self.preload_min, self.preload_max, n)
        return np.linspace(self.preload_min, self.preload_max, n)


@dataclass(frozen=True)
class NoiseConfig:
    level: float = 0.0
    accel_rms: float = 0.0
    tension_rms: float = 0.0
    tone_hz: float = 0.0
    tone_amplitude: float = 0.0

    def spec(self, seed: int) -> NoiseSpec:
        tone = (self.tone_hz, self.tone_amplitude) if self.tone_amplitude > 0 else None
        return NoiseSpec(self.accel_rms, self.tension_rms, tone, int(seed), self.level)


@dataclass(frozen=True)
class JobConfig:
    seed: int = 0
    jobs: int = 1
    paths: PathsConfig = PathsConfig()
    system: SystemConfig = SystemConfig()
    signal: SignalConfig = SignalConfig()
    windows: WindowConfig = WindowConfig()
    solver: SolverConfig = SolverConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    synth: SynthConfig = SynthConfig()
    noise: NoiseConfig = NoiseConfig()

    def __post_init__(self):
        validate(self)

    # -- adapters onto the library settings --------------------------------

    def relative_windows(self):
        p = self.synth.pretrigger
        w = self.windows
        return ((w.initial[0] - p, w.initial[1] - p), (w.final[0] - p, w.final[1] - p))

    def modal_settings(self, coupled: bool = True) -> ModalSettings:
        s = self.signal
        cutoff = s.cutoff_coupled if coupled else s.cutoff_uncoupled
        return ModalSettings(cutoff=cutoff, order=s.order, settle=s.settle, window=s.window,
                             reject_above=s.reject_above, min_prominence=s.min_prominence,
                             reference_peak=s.reference_peak, method=s.method,
                             initial_window=self.relative_windows()[0])

    def gamma_settings(self) -> GammaSearchSettings:
        o = self.optimizer
        opts = PatternSearchOptions(mesh_tolerance=o.mesh_tolerance,
                                    function_tolerance=o.function_tolerance,
                                    step_tolerance=o.step_tolerance, max_evals=o.max_evals,
                                    complete_poll=o.complete_poll,
                                    log_transform=o.log_transform)
        initial, final = self.relative_windows()
        return GammaSearchSettings(x0=o.x0, lower=o.lower, upper=o.upper, options=opts,
                                   tol=(self.solver.rtol, self.solver.atol),
                                   initial_window=initial, final_window=final)

    @property
    def tol(self):
        return (self.solver.rtol, self.solver.atol)

    @property
    def synth_tol(self):
        return (self.solver.synth_rtol, self.solver.synth_atol)


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be a positive number, got {value!r}")


def _window(name, w):
    if len(w) != 2 or not w[0] < w[1]:
        raise ConfigError(f"{name} window must be an increasing pair, got {w!r}")


def validate(cfg: JobConfig) -> None:
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    for osc_name in ("lo", "so"):
        osc = getattr(cfg.system, osc_name)
        for k in ("mass", "stiffness", "stiffness_correction"):
            _positive(f"system.{osc_name}.{k}", getattr(osc, k))
        if not osc.damping >= 0:
            raise ConfigError(f"system.{osc_name}.damping must be non-negative")
    s = cfg.signal
    for k in ("cutoff_uncoupled", "cutoff_coupled", "window", "reject_above"):
        _positive(f"signal.{k}", getattr(s, k))
    if s.order < 1 or s.reference_peak < 1:
        raise ConfigError("signal.order and signal.reference_peak must be at least 1")
    if s.settle < 0 or not 0 <= s.min_prominence < 1:
        raise ConfigError("signal.settle must be >= 0 and signal.min_prominence in [0, 1)")
    if s.method not in INVERSION_METHODS:
        raise ConfigError(f"signal.method must be one of {INVERSION_METHODS}")
    _window("windows.initial", cfg.windows.initial)
    _window("windows.final", cfg.windows.final)
    if cfg.windows.initial[1] > cfg.synth.pretrigger or cfg.windows.final[0] < cfg.synth.pretrigger:
        raise ConfigError("windows must lie before and after the impact at synth.pretrigger")
    for k in ("rtol", "atol", "synth_rtol", "synth_atol"):
        _positive(f"solver.{k}", getattr(cfg.solver, k))
    o = cfg.optimizer
    if not o.lower <= o.x0 <= o.upper:
        raise ConfigError("optimizer.x0 must lie within [lower, upper]")
    for k in ("mesh_tolerance", "function_tolerance", "step_tolerance", "max_evals"):
        _positive(f"optimizer.{k}", getattr(o, k))
    if o.gamma_fit_space not in ("log10", "linear"):
        raise ConfigError("optimizer.gamma_fit_space must be 'log10' or 'linear'")
    y = cfg.synth
    for k in ("duration_low", "duration_loosening", "fs_fast", "fs_tension", "pulse_width",
              "preload_min", "preload_max"):
        _positive(f"synth.{k}", getattr(y, k))
    if y.pretrigger < 0 or y.preload_max < y.preload_min:
        raise ConfigError("synth.pretrigger must be >= 0 and preload_max >= preload_min")
    if min(y.n_low, y.n_loosening, y.n_uncoupled) < 0:
        raise ConfigError("case counts must be non-negative")
    if not 0 <= y.target_drop < 1:
        raise ConfigError("synth.target_drop must lie in [0, 1)")
    if min(y.low_amplitude, y.loosening_amplitude, y.uncoupled_amplitude) < 0:
        raise ConfigError("pulse amplitudes must be non-negative")
    if y.spacing not in ("geometric", "linear"):
        raise ConfigError("synth.spacing must be 'geometric' or 'linear'")
    n = cfg.noise
    if min(n.level, n.accel_rms, n.tension_rms, n.tone_amplitude) < 0:
        raise ConfigError("noise magnitudes must be non-negative")
    if n.tone_amplitude > 0 and not n.tone_hz > 0:
        raise ConfigError("noise.tone_hz must be positive when a tone is requested")


# --------------------------------------------------------------------------
# TOML mapping

_MODEL_TYPES = {"stiffness": StiffnessModel, "damping": DampingModel,
                "loosening": LooseningModel}
_SECTION_TYPES = {"paths": PathsConfig, "signal": SignalConfig, "windows": WindowConfig,
                  "solver": SolverConfig, "optimizer": OptimizerConfig,
                  "synth": SynthConfig, "noise": NoiseConfig}


def _coerce(cls, table: dict, where: str, base=None, complete: bool = False):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"[{where}] has unknown key(s): {', '.join(unknown)}")
    if complete:
        missing = [k for k in known if k not in table]
        if missing:
            raise ConfigError(f"[{where}] is missing field(s): {', '.join(missing)}")
    values = {}
    for name, value in table.items():
        default = getattr(base, name) if base is not None else None
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{name} must be an array")
            value = tuple(float(v) for v in value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{name} must be true or false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, (int, float)) \
                    or value != int(value):
                raise ConfigError(f"{where}.{name} must be an integer")
            value = int(value)
        elif isinstance(default, float) or (base is None):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{name} must be a number")
            value = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{where}.{name} must be a string")
        values[name] = value
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def from_dict(data: dict[str, Any], base: Optional[JobConfig] = None) -> JobConfig:
    """Overlay a parsed TOML document on ``base`` (the defaults)."""
    base = base or JobConfig()
    data = dict(data)
    top = {}
    for key in ("seed", "jobs"):
        if key in data:
            value = data.pop(key)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
            top[key] = value
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            sections[name] = _coerce(cls, data.pop(name), name, getattr(base, name))
    if "system" in data:
        sections["system"] = _system_from_dict(data.pop("system"), base.system)
    if data:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(data))}")
    try:
        return replace(base, **top, **sections)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _system_from_dict(table: dict, base: SystemConfig) -> SystemConfig:
    if not isinstance(table, dict):
        raise ConfigError("[system] must be a table")
    table = dict(table)
    values = {}
    for osc in ("lo", "so"):
        if osc in table:
            values[osc] = _coerce(OscillatorConfig, table.pop(osc), f"system.{osc}",
                                  getattr(base, osc))
    for name, cls in _MODEL_TYPES.items():
        if name in table:
            values[name] = _coerce(cls, table.pop(name), f"system.{name}", complete=True)
    if table:
        raise ConfigError(f"[system] has unknown key(s): {', '.join(sorted(table))}")
    return replace(base, **values)


def to_dict(cfg: JobConfig) -> dict[str, Any]:
    """Plain dict suitable for TOML; absent models are omitted."""
    out: dict[str, Any] = {"seed": cfg.seed, "jobs": cfg.jobs}
    out["paths"] = asdict(cfg.paths)
    system: dict[str, Any] = {"lo": asdict(cfg.system.lo), "so": asdict(cfg.system.so)}
    for name in _MODEL_TYPES:
        model = getattr(cfg.system, name)
        if model is not None:
            system[name] = {f.name: float(getattr(model, f.name)) for f in fields(model)}
    out["system"] = system
    for name in ("signal", "windows", "solver", "optimizer", "synth", "noise"):
        section = asdict(getattr(cfg, name))
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
    return out


def dumps(cfg: JobConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str, base: Optional[JobConfig] = None) -> JobConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(data, base)


def load(path, base: Optional[JobConfig] = None) -> JobConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return loads(path.read_text(encoding="utf-8"), base)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def with_models(cfg: JobConfig, stiffness=None, damping=None, loosening=None) -> JobConfig:
    """Copy of ``cfg`` with the given joint models replaced."""
    system = cfg.system
    updates = {k: v for k, v in (("stiffness", stiffness), ("damping", damping),
                                 ("loosening", loosening)) if v is not None}
    return replace(cfg, system=replace(system, **updates))
