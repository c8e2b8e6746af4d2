"""Command-line front end.

Each verb has a ``cmd_*`` function that takes a :class:`JobConfig` plus
paths and returns a :class:`CommandResult`; :func:`main` only parses
arguments, calls one of them and maps exceptions onto exit codes:

0 success, 2 validation error, 3 some cases failed (see ``errors.csv``),
4 internal error.
"""

from __future__ import annotations

import argparse
import math
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import config as cfgmod
from . import io as bio
from . import modal, pipeline
from .config import ConfigError, JobConfig
from .dynamics import SimulationError, simulate, tension_change_series
from .fitting import FitError, fit_zero_intercept_polynomial
from .identify import CaseError, batch_identify
from .joint_models import coupling_damping, coupling_stiffness, loosening_rate
from .sigproc import TimeSeries, align_by_peak
from .synth import (
    amplitude_for_drop, decoupled, impulse_force, synth_campaign, synth_case,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3
EXIT_INTERNAL = 4

ERRORS_NAME = "errors.csv"
ERROR_COLUMNS = ("case_id", "stage", "message")
FIT_REPORT_COLUMNS = ("model", "parameter", "value", "r_squared", "n_points",
                      "rms_residual", "converged")
REPORT_COLUMNS = ("quantity", "value")


@dataclass
class CommandResult:
    outputs: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    data: object = None

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failures else EXIT_OK


def _finish(out: Path, result: CommandResult, stage: str) -> CommandResult:
    path = out / ERRORS_NAME
    if result.failures:
        bio.write_rows(path, ERROR_COLUMNS, [(cid, stage, msg) for cid, msg in result.failures])
        result.outputs["errors"] = path
    elif path.exists():
        path.unlink()
    return result


# --------------------------------------------------------------------------
# calibrate


def cmd_calibrate(strain_csv, force_csv, out, degree: int = 3) -> CommandResult:
    """Align the strain and force records by their peaks and fit the polynomial."""
    out = Path(out)
    strain = bio.read_columns(strain_csv, bio.CALIBRATION_COLUMNS)
    force = bio.read_columns(force_csv, bio.FORCE_COLUMNS)
    try:
        s_ts = TimeSeries(strain["strain"], times=strain["time_s"])
        f_ts = TimeSeries(force["force_N"], times=force["time_s"])
    except ValueError as exc:
        raise bio.SchemaError(f"{strain_csv} / {force_csv}: {exc}") from exc
    try:
        offset, strain_on_force = align_by_peak(f_ts, s_ts)
    except ValueError as exc:
        raise bio.SchemaError(f"{strain_csv} / {force_csv}: {exc}") from exc
    t = f_ts.time
    shifted = s_ts.time - offset
    inside = (t >= shifted[0]) & (t <= shifted[-1])
    poly, res = fit_zero_intercept_polynomial(strain_on_force.values[inside],
                                              f_ts.values[inside], degree)
    text = cfgmod.tomli_w.dumps({"calibration": {
        "coeffs": [float(c) for c in poly.coeffs], "r_squared": float(res.r_squared),
        "offset_s": offset, "n_points": int(inside.sum()), "degree": degree}})
    path = bio.atomic_write_text(out / "calibration.toml", text)
    return CommandResult({"calibration": path}, [], (poly, res, offset))


# --------------------------------------------------------------------------
# modal identification


def _modal_worker(args):
    directory, entry, cfg = args
    try:
        case = bio.read_case(directory, entry)
        if entry.test_type == "uncoupled":
            osc = cfg.system.lo if entry.oscillator != "so" else cfg.system.so
            f, z, k, c = pipeline.identify_sdof_case(case, osc.mass,
                                                     cfg.modal_settings(coupled=False))
            return ("sdof", (entry.case_id, entry.oscillator or "lo", f, z, k, c))
        lo, so = cfg.system.oscillators()
        return ("modal", pipeline.identify_modal_case(case, lo, so, cfg.modal_settings()))
    except Exception as exc:  # per-case isolation
        return ("error", (entry.case_id, f"{type(exc).__name__}: {exc}"))


def _map(fn, work, jobs: int):
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, work))
    return [fn(w) for w in work]


def cmd_identify_modal(manifest, cfg: JobConfig, out) -> CommandResult:
    """First-mode estimates and coupling elements for every coupled-low case.

    Uncoupled cases, if present, go to ``sdof.csv``.
    """
    out = Path(out)
    directory, entries = bio.load_cases(manifest)
    work = [(directory, e, cfg) for e in entries if e.test_type in ("coupled-low", "uncoupled")]
    rows, sdof, failures = [], [], []
    for kind, payload in _map(_modal_worker, work, cfg.jobs):
        if kind == "modal":
            rows.append(payload)
        elif kind == "sdof":
            sdof.append(payload)
        else:
            failures.append(payload)
    result = CommandResult()
    result.outputs["modal"] = bio.write_rows(
        out / "modal.csv", bio.MODAL_COLUMNS,
        [(r.case_id, r.preload, r.f1, r.zeta1, r.k_c, r.c_c, r.warnings) for r in rows])
    if sdof:
        result.outputs["sdof"] = bio.write_rows(out / "sdof.csv", bio.SDOF_COLUMNS, sdof)
    result.failures = failures
    result.data = rows
    return _finish(out, result, "identify-modal")


def read_modal_rows(path) -> list[pipeline.ModalRow]:
    rows = []
    for r in bio.read_rows(path, bio.MODAL_COLUMNS):
        vals = [bio.parse_float(r, k, path) for k in
                ("preload_N", "f1_Hz", "zeta1", "k_c_Npm", "c_c_Nspm")]
        rows.append(pipeline.ModalRow(r["case_id"], *vals, r["warnings"]))
    return rows


# --------------------------------------------------------------------------
# constitutive fits


def _report_rows(name, model, res):
    rms = float(np.sqrt(np.mean(res.residuals ** 2))) if res.residuals.size else math.nan
    return [(name, p, v, res.r_squared, res.residuals.size, rms, res.converged)
            for p, v in res.as_dict().items()]


def read_gamma_rows(path):
    """``(preload, gamma)`` of the loosening rows; a non-positive γ there is an error."""
    preload, gamma = [], []
    for r in bio.read_rows(path, bio.GAMMA_COLUMNS):
        if r["status"] != "loosening":
            continue
        g = bio.parse_float(r, "gamma", path)
        if not g > 0:
            raise FitError(f"{path}:{r['_line']}: case {r['case_id']} is marked loosening "
                           f"but has gamma = {r['gamma']}; the loosening-rate model needs "
                           f"positive values")
        preload.append(bio.parse_float(r, "preload_N", path))
        gamma.append(g)
    return np.array(preload), np.array(gamma)


def cmd_fit_models(cfg: JobConfig, out, modal_csv=None, gamma_csv=None,
                   keep_warnings: bool = False, plot: bool = False) -> CommandResult:
    """Fit the joint models and write ``model.toml`` (the config with fitted models)."""
    if modal_csv is None and gamma_csv is None:
        raise ConfigError("fit-models needs a modal table, a gamma table, or both")
    out = Path(out)
    report, curves = [], {}
    stiffness = damping = loosening = None
    if modal_csv is not None:
        rows = read_modal_rows(modal_csv)
        use = pipeline.usable_rows(rows, keep_warnings)
        if len(use) < 4:
            raise FitError(f"{modal_csv}: {len(use)} usable rows (of {len(rows)}); "
                           f"at least 4 are needed"
                           + ("" if keep_warnings else " (flagged rows were dropped; "
                              "see --keep-warnings)"))
        (stiffness, kfit), (damping, cfit) = pipeline.fit_joint_models(use, keep_warnings=True)
        report += _report_rows("stiffness", stiffness, kfit)
        report += _report_rows("damping", damping, cfit)
    if gamma_csv is not None:
        preload, gamma = read_gamma_rows(gamma_csv)
        if preload.size < 4:
            raise FitError(f"{gamma_csv}: {preload.size} loosening rows; at least 4 are needed")
        loosening, gfit = pipeline.fit_loosening_model(preload, gamma,
                                                       cfg.optimizer.gamma_fit_space)
        report += _report_rows("loosening", loosening, gfit)
    fitted = cfgmod.with_models(cfg, stiffness, damping, loosening)
    result = CommandResult(data=fitted)
    result.outputs["model"] = bio.atomic_write_text(out / "model.toml", cfgmod.dumps(fitted))
    result.outputs["report"] = bio.write_rows(out / "fit_report.csv", FIT_REPORT_COLUMNS,
                                              report)
    grid = np.geomspace(cfg.synth.preload_min, cfg.synth.preload_max, 200)
    s = fitted.system
    columns = [grid]
    header = ["tension_N"]
    for name, model, fn in (("k_c_Npm", s.stiffness, coupling_stiffness),
                            ("c_c_Nspm", s.damping, coupling_damping),
                            ("gamma", s.loosening, loosening_rate)):
        if model is not None:
            header.append(name)
            columns.append(fn(model, grid))
    result.outputs["curves"] = bio.write_columns(out / "fit_curves.csv", header, columns)
    if plot:
        result.outputs["plot"] = _plot_curves(out / "fit_curves.svg", header, columns)
    return result


def _plot_curves(path, header, columns):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("plotting needs matplotlib (pip install matplotlib)") from exc
    n = len(header) - 1
    fig, axes = plt.subplots(n, 1, figsize=(5, 2.5 * max(n, 1)), squeeze=False)
    for ax, name, col in zip(axes[:, 0], header[1:], columns[1:]):
        ax.plot(columns[0], col)
        ax.set_xscale("log")
        if name == "gamma":
            ax.set_yscale("log")
        ax.set_ylabel(name)
    axes[-1, 0].set_xlabel("tension (N)")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


# --------------------------------------------------------------------------
# loosening-rate identification


def _gamma_status(delta: float) -> str:
    if delta < 0:
        return "loosening"
    if delta > 0:
        return "tightening"
    return "unchanged"


def cmd_identify_gamma(manifest, cfg: JobConfig, out) -> CommandResult:
    """Constant γ for every loosening case, using the configured joint models."""
    out = Path(out)
    system = cfg.system.model().without_loosening()
    settings = cfg.gamma_settings()
    directory, entries = bio.load_cases(manifest, "loosening")
    cases, rows, failures = [], [], []
    for e in entries:
        try:
            cases.append(bio.read_case(directory, e))
        except bio.SchemaError as exc:
            failures.append((e.case_id, str(exc)))
            rows.append((e.case_id, e.preload, math.nan, math.nan, 0, f"error: {exc}",
                         math.nan, math.nan, ""))
    for case, res in zip(cases, batch_identify(cases, system, settings, jobs=cfg.jobs)):
        if isinstance(res, CaseError):
            failures.append((res.case_id, res.message))
            rows.append((res.case_id, res.preload, math.nan, math.nan, 0,
                         f"error: {res.message}", math.nan, math.nan, ""))
            continue
        delta = res.tension_final - res.preload
        rows.append((res.case_id, res.preload, res.gamma, res.objective_final,
                     res.evaluations, _gamma_status(delta), res.tension_final, delta,
                     res.reason))
    order = {e.case_id: i for i, e in enumerate(entries)}
    rows.sort(key=lambda r: order[r[0]])
    result = CommandResult(failures=failures, data=rows)
    result.outputs["gamma"] = bio.write_rows(out / "gamma.csv", bio.GAMMA_COLUMNS, rows)
    return _finish(out, result, "identify-gamma")


# --------------------------------------------------------------------------
# forward simulation


def cmd_simulate(cfg: JobConfig, out, manifest=None, case_id: Optional[str] = None,
                 preload: Optional[float] = None, amplitude: Optional[float] = None,
                 duration: Optional[float] = None) -> CommandResult:
    """Simulate the configured model for a measured case or a synthetic pulse."""
    out = Path(out)
    system = cfg.system.model(require_loosening=True)
    initial, final = cfg.relative_windows()
    case = None
    if manifest is not None:
        if case_id is None:
            raise ConfigError("simulating a measured case needs --case-id")
        directory, entries = bio.load_cases(manifest)
        match = [e for e in entries if e.case_id == case_id]
        if not match:
            raise ConfigError(f"case {case_id!r} is not in {manifest}")
        case = bio.read_case(directory, match[0])
        force, t_impact = case.force, case.t_impact
        try:
            t0_meas, tf_meas, d_meas = tension_change_series(
                case.tension.time, case.tension.values, t_impact, initial, final)
        except ValueError as exc:
            raise ConfigError(f"case {case_id}: {exc}") from exc
        tension0 = t0_meas
        times = case.tension.time
    else:
        if preload is None or amplitude is None:
            raise ConfigError("simulate needs either a case or --preload and --amplitude")
        y = cfg.synth
        t_impact = y.pretrigger
        duration = duration if duration is not None else y.duration_loosening
        force = impulse_force(amplitude, y.pulse_width, t_impact, y.fs_fast, duration)
        tension0 = float(preload)
        if t_impact + final[1] > duration:
            raise ConfigError(f"simulate: duration {duration} s ends before the final window "
                              f"closes at {t_impact + final[1]} s")
        n = int(math.floor(duration * y.fs_tension + 1e-9)) + 1
        times = np.arange(n) / y.fs_tension
    traj = simulate(system, force, tension0, (0.0, float(times[-1])), tol=cfg.tol,
                    t_eval=times)
    t_init, t_final, delta = tension_change_series(traj.times, traj.tension, t_impact,
                                                   initial, final)
    report = [("T_initial_N", t_init), ("T_final_N", t_final), ("delta_N", delta)]
    result = CommandResult()
    result.outputs["trajectory"] = bio.write_columns(
        out / "trajectory.csv", bio.TRAJECTORY_COLUMNS,
        [traj.times, traj.x_lo, traj.v_lo, traj.x_so, traj.v_so, traj.tension])
    if case is not None:
        pct = 100.0 * abs(t_final - tf_meas) / abs(tf_meas) if tf_meas else math.nan
        report += [("measured_T_initial_N", t0_meas), ("measured_T_final_N", tf_meas),
                   ("measured_delta_N", d_meas), ("percent_error", pct)]
        disp = pipeline.case_displacement(case, cfg.modal_settings())
        sim_x = np.interp(disp.time, traj.times, traj.x_lo)
        result.outputs["overlay"] = bio.write_columns(
            out / "overlay.csv", bio.OVERLAY_COLUMNS, [disp.time, disp.values, sim_x])
    result.outputs["report"] = bio.write_rows(out / "simulate_report.csv", REPORT_COLUMNS,
                                              report)
    result.data = dict(report)
    return result


# --------------------------------------------------------------------------
# synthetic campaign


def cmd_synth(cfg: JobConfig, out) -> CommandResult:
    """Write a synthetic campaign (case files plus ``manifest.csv``) from the config."""
    out = Path(out)
    y = cfg.synth
    total = y.n_low + y.n_loosening + 2 * y.n_uncoupled
    if total == 0:
        raise ConfigError("synth: zero cases requested")
    truth = cfg.system.model(require_loosening=y.n_loosening > 0)
    noise = cfg.noise
    tol = cfg.synth_tol
    common = dict(width=y.pulse_width, pretrigger=y.pretrigger, fs_fast=y.fs_fast,
                  fs_tension=y.fs_tension, tol=tol)
    entries = []
    seed = cfg.seed
    if y.n_low:
        cases = synth_campaign(truth, y.preloads(y.n_low), [y.low_amplitude],
                               noise.spec(seed), test_type="coupled-low",
                               duration=y.duration_low, **common)
        entries += [bio.write_case(out, c, pulse_width=y.pulse_width) for c in cases]
        seed += y.n_low
    if y.n_loosening:
        preloads = y.preloads(y.n_loosening)
        if y.target_drop > 0:
            amps = [amplitude_for_drop(truth, p, y.target_drop, y.pulse_width, y.pretrigger,
                                       fs=y.fs_fast) for p in preloads]
        else:
            amps = [y.loosening_amplitude]
        cases = synth_campaign(truth, preloads, amps, noise.spec(seed), test_type="loosening",
                               duration=y.duration_loosening, **common)
        entries += [bio.write_case(out, c, pulse_width=y.pulse_width) for c in cases]
        seed += y.n_loosening
    for k in range(y.n_uncoupled):
        for name in ("lo", "so"):
            osc = getattr(cfg.system, name).params(corrected=False)
            pulse = impulse_force(y.uncoupled_amplitude, y.pulse_width, y.pretrigger, y.fs_fast)
            case = synth_case(decoupled(osc), 0.0, pulse, noise.spec(seed), y.duration_low,
                              y.pretrigger, case_id=f"sdof_{name}{k:03d}",
                              test_type="uncoupled", fs_fast=y.fs_fast,
                              fs_tension=y.fs_tension, tol=tol)
            entries.append(bio.write_case(out, case, oscillator=name,
                                          pulse_width=y.pulse_width))
            seed += 1
    manifest = bio.write_manifest(out, entries)
    return CommandResult({"manifest": manifest}, [], entries)


# --------------------------------------------------------------------------
# argument parsing


def _load_config(args) -> JobConfig:
    cfg = cfgmod.load(args.config) if args.config else JobConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.tol_rel is not None or args.tol_abs is not None:
        solver = cfg.solver
        solver = replace(solver, rtol=args.tol_rel if args.tol_rel is not None else solver.rtol,
                         atol=args.tol_abs if args.tol_abs is not None else solver.atol)
        updates["solver"] = solver
    if args.out is not None:
        updates["paths"] = replace(cfg.paths, output=args.out)
    try:
        return replace(cfg, **updates) if updates else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML job configuration")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--jobs", type=int, help="worker processes across cases")
    common.add_argument("--keep-warnings", action="store_true",
                        help="keep flagged modal rows in fits")
    common.add_argument("--tol-rel", type=float, help="solver relative tolerance")
    common.add_argument("--tol-abs", type=float, help="solver absolute tolerance")

    p = argparse.ArgumentParser(
        prog="boltrom",
        description="Bolted-joint loosening model: synthesis, identification and simulation.",
        epilog="exit codes: 0 success, 2 validation error, 3 some cases failed, 4 internal error")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="fit the strain-to-tension polynomial")
    c.add_argument("strain_csv")
    c.add_argument("force_csv")
    c.add_argument("--degree", type=int, default=3)

    c = sub.add_parser("identify-modal", parents=[common],
                       help="first-mode estimates and coupling elements per case")
    c.add_argument("manifest", help="campaign directory or manifest.csv")

    c = sub.add_parser("fit-models", parents=[common], help="fit the joint models")
    c.add_argument("--modal", metavar="CSV")
    c.add_argument("--gamma", metavar="CSV")
    c.add_argument("--plot", action="store_true", help="also render fit_curves.svg")

    c = sub.add_parser("identify-gamma", parents=[common], help="constant γ per loosening case")
    c.add_argument("manifest", help="campaign directory or manifest.csv")

    c = sub.add_parser("simulate", parents=[common], help="forward simulation")
    c.add_argument("--manifest", help="campaign directory or manifest.csv")
    c.add_argument("--case-id")
    c.add_argument("--preload", type=float)
    c.add_argument("--amplitude", type=float)
    c.add_argument("--duration", type=float)

    sub.add_parser("synth", parents=[common], help="write a synthetic campaign")

    c = sub.add_parser("config", parents=[common], help="print or write a configuration")
    c.add_argument("--defaults", action="store_true", help="print the default configuration")
    return p


def run(args) -> CommandResult:
    if args.verb == "config":
        cfg = JobConfig() if args.defaults else _load_config(args)
        text = cfgmod.dumps(cfg)
        if args.out and not args.defaults:
            path = bio.atomic_write_text(Path(args.out) / "config.toml", text)
            return CommandResult({"config": path})
        sys.stdout.write(text)
        return CommandResult()
    cfg = _load_config(args)
    out = Path(cfg.paths.output)
    if args.verb == "calibrate":
        return cmd_calibrate(args.strain_csv, args.force_csv, out, args.degree)
    if args.verb == "identify-modal":
        return cmd_identify_modal(args.manifest, cfg, out)
    if args.verb == "fit-models":
        return cmd_fit_models(cfg, out, args.modal, args.gamma, args.keep_warnings, args.plot)
    if args.verb == "identify-gamma":
        return cmd_identify_gamma(args.manifest, cfg, out)
    if args.verb == "simulate":
        return cmd_simulate(cfg, out, args.manifest, args.case_id, args.preload,
                            args.amplitude, args.duration)
    if args.verb == "synth":
        return cmd_synth(cfg, out)
    raise AssertionError(args.verb)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = run(args)
    except (ConfigError, bio.SchemaError, FitError, modal.OutOfRangeError,
            modal.SingularInversionError) as exc:
        print(f"boltrom {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationError as exc:
        print(f"boltrom {args.verb}: simulation failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    for name, path in result.outputs.items():
        print(f"{name}: {path}")
    if result.failures:
        print(f"boltrom {args.verb}: {len(result.failures)} case(s) failed; "
              f"see {result.outputs.get('errors')}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
