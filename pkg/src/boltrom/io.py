"""CSV schemas and atomic file output.

Numbers are written with 17 significant digits so every float64 survives a
round trip. Each file is written to a temporary sibling and renamed into
place, so readers never see a partial file.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .dynamics import ForceSignal
from .sigproc import TimeSeries
from .synth import MeasurementCase

FAST_COLUMNS = ("time_s", "force_N", "accel_lo_ms2", "accel_so_ms2")
TENSION_COLUMNS = ("time_s", "tension_N")
MANIFEST_COLUMNS = ("case_id", "test_type", "oscillator", "preload_N", "amplitude_N",
                    "pulse_width_s", "seed", "t_impact_s", "fs_fast_Hz", "fs_tension_Hz",
                    "fast_file", "tension_file")
MODAL_COLUMNS = ("case_id", "preload_N", "f1_Hz", "zeta1", "k_c_Npm", "c_c_Nspm", "warnings")
SDOF_COLUMNS = ("case_id", "oscillator", "f_Hz", "zeta", "k_Npm", "c_Nspm")
GAMMA_COLUMNS = ("case_id", "preload_N", "gamma", "objective_N", "evals", "status",
                 "tension_final_N", "delta_N", "reason")
TRAJECTORY_COLUMNS = ("t", "x_lo", "v_lo", "x_so", "v_so", "tension")
OVERLAY_COLUMNS = ("time_s", "x_lo_measured_m", "x_lo_simulated_m")
CALIBRATION_COLUMNS = ("time_s", "strain")
FORCE_COLUMNS = ("time_s", "force_N")

MANIFEST_NAME = "manifest.csv"


class SchemaError(ValueError):
    """A file does not match its schema; the message names file and line."""


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Mixed-type table, one formatted row per record."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        writer.writerow([fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def write_columns(path, header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    """Numeric table given column-wise."""
    if len(columns) != len(header):
        raise ValueError("one column per header entry is required")
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns \
        else np.empty((0, 0))
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    if data.size:
        np.savetxt(buf, data, fmt="%.17g", delimiter=",")
    return atomic_write_text(path, buf.getvalue())


def read_rows(path, header: Sequence[str]) -> list[dict[str, str]]:
    """Rows as dicts; the header must match exactly."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}:1: empty file, expected header {','.join(header)}")
        if tuple(found) != tuple(header):
            raise SchemaError(f"{path}:1: header {','.join(found)!r} does not match "
                              f"{','.join(header)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, "
                                  f"got {len(row)}")
            rows.append(dict(zip(header, row), _line=str(lineno)))
    return rows


def read_columns(path, header: Sequence[str]) -> dict[str, np.ndarray]:
    """Numeric table as arrays keyed by column name."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"{path}: file not found")
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().strip()
        if tuple(first.split(",")) != tuple(header):
            raise SchemaError(f"{path}:1: header {first!r} does not match "
                              f"{','.join(header)!r}")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    if data.size == 0:
        data = np.empty((0, len(header)))
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: expected {len(header)} columns, got {data.shape[1]}")
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0]) + 2
        raise SchemaError(f"{path}:{bad}: non-finite value")
    return {name: data[:, i] for i, name in enumerate(header)}


def parse_float(row: dict, key: str, path) -> float:
    try:
        return float(row[key])
    except ValueError:
        raise SchemaError(f"{path}:{row.get('_line', '?')}: column {key} is not a number: "
                          f"{row[key]!r}") from None


# --------------------------------------------------------------------------
# measurement cases


@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    test_type: str
    oscillator: str
    preload: float
    amplitude: float
    pulse_width: float
    seed: int
    t_impact: float
    fs_fast: float
    fs_tension: float
    fast_file: str
    tension_file: str

    def row(self):
        return (self.case_id, self.test_type, self.oscillator, self.preload, self.amplitude,
                self.pulse_width, self.seed, self.t_impact, self.fs_fast, self.fs_tension,
                self.fast_file, self.tension_file)


def write_case(directory, case: MeasurementCase, oscillator: str = "",
               pulse_width: float = math.nan) -> ManifestEntry:
    directory = Path(directory)
    fast_name = f"{case.case_id}_fast.csv"
    tension_name = f"{case.case_id}_tension.csv"
    write_columns(directory / fast_name, FAST_COLUMNS,
                  [case.accel_lo.time, case.force.values, case.accel_lo.values,
                   case.accel_so.values])
    write_columns(directory / tension_name, TENSION_COLUMNS,
                  [case.tension.time, case.tension.values])
    return ManifestEntry(case.case_id, case.test_type, oscillator, case.preload,
                         case.amplitude, pulse_width, case.seed, case.t_impact,
                         case.fs_fast, case.fs_tension, fast_name, tension_name)


def write_manifest(directory, entries: Sequence[ManifestEntry]) -> Path:
    return write_rows(Path(directory) / MANIFEST_NAME, MANIFEST_COLUMNS,
                      [e.row() for e in entries])


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    entries = []
    seen = set()
    for row in read_rows(path, MANIFEST_COLUMNS):
        if row["case_id"] in seen:
            raise SchemaError(f"{path}:{row['_line']}: duplicate case_id {row['case_id']!r}")
        seen.add(row["case_id"])
        try:
            seed = int(row["seed"])
        except ValueError:
            raise SchemaError(f"{path}:{row['_line']}: seed is not an integer") from None
        nums = {k: parse_float(row, k, path) for k in
                ("preload_N", "amplitude_N", "pulse_width_s", "t_impact_s", "fs_fast_Hz",
                 "fs_tension_Hz")}
        entries.append(ManifestEntry(row["case_id"], row["test_type"], row["oscillator"],
                                     nums["preload_N"], nums["amplitude_N"],
                                     nums["pulse_width_s"], seed, nums["t_impact_s"],
                                     nums["fs_fast_Hz"], nums["fs_tension_Hz"],
                                     row["fast_file"], row["tension_file"]))
    return entries


def _uniform(t: np.ndarray, values: np.ndarray, fs: float, path) -> TimeSeries:
    if t.size > 1:
        dt = np.diff(t)
        if not np.allclose(dt, 1.0 / fs, rtol=1e-6, atol=1e-12):
            raise SchemaError(f"{path}: time column is not uniform at {fs} Hz")
    t0 = float(t[0]) if t.size else 0.0
    return TimeSeries(values, dt=1.0 / fs, t0=t0)


def read_case(directory, entry: ManifestEntry) -> MeasurementCase:
    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    fast_path = directory / entry.fast_file
    tension_path = directory / entry.tension_file
    fast = read_columns(fast_path, FAST_COLUMNS)
    slow = read_columns(tension_path, TENSION_COLUMNS)
    if fast["time_s"].size < 2 or slow["time_s"].size < 2:
        raise SchemaError(f"case {entry.case_id}: records are too short")
    try:
        return MeasurementCase(
            case_id=entry.case_id, test_type=entry.test_type,
            force=ForceSignal(fast["time_s"], fast["force_N"]),
            accel_lo=_uniform(fast["time_s"], fast["accel_lo_ms2"], entry.fs_fast, fast_path),
            accel_so=_uniform(fast["time_s"], fast["accel_so_ms2"], entry.fs_fast, fast_path),
            tension=_uniform(slow["time_s"], slow["tension_N"], entry.fs_tension,
                             tension_path),
            preload=entry.preload, fs_fast=entry.fs_fast, fs_tension=entry.fs_tension,
            t_impact=entry.t_impact, amplitude=entry.amplitude, seed=entry.seed)
    except ValueError as exc:
        raise SchemaError(f"case {entry.case_id}: {exc}") from exc


def load_cases(path, test_type: Optional[str] = None):
    """``(entry, case)`` pairs from a manifest, optionally of one test type."""
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    out = []
    for entry in read_manifest(path):
        if test_type is None or entry.test_type == test_type:
            out.append(entry)
    return directory, out
