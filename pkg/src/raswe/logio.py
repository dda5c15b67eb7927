"""Sensor-log ingestion and run-report emission.

Logs are CSV with header ``t, ax, ay, az, qw, qx, qy, qz, uwb_range,
uwb_ok, vx, vy, vz, of_quality``.  The quaternion columns are optional;
when present and non-empty, the raw normalized acceleration is rotated to
the world frame before gravity compensation.  The first row anchors the
time origin; every following row becomes one measurement frame.

Reports are one directory per run: a per-step ``series.csv``, a
deterministic flat ``summary.txt`` (one ``key = value`` per line) and a
``timing.txt`` kept separate so summaries stay byte-reproducible.
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import LogFormatError
from .model import MeasurementFrame

GRAVITY = 9.8

_REQUIRED_COLUMNS = ["t", "ax", "ay", "az", "uwb_range", "uwb_ok",
                     "vx", "vy", "vz", "of_quality"]
_QUAT_COLUMNS = ["qw", "qx", "qy", "qz"]
OF_QUALITY_GOOD = 255


def quaternion_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q = (w, x, y, z)``."""
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    return R @ v


@dataclass
class IngestResult:
    t0: float
    frames: list
    skipped: list = field(default_factory=list)   # (row_number, reason)


def _cell(row: dict, name: str):
    v = row.get(name)
    if v is None:
        return ""
    return v.strip()


def ingest_log(path) -> IngestResult:
    """Parse a sensor log into measurement frames.

    Malformed rows are skipped and reported with their row number;
    non-monotone timestamps abort the whole ingestion.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _ingest(fh)


def _ingest(fh) -> IngestResult:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise LogFormatError("log has no header row")
    names = [n.strip() for n in reader.fieldnames]
    missing = [c for c in _REQUIRED_COLUMNS if c not in names]
    if missing:
        raise LogFormatError(f"log header missing columns: {', '.join(missing)}")
    has_quat = all(c in names for c in _QUAT_COLUMNS)

    frames: list = []
    skipped: list = []
    t_prev = None
    t0 = None
    for row_no, row in enumerate(reader, start=2):   # row 1 is the header
        row = {k.strip(): v for k, v in row.items() if k is not None}
        try:
            t = float(_cell(row, "t"))
        except ValueError:
            skipped.append((row_no, "unparseable time"))
            continue
        if t_prev is not None and t <= t_prev:
            raise LogFormatError(f"row {row_no}: non-monotone time {t} after {t_prev}")

        if t0 is None:
            t0 = t
            t_prev = t
            continue

        try:
            frame = _parse_frame(row, t, t - t_prev, has_quat)
        except ValueError as exc:
            skipped.append((row_no, str(exc)))
            continue
        t_prev = t
        frames.append(frame)

    if t0 is None:
        raise LogFormatError("log contains no data rows")
    return IngestResult(t0, frames, skipped)


def _parse_frame(row: dict, t: float, dt: float, has_quat: bool) -> MeasurementFrame:
    try:
        a = np.array([float(_cell(row, c)) for c in ("ax", "ay", "az")])
    except ValueError as exc:
        raise ValueError("unparseable acceleration") from exc

    if has_quat:
        quat_cells = [_cell(row, c) for c in _QUAT_COLUMNS]
        if all(quat_cells):
            try:
                q = np.array([float(c) for c in quat_cells])
            except ValueError as exc:
                raise ValueError("unparseable quaternion") from exc
            a = quaternion_rotate(q, a)
    accel = GRAVITY * a + np.array([0.0, 0.0, -GRAVITY])

    raw_range = _cell(row, "uwb_range")
    raw_ok = _cell(row, "uwb_ok")
    if raw_range == "":
        uwb_range, uwb_ok = None, False
    else:
        try:
            uwb_range = float(raw_range)
        except ValueError as exc:
            raise ValueError("unparseable range") from exc
        uwb_ok = raw_ok.lower() not in ("0", "false")   # empty flag defaults to ok

    vel_cells = [_cell(row, c) for c in ("vx", "vy", "vz")]
    quality_cell = _cell(row, "of_quality")
    if all(vel_cells):
        try:
            of_velocity = np.array([float(c) for c in vel_cells])
        except ValueError as exc:
            raise ValueError("unparseable velocity") from exc
        try:
            quality = float(quality_cell) if quality_cell else 0.0
        except ValueError as exc:
            raise ValueError("unparseable of_quality") from exc
        of_ok = quality >= OF_QUALITY_GOOD
    else:
        of_velocity, of_ok = None, False

    return MeasurementFrame(t=t, dt=dt, accel=accel, uwb_range=uwb_range,
                            of_velocity=of_velocity, uwb_ok=uwb_ok, of_ok=of_ok)


# -- report emission ---------------------------------------------------------

SERIES_HEADER = (
    ["k", "t"]
    + [f"est_{c}" for c in ("px", "py", "pz", "vx", "vy", "vz")]
    + ["lambda_bar", "rho", "step_len", "w1", "w2", "w3"]
    + [f"q_diag_{i}" for i in range(6)]
    + [f"r_diag_{i}" for i in range(4)]
    + [f"mu_diag_{i}" for i in range(3)]
)


def _fmt(x) -> str:
    return repr(float(x))


def write_series(path, results) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_HEADER)
        for r in results:
            ws = r.weights
            row = ([r.k, _fmt(r.t)]
                   + [_fmt(v) for v in r.estimate]
                   + [_fmt(r.avg_trace), _fmt(r.reduced_det), _fmt(r.step_len)]
                   + [_fmt(ws.w1) if ws else _fmt(1.0),
                      _fmt(ws.w2) if ws else _fmt(0.0),
                      _fmt(ws.w3) if ws else _fmt(1.0)]
                   + [_fmt(v) for v in r.q_diag]
                   + [_fmt(v) for v in r.r_diag]
                   + [_fmt(v) for v in r.mu_diag])
            w.writerow(row)


def write_summary(path, summary: dict) -> None:
    """Flat deterministic key-value summary; insertion order preserved."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in summary.items():
            if isinstance(value, float):
                fh.write(f"{key} = {_fmt(value)}\n")
            else:
                fh.write(f"{key} = {value}\n")


def read_summary(path) -> dict:
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            try:
                out[key] = int(value)
            except ValueError:
                try:
                    out[key] = float(value)
                except ValueError:
                    out[key] = value
    return out


def write_timing(path, seconds: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"runtime_s = {seconds:.3f}\n")


def export_log(path, truth, dt: float) -> None:
    """Write a simulated run back out in the ingestion schema, so replay
    can consume simulator-generated data."""
    N = truth.accel.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ax", "ay", "az", "qw", "qx", "qy", "qz",
                    "uwb_range", "uwb_ok", "vx", "vy", "vz", "of_quality"])
        # anchor row: time origin, no measurement consumed
        w.writerow([_fmt(0.0), _fmt(0.0), _fmt(0.0), _fmt(1.0),
                    "", "", "", "", "", "0", "", "", "", "0"])
        for k in range(1, N + 1):
            # invert the gravity compensation: the log stores normalized
            # acceleration in the world frame (identity attitude)
            a = (truth.accel[k - 1] + np.array([0.0, 0.0, GRAVITY])) / GRAVITY
            uwb_ok = truth.uwb_ok[k - 1]
            of_ok = truth.of_ok[k - 1]
            row = [_fmt(k * dt), _fmt(a[0]), _fmt(a[1]), _fmt(a[2]),
                   "", "", "", ""]
            if uwb_ok:
                row += [_fmt(truth.y_noisy[k - 1, 0]), "1"]
            else:
                row += ["", "0"]     # lost message: empty range cell
            row += [_fmt(v) for v in truth.y_noisy[k - 1, 1:]]
            row.append("255" if of_ok else "0")   # low quality flags a bad unit
            w.writerow(row)


def export_truth(path, truth) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "px", "py", "pz", "vx", "vy", "vz"])
        for k in range(truth.states.shape[0]):
            w.writerow([_fmt(truth.t[k])] + [_fmt(v) for v in truth.states[k]])


def read_truth(path) -> np.ndarray:
    """Truth CSV -> (n, 7) array of t and the 6 states."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        need = ["t", "px", "py", "pz"]
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in need):
            raise LogFormatError("truth file needs columns t, px, py, pz")
        has_vel = all(c in reader.fieldnames for c in ("vx", "vy", "vz"))
        for row in reader:
            vals = [float(row["t"]), float(row["px"]), float(row["py"]), float(row["pz"])]
            if has_vel:
                vals += [float(row["vx"]), float(row["vy"]), float(row["vz"])]
            else:
                vals += [0.0, 0.0, 0.0]
            rows.append(vals)
    return np.array(rows)
