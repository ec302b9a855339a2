"""CSV, snapshot and JSON writers.

Floats are written with 17 significant digits so that a rerun with the same
configuration reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import diagnostics
from .stepper import Trajectory

STEP_COLUMNS = [
    "k", "t", "energy", "r1_diss", "visc_diss", "rate_norm", "d2", "kkt", "z_min", "z_max",
    "dt_I", "energy_gap", "discrete_gap", "accepted",
]
SEGMENT_COLUMNS = ["s", "s_end", "t", "t_prime", "z_prime_norm", "d2", "regime", "flagged"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(_json_safe(data), indent=2, sort_keys=False) + "\n")


def step_rows(traj: Trajectory):
    """Row ``k`` describes the state at ``t_k``; dissipation columns refer to the step ending there."""
    gaps = diagnostics.energy_gap_series(traj)
    disc = diagnostics.discrete_gap_series(traj)
    z0 = traj.states[0]
    yield [0, traj.times[0], traj.initial_energy, 0.0, 0.0, 0.0, traj.initial_d2, 0.0,
           z0.min(), z0.max(), traj.initial_dt_I, gaps[0], disc[0], True]
    for r in traj.records:
        z = traj.states[r.k + 1]
        yield [r.k + 1, r.t, r.energy, r.r1_dissipation, r.visc_dissipation, r.rate_norm, r.d2, r.kkt,
               z.min(), z.max(), r.dt_I, gaps[r.k + 1], disc[r.k + 1], r.accepted]


def write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def write_trajectory_csv(path, traj: Trajectory) -> None:
    write_rows(path, STEP_COLUMNS, step_rows(traj))


def write_segments_csv(path, ptraj) -> None:
    write_rows(path, SEGMENT_COLUMNS, ptraj.rows())


def write_snapshots(directory, traj: Trajectory, every: int) -> list[Path]:
    """Nodal tables ``x [y] z`` of every ``every``-th state plus the last one."""
    if every <= 0:
        return []
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grid = traj.grid
    n = len(traj.states) - 1
    ks = sorted(set(range(0, n + 1, every)) | {n})
    names = ["x", "y"][: grid.dim] + ["z"]
    out = []
    for k in ks:
        path = directory / f"z_{k:06d}.txt"
        table = np.column_stack([grid.vertices, traj.states[k]])
        np.savetxt(path, table, fmt="%.17g", header=f"k = {k} t = {traj.times[k]!r}\n" + " ".join(names))
        out.append(path)
    return out


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
