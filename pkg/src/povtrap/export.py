"""Serialisation of trajectories, equilibria, basin grids and run manifests.

Floats are written with 17 significant digits everywhere so that every value
round-trips exactly and identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .basins import BasinGrid
from .equilibria import AttractorSet, Equilibrium
from .integrator import SolverSettings, Trajectory
from .model import ScenarioModel, scenario_from_spec


class ExportError(OSError):
    pass


def fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"cannot serialise non-finite value {x}")
    return format(x, ".17g")


def dumps(obj, indent: int | None = 2, _level: int = 0) -> str:
    """JSON text with 17-significant-digit floats and sorted keys."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{" + ",".join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[" + ",".join(items) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ExportError(f"{path}: {exc.strerror or exc}") from exc
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def trajectory_csv(traj: Trajectory) -> str:
    rows = ([t, *s] for t, s in zip(traj.times.tolist(), traj.states.tolist()))
    return _csv_text(["t", *traj.active], rows)


def write_trajectory(traj: Trajectory, path):
    return _write(path, trajectory_csv(traj))


def equilibria_doc(equilibria: list[Equilibrium], model: ScenarioModel) -> list:
    return [e.to_dict(model.active_coords) for e in equilibria]


def write_json(obj, path):
    return _write(path, dumps(obj) + "\n")


def grid_csv(grid: BasinGrid) -> str:
    centers = grid.cell_centers()
    labels = grid.labels.ravel().tolist()
    rows = ([*c, lab] for c, lab in zip(centers.tolist(), labels))
    return _csv_text([*grid.model.active_coords, "label"], rows)


def write_grid_csv(grid: BasinGrid, path):
    return _write(path, grid_csv(grid))


def run_length_encode(labels) -> list[list[int]]:
    flat = np.asarray(labels).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    return [[int(flat[s]), int(n)] for s, n in zip(starts, lengths)]


def run_length_decode(runs, shape) -> np.ndarray:
    flat = np.concatenate([np.full(n, lab, dtype=int) for lab, n in runs]) if runs else np.zeros(0, int)
    return flat.reshape(shape)


def grid_header(grid: BasinGrid) -> dict:
    return {
        "format": "povtrap-basin-grid/1",
        "scenario": grid.model.to_dict(),
        "active": list(grid.model.active_coords),
        "box": [list(b) for b in grid.box],
        "resolution": list(grid.resolution),
        "match_radius": grid.match_radius,
        "solver": {k: getattr(grid.settings, k) for k in ("rtol", "atol", "t_max", "eps_conv", "max_steps",
                                                        "max_step")},
        "attractors": [a.to_dict(grid.model.active_coords) for a in grid.attractors],
        "order": "C (last coordinate fastest), cell centres",
    }


def grid_rle(grid: BasinGrid) -> str:
    """Compact form: one JSON header line, then ``label:count`` runs, space separated."""
    header = dumps(grid_header(grid), indent=None)
    runs = " ".join(f"{lab}:{n}" for lab, n in run_length_encode(grid.labels))
    return header + "\n" + runs + "\n"


def write_grid_rle(grid: BasinGrid, path):
    return _write(path, grid_rle(grid))


def read_grid_rle(path) -> BasinGrid:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ExportError(f"{path}: {exc.strerror or exc}") from exc
    head, _, body = text.partition("\n")
    h = json.loads(head)
    model = scenario_from_spec(h["scenario"])
    runs = [[int(a), int(b)] for a, b in (tok.split(":") for tok in body.split())]
    labels = run_length_decode(runs, tuple(h["resolution"]))
    eqs = [Equilibrium(np.array([a["state"][c] for c in h["active"]]), a["classification"],
                       None if a["eigenvalues"] is None else np.array([complex(r, i) for r, i in a["eigenvalues"]]),
                       a["residual"]) for a in h["attractors"]]
    return BasinGrid(model, [tuple(b) for b in h["box"]], tuple(h["resolution"]), labels,
                     AttractorSet(eqs), SolverSettings(**h["solver"]), h["match_radius"])


def write_manifest(out_dir, config: dict, wall_time: float, extra: dict | None = None):
    """Run manifest; the only output carrying a timestamp."""
    manifest = {
        "tool": "povtrap",
        "version": __version__,
        "python": platform.python_version(),
        "config": config,
        "wall_time_s": wall_time,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    return write_json(manifest, Path(out_dir) / "manifest.json")
