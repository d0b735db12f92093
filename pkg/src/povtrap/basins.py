"""Basin-of-attraction maps over rectangular grids of initial conditions."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .equilibria import AttractorSet
from .errors import UnresolvedBasinsError
from .integrator import CONVERGED, SolverSettings, flow_endpoints
from .model import ScenarioModel

UNRESOLVED = -1
MATCH_RADIUS = 1e-3
MAX_UNRESOLVED_FRACTION = 0.05
# fixed chunking keeps per-cell arithmetic independent of the worker count
CHUNK_SIZE = 4096


@dataclass
class BasinGrid:
    model: ScenarioModel
    box: list[tuple[float, float]]
    resolution: tuple[int, ...]
    labels: np.ndarray  # shape == resolution, int, -1 for unresolved
    attractors: AttractorSet
    settings: SolverSettings
    match_radius: float = MATCH_RADIUS
    endpoints: np.ndarray | None = None  # (cells, dim), same C order as labels

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    def axis_centers(self, axis: int) -> np.ndarray:
        return cell_axis_centers(self.box[axis], self.resolution[axis])

    def cell_centers(self) -> np.ndarray:
        return grid_centers(self.box, self.resolution)

    @property
    def n_unresolved(self) -> int:
        return int(np.count_nonzero(self.labels == UNRESOLVED))

    def boundary_mask(self) -> np.ndarray:
        """Cells with an axis-adjacent neighbour carrying a different label."""
        mask = np.zeros(self.labels.shape, dtype=bool)
        for ax in range(self.labels.ndim):
            a = np.swapaxes(self.labels, 0, ax)
            m = np.swapaxes(mask, 0, ax)
            diff = a[1:] != a[:-1]
            m[1:] |= diff
            m[:-1] |= diff
        return mask

    def boundary_fraction(self) -> float:
        return float(np.mean(self.boundary_mask()))


def cell_axis_centers(bounds, n: int) -> np.ndarray:
    lo, hi = bounds
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def grid_centers(box, resolution) -> np.ndarray:
    axes = [cell_axis_centers(b, n) for b, n in zip(box, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def default_resolution(model: ScenarioModel) -> int:
    return 20 if model.dimension == 3 else 100


def _endpoints_chunk(args):
    model, points, settings = args
    res = flow_endpoints(model, points, settings)
    return res.states, res.status == CONVERGED


def _resolve_workers(workers):
    if workers is None:
        workers = int(os.environ.get("POVTRAP_THREADS", "1"))
    return max(1, int(workers))


def map_basins(model: ScenarioModel, attractors: AttractorSet, box=None, resolution=None,
               settings: SolverSettings | None = None, match_radius: float = MATCH_RADIUS,
               workers: int | None = None, allow_unresolved: bool = False) -> BasinGrid:
    """Label each cell centre by the attractor its trajectory reaches.

    Cells whose trajectory does not converge, or converges farther than
    ``match_radius`` from every attractor, get label -1. More than 5 % such
    cells raises :class:`UnresolvedBasinsError` (carrying the grid) unless
    ``allow_unresolved`` is set.
    """
    if len(attractors) == 0:
        raise ValueError("attractor set is empty")
    box = [(0.0, 10.0)] * model.dimension if box is None else [tuple(map(float, b)) for b in box]
    if resolution is None:
        resolution = default_resolution(model)
    if np.isscalar(resolution):
        resolution = (int(resolution),) * model.dimension
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != model.dimension or len(box) != model.dimension:
        raise ValueError(f"box and resolution must have {model.dimension} entries")
    if min(resolution) < 2:
        raise ValueError("resolution must be >= 2 per axis")
    settings = settings or SolverSettings()

    centers = grid_centers(box, resolution)
    chunks = [centers[i:i + CHUNK_SIZE] for i in range(0, len(centers), CHUNK_SIZE)]
    jobs = [(model, c, settings) for c in chunks]
    workers = _resolve_workers(workers)
    if workers == 1 or len(chunks) == 1:
        results = [_endpoints_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_endpoints_chunk, jobs))
    ends = np.vstack([r[0] for r in results])
    converged = np.concatenate([r[1] for r in results])

    labels = attractors.match(ends, match_radius)
    labels[~converged] = UNRESOLVED
    grid = BasinGrid(model, box, resolution, labels.reshape(resolution), attractors, settings,
                     match_radius, ends)
    frac = grid.n_unresolved / labels.size
    if frac > MAX_UNRESOLVED_FRACTION and not allow_unresolved:
        raise UnresolvedBasinsError(
            f"{grid.n_unresolved} of {labels.size} cells ({frac:.1%}) unresolved; "
            "check the box, solver settings, or for non-point attractors", grid)
    return grid


def basin_fractions(grid: BasinGrid) -> dict:
    """Fraction of all cells per attractor index; unresolved cells under key ``"unresolved"``."""
    labels = grid.labels.ravel()
    total = labels.size
    out = {i: float(np.count_nonzero(labels == i)) / total for i in range(len(grid.attractors))}
    n_unres = np.count_nonzero(labels == UNRESOLVED)
    if n_unres:
        out["unresolved"] = float(n_unres) / total
    return out
