"""Equilibrium search, Jacobians and stability classification.

Cobb-Douglas exponents below one make the Jacobian unbounded wherever a
producing coordinate is zero, and the poverty attractors sit exactly there.
Classification is therefore split: interior points by Jacobian spectrum,
boundary points by integrating from small displacements and checking return.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .integrator import CONVERGED, SolverSettings, flow_endpoints
from .model import ScenarioModel

STABLE = "stable_node_or_focus"
SADDLE = "saddle"
UNSTABLE = "unstable"
BOUNDARY_ATTRACTING = "boundary_attracting"
BOUNDARY_DEGENERATE = "boundary_degenerate"

EPS_EQ = 1e-10
MERGE_RADIUS = 1e-4
INTERIOR_MARGIN = 1e-6
DEGENERATE_BAND = 1e-7
PROBE_DISTANCE = 1e-3
DEFAULT_SEEDS = 8
NEWTON_MAX_ITER = 200
NEWTON_MAX_HALVINGS = 30
BRIDGE_WEIGHTS = (0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875)


@dataclass
class Equilibrium:
    state: np.ndarray
    classification: str
    eigenvalues: np.ndarray | None = None
    residual: float = 0.0

    @property
    def is_attractor(self) -> bool:
        return self.classification in (STABLE, BOUNDARY_ATTRACTING)

    def to_dict(self, active) -> dict:
        return {
            "state": dict(zip(active, self.state.tolist())),
            "classification": self.classification,
            "is_attractor": self.is_attractor,
            "eigenvalues": None if self.eigenvalues is None
            else [[float(v.real), float(v.imag)] for v in self.eigenvalues],
            "residual": self.residual,
        }


class AttractorSet:
    """Attractors in lexicographic coordinate order; index 0 has the lowest k_a."""

    def __init__(self, equilibria, merge_radius: float = MERGE_RADIUS):
        eqs = sorted((e for e in equilibria if e.is_attractor), key=lambda e: tuple(e.state))
        for a, b in itertools.combinations(eqs, 2):
            if np.max(np.abs(a.state - b.state)) <= merge_radius:
                raise ValueError(f"attractors {a.state} and {b.state} lie within the merge radius")
        self.attractors = eqs

    def __len__(self):
        return len(self.attractors)

    def __getitem__(self, i) -> Equilibrium:
        return self.attractors[i]

    def __iter__(self):
        return iter(self.attractors)

    @property
    def states(self) -> np.ndarray:
        return np.array([a.state for a in self.attractors])

    @property
    def poverty_index(self) -> int:
        return int(np.argmin(self.states[:, 0]))

    def match(self, points, radius: float):
        """Index of the nearest attractor within ``radius`` (max-norm) per point, -1 if none."""
        points = np.array(points, dtype=float, ndmin=2)
        d = np.max(np.abs(points[:, None, :] - self.states[None, :, :]), axis=2)
        nearest = np.argmin(d, axis=1)
        return np.where(d[np.arange(len(points)), nearest] <= radius, nearest, -1)


def _fd_steps(x):
    return np.maximum(1e-6 * np.abs(x), 1e-8)


def jacobian(model: ScenarioModel, state, scheme: str = "central") -> np.ndarray:
    """Finite-difference Jacobian at a strictly interior state.

    Step per coordinate is ``max(1e-6 |x_i|, 1e-8)``. ``scheme`` is
    ``"central"`` or ``"forward"``.
    """
    x = model.state(state).to_array()
    fractional = (model.exponents > 0) & (model.exponents < 1)
    if np.any(fractional & (x <= INTERIOR_MARGIN)):
        raise DomainError(f"Jacobian is unbounded at boundary state {x.tolist()}")
    h = _fd_steps(x)
    dim = model.dimension
    J = np.empty((dim, dim))
    f0 = model._rhs(x) if scheme == "forward" else None
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h[j]
        if scheme == "central":
            J[:, j] = (model._rhs(x + e) - model._rhs(x - e)) / (2 * h[j])
        elif scheme == "forward":
            J[:, j] = (model._rhs(x + e) - f0) / h[j]
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    return J


def _batch_jacobian(model, X):
    # central where possible, one-sided at the orthant boundary
    m, dim = X.shape
    H = _fd_steps(X)
    J = np.empty((m, dim, dim))
    for j in range(dim):
        up = X.copy()
        up[:, j] += H[:, j]
        lo = X.copy()
        lo[:, j] = np.maximum(X[:, j] - H[:, j], 0.0)
        J[:, :, j] = (model._rhs(up) - model._rhs(lo)) / (up[:, j] - lo[:, j])[:, None]
    return J


def newton_batch(model: ScenarioModel, seeds, eps_eq: float = EPS_EQ):
    """Damped Newton from each seed row, projected onto the nonnegative orthant.

    Returns ``(roots, converged_mask)``. A step is halved up to 30 times until
    the residual max-norm decreases; a seed whose residual cannot be reduced is
    abandoned.
    """
    X = np.maximum(np.array(seeds, dtype=float, ndmin=2), 0.0)
    F = model._rhs(X)
    R = np.max(np.abs(F), axis=1)
    active = np.isfinite(R) & (R > eps_eq)
    for _ in range(NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        J = _batch_jacobian(model, X[idx])
        with np.errstate(all="ignore"):
            dx = -np.einsum("nij,nj->ni", np.linalg.pinv(J), F[idx])
        lam = np.ones(idx.size)
        pending = np.all(np.isfinite(dx), axis=1)
        stalled = ~pending
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            trial = np.maximum(X[idx[p]] + lam[p, None] * dx[p], 0.0)
            Ft = model._rhs(trial)
            Rt = np.max(np.abs(Ft), axis=1)
            better = np.isfinite(Rt) & (Rt < R[idx[p]])
            g = idx[p[better]]
            X[g], F[g], R[g] = trial[better], Ft[better], Rt[better]
            pending[p[better]] = False
            lam[p[~better]] *= 0.5
        stalled |= pending
        active[idx[stalled]] = False
        active &= R > eps_eq
    return X, R <= eps_eq


def seed_grid(box, seeds_per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, seeds_per_axis) for lo, hi in box]
    return np.array(list(itertools.product(*axes)))


def default_box(model: ScenarioModel):
    return [(0.0, 10.0)] * model.dimension


def classify(model: ScenarioModel, state, settings: SolverSettings | None = None,
             merge_radius: float = MERGE_RADIUS, probe: float = PROBE_DISTANCE):
    """Return ``(classification, eigenvalues or None)`` for an equilibrium."""
    x = np.asarray(state, dtype=float)
    if np.all(x > INTERIOR_MARGIN):
        eig = np.linalg.eigvals(jacobian(model, x))
        re = eig.real
        if np.any(np.abs(re) < DEGENERATE_BAND):
            return BOUNDARY_DEGENERATE, eig
        if np.all(re < 0):
            return STABLE, eig
        if np.all(re > 0):
            return UNSTABLE, eig
        return SADDLE, eig

    dim = model.dimension
    probes = []
    for j in range(dim):
        for sign in (1.0, -1.0):
            p = x.copy()
            p[j] = max(p[j] + sign * probe, 0.0)
            probes.append(p)
    res = flow_endpoints(model, np.array(probes), settings)
    back = (res.status == CONVERGED) & (np.max(np.abs(res.states - x), axis=1) <= merge_radius)
    if np.all(back):
        return BOUNDARY_ATTRACTING, None
    if np.any(back):
        return SADDLE, None
    return UNSTABLE, None


def find_equilibria(model: ScenarioModel, box=None, seeds_per_axis: int = DEFAULT_SEEDS,
                    settings: SolverSettings | None = None, eps_eq: float = EPS_EQ,
                    merge_radius: float = MERGE_RADIUS, flow_seeds: bool = True,
                    report=None) -> list[Equilibrium]:
    """All equilibria reachable from a seed grid over ``box``, classified.

    Newton runs from every grid seed and, when ``flow_seeds`` is set, from the
    flow endpoint of every seed as well, so attractors lying outside ``box``
    are still found. Roots are kept anywhere in the nonnegative orthant. The
    closed-form equilibria on the k_a = 0 face are always included. Seeds that
    fail to converge are counted in ``report["newton_failures"]`` if a dict is
    passed.
    """
    box = default_box(model) if box is None else [tuple(map(float, b)) for b in box]
    if len(box) != model.dimension:
        raise ValueError(f"box needs {model.dimension} ranges, got {len(box)}")
    if any(lo < 0 or hi < lo for lo, hi in box):
        raise ValueError(f"box {box} must lie in the nonnegative orthant with lo <= hi")
    if seeds_per_axis < 2:
        raise ValueError("seeds_per_axis must be >= 2")
    settings = settings or SolverSettings()

    seeds = seed_grid(box, seeds_per_axis)
    if flow_seeds:
        ends = flow_endpoints(model, seeds, settings)
        seeds = np.vstack([seeds, ends.states[ends.status == CONVERGED]])
    roots, ok = newton_batch(model, seeds, eps_eq)
    analytic = [r for r in model.boundary_equilibria() if np.max(np.abs(model._rhs(r))) <= eps_eq]

    # Saddles separating two attractors can fall between grid seeds; seed
    # Newton again along the segments joining the roots found so far.
    first = _dedupe(analytic + [np.array(r) for r in sorted(tuple(r) for r in roots[ok])], merge_radius)
    bridge = np.array([a + w * (b - a) for a, b in itertools.combinations(first, 2) for w in BRIDGE_WEIGHTS])
    n_seeds, n_failed = len(seeds), int(np.count_nonzero(~ok))
    if len(bridge):
        broots, bok = newton_batch(model, bridge, eps_eq)
        roots, ok = np.vstack([roots, broots]), np.concatenate([ok, bok])
        n_seeds += len(bridge)
        n_failed += int(np.count_nonzero(~bok))
    if report is not None:
        report["newton_seeds"] = n_seeds
        report["newton_failures"] = n_failed

    unique = _dedupe(analytic + [np.array(r) for r in sorted(tuple(r) for r in roots[ok])], merge_radius)
    if not unique:
        raise RuntimeError(f"no equilibria found for model {model.id}")

    out = []
    for u in unique:
        cls, eig = classify(model, u, settings, merge_radius)
        out.append(Equilibrium(u, cls, eig, float(np.max(np.abs(model._rhs(u))))))
    return out


def _dedupe(points, merge_radius):
    unique: list[np.ndarray] = []
    for cand in points:
        if all(np.max(np.abs(cand - u)) > merge_radius for u in unique):
            unique.append(cand)
    return unique


def attractor_set(model: ScenarioModel, box=None, seeds_per_axis: int = DEFAULT_SEEDS,
                  settings: SolverSettings | None = None, **kwargs) -> AttractorSet:
    eqs = find_equilibria(model, box, seeds_per_axis, settings, **kwargs)
    return AttractorSet(eqs, kwargs.get("merge_radius", MERGE_RADIUS))
