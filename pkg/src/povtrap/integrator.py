"""Adaptive Dormand-Prince 5(4) integration with steady-state detection.

The stepper works on a batch of initial conditions at once: every row carries
its own time, step size and status, and rows drop out of the active set as
soon as they converge or fail. All per-row arithmetic is elementwise, so a
row's result does not depend on which other rows share its batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .model import ScenarioModel, StateVector

CONVERGED = "converged"
MAX_TIME = "max_time_reached"
FAILURE = "solver_failure"

_RUNNING, _CONVERGED, _MAX_TIME, _FAILURE = 0, 1, 2, 3
_STATUS_NAMES = {_CONVERGED: CONVERGED, _MAX_TIME: MAX_TIME, _FAILURE: FAILURE}

# Dormand & Prince (1980) tableau
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th minus embedded 4th order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@dataclass(frozen=True)
class SolverSettings:
    rtol: float = 1e-8
    atol: float = 1e-10
    t_max: float = 1000.0
    eps_conv: float = 1e-9
    max_steps: int = 200_000
    # keeps h*lambda inside the stability region so near-equilibrium error contracts
    max_step: float = 1.0

    def __post_init__(self):
        for name in ("rtol", "atol", "t_max", "eps_conv", "max_steps", "max_step"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 \
                    or not math.isfinite(value):
                raise ConfigurationError(f"solver setting {name} must be a finite positive number, got {value!r}")

    def halved(self) -> "SolverSettings":
        return SolverSettings(self.rtol / 2, self.atol / 2, self.t_max, self.eps_conv / 2, self.max_steps * 2,
                              self.max_step)


@dataclass
class Trajectory:
    """Accepted-step samples of one integration."""

    model_id: str
    active: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray
    status: str
    message: str = ""
    steps: int = field(default=0, compare=False)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t):
        """Dense output by linear interpolation between accepted steps."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise ValueError(f"t outside [{self.times[0]}, {self.times[-1]}]")
        return np.stack([np.interp(t, self.times, self.states[:, j]) for j in range(self.states.shape[1])], axis=-1)

    def __len__(self):
        return len(self.times)


@dataclass
class BatchResult:
    states: np.ndarray
    status: np.ndarray  # object array of status names
    times: np.ndarray
    messages: list[str]


def integrate(model: ScenarioModel, x0, settings: SolverSettings | None = None, t0: float = 0.0,
              stop_on_convergence: bool = True) -> Trajectory:
    """Integrate one trajectory, keeping every accepted step.

    Integration stops with status ``converged`` once the max-norm of the right
    hand side drops to ``settings.eps_conv``; otherwise it runs to
    ``t0 + settings.t_max``. Failures are reported through ``status`` and
    ``message`` rather than raised.
    """
    settings = settings or SolverSettings()
    x0 = model.state(x0).to_array()
    history = []
    res = _run(model, x0[None, :], settings, t0, history, stop_on_convergence)
    times = np.array([h[0] for h in history])
    states = np.array([h[1] for h in history])
    return Trajectory(model.id, model.active_coords, times, states, res.status[0], res.messages[0],
                      steps=len(history) - 1)


def flow_endpoint(model: ScenarioModel, x0, settings: SolverSettings | None = None):
    """Terminal state and status of the trajectory from ``x0``, without storing samples."""
    settings = settings or SolverSettings()
    x0 = model.state(x0).to_array()
    res = _run(model, x0[None, :], settings, 0.0, None, True)
    return res.states[0], res.status[0]


def flow_endpoints(model: ScenarioModel, x0s, settings: SolverSettings | None = None) -> BatchResult:
    """Vectorised :func:`flow_endpoint` over the rows of ``x0s``."""
    settings = settings or SolverSettings()
    x0s = np.array(x0s, dtype=float, ndmin=2)
    if x0s.shape[1] != model.dimension:
        raise ValueError(f"expected rows of length {model.dimension}, got shape {x0s.shape}")
    if np.any(x0s < 0) or not np.all(np.isfinite(x0s)):
        raise ValueError("initial states must be finite and nonnegative")
    return _run(model, x0s, settings, 0.0, None, True)


def _error_scale(settings, y, y_new):
    return settings.atol + settings.rtol * np.maximum(np.abs(y), np.abs(y_new))


def _initial_step(model, y, f, settings, t_span):
    # Hairer, Norsett & Wanner, Solving ODEs I, sec. II.4
    scale = settings.atol + settings.rtol * np.abs(y)
    d0 = np.max(np.abs(y) / scale, axis=1)
    d1 = np.max(np.abs(f) / scale, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
    h0 = np.minimum(h0, t_span)
    y1 = y + h0[:, None] * f
    f1 = model._rhs(y1)
    d2 = np.max(np.abs(f1 - f) / scale, axis=1) / h0
    dmax = np.maximum(d1, d2)
    with np.errstate(divide="ignore"):
        h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / dmax) ** (1 / 5))
    h = np.minimum(100 * h0, h1)
    return np.minimum(h, t_span)


def _run(model, y0, settings, t0, history, stop_on_convergence) -> BatchResult:
    n = y0.shape[0]
    y = y0.copy()
    t = np.full(n, float(t0))
    t_end = float(t0) + settings.t_max
    status = np.full(n, _RUNNING)
    messages = [""] * n
    steps = np.zeros(n, dtype=np.int64)

    f = model._rhs(y)
    if history is not None:
        history.append((t[0], y[0].copy()))
    if stop_on_convergence:
        status[np.max(np.abs(f), axis=1) <= settings.eps_conv] = _CONVERGED
    bad = ~np.all(np.isfinite(f), axis=1)
    status[bad] = _FAILURE
    for i in np.flatnonzero(bad):
        messages[i] = "non-finite derivative at initial state"

    h = np.zeros(n)
    run = np.flatnonzero(status == _RUNNING)
    if run.size:
        h[run] = _initial_step(model, y[run], f[run], settings, t_end - t[run])

    while True:
        run = np.flatnonzero(status == _RUNNING)
        if run.size == 0:
            break
        yr, fr, tr = y[run], f[run], t[run]
        hr = np.minimum(np.minimum(h[run], settings.max_step), t_end - tr)
        hc = hr[:, None]

        k = [fr]
        for s in range(1, 7):
            acc = _A[s][0] * k[0]
            for j in range(1, s):
                acc = acc + _A[s][j] * k[j]
            k.append(model._rhs(yr + hc * acc))
        # _A[6] equals _B, so the 7th stage point is the 5th-order solution
        acc = _A[6][0] * k[0]
        for j in range(1, 6):
            acc = acc + _A[6][j] * k[j]
        y_new = yr + hc * acc
        f_new = k[6]
        err = _E[0] * k[0]
        for j in range(1, 7):
            err = err + _E[j] * k[j]
        err = hc * err

        with np.errstate(invalid="ignore", over="ignore"):
            err_norm = np.max(np.abs(err) / _error_scale(settings, yr, y_new), axis=1)
        finite = np.all(np.isfinite(y_new), axis=1) & np.all(np.isfinite(f_new), axis=1) & np.isfinite(err_norm)
        err_norm = np.where(finite, err_norm, np.inf)
        accept = err_norm <= 1.0

        # overshoot below zero: clamp if within tolerance, otherwise fail
        neg_tol = settings.atol + settings.rtol * np.abs(yr)
        too_negative = np.any(y_new < -neg_tol, axis=1) & accept
        for i in np.flatnonzero(too_negative):
            g = run[i]
            status[g] = _FAILURE
            messages[g] = f"state left the nonnegative orthant at t={tr[i]:.6g}: {y_new[i].tolist()}"
        accept &= ~too_negative
        y_new = np.maximum(y_new, 0.0)

        with np.errstate(divide="ignore"):
            factor = np.where(err_norm == 0, _MAX_FACTOR, _SAFETY * err_norm ** (-1 / 5))
        factor = np.clip(factor, _MIN_FACTOR, _MAX_FACTOR)
        factor = np.where(accept, factor, np.minimum(factor, 1.0))
        factor = np.where(finite, factor, 0.25)
        h_next = hr * factor

        acc_idx = run[accept]
        y[acc_idx] = y_new[accept]
        f[acc_idx] = f_new[accept]
        t[acc_idx] = tr[accept] + hr[accept]
        # land exactly on the horizon when the step was clipped to it
        t[acc_idx] = np.where(t_end - t[acc_idx] <= 1e-12 * max(1.0, abs(t_end)), t_end, t[acc_idx])
        steps[acc_idx] += 1
        h[run] = np.where(too_negative, h[run], h_next)

        if history is not None and accept[0]:
            history.append((t[0], y[0].copy()))

        if stop_on_convergence:
            conv = np.max(np.abs(f_new[accept]), axis=1) <= settings.eps_conv
            status[acc_idx[conv]] = _CONVERGED
        done_time = (t[acc_idx] >= t_end) & (status[acc_idx] == _RUNNING)
        status[acc_idx[done_time]] = _MAX_TIME

        underflow = (h[run] < 16 * np.finfo(float).eps * np.maximum(1.0, np.abs(t[run]))) & (status[run] == _RUNNING)
        for g in run[underflow]:
            status[g] = _FAILURE
            messages[g] = f"step size underflow at t={t[g]:.6g}"
        over_budget = (steps[run] >= settings.max_steps) & (status[run] == _RUNNING)
        for g in run[over_budget]:
            status[g] = _FAILURE
            messages[g] = f"step budget of {settings.max_steps} exhausted at t={t[g]:.6g}"

    names = np.array([_STATUS_NAMES[s] for s in status], dtype=object)
    return BatchResult(y, names, t, messages)


def endpoint_state(model: ScenarioModel, x0, settings: SolverSettings | None = None) -> StateVector:
    y, _ = flow_endpoint(model, x0, settings)
    return StateVector.from_array(model.active_coords, y)
