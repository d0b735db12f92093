"""Scheduled interventions: state jumps, parameter changes and model switches.

A plan is integrated piecewise. Events sharing a timestamp are applied in list
order, so "add phosphorus, then switch to conservation tillage" differs from
the reverse when the switch folds the phosphorus stock into productivity.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .basins import MATCH_RADIUS
from .equilibria import AttractorSet, attractor_set
from .errors import ConfigurationError, NoBracketError, SolverFailure
from .integrator import CONVERGED, FAILURE, SolverSettings, Trajectory, flow_endpoint, integrate
from .model import ScenarioModel, scenario_from_spec, scenario_to_spec

STATE_JUMP = "state_jump"
PARAM_CHANGE = "param_change"
MODEL_SWITCH = "model_switch"
EVENT_KINDS = (STATE_JUMP, PARAM_CHANGE, MODEL_SWITCH)

ESCAPE_MARGIN = 0.5
THRESHOLD_TOL = 1e-4
MAX_MENU_EVENTS = 4


@dataclass(frozen=True)
class InterventionEvent:
    """One scheduled intervention.

    For ``model_switch``, ``initial`` supplies values for coordinates the new
    model tracks but the old one did not. ``phosphorus_scaling`` applies when
    switching into ``tillage_eliminated_loss``: the phosphorus stock at switch
    time is folded into productivity as
    ``A * (k_p / reference) ** exponent``; ``exponent`` defaults to the source
    model's ``alpha_p``.
    """

    time: float
    kind: str
    increments: Mapping[str, float] = field(default_factory=dict)
    params: Mapping[str, float] = field(default_factory=dict)
    model: ScenarioModel | None = None
    initial: Mapping[str, float] = field(default_factory=dict)
    phosphorus_scaling: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigurationError(f"unknown event kind {self.kind!r}")
        if not (isinstance(self.time, (int, float)) and math.isfinite(self.time) and self.time >= 0):
            raise ConfigurationError(f"event time must be finite and >= 0, got {self.time!r}")
        if self.kind == STATE_JUMP:
            if not self.increments:
                raise ConfigurationError("state_jump needs at least one increment")
            for c, v in self.increments.items():
                if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                    raise ConfigurationError(f"increment for {c} must be finite and >= 0, got {v!r}")
        elif self.kind == PARAM_CHANGE and not self.params:
            raise ConfigurationError("param_change needs at least one parameter")
        elif self.kind == MODEL_SWITCH:
            if self.model is None:
                raise ConfigurationError("model_switch needs a target model")
            if self.phosphorus_scaling is not None:
                if self.model.id != "tillage_eliminated_loss":
                    raise ConfigurationError("phosphorus_scaling only applies to tillage_eliminated_loss")
                unknown = set(self.phosphorus_scaling) - {"exponent", "reference"}
                if unknown:
                    raise ConfigurationError(f"unknown phosphorus_scaling field(s): {sorted(unknown)}")
                ref = self.phosphorus_scaling.get("reference", 1.0)
                exp_ = self.phosphorus_scaling.get("exponent", 0.0)
                if not ref > 0 or not exp_ >= 0:
                    raise ConfigurationError("phosphorus_scaling needs reference > 0 and exponent >= 0")

    def to_dict(self) -> dict:
        d = {"time": self.time, "kind": self.kind}
        if self.kind == STATE_JUMP:
            d["increments"] = dict(self.increments)
        elif self.kind == PARAM_CHANGE:
            d["params"] = dict(self.params)
        else:
            d["model"] = scenario_to_spec(self.model)
            if self.initial:
                d["initial"] = dict(self.initial)
            if self.phosphorus_scaling is not None:
                d["phosphorus_scaling"] = dict(self.phosphorus_scaling)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "InterventionEvent":
        allowed = {"time", "kind", "increments", "params", "model", "initial", "phosphorus_scaling"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigurationError(f"unknown event field(s): {', '.join(sorted(unknown))}")
        for req in ("time", "kind"):
            if req not in d:
                raise ConfigurationError(f"event is missing '{req}'")
        model = scenario_from_spec(d["model"]) if "model" in d else None
        return cls(d["time"], d["kind"], dict(d.get("increments", {})), dict(d.get("params", {})),
                   model, dict(d.get("initial", {})), d.get("phosphorus_scaling"))

    @property
    def injected(self) -> float:
        return math.fsum(self.increments.values()) if self.kind == STATE_JUMP else 0.0


@dataclass(frozen=True)
class InterventionPlan:
    base_model: ScenarioModel
    initial_state: Mapping[str, float]
    events: tuple[InterventionEvent, ...] = ()
    horizon: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "initial_state", dict(self.initial_state))
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigurationError(f"horizon must be finite and > 0, got {self.horizon}")
        self.base_model.state(self.initial_state)
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigurationError("event times must be non-decreasing")
        if times and times[-1] > self.horizon:
            raise ConfigurationError(f"event at t={times[-1]} lies beyond the horizon {self.horizon}")
        switches = [e.time for e in self.events if e.kind == MODEL_SWITCH]
        if len(switches) != len(set(switches)):
            raise ConfigurationError("at most one model_switch per timestamp")
        # walk the model sequence once so invalid changes fail before integration
        model = self.base_model
        for i, e in enumerate(self.events):
            if e.kind == STATE_JUMP:
                for c in e.increments:
                    if c not in model.active_coords:
                        raise ConfigurationError(f"event {i}: {c} is not a coordinate of {model.id}")
            elif e.kind == PARAM_CHANGE:
                model = model.with_params(**e.params)
            else:
                missing = [c for c in e.model.active_coords
                           if c not in model.active_coords and c not in e.initial]
                if missing:
                    raise ConfigurationError(f"event {i}: switch to {e.model.id} needs initial values for {missing}")
                if e.phosphorus_scaling is not None and "k_p" not in model.active_coords:
                    raise ConfigurationError(f"event {i}: phosphorus_scaling needs k_p in the source model")
                model = e.model

    def to_dict(self) -> dict:
        return {
            "base_model": scenario_to_spec(self.base_model),
            "initial_state": dict(self.initial_state),
            "events": [e.to_dict() for e in self.events],
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "InterventionPlan":
        unknown = set(d) - {"base_model", "initial_state", "events", "horizon"}
        if unknown:
            raise ConfigurationError(f"unknown plan field(s): {', '.join(sorted(unknown))}")
        for req in ("base_model", "initial_state"):
            if req not in d:
                raise ConfigurationError(f"plan is missing '{req}'")
        events = []
        for i, e in enumerate(d.get("events", [])):
            try:
                events.append(InterventionEvent.from_dict(e))
            except ConfigurationError as exc:
                raise ConfigurationError(f"events[{i}]: {exc}") from None
        return cls(scenario_from_spec(d["base_model"]), d["initial_state"], tuple(events),
                   d.get("horizon", 1000.0))

    def encoding(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def injected(self) -> dict:
        totals: dict[str, list[float]] = {}
        for e in self.events:
            if e.kind == STATE_JUMP:
                for c, v in e.increments.items():
                    totals.setdefault(c, []).append(v)
        return {c: math.fsum(v) for c, v in sorted(totals.items())}

    @property
    def total_injected(self) -> float:
        return math.fsum(e.injected for e in self.events)


@dataclass
class EscapeReport:
    final_model: ScenarioModel
    terminal_state: np.ndarray
    terminal_status: str
    attractor_index: int | None
    attractor_state: np.ndarray | None
    escaped: bool
    segments: list[Trajectory]
    injected: dict

    @property
    def total_injected(self) -> float:
        return math.fsum(self.injected.values())

    def to_dict(self) -> dict:
        active = self.final_model.active_coords
        return {
            "final_model": scenario_to_spec(self.final_model),
            "terminal_state": dict(zip(active, self.terminal_state.tolist())),
            "terminal_status": self.terminal_status,
            "attractor_index": self.attractor_index,
            "attractor_state": None if self.attractor_state is None
            else dict(zip(active, self.attractor_state.tolist())),
            "escaped": self.escaped,
            "injected": self.injected,
            "segments": [{"t_start": float(s.times[0]), "t_end": float(s.times[-1]),
                          "model": s.model_id, "status": s.status, "samples": len(s)}
                         for s in self.segments],
        }


@functools.lru_cache(maxsize=64)
def cached_attractors(model: ScenarioModel, settings: SolverSettings) -> AttractorSet:
    return attractor_set(model, settings=settings)


def _apply_switch(model, x, event: InterventionEvent):
    values = dict(zip(model.active_coords, x))
    target = event.model
    if event.phosphorus_scaling is not None:
        k_p = values["k_p"]
        exponent = event.phosphorus_scaling.get("exponent", model.params.alpha_p)
        reference = event.phosphorus_scaling.get("reference", 1.0)
        A = target.params.A * (k_p / reference) ** exponent
        if not A > 0:
            raise ConfigurationError(f"phosphorus stock {k_p} folds into non-positive productivity")
        target = target.with_params(A=A)
    new = [event.initial[c] if c not in values else values[c] for c in target.active_coords]
    return target, target.state(new).to_array()


def _is_escape(attractors: AttractorSet, index, margin) -> bool:
    if index is None or len(attractors) < 2:
        return False
    poverty = attractors[attractors.poverty_index].state[0]
    return bool(attractors[index].state[0] - poverty > margin)


def run_plan(plan: InterventionPlan, settings: SolverSettings | None = None,
             escape_margin: float = ESCAPE_MARGIN, match_radius: float = MATCH_RADIUS) -> EscapeReport:
    """Integrate ``plan`` piecewise and classify the terminal attractor.

    A segment that ends in solver failure raises :class:`SolverFailure` with
    the segment index. A terminal state that did not converge, or matches no
    attractor of the final model, is reported unresolved (index ``None``) with
    ``escaped=False``.
    """
    settings = settings or SolverSettings()
    model = plan.base_model
    x = model.state(plan.initial_state).to_array()
    t = 0.0
    segments = []
    status = CONVERGED

    groups = itertools.groupby(plan.events, key=lambda e: e.time)
    for when, group in itertools.chain(groups, [(plan.horizon, None)]):
        if when > t:
            seg_settings = SolverSettings(settings.rtol, settings.atol, when - t, settings.eps_conv,
                                          settings.max_steps, settings.max_step)
            traj = integrate(model, x, seg_settings, t0=t)
            if traj.status == FAILURE:
                raise SolverFailure(f"segment {len(segments)}: {traj.message}", segment=len(segments))
            segments.append(traj)
            x, status = traj.final_state.copy(), traj.status
            t = when
        if group is None:
            break
        for e in group:
            if e.kind == STATE_JUMP:
                for c, v in e.increments.items():
                    x[model.index(c)] += v
            elif e.kind == PARAM_CHANGE:
                model = model.with_params(**e.params)
            else:
                model, x = _apply_switch(model, x, e)
            status = None  # state changed, convergence must be re-established

    if status is None:
        # events at the horizon: settle under the final model without a time cap
        traj = integrate(model, x, settings, t0=t)
        if traj.status == FAILURE:
            raise SolverFailure(f"segment {len(segments)}: {traj.message}", segment=len(segments))
        segments.append(traj)
        x, status = traj.final_state.copy(), traj.status

    attractors = cached_attractors(model, settings)
    index = None
    if status == CONVERGED:
        m = int(attractors.match(x, match_radius)[0])
        index = None if m < 0 else m
    return EscapeReport(
        final_model=model,
        terminal_state=x,
        terminal_status=status,
        attractor_index=index,
        attractor_state=None if index is None else attractors[index].state.copy(),
        escaped=_is_escape(attractors, index, escape_margin),
        segments=segments,
        injected=plan.injected,
    )


def escape_threshold(model: ScenarioModel, direction: str, base_state, upper: float = 20.0,
                     tol: float = THRESHOLD_TOL, settings: SolverSettings | None = None,
                     attractors: AttractorSet | None = None, match_radius: float = MATCH_RADIUS) -> float:
    """Smallest jump along ``direction`` from ``base_state`` that changes the terminal attractor.

    Bisects on the jump magnitude in ``[0, upper]`` until the bracket is
    narrower than ``tol`` and returns its midpoint. Raises
    :class:`NoBracketError` when both ends reach the same attractor.
    """
    settings = settings or SolverSettings()
    attractors = attractors if attractors is not None else cached_attractors(model, settings)
    base = model.state(base_state).to_array()
    j = model.index(direction)

    def label(mag):
        x = base.copy()
        x[j] += mag
        end, status = flow_endpoint(model, x, settings)
        if status != CONVERGED:
            raise SolverFailure(f"trajectory from {x.tolist()} ended with {status}")
        return int(attractors.match(end, match_radius)[0])

    lo, hi = 0.0, float(upper)
    lab_lo, lab_hi = label(lo), label(hi)
    if lab_lo == lab_hi:
        raise NoBracketError(f"jumps of 0 and {upper} along {direction} reach the same attractor ({lab_lo})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if label(mid) == lab_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- plan enumeration ----------------------------------------------------------

@dataclass(frozen=True)
class MenuItem:
    """A menu entry: one event template with the magnitudes to try.

    ``target`` names the coordinate (state_jump) or parameter (param_change);
    ``values`` is the magnitude grid. A model_switch item takes ``event`` as a
    fully specified template whose time is overwritten.
    """

    kind: str
    target: str | None = None
    values: tuple[float, ...] = ()
    event: InterventionEvent | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.kind not in EVENT_KINDS:
            raise ConfigurationError(f"unknown menu kind {self.kind!r}")
        if self.kind == MODEL_SWITCH:
            if self.event is None or self.event.kind != MODEL_SWITCH:
                raise ConfigurationError("model_switch menu item needs a model_switch event template")
        elif not self.target or not self.values:
            raise ConfigurationError(f"{self.kind} menu item needs a target and a non-empty value grid")

    def instantiate(self, time, value=None) -> InterventionEvent:
        if self.kind == STATE_JUMP:
            return InterventionEvent(time, STATE_JUMP, increments={self.target: value})
        if self.kind == PARAM_CHANGE:
            return InterventionEvent(time, PARAM_CHANGE, params={self.target: value})
        e = self.event
        return InterventionEvent(time, MODEL_SWITCH, model=e.model, initial=e.initial,
                                 phosphorus_scaling=e.phosphorus_scaling)

    @property
    def choices(self):
        return (None,) if self.kind == MODEL_SWITCH else self.values

    @classmethod
    def from_dict(cls, d: Mapping) -> "MenuItem":
        unknown = set(d) - {"kind", "target", "values", "model", "initial", "phosphorus_scaling"}
        if unknown:
            raise ConfigurationError(f"unknown menu field(s): {', '.join(sorted(unknown))}")
        if d.get("kind") == MODEL_SWITCH:
            ev = InterventionEvent.from_dict({"time": 0.0, **{k: v for k, v in d.items()
                                                            if k in ("kind", "model", "initial",
                                                                     "phosphorus_scaling")}})
            return cls(MODEL_SWITCH, event=ev)
        return cls(d.get("kind"), d.get("target"), tuple(d.get("values", ())))

    def to_dict(self) -> dict:
        if self.kind == MODEL_SWITCH:
            d = self.event.to_dict()
            d.pop("time")
            return d
        return {"kind": self.kind, "target": self.target, "values": list(self.values)}


@dataclass
class RankedPlan:
    plan: InterventionPlan | None
    report: EscapeReport | None
    error: str | None = None
    encoding: str = ""


def candidate_plans(base_model, initial_state, menu, max_events, horizon=1000.0, spacing=0.0):
    """Every ordered selection of distinct menu items (up to ``max_events``) and magnitudes.

    The i-th event of a plan fires at ``i * spacing``. Yields plans, or the
    ConfigurationError raised while building an invalid combination.
    """
    if max_events > MAX_MENU_EVENTS:
        raise ConfigurationError(f"max_events is capped at {MAX_MENU_EVENTS}")
    menu = list(menu)
    for size in range(0, min(max_events, len(menu)) + 1):
        for order in itertools.permutations(range(len(menu)), size):
            items = [menu[i] for i in order]
            for mags in itertools.product(*(it.choices for it in items)):
                try:
                    events = tuple(it.instantiate(k * spacing, v) for k, (it, v) in enumerate(zip(items, mags)))
                    yield InterventionPlan(base_model, initial_state, events, horizon)
                except ConfigurationError as exc:
                    yield exc


def _evaluate(args):
    plan, settings, margin = args
    try:
        return RankedPlan(plan, run_plan(plan, settings, margin), None, plan.encoding())
    except (SolverFailure, ConfigurationError) as exc:
        return RankedPlan(plan, None, str(exc), plan.encoding())


def enumerate_plans(base_model: ScenarioModel, initial_state, menu, max_events: int,
                    horizon: float = 1000.0, spacing: float = 0.0,
                    settings: SolverSettings | None = None, escape_margin: float = ESCAPE_MARGIN,
                    workers: int = 1) -> list[RankedPlan]:
    """Evaluate every plan the menu allows and rank them.

    Escaping plans come first, cheapest total injection first; then
    non-escaping plans by the same key; plans that failed to build or
    integrate come last. Ties break on the plan's canonical JSON encoding.
    """
    settings = settings or SolverSettings()
    plans, invalid = [], []
    for p in candidate_plans(base_model, initial_state, menu, max_events, horizon, spacing):
        if isinstance(p, ConfigurationError):
            invalid.append(RankedPlan(None, None, str(p), ""))
        else:
            plans.append(p)
    jobs = [(p, settings, escape_margin) for p in plans]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate, jobs))
    else:
        results = [_evaluate(j) for j in jobs]

    def key(r: RankedPlan):
        if r.report is None:
            return (2, math.inf, r.encoding, r.error or "")
        return (0 if r.report.escaped else 1, r.plan.total_injected, r.encoding, "")

    return sorted(results, key=key) + invalid
