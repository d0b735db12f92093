"""Declarative JSON run configurations.

Every field is validated and every default is resolved at parse time, so the
serialised config written into the run manifest reproduces the run exactly.
Unknown fields are errors.
"""

from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .basins import MATCH_RADIUS, default_resolution
from .equilibria import DEFAULT_SEEDS
from .errors import ConfigurationError, DomainError
from .integrator import SolverSettings
from .interventions import ESCAPE_MARGIN, InterventionPlan, MenuItem
from .model import ScenarioModel, scenario_from_spec, scenario_to_spec

COMMANDS = ("simulate", "equilibria", "basins", "plan", "enumerate", "render")

_COMMON = {"command", "solver"}
_FIELDS = {
    "simulate": {"scenario", "initial_state"},
    "equilibria": {"scenario", "box", "seeds_per_axis"},
    "basins": {"scenario", "box", "resolution", "seeds_per_axis", "match_radius", "render"},
    "plan": {"plan", "escape_margin"},
    "enumerate": {"scenario", "initial_state", "menu", "max_events", "horizon", "spacing", "escape_margin"},
    "render": {"grid_file", "render"},
}
_SOLVER_FIELDS = ("rtol", "atol", "t_max", "eps_conv", "max_steps", "max_step")
_RENDER_FIELDS = {"slice_axis", "slice_count", "cell_px"}


class ConfigError(ConfigurationError):
    """Schema violation with the offending field path and, when known, the source line."""

    def __init__(self, path: str, message: str, line: int | None = None, source: str | None = None):
        where = f"{source or '<config>'}" + (f":{line}" if line else "")
        super().__init__(f"{where}: field '{path}': {message}" if path else f"{where}: {message}")
        self.path = path
        self.line = line
        self.detail = message


@dataclass
class RenderStyle:
    slice_axis: str | None = None
    slice_count: int = 4
    cell_px: float | None = None

    def to_dict(self):
        d = {"slice_axis": self.slice_axis, "slice_count": self.slice_count}
        if self.cell_px is not None:
            d["cell_px"] = self.cell_px
        return d


@dataclass
class RunConfig:
    command: str
    solver: SolverSettings = field(default_factory=SolverSettings)
    scenario: ScenarioModel | None = None
    initial_state: dict | None = None
    box: list | None = None
    seeds_per_axis: int | None = None
    resolution: list | None = None
    match_radius: float | None = None
    plan: InterventionPlan | None = None
    escape_margin: float | None = None
    menu: list | None = None
    max_events: int | None = None
    horizon: float | None = None
    spacing: float | None = None
    grid_file: str | None = None
    render: RenderStyle | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"command": self.command,
                             "solver": {k: getattr(self.solver, k) for k in _SOLVER_FIELDS}}
        for name in sorted(_FIELDS[self.command]):
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, ScenarioModel):
                value = scenario_to_spec(value)
            elif isinstance(value, InterventionPlan):
                value = value.to_dict()
            elif isinstance(value, RenderStyle):
                value = value.to_dict()
            elif name == "menu":
                value = [m.to_dict() for m in value]
            elif name == "box":
                value = [list(b) for b in value]
            d[name] = value
        return d


def _line_of(text: str | None, path: str) -> int | None:
    if not text or not path:
        return None
    key = re.split(r"[.\[]", path)[-1].rstrip("]")
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _number(value, path, *, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    if integer and (not isinstance(value, int) and not float(value).is_integer()):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(path, f"must be > 0, got {value!r}")
    if nonneg and value < 0:
        raise ConfigError(path, f"must be >= 0, got {value!r}")
    return int(value) if integer else float(value)


def _state(model, value, path):
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object mapping coordinate names to values")
    try:
        return model.state(value).as_dict()
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from None


def build_config(doc: dict, command: str | None = None) -> RunConfig:
    """Validate a decoded config document and resolve all defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    cmd = doc.get("command", command)
    if cmd is None:
        raise ConfigError("command", f"missing; expected one of {COMMANDS}")
    if cmd not in COMMANDS:
        raise ConfigError("command", f"unknown command {cmd!r}; expected one of {COMMANDS}")
    if command is not None and cmd != command:
        raise ConfigError("command", f"config is for {cmd!r} but {command!r} was requested")
    unknown = set(doc) - _COMMON - _FIELDS[cmd]
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown field for command {cmd!r}")
    cfg = RunConfig(cmd)

    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("solver", "expected an object")
    bad = set(solver) - set(_SOLVER_FIELDS)
    if bad:
        raise ConfigError(f"solver.{sorted(bad)[0]}", "unknown solver setting")
    try:
        cfg.solver = SolverSettings(**{k: solver[k] for k in solver})
    except ConfigurationError as exc:
        raise ConfigError("solver", str(exc)) from None

    if "scenario" in _FIELDS[cmd]:
        if "scenario" not in doc:
            raise ConfigError("scenario", "missing; give a builtin name or an inline model")
        try:
            cfg.scenario = scenario_from_spec(doc["scenario"])
        except ConfigurationError as exc:
            raise ConfigError("scenario", str(exc)) from None
    model = cfg.scenario

    if cmd in ("equilibria", "basins"):
        box = doc.get("box", [[0.0, 10.0]] * model.dimension)
        if not isinstance(box, list) or len(box) != model.dimension:
            raise ConfigError("box", f"expected {model.dimension} [lo, hi] ranges")
        cfg.box = []
        for i, b in enumerate(box):
            if not isinstance(b, list) or len(b) != 2:
                raise ConfigError(f"box[{i}]", "expected [lo, hi]")
            lo = _number(b[0], f"box[{i}][0]", nonneg=True)
            hi = _number(b[1], f"box[{i}][1]", nonneg=True)
            if hi <= lo:
                raise ConfigError(f"box[{i}]", "hi must exceed lo")
            cfg.box.append((lo, hi))
        cfg.seeds_per_axis = _number(doc.get("seeds_per_axis", DEFAULT_SEEDS), "seeds_per_axis", integer=True)
        if cfg.seeds_per_axis < 2:
            raise ConfigError("seeds_per_axis", "must be >= 2")

    if cmd == "basins":
        res = doc.get("resolution", default_resolution(model))
        if isinstance(res, (int, float)) and not isinstance(res, bool):
            res = [res] * model.dimension
        if not isinstance(res, list) or len(res) != model.dimension:
            raise ConfigError("resolution", f"expected an integer or {model.dimension} integers")
        cfg.resolution = [_number(r, f"resolution[{i}]", integer=True) for i, r in enumerate(res)]
        if min(cfg.resolution) < 2:
            raise ConfigError("resolution", "must be >= 2 per axis")
        cfg.match_radius = _number(doc.get("match_radius", MATCH_RADIUS), "match_radius", positive=True)

    if cmd in ("basins", "render"):
        cfg.render = _render_style(doc.get("render", {}))

    if cmd in ("simulate", "enumerate"):
        if "initial_state" not in doc:
            raise ConfigError("initial_state", "missing")
        cfg.initial_state = _state(model, doc["initial_state"], "initial_state")

    if cmd in ("plan", "enumerate"):
        cfg.escape_margin = _number(doc.get("escape_margin", ESCAPE_MARGIN), "escape_margin", nonneg=True)

    if cmd == "plan":
        if "plan" not in doc:
            raise ConfigError("plan", "missing plan document")
        if not isinstance(doc["plan"], dict):
            raise ConfigError("plan", "expected an object")
        try:
            cfg.plan = InterventionPlan.from_dict(doc["plan"])
        except (ConfigurationError, DomainError) as exc:
            raise ConfigError("plan", str(exc)) from None

    if cmd == "enumerate":
        menu = doc.get("menu", [])
        if not isinstance(menu, list):
            raise ConfigError("menu", "expected a list of menu items")
        cfg.menu = []
        for i, item in enumerate(menu):
            try:
                cfg.menu.append(MenuItem.from_dict(item))
            except (ConfigurationError, TypeError) as exc:
                raise ConfigError(f"menu[{i}]", str(exc)) from None
        cfg.max_events = _number(doc.get("max_events", min(len(cfg.menu), 4)), "max_events", integer=True, nonneg=True)
        if cfg.max_events > 4:
            raise ConfigError("max_events", "at most 4 events per plan")
        cfg.horizon = _number(doc.get("horizon", 1000.0), "horizon", positive=True)
        cfg.spacing = _number(doc.get("spacing", 0.0), "spacing", nonneg=True)

    if cmd == "render":
        if not isinstance(doc.get("grid_file"), str):
            raise ConfigError("grid_file", "expected a path to a .rle basin grid")
        cfg.grid_file = doc["grid_file"]
    return cfg


def _render_style(d) -> RenderStyle:
    if not isinstance(d, dict):
        raise ConfigError("render", "expected an object")
    bad = set(d) - _RENDER_FIELDS
    if bad:
        raise ConfigError(f"render.{sorted(bad)[0]}", "unknown render option")
    axis = d.get("slice_axis")
    if axis is not None and axis not in ("k_a", "k_p", "k_w", "k_q"):
        raise ConfigError("render.slice_axis", f"unknown coordinate {axis!r}")
    count = _number(d.get("slice_count", 4), "render.slice_count", integer=True, positive=True)
    px = d.get("cell_px")
    px = None if px is None else _number(px, "render.cell_px", positive=True)
    return RenderStyle(axis, count, px)


def parse_config(source, command: str | None = None) -> RunConfig:
    """Parse a config from a path, ``"-"`` (stdin), a JSON string or a dict."""
    name = None
    if isinstance(source, dict):
        text, doc = None, source
    else:
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            name = str(source)
            text = sys.stdin.read() if name == "-" else Path(source).read_text()
        else:
            text = source
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, name) from None
    try:
        return build_config(doc, command)
    except ConfigError as exc:
        line = _line_of(text, exc.path)
        if line is None and name is None:
            raise
        raise ConfigError(exc.path, exc.detail, line, name) from None


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
