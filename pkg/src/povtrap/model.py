"""State variables, parameter sets and right-hand sides of the household-farm models.

Five model variants share one asset equation (Solow-type accumulation with an
s-shaped savings rate and Cobb-Douglas production) and differ in which
ecological stocks are tracked and how they are replenished:

=========================  =====================  ==================================
model id                   coordinates            ecological dynamics
=========================  =====================  ==================================
baseline                   k_a, k_p, k_w          phosphorus decays, rain feeds water
tillage_reduced_loss       k_a, k_p, k_w          baseline with smaller loss rates
agrochemical               k_a, k_p, k_q          bought phosphorus, soil-quality damage
energy_diversification     k_a, k_p, k_w          manure phosphorus, water harvesting
tillage_eliminated_loss    k_a, k_w               phosphorus frozen into productivity A
=========================  =====================  ==================================

All right-hand sides are vectorised over leading axes: a state array of shape
``(..., dim)`` gives a derivative array of the same shape.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainError

COORDINATES = ("k_a", "k_p", "k_w", "k_q")

MODEL_IDS = (
    "baseline",
    "agrochemical",
    "energy_diversification",
    "tillage_reduced_loss",
    "tillage_eliminated_loss",
)

ACTIVE_COORDS = {
    "baseline": ("k_a", "k_p", "k_w"),
    "tillage_reduced_loss": ("k_a", "k_p", "k_w"),
    "agrochemical": ("k_a", "k_p", "k_q"),
    "energy_diversification": ("k_a", "k_p", "k_w"),
    "tillage_eliminated_loss": ("k_a", "k_w"),
}

_EXPONENT_OF = {"k_a": "alpha_a", "k_p": "alpha_p", "k_w": "alpha_w", "k_q": "alpha_q"}

# parameters each model reads besides the savings/production/asset block
_REQUIRED = {
    "baseline": ("delta_p", "r_w", "delta_w"),
    "tillage_reduced_loss": ("delta_p", "r_w", "delta_w"),
    "agrochemical": ("delta_p", "r_q", "Q", "c1", "c2", "c3", "c4"),
    "energy_diversification": ("delta_p", "r_w", "delta_w", "c1", "c2", "c3", "c4", "c5", "c6"),
    "tillage_eliminated_loss": ("r_w", "delta_w"),
}

# (name, lower bound, strict)
_BOUNDS = {
    "s1": (0.0, True), "s2": (0.0, True), "s3": (0.0, False),
    "A": (0.0, True),
    "alpha_a": (0.0, False), "alpha_p": (0.0, False),
    "alpha_w": (0.0, False), "alpha_q": (0.0, False),
    "delta_a": (0.0, True), "r": (0.0, False),
    "delta_p": (0.0, True), "d1": (0.0, False), "d2": (0.0, True),
    "r_w": (0.0, False), "delta_w": (0.0, True),
    "r_q": (0.0, False), "Q": (0.0, True),
    "c1": (0.0, True), "c2": (0.0, True), "c3": (0.0, True),
    "c4": (0.0, True), "c5": (0.0, True), "c6": (0.0, True),
}

EXPONENT_SUM_SLACK = 1e-12


@dataclass(frozen=True)
class ParameterSet:
    """Model parameters; optional ones are ``None`` until a model needs them.

    Sign constraints are checked here. Whether a parameter is *required* and
    whether the production exponents sum to at most one depends on the model,
    so those checks live in :class:`ScenarioModel`.
    """

    s1: float
    s2: float
    s3: float
    A: float
    delta_a: float
    alpha_a: float = 0.0
    alpha_p: float = 0.0
    alpha_w: float = 0.0
    alpha_q: float = 0.0
    r: float = 0.0
    delta_p: float | None = None
    d1: float = 0.0
    d2: float = 1.0
    r_w: float | None = None
    delta_w: float | None = None
    r_q: float | None = None
    Q: float | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    c4: float | None = None
    c5: float | None = None
    c6: float | None = None

    def __post_init__(self):
        for name, (lower, strict) in _BOUNDS.items():
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"parameter {name} must be a number, got {value!r}")
            value = float(value)
            object.__setattr__(self, name, value)
            if not math.isfinite(value):
                raise ConfigurationError(f"parameter {name} must be finite, got {value}")
            if (strict and value <= lower) or (not strict and value < lower):
                op = ">" if strict else ">="
                raise ConfigurationError(f"parameter {name} must be {op} {lower:g}, got {value:g}")

    def replace(self, **changes) -> "ParameterSet":
        unknown = set(changes) - set(self.names())
        if unknown:
            raise ConfigurationError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def as_dict(self, drop_none: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if drop_none:
            d = {k: v for k, v in d.items() if v is not None}
        return d

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, values: Mapping) -> "ParameterSet":
        unknown = set(values) - set(cls.names())
        if unknown:
            raise ConfigurationError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


@dataclass(frozen=True)
class StateVector:
    """A point in state space restricted to a model's active coordinates.

    Inactive coordinates are ``None``; they never enter production.
    """

    active: tuple[str, ...]
    k_a: float | None = None
    k_p: float | None = None
    k_w: float | None = None
    k_q: float | None = None

    def __post_init__(self):
        for name in COORDINATES:
            value = getattr(self, name)
            if name in self.active:
                if value is None:
                    raise DomainError(f"active coordinate {name} has no value")
                value = float(value)
                if not math.isfinite(value) or value < 0:
                    raise DomainError(f"coordinate {name} must be finite and >= 0, got {value}")
                object.__setattr__(self, name, value)
            elif value is not None:
                raise DomainError(f"coordinate {name} is not active in {self.active}")

    @classmethod
    def from_array(cls, active, values) -> "StateVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(active),):
            raise DomainError(f"expected {len(active)} values for {tuple(active)}, got shape {values.shape}")
        return cls(tuple(active), **dict(zip(active, values.tolist())))

    @classmethod
    def from_mapping(cls, active, values: Mapping) -> "StateVector":
        missing = [c for c in active if c not in values]
        extra = [c for c in values if c not in active]
        if missing or extra:
            raise DomainError(f"state must give exactly {tuple(active)}; missing {missing}, unexpected {extra}")
        return cls(tuple(active), **{c: values[c] for c in active})

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in self.active], dtype=float)

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in self.active}


def savings_rate(k_a, params: ParameterSet):
    """S-shaped savings rate ``s1 / (1 + exp(-s2 k_a + s3))``."""
    out = params.s1 * expit(params.s2 * np.asarray(k_a, dtype=float) - params.s3)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ScenarioModel:
    """One of the household-farm dynamical systems.

    ``reference_losses`` is only meaningful for ``tillage_reduced_loss``: the
    (delta_p, delta_w) of the untreated system, which the model's own loss
    rates must undercut.
    """

    id: str
    params: ParameterSet
    reference_losses: tuple[float, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.id not in MODEL_IDS:
            raise ConfigurationError(f"unknown model id {self.id!r}; expected one of {MODEL_IDS}")
        p = self.params
        missing = [n for n in _REQUIRED[self.id] if getattr(p, n) is None]
        if missing:
            raise ConfigurationError(f"model {self.id} requires parameter(s): {', '.join(missing)}")
        used = {_EXPONENT_OF[c] for c in self.active_coords}
        for name in _EXPONENT_OF.values():
            if name not in used and getattr(p, name) != 0.0:
                raise ConfigurationError(
                    f"model {self.id} has no coordinate for exponent {name} (got {getattr(p, name):g}); set it to 0")
        total = sum(getattr(p, n) for n in used)
        if total > 1.0 + EXPONENT_SUM_SLACK:
            names = "+".join(_EXPONENT_OF[c] for c in self.active_coords)
            raise ConfigurationError(f"exponent sum {names} = {total:g} violates the constraint sum <= 1")
        if self.id == "tillage_reduced_loss" and self.reference_losses is not None:
            ref_p, ref_w = self.reference_losses
            if not (p.delta_p < ref_p and p.delta_w < ref_w):
                raise ConfigurationError(
                    f"tillage_reduced_loss needs delta_p < {ref_p:g} and delta_w < {ref_w:g}, "
                    f"got {p.delta_p:g}, {p.delta_w:g}")

    @property
    def active_coords(self) -> tuple[str, ...]:
        return ACTIVE_COORDS[self.id]

    @property
    def dimension(self) -> int:
        return len(self.active_coords)

    def index(self, coord: str) -> int:
        try:
            return self.active_coords.index(coord)
        except ValueError:
            raise DomainError(f"{coord} is not a coordinate of model {self.id}") from None

    @property
    def exponents(self) -> np.ndarray:
        return np.array([getattr(self.params, _EXPONENT_OF[c]) for c in self.active_coords])

    def with_params(self, **changes) -> "ScenarioModel":
        return ScenarioModel(self.id, self.params.replace(**changes), self.reference_losses)

    def state(self, values) -> StateVector:
        if isinstance(values, StateVector):
            if values.active != self.active_coords:
                raise DomainError(f"state coordinates {values.active} do not match model {self.id}")
            return values
        if isinstance(values, Mapping):
            return StateVector.from_mapping(self.active_coords, values)
        return StateVector.from_array(self.active_coords, values)

    # -- model functions ------------------------------------------------------

    def production(self, x):
        """Cobb-Douglas output over the active coordinates; ``x`` has shape (..., dim)."""
        x = _as_state_array(self, x)
        _check_nonnegative(x)
        return self._production(x)

    def rhs(self, x):
        """Exact right-hand side; raises DomainError on negative coordinates."""
        x = _as_state_array(self, x)
        _check_nonnegative(x)
        return self._rhs(x)

    def _production(self, x):
        out = self.params.A * np.prod(np.power(x, self.exponents), axis=-1)
        return out

    def _rhs(self, x):
        """Unchecked right-hand side for solver stages.

        Negative entries (solver overshoot within tolerance) are read as zero.
        """
        p = self.params
        x = np.maximum(x, 0.0)
        k_a = x[..., 0]
        out = np.empty_like(x)
        out[..., 0] = savings_rate(k_a, p) * self._production(x) - (p.delta_a + p.r) * k_a

        if self.id == "tillage_eliminated_loss":
            out[..., 1] = p.r_w - p.delta_w * x[..., 1]
            return out

        k_p = x[..., 1]
        loss_p = p.delta_p * k_p
        if p.d1 > 0:
            loss_p = loss_p * (1.0 + p.d1 * k_a / (p.d2 + k_a))

        if self.id in ("baseline", "tillage_reduced_loss"):
            k_w = x[..., 2]
            out[..., 1] = -loss_p
            out[..., 2] = p.r_w - p.delta_w * k_w
        elif self.id == "agrochemical":
            k_q = x[..., 2]
            out[..., 1] = phosphorus_purchase(k_a, p) - loss_p
            out[..., 2] = p.r_q * k_q * (1.0 - k_q / p.Q) - soil_damage(k_a, p) * k_q
        else:  # energy_diversification
            k_w = x[..., 2]
            out[..., 1] = manure_phosphorus(k_a, k_p, p) - loss_p
            out[..., 2] = p.r_w + water_harvest(k_a, p) * k_w - p.delta_w * k_w
        return out

    def boundary_equilibria(self) -> list[np.ndarray]:
        """Equilibria known in closed form on the k_a = 0 face."""
        p = self.params
        if self.id == "agrochemical":
            return [np.array([0.0, 0.0, p.Q]), np.array([0.0, 0.0, 0.0])]
        if self.id == "tillage_eliminated_loss":
            return [np.array([0.0, p.r_w / p.delta_w])]
        return [np.array([0.0, 0.0, p.r_w / p.delta_w])]

    def to_dict(self) -> dict:
        return {"model": self.id, "params": self.params.as_dict()}


def phosphorus_purchase(k_a, p: ParameterSet):
    """Agrochemical phosphorus inflow ``c1 k_a^2 / (c2 + k_a^2)``."""
    return p.c1 * k_a**2 / (p.c2 + k_a**2)


def soil_damage(k_a, p: ParameterSet):
    """Per-unit soil-quality loss from agrochemicals ``c3 k_a / (c4 + k_a)``."""
    return p.c3 * k_a / (p.c4 + k_a)


def manure_phosphorus(k_a, k_p, p: ParameterSet):
    return (p.c1 * k_a**2 / (p.c2 + k_a**2)) * (p.c3 * k_p / (p.c4 + k_p))


def water_harvest(k_a, p: ParameterSet):
    return p.c5 * k_a**2 / (p.c6 + k_a**2)


def production(state, params: ParameterSet, model: ScenarioModel):
    """Output of ``model`` at ``state`` using ``params`` (overrides the model's own)."""
    if params is not model.params:
        model = ScenarioModel(model.id, params)
    return model.production(state)


def rhs(model: ScenarioModel, state):
    return model.rhs(state)


def _as_state_array(model: ScenarioModel, x) -> np.ndarray:
    if isinstance(x, StateVector):
        x = model.state(x).to_array()
    elif isinstance(x, Mapping):
        x = StateVector.from_mapping(model.active_coords, x).to_array()
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.dimension,):
        raise DomainError(f"model {model.id} expects {model.dimension} coordinates, got shape {x.shape}")
    return x


def _check_nonnegative(x: np.ndarray):
    if np.any(x < 0):
        raise DomainError(f"negative coordinate in state {x.tolist()}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite coordinate in state {x.tolist()}")


# Builtin parameter sets. Population growth r is left at its default of 0, so
# delta_a is the whole asset drag.
_FIG2 = dict(s1=0.1, s2=10, s3=20, A=10, alpha_a=0.3, alpha_p=0.3, alpha_w=0.3,
             delta_a=1, delta_p=1, r_w=1.5, delta_w=0.5)
_FIG3B = dict(s1=0.25, s2=2.5, s3=20, A=10, alpha_a=0.4, alpha_p=0.3, alpha_q=0.2,
              delta_a=0.7, c1=1, c2=20, c3=1, c4=4, delta_p=0.2, r_q=1, Q=10)
# the third production exponent belongs to water, the only third input this model has
_FIG3E = dict(s1=0.1, s2=1, s3=0, A=10, alpha_a=0.3, alpha_p=0.3, alpha_w=0.2,
              delta_a=0.5, c1=1, c2=5, c3=1, c4=1.8, delta_p=0.2, r_w=1, c5=1, c6=40, delta_w=1)
_FIG4 = dict(s1=0.1, s2=10, s3=20, A=6, alpha_a=0.4, alpha_w=0.4, delta_a=1, r_w=1, delta_w=0.2)

BUILTINS = {
    "fig2": ("baseline", _FIG2),
    "fig3b": ("agrochemical", _FIG3B),
    "fig3c": ("agrochemical", {**_FIG3B, "c3": 4}),
    "fig3e": ("energy_diversification", _FIG3E),
    "fig3f": ("energy_diversification", {**_FIG3E, "c1": 0.5}),
    "fig4": ("tillage_eliminated_loss", _FIG4),
}


def builtin_scenario(name: str) -> ScenarioModel:
    try:
        model_id, values = BUILTINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown builtin scenario {name!r}; expected one of {sorted(BUILTINS)}") from None
    return ScenarioModel(model_id, ParameterSet(**values))


def reduced_loss(model: ScenarioModel, phosphorus_factor: float, water_factor: float) -> ScenarioModel:
    """Conservation tillage that scales baseline loss rates by factors in (0, 1)."""
    if model.id != "baseline":
        raise ConfigurationError("reduced-loss tillage is defined on the baseline model")
    for f in (phosphorus_factor, water_factor):
        if not 0 < f < 1:
            raise ConfigurationError(f"loss reduction factor must lie in (0, 1), got {f}")
    p = model.params
    return ScenarioModel(
        "tillage_reduced_loss",
        p.replace(delta_p=p.delta_p * phosphorus_factor, delta_w=p.delta_w * water_factor),
        reference_losses=(p.delta_p, p.delta_w),
    )


def scenario_from_spec(spec) -> ScenarioModel:
    """Build a model from a builtin name or an inline definition.

    Inline forms::

        {"base": "fig3b", "params": {"c3": 4}}             # builtin with overrides
        {"model": "agrochemical", "params": {...}}          # full parameter set
    """
    if isinstance(spec, ScenarioModel):
        return spec
    if isinstance(spec, str):
        return builtin_scenario(spec)
    if not isinstance(spec, Mapping):
        raise ConfigurationError(f"scenario must be a builtin name or an object, got {type(spec).__name__}")
    unknown = set(spec) - {"base", "model", "params"}
    if unknown:
        raise ConfigurationError(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
    overrides = spec.get("params", {})
    if not isinstance(overrides, Mapping):
        raise ConfigurationError("scenario.params must be an object")
    if "base" in spec:
        if "model" in spec:
            raise ConfigurationError("scenario takes either 'base' or 'model', not both")
        base = builtin_scenario(spec["base"])
        return ScenarioModel(base.id, base.params.replace(**overrides))
    if "model" not in spec:
        raise ConfigurationError("inline scenario needs 'base' (builtin name) or 'model' (model id)")
    return ScenarioModel(spec["model"], ParameterSet.from_dict(overrides))


def scenario_to_spec(model: ScenarioModel) -> dict:
    return model.to_dict()
