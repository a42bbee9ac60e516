"""Structural causal models with strictly additive noise.

Every variable is generated as ``V = g(parents) + U`` with mutually
independent exogenous noise, so abduction is an exact point computation:
``u = v - g(parents)``. That restriction is what makes per-unit
counterfactuals deterministic here.

Randomness is derived from a single 64-bit master seed. Each
(variable, unit) pair gets its own substream through a splittable hash
of (seed, variable index, unit index), so sampled tables do not depend
on evaluation order and are reproducible bit for bit.

Sampling records the exogenous draw as ``v - g(parents)`` (within one
ulp of the raw draw) so that abduction applied to a sampled table
returns the recorded noise bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.special import ndtri

from .errors import CdpError
from .expr import Const, Expression, evaluate_batch, free_variables, to_source

__all__ = [
    "Dataset",
    "Intervention",
    "InterventionError",
    "Mechanism",
    "NoiseDataset",
    "NoiseSpec",
    "ReplaceMechanism",
    "Scm",
    "ScmError",
    "SetConstant",
    "SetPerUnit",
    "SeverIncoming",
    "SeverOutgoing",
    "abduct",
    "apply_intervention",
    "build_scm",
    "counterfactual",
    "counterfactual_table",
    "sample",
]


class ScmError(CdpError):
    """Invalid model structure or operation on a model."""


class InterventionError(ScmError):
    """Invalid intervention for the model it is applied to."""


# --- hashed substreams -----------------------------------------------------

_U64 = np.uint64
_MASK = 0xFFFFFFFFFFFFFFFF


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over uint64 scalars or arrays."""
    z = z ^ (z >> _U64(30))
    z = z * _U64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> _U64(27))
    z = z * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def _substream_uniforms(seed: int, var_index: int, units: np.ndarray) -> np.ndarray:
    """Uniform(0, 1) draws for the (variable, unit) substreams."""
    with np.errstate(over="ignore"):
        s = _mix64(_U64(seed & _MASK) + _U64(0x9E3779B97F4A7C15))
        s = _mix64(s ^ (_U64(var_index) + _U64(0xD1B54A32D192ED03)))
        h = _mix64(s ^ units.astype(np.uint64))
    # 53-bit mantissa, shifted into the open interval (0, 1).
    return ((h >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53


# --- noise -----------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Exogenous noise distribution: normal, uniform, or a point mass.

    Degenerate parameters (zero stddev, equal bounds) behave as a point
    mass. Construct via the normal/uniform/point classmethods.
    """

    kind: str
    p1: float
    p2: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "p1", float(self.p1))
        object.__setattr__(self, "p2", float(self.p2))
        if self.kind not in ("normal", "uniform", "point"):
            raise ScmError(f"unknown noise kind {self.kind!r}")
        if not (np.isfinite(self.p1) and np.isfinite(self.p2)):
            raise ScmError("noise parameters must be finite")
        if self.kind == "normal" and self.p2 < 0.0:
            raise ScmError(f"normal stddev must be nonnegative, got {self.p2!r}")
        if self.kind == "uniform" and self.p1 > self.p2:
            raise ScmError(
                f"uniform bounds out of order: low {self.p1!r} > high {self.p2!r}"
            )

    @classmethod
    def normal(cls, mean: float, stddev: float) -> "NoiseSpec":
        return cls("normal", mean, stddev)

    @classmethod
    def uniform(cls, low: float, high: float) -> "NoiseSpec":
        return cls("uniform", low, high)

    @classmethod
    def point(cls, value: float) -> "NoiseSpec":
        return cls("point", value)

    def draw(self, seed: int, var_index: int, units: np.ndarray) -> np.ndarray:
        if self.kind == "point":
            return np.full(len(units), self.p1)
        if self.kind == "normal":
            if self.p2 == 0.0:
                return np.full(len(units), self.p1)
            u = _substream_uniforms(seed, var_index, units)
            return self.p1 + self.p2 * ndtri(u)
        if self.p1 == self.p2:
            return np.full(len(units), self.p1)
        u = _substream_uniforms(seed, var_index, units)
        return self.p1 + (self.p2 - self.p1) * u

    def to_text(self) -> str:
        if self.kind == "point":
            return f"point({self.p1!r})"
        return f"{self.kind}({self.p1!r}, {self.p2!r})"


# --- model structure -------------------------------------------------------


@dataclass(frozen=True)
class Mechanism:
    """One structural equation: V = expression(parents) + noise.

    expression None means a zero deterministic part (root variables).
    """

    parents: tuple[str, ...]
    expression: Expression | None
    noise: NoiseSpec

    def __post_init__(self) -> None:
        object.__setattr__(self, "parents", tuple(self.parents))
        seen = set()
        for p in self.parents:
            if p in seen:
                raise ScmError(f"duplicate parent {p!r}")
            seen.add(p)


@dataclass(frozen=True)
class Scm:
    """A validated model: named mechanisms over an acyclic parent graph.

    frozen_symbols are names that expressions may reference without
    listing as parents; they arise from severing outgoing edges and are
    bound per unit at counterfactual time. external marks variables
    whose values are supplied per unit rather than computed; such a
    model cannot be sampled.
    """

    name: str
    variables: tuple[str, ...]
    mechanisms: dict[str, Mechanism]
    topo_order: tuple[str, ...]
    frozen_symbols: frozenset[str] = frozenset()
    external: frozenset[str] = frozenset()

    def var_index(self, var: str) -> int:
        try:
            return self.variables.index(var)
        except ValueError:
            raise ScmError(f"unknown variable {var!r}") from None

    def parents(self, var: str) -> tuple[str, ...]:
        return self._mechanism(var).parents

    def children(self, var: str) -> tuple[str, ...]:
        self._mechanism(var)
        return tuple(
            v for v in self.variables if var in self.mechanisms[v].parents
        )

    def _mechanism(self, var: str) -> Mechanism:
        mech = self.mechanisms.get(var)
        if mech is None:
            raise ScmError(f"unknown variable {var!r}")
        return mech


def _find_cycle(mechanisms: Mapping[str, Mechanism]) -> list[str]:
    """Return one parent-edge cycle for the error message."""
    state: dict[str, int] = {}
    trail: list[str] = []

    def visit(node: str) -> list[str] | None:
        state[node] = 1
        trail.append(node)
        for parent in mechanisms[node].parents:
            if parent not in mechanisms:
                continue
            mark = state.get(parent, 0)
            if mark == 1:
                return trail[trail.index(parent):] + [parent]
            if mark == 0:
                found = visit(parent)
                if found is not None:
                    return found
        state[node] = 2
        trail.pop()
        return None

    for name in mechanisms:
        if state.get(name, 0) == 0:
            found = visit(name)
            if found is not None:
                return found
    return []


def build_scm(
    name: str,
    mechanisms: Mapping[str, Mechanism],
    frozen_symbols: Iterable[str] = (),
    external: Iterable[str] = (),
) -> Scm:
    """Validate mechanisms and return an Scm with a cached topological
    order. Variable order follows the mapping's insertion order.

    Raises ScmError for an undeclared parent, an expression referencing
    a name that is neither a parent nor a frozen symbol, or a cycle.
    """
    mechanisms = dict(mechanisms)
    if not mechanisms:
        raise ScmError("model needs at least one variable")
    variables = tuple(mechanisms)
    frozen = frozenset(frozen_symbols)
    for var, mech in mechanisms.items():
        for parent in mech.parents:
            if parent not in mechanisms:
                raise ScmError(f"variable {var!r} lists undeclared parent {parent!r}")
            if parent == var:
                raise ScmError(f"variable {var!r} lists itself as a parent")
        if mech.expression is not None:
            allowed = set(mech.parents) | frozen
            for ref in sorted(free_variables(mech.expression)):
                if ref not in allowed:
                    raise ScmError(
                        f"equation for {var!r} references {ref!r}, "
                        "which is not a parent"
                    )

    in_degree = {v: len(mechanisms[v].parents) for v in variables}
    children: dict[str, list[str]] = {v: [] for v in variables}
    for var in variables:
        for parent in mechanisms[var].parents:
            children[parent].append(var)
    ready = [v for v in variables if in_degree[v] == 0]
    order: list[str] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for child in children[node]:
            in_degree[child] -= 1
            if in_degree[child] == 0:
                ready.append(child)
    if len(order) != len(variables):
        cycle = _find_cycle(mechanisms)
        raise ScmError("cycle detected: " + " -> ".join(cycle))
    return Scm(
        name=name,
        variables=variables,
        mechanisms=mechanisms,
        topo_order=tuple(order),
        frozen_symbols=frozen,
        external=frozenset(external),
    )


# --- datasets --------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Immutable rectangular table of finite float64 values."""

    columns: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ScmError(f"expected a 2-d table, got ndim {values.ndim}")
        if values.shape[1] != len(self.columns):
            raise ScmError(
                f"{len(self.columns)} column names for {values.shape[1]} columns"
            )
        if len(set(self.columns)) != len(self.columns):
            raise ScmError("duplicate column names")
        if not np.all(np.isfinite(values)):
            raise ScmError("table contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise ScmError(f"no column {column!r}") from None

    def column(self, column: str) -> np.ndarray:
        return self.values[:, self.index(column)]

    def row_dict(self, unit: int) -> dict[str, float]:
        row = self.values[unit]
        return {name: float(row[i]) for i, name in enumerate(self.columns)}

    def column_dict(self) -> dict[str, np.ndarray]:
        return {name: self.values[:, i] for i, name in enumerate(self.columns)}

    @classmethod
    def from_columns(cls, columns: Mapping[str, np.ndarray]) -> "Dataset":
        names = tuple(columns)
        return cls(names, np.column_stack([columns[n] for n in names]))


class NoiseDataset(Dataset):
    """Exogenous draws, one column per model variable."""


# --- interventions ---------------------------------------------------------


@dataclass(frozen=True)
class SetConstant:
    var: str
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))
        if not np.isfinite(self.value):
            raise InterventionError("intervention value must be finite")


@dataclass(frozen=True, eq=False)
class SetPerUnit:
    """Pin a variable to a separate value for every unit."""

    var: str
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or len(values) == 0:
            raise InterventionError("per-unit values must be a nonempty vector")
        if not np.all(np.isfinite(values)):
            raise InterventionError("per-unit values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class SeverIncoming:
    var: str


@dataclass(frozen=True)
class SeverOutgoing:
    var: str


@dataclass(frozen=True)
class ReplaceMechanism:
    var: str
    mechanism: Mechanism


Action = Union[SetConstant, SetPerUnit, SeverIncoming, SeverOutgoing, ReplaceMechanism]

_DEFINING = (SetConstant, SetPerUnit, ReplaceMechanism)


@dataclass(frozen=True)
class Intervention:
    """A set of simultaneous actions on distinct variables."""

    actions: tuple[Action, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))

    @classmethod
    def do(cls, assignments: Mapping[str, float]) -> "Intervention":
        return cls(tuple(SetConstant(v, x) for v, x in assignments.items()))

    @property
    def is_empty(self) -> bool:
        return not self.actions

    def validate(self, scm: Scm) -> None:
        defining: set[str] = set()
        severed_in: set[str] = set()
        for action in self.actions:
            if action.var not in scm.mechanisms:
                raise InterventionError(
                    f"intervention targets unknown variable {action.var!r}"
                )
            if isinstance(action, _DEFINING):
                if action.var in defining:
                    raise InterventionError(
                        f"conflicting actions target {action.var!r}"
                    )
                defining.add(action.var)
            elif isinstance(action, SeverIncoming):
                severed_in.add(action.var)
        for action in self.actions:
            if isinstance(action, ReplaceMechanism) and action.var in severed_in:
                raise InterventionError(
                    f"conflicting actions target {action.var!r}"
                )


def apply_intervention(scm: Scm, intervention: Intervention) -> Scm:
    """Graph surgery for an intervention; acyclicity is re-validated.

    SetConstant replaces the mechanism with the constant and point-mass
    zero noise. SetPerUnit removes parents and marks the variable
    external; its values are taken from the intervention at
    counterfactual time. SeverIncoming keeps the noise but zeroes the
    deterministic part (a companion Set action usually supplies the
    value). SeverOutgoing drops the variable from every child's parent
    list; child expressions then read it as a frozen symbol bound at
    counterfactual time.
    """
    intervention.validate(scm)
    mechanisms = dict(scm.mechanisms)
    frozen = set(scm.frozen_symbols)
    external = set(scm.external)

    for action in _ordered_actions(intervention.actions):
        var = action.var
        if isinstance(action, ReplaceMechanism):
            mechanisms[var] = action.mechanism
        elif isinstance(action, SeverOutgoing):
            for child in list(mechanisms):
                mech = mechanisms[child]
                if var in mech.parents:
                    mechanisms[child] = Mechanism(
                        tuple(p for p in mech.parents if p != var),
                        mech.expression,
                        mech.noise,
                    )
                    frozen.add(var)
        elif isinstance(action, SeverIncoming):
            mechanisms[var] = Mechanism((), None, mechanisms[var].noise)
        elif isinstance(action, SetConstant):
            mechanisms[var] = Mechanism((), Const(action.value), NoiseSpec.point(0.0))
            external.discard(var)
        else:
            mechanisms[var] = Mechanism((), None, NoiseSpec.point(0.0))
            external.add(var)
    return build_scm(scm.name, mechanisms, frozen_symbols=frozen, external=external)


def _ordered_actions(actions: Sequence[Action]) -> list[Action]:
    """Application order: replacements, severs, then pins, so companion
    Set actions override a SeverIncoming on the same variable."""
    rank = {
        ReplaceMechanism: 0,
        SeverOutgoing: 1,
        SeverIncoming: 2,
        SetConstant: 3,
        SetPerUnit: 3,
    }
    return sorted(actions, key=lambda a: rank[type(a)])


# --- sampling, abduction, counterfactuals ----------------------------------


def _deterministic_part(
    scm: Scm, var: str, env: Mapping[str, np.ndarray], n: int
) -> np.ndarray | float:
    mech = scm.mechanisms[var]
    if mech.expression is None:
        return 0.0
    needed = free_variables(mech.expression)
    bindings = {}
    for name in needed:
        if name not in env:
            raise ScmError(
                f"equation for {var!r} needs a value for {name!r}"
            )
        bindings[name] = env[name]
    return evaluate_batch(mech.expression, bindings, n)


def sample(scm: Scm, n: int, seed: int) -> tuple[Dataset, NoiseDataset]:
    """Draw n units. Returns the realized table and the exogenous draws.

    The recorded draw for each variable is the abduction residual
    ``v - g(parents)``, which is within one ulp of the raw draw, so
    abduct(scm, data) reproduces the noise table bitwise.
    """
    if n < 1:
        raise ScmError(f"sample size must be positive, got {n}")
    if scm.external:
        raise ScmError(
            "cannot sample: variables pinned per unit: "
            + ", ".join(sorted(scm.external))
        )
    for var in scm.topo_order:
        mech = scm.mechanisms[var]
        if mech.expression is not None:
            hanging = free_variables(mech.expression) - set(mech.parents)
            if hanging:
                raise ScmError(
                    f"cannot sample: equation for {var!r} references severed "
                    + ", ".join(sorted(hanging))
                )
    units = np.arange(n, dtype=np.uint64)
    values: dict[str, np.ndarray] = {}
    noise: dict[str, np.ndarray] = {}
    for var in scm.topo_order:
        mech = scm.mechanisms[var]
        det = _deterministic_part(scm, var, values, n)
        raw = mech.noise.draw(seed, scm.var_index(var), units)
        realized = det + raw
        values[var] = realized
        noise[var] = realized - det
    data = Dataset(scm.variables, np.column_stack([values[v] for v in scm.variables]))
    drawn = np.column_stack([noise[v] for v in scm.variables])
    return data, NoiseDataset(scm.variables, drawn)


def abduct(scm: Scm, data: Dataset) -> NoiseDataset:
    """Recover per-unit exogenous values: u = v - g(parents)."""
    env = {}
    for var in scm.variables:
        env[var] = data.column(var)
    residuals = []
    for var in scm.variables:
        det = _deterministic_part(scm, var, env, data.m)
        residuals.append(env[var] - det)
    matrix = np.column_stack(residuals)
    return NoiseDataset(scm.variables, matrix)


def _pin_columns(
    intervention: Intervention, m: int, unit: int | None
) -> dict[str, np.ndarray]:
    pins: dict[str, np.ndarray] = {}
    for action in intervention.actions:
        if isinstance(action, SetConstant):
            pins[action.var] = np.full(m, action.value)
        elif isinstance(action, SetPerUnit):
            if unit is None:
                if len(action.values) != m:
                    raise InterventionError(
                        f"per-unit values for {action.var!r} have length "
                        f"{len(action.values)}, expected {m}"
                    )
                pins[action.var] = action.values
            else:
                if not 0 <= unit < len(action.values):
                    raise InterventionError(
                        f"unit {unit} outside per-unit values for {action.var!r}"
                    )
                pins[action.var] = np.full(m, action.values[unit])
    return pins


def _propagate(
    scm: Scm,
    noise: Mapping[str, np.ndarray],
    pins: Mapping[str, np.ndarray],
    frozen_values: Mapping[str, np.ndarray],
    n: int,
) -> dict[str, np.ndarray]:
    """Recompute all variables in topological order. Pinned variables
    take their values exactly; everything else is g(parents) + noise."""
    out: dict[str, np.ndarray] = {}
    for var in scm.topo_order:
        if var in pins:
            out[var] = np.asarray(pins[var], dtype=np.float64)
            continue
        if var in scm.external:
            raise ScmError(f"variable {var!r} requires per-unit values")
        mech = scm.mechanisms[var]
        env: dict[str, np.ndarray] = dict(out)
        if mech.expression is not None:
            for ref in free_variables(mech.expression):
                if ref not in env:
                    if ref in frozen_values:
                        env[ref] = np.asarray(frozen_values[ref], dtype=np.float64)
                    else:
                        raise ScmError(
                            f"severed symbol {ref!r} needs a frozen value"
                        )
        det = _deterministic_part(scm, var, env, n)
        u = noise.get(var)
        if u is None:
            raise ScmError(f"missing exogenous value for {var!r}")
        out[var] = det + u
    return out


def counterfactual_table(
    scm: Scm,
    data: Dataset,
    noise: NoiseDataset,
    intervention: Intervention,
    frozen_values: Mapping[str, np.ndarray] | None = None,
) -> Dataset:
    """Counterfactual of every unit at once under one intervention.

    data supplies shapes only; all information flows through the
    abducted noise and the intervention. Per-unit pins must match the
    unit count.
    """
    modified = apply_intervention(scm, intervention)
    pins = _pin_columns(intervention, data.m, None)
    values = _propagate(
        modified, noise.column_dict(), pins, frozen_values or {}, data.m
    )
    return Dataset(scm.variables, np.column_stack([values[v] for v in scm.variables]))


def counterfactual(
    scm: Scm,
    observed: Mapping[str, float],
    noise: Mapping[str, float],
    intervention: Intervention,
    unit: int = 0,
    frozen_values: Mapping[str, float] | None = None,
) -> dict[str, float]:
    """Single-unit counterfactual by action on abducted noise.

    observed is unused except as a completeness check; the counterfactual
    world is rebuilt from the noise. With an empty intervention the
    observed row is reproduced up to floating-point rounding. unit picks
    the row of any per-unit action vectors; frozen_values binds symbols
    severed by SeverOutgoing.
    """
    for var in scm.variables:
        if var not in observed:
            raise ScmError(f"observed row is missing {var!r}")
    modified = apply_intervention(scm, intervention)
    pins = _pin_columns(intervention, 1, unit)
    noise_cols = {
        v: np.asarray([float(x)]) for v, x in noise.items()
    }
    frozen_cols = {
        v: np.asarray([float(x)]) for v, x in (frozen_values or {}).items()
    }
    values = _propagate(modified, noise_cols, pins, frozen_cols, 1)
    return {v: float(values[v][0]) for v in scm.variables}
