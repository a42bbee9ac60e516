"""Per-unit dependence curves for a predictor coupled to a causal model.

An Ecm ("explained causal model") pairs a fitted predictor with a model
over its input features: the prediction is treated as one more variable
with the predictor as its structural equation and no noise of its own.

Five plot kinds, all returning one curve per data unit plus the mean:

- ICE:  replace the explained variable's column, hold everything else
        at observed values (the model is ignored).
- TDP:  total dependence; pin the variable at each grid value, abduct
        each unit's noise, and propagate through the model so
        downstream features respond.
- PCDP: TDP with extra variables held at constants throughout.
- NDDP: natural direct dependence; children of the variable are held
        at each unit's observed values, so only the direct edge into
        the predictor moves.
- NIDP: natural indirect dependence, in two stages. Stage one computes
        each unit's counterfactual child values under the grid pin.
        Stage two holds children at those values while the explained
        variable itself is restored to its observed per-unit value, so
        only mediated responses vary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CdpError
from .predictors import Predictor
from .scm import (
    Dataset,
    Intervention,
    NoiseDataset,
    Scm,
    SetConstant,
    SetPerUnit,
    SeverIncoming,
    abduct,
    counterfactual_table,
)

__all__ = [
    "BandSet",
    "CurveSet",
    "Ecm",
    "EffectDifference",
    "EngineError",
    "Grid",
    "PREDICTION_NODE",
    "band_kinds",
    "build_ecm",
    "effect_difference",
    "ice",
    "make_grid",
    "nddp",
    "nidp",
    "pcdp",
    "tdp",
    "uncertainty_band",
]

PREDICTION_NODE = "__yhat"
GRID_RESOLUTION_DEFAULT = 40
ORDINAL_CUTOFF = 15

NIDP_NOTE = (
    "nidp stage 2 restores the explained variable to its observed per-unit "
    "value so only mediated responses vary"
)


class EngineError(CdpError):
    """Invalid request to the plot machinery."""


@dataclass(frozen=True)
class Ecm:
    """A predictor wired into a model over its features."""

    scm: Scm
    predictor: Predictor
    node: str = PREDICTION_NODE


def build_ecm(scm: Scm, predictor: Predictor) -> Ecm:
    """Couple a predictor to a model; every feature must be a model
    variable and the reserved prediction node name must be free."""
    if PREDICTION_NODE in scm.variables:
        raise EngineError(f"model already defines {PREDICTION_NODE!r}")
    missing = [f for f in predictor.features if f not in scm.variables]
    if missing:
        raise EngineError(
            "predictor features missing from model: " + ", ".join(missing)
        )
    return Ecm(scm, predictor)


@dataclass(frozen=True)
class Grid:
    """Strictly increasing evaluation points for one variable."""

    var: str
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or len(values) == 0:
            raise EngineError("grid must be a nonempty vector")
        if not np.all(np.isfinite(values)):
            raise EngineError("grid contains non-finite values")
        if len(values) > 1 and not np.all(np.diff(values) > 0):
            raise EngineError("grid values must be strictly increasing")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


def make_grid(
    data: Dataset,
    var: str,
    resolution: int = GRID_RESOLUTION_DEFAULT,
    ordinal_cutoff: int = ORDINAL_CUTOFF,
) -> Grid:
    """Grid over a column: the sorted distinct values when there are at
    most ordinal_cutoff of them, else resolution equally spaced points
    across the observed range."""
    if resolution < 2:
        raise EngineError(f"resolution must be at least 2, got {resolution}")
    column = data.column(var)
    distinct = np.unique(column)
    if len(distinct) <= ordinal_cutoff:
        return Grid(var, distinct)
    lo, hi = float(distinct[0]), float(distinct[-1])
    if lo == hi:
        raise EngineError(f"column {var!r} is constant")
    return Grid(var, np.linspace(lo, hi, resolution))


@dataclass(frozen=True)
class CurveSet:
    """Per-unit curves over a grid plus their pointwise mean."""

    kind: str
    grid: Grid
    curves: np.ndarray
    mean: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        curves = np.array(self.curves, dtype=np.float64)
        mean = np.array(self.mean, dtype=np.float64)
        if curves.ndim != 2 or curves.shape[1] != len(self.grid):
            raise EngineError(
                f"curves shape {curves.shape} does not match grid length "
                f"{len(self.grid)}"
            )
        if not np.all(np.isfinite(curves)):
            raise EngineError("curves contain non-finite values")
        if mean.shape != (len(self.grid),):
            raise EngineError("mean curve length does not match grid")
        if np.max(np.abs(mean - curves.mean(axis=0))) > 1e-12:
            raise EngineError("mean curve is not the column mean")
        curves.flags.writeable = False
        mean.flags.writeable = False
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "mean", mean)

    @property
    def units(self) -> int:
        return self.curves.shape[0]


def _curveset(kind: str, grid: Grid, curves: np.ndarray, metadata: dict[str, str]) -> CurveSet:
    curves = np.asarray(curves, dtype=np.float64)
    return CurveSet(kind, grid, curves, curves.mean(axis=0), metadata)


def _base_metadata(ecm: Ecm, intervention: str) -> dict[str, str]:
    return {
        "scm": ecm.scm.name,
        "predictor": ecm.predictor.describe(),
        "intervention": intervention,
    }


def _feature_matrix(columns: Mapping[str, np.ndarray], predictor: Predictor) -> np.ndarray:
    return np.column_stack([columns[f] for f in predictor.features])


def ice(predictor: Predictor, data: Dataset, var: str, grid: Grid) -> CurveSet:
    """Individual conditional expectation: vary one feature column,
    hold every other column at its observed values."""
    if var not in predictor.features:
        raise EngineError(f"{var!r} is not a predictor feature")
    base = np.column_stack([data.column(f) for f in predictor.features])
    pos = predictor.features.index(var)
    curves = np.empty((data.m, len(grid)))
    for gi, x in enumerate(grid.values):
        rows = base.copy()
        rows[:, pos] = x
        curves[:, gi] = predictor.predict(rows)
    return _curveset(
        "ICE",
        grid,
        curves,
        {"predictor": predictor.describe(), "intervention": f"set({var}=grid)"},
    )


def _counterfactual_predictions(
    ecm: Ecm,
    data: Dataset,
    noise: NoiseDataset,
    intervention: Intervention,
) -> np.ndarray:
    world = counterfactual_table(ecm.scm, data, noise, intervention)
    return ecm.predictor.predict(_feature_matrix(world.column_dict(), ecm.predictor))


def tdp(ecm: Ecm, data: Dataset, var: str, grid: Grid) -> CurveSet:
    """Total dependence: pin var at each grid value and let every
    downstream feature respond through the model."""
    ecm.scm.var_index(var)
    noise = abduct(ecm.scm, data)
    curves = np.empty((data.m, len(grid)))
    for gi, x in enumerate(grid.values):
        curves[:, gi] = _counterfactual_predictions(
            ecm, data, noise, Intervention.do({var: float(x)})
        )
    return _curveset("TDP", grid, curves, _base_metadata(ecm, f"do({var}=grid)"))


def pcdp(
    ecm: Ecm, data: Dataset, var: str, grid: Grid, control: Intervention
) -> CurveSet:
    """Partially controlled dependence: TDP with extra variables held
    at constants. An empty control reduces to TDP exactly."""
    ecm.scm.var_index(var)
    for action in control.actions:
        if not isinstance(action, SetConstant):
            raise EngineError("control interventions must set constants")
        if action.var == var:
            raise EngineError(f"control intervention touches {var!r}")
    control.validate(ecm.scm)
    noise = abduct(ecm.scm, data)
    curves = np.empty((data.m, len(grid)))
    for gi, x in enumerate(grid.values):
        actions = (SetConstant(var, float(x)),) + control.actions
        curves[:, gi] = _counterfactual_predictions(
            ecm, data, noise, Intervention(actions)
        )
    described = ", ".join(
        f"{a.var}={a.value!r}" for a in control.actions if isinstance(a, SetConstant)
    )
    kind_meta = _base_metadata(ecm, f"do({var}=grid), control({described})")
    return _curveset("PCDP", grid, curves, kind_meta)


def nddp(ecm: Ecm, data: Dataset, var: str, grid: Grid) -> CurveSet:
    """Natural direct dependence: children of var are severed and held
    at each unit's observed values, so only the direct edge moves. For
    a variable with no children this coincides with TDP."""
    ecm.scm.var_index(var)
    children = ecm.scm.children(var)
    noise = abduct(ecm.scm, data)
    pins = tuple(SetPerUnit(c, data.column(c)) for c in children)
    severs = tuple(SeverIncoming(c) for c in children)
    curves = np.empty((data.m, len(grid)))
    for gi, x in enumerate(grid.values):
        actions = severs + pins + (SetConstant(var, float(x)),)
        curves[:, gi] = _counterfactual_predictions(
            ecm, data, noise, Intervention(actions)
        )
    meta = _base_metadata(
        ecm, f"do({var}=grid), children held at observed values"
    )
    return _curveset("NDDP", grid, curves, meta)


def nidp(ecm: Ecm, data: Dataset, var: str, grid: Grid) -> CurveSet:
    """Natural indirect dependence in two stages. Stage one records each
    unit's counterfactual child values under do(var=x). Stage two severs
    the children, pins them to those values, and restores var to its
    observed per-unit value; only mediated responses remain. For a
    variable with no children every curve is constant at the factual
    prediction."""
    ecm.scm.var_index(var)
    children = ecm.scm.children(var)
    noise = abduct(ecm.scm, data)
    observed_var = data.column(var)
    severs = tuple(SeverIncoming(c) for c in children)
    curves = np.empty((data.m, len(grid)))
    for gi, x in enumerate(grid.values):
        stage1 = counterfactual_table(
            ecm.scm, data, noise, Intervention.do({var: float(x)})
        )
        child_pins = tuple(SetPerUnit(c, stage1.column(c)) for c in children)
        actions = severs + child_pins + (SetPerUnit(var, observed_var),)
        stage2 = counterfactual_table(ecm.scm, data, noise, Intervention(actions))
        curves[:, gi] = ecm.predictor.predict(
            _feature_matrix(stage2.column_dict(), ecm.predictor)
        )
    meta = _base_metadata(
        ecm, f"do({var}=grid) routed through children of {var}"
    )
    meta["notes"] = NIDP_NOTE
    return _curveset("NIDP", grid, curves, meta)


@dataclass(frozen=True)
class EffectDifference:
    """Per-unit and mean curve differences between two grid points."""

    per_unit: np.ndarray
    mean: float


def effect_difference(curve_set: CurveSet, x0: float, x1: float) -> EffectDifference:
    """Difference curve(x1) - curve(x0); both must be grid points."""
    values = curve_set.grid.values
    idx = []
    for x in (x0, x1):
        matches = np.nonzero(values == float(x))[0]
        if len(matches) == 0:
            raise EngineError(f"{x!r} is not a grid point")
        idx.append(int(matches[0]))
    per_unit = curve_set.curves[:, idx[1]] - curve_set.curves[:, idx[0]]
    return EffectDifference(per_unit, float(np.mean(per_unit)))


@dataclass(frozen=True)
class BandSet:
    """Mean curves of several candidate models plus their envelopes."""

    kind: str
    grid: Grid
    labels: tuple[str, ...]
    curves: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        if self.curves.shape != (len(self.labels), len(self.grid)):
            raise EngineError("band curves shape mismatch")
        if np.any(self.lower > self.upper):
            raise EngineError("band envelopes out of order")


def band_kinds() -> tuple[str, ...]:
    return ("TDP", "NDDP", "NIDP")


def uncertainty_band(
    ecms: Sequence[Ecm], data: Dataset, var: str, grid: Grid, kind: str = "TDP"
) -> BandSet:
    """Mean curves of the same plot kind under each candidate model,
    with pointwise min/max envelopes. All models must share a variable
    set; disagreement between the curves is structure uncertainty."""
    if len(ecms) < 2:
        raise EngineError("need at least two candidate models for a band")
    if kind not in band_kinds():
        raise EngineError(f"no band for plot kind {kind!r}")
    variable_sets = {frozenset(e.scm.variables) for e in ecms}
    if len(variable_sets) != 1:
        raise EngineError("candidate models must share a variable set")
    compute = {"TDP": tdp, "NDDP": nddp, "NIDP": nidp}[kind]
    labels = []
    rows = []
    for i, ecm in enumerate(ecms):
        label = ecm.scm.name
        if label in labels:
            label = f"{label}#{i}"
        labels.append(label)
        rows.append(compute(ecm, data, var, grid).mean)
    curves = np.vstack(rows)
    return BandSet(
        kind,
        grid,
        tuple(labels),
        curves,
        curves.min(axis=0),
        curves.max(axis=0),
    )
