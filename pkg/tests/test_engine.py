"""Plot computations over the explanatory causal model."""

import numpy as np
import pytest

from cdplot.engine import (
    NIDP_NOTE,
    PREDICTION_NODE,
    EngineError,
    Grid,
    band_kinds,
    build_ecm,
    effect_difference,
    ice,
    make_grid,
    nddp,
    nidp,
    pcdp,
    tdp,
    uncertainty_band,
)
from cdplot.expr import parse
from cdplot.predictors import ClosedFormPredictor, OlsPredictor, fit_ols
from cdplot.scm import (
    Dataset,
    Intervention,
    Mechanism,
    NoiseSpec,
    build_scm,
    sample,
)


def mediation_scm():
    return build_scm(
        "mediation",
        {
            "X": Mechanism((), None, NoiseSpec.normal(0.0, 1.0)),
            "M": Mechanism(("X",), parse("0.5*X^3"), NoiseSpec.normal(0.0, 1.0)),
        },
    )


def salary_scm():
    return build_scm(
        "salary",
        {
            "P": Mechanism((), None, NoiseSpec.uniform(0.0, 1.5)),
            "F": Mechanism(("P",), parse("2*P^3"), NoiseSpec.normal(0.0, 0.2)),
        },
    )


def correct_model():
    return ClosedFormPredictor("M^2 - 0.5*X^2", ("X", "M"))


def _dataset(**columns):
    names = tuple(columns)
    return Dataset(names, np.column_stack([np.asarray(columns[n], float) for n in names]))


# --- ecm and grid ----------------------------------------------------------


def test_build_ecm_wires_features():
    ecm = build_ecm(mediation_scm(), correct_model())
    assert ecm.node == PREDICTION_NODE
    assert ecm.predictor.features == ("X", "M")


def test_build_ecm_rejects_unknown_feature():
    with pytest.raises(EngineError, match="Q"):
        build_ecm(mediation_scm(), ClosedFormPredictor("Q", ("Q",)))


def test_build_ecm_rejects_reserved_name():
    scm = build_scm(
        "clash", {PREDICTION_NODE: Mechanism((), None, NoiseSpec.normal(0, 1))}
    )
    with pytest.raises(EngineError):
        build_ecm(scm, ClosedFormPredictor(PREDICTION_NODE, (PREDICTION_NODE,)))


def test_make_grid_ordinal_mode():
    col = np.tile(np.arange(1.0, 11.0), 30)
    data = _dataset(v=col)
    grid = make_grid(data, "v", resolution=40)
    assert np.array_equal(grid.values, np.arange(1.0, 11.0))


def test_make_grid_continuous_endpoints():
    data = _dataset(v=np.linspace(0.0, 1.5, 100))
    grid = make_grid(data, "v", resolution=4)
    assert np.allclose(grid.values, [0.0, 0.5, 1.0, 1.5])


def test_make_grid_rejects_resolution_one():
    data = _dataset(v=np.linspace(0.0, 1.0, 50))
    with pytest.raises(EngineError):
        make_grid(data, "v", resolution=1)


def test_make_grid_rejects_constant_continuous_column():
    # > 15 distinct values is impossible for a constant column, so the
    # failure must come from the degenerate range check in ordinal mode
    data = _dataset(v=np.full(20, 2.0))
    grid = make_grid(data, "v", resolution=10)
    assert np.array_equal(grid.values, [2.0])


def test_grid_must_increase():
    with pytest.raises(EngineError):
        Grid("x", np.array([1.0, 1.0]))
    with pytest.raises(EngineError):
        Grid("x", np.array([2.0, 1.0]))


# --- ice -------------------------------------------------------------------


def test_ice_constant_predictor():
    data = _dataset(X=np.zeros(3), M=np.zeros(3))
    model = ClosedFormPredictor("5", ("X", "M"))
    curves = ice(model, data, "X", Grid("X", np.array([0.0, 1.0])))
    assert np.all(curves.curves == 5.0)


def test_ice_mean_is_pdp():
    data = _dataset(X=np.array([0.0, 0.0]), M=np.array([1.0, 3.0]))
    model = ClosedFormPredictor("M", ("X", "M"))
    curves = ice(model, data, "X", Grid("X", np.array([0.0, 1.0])))
    assert np.all(curves.mean == 2.0)


def test_ice_value_from_closed_form():
    data = _dataset(X=np.array([0.3]), M=np.array([2.0]))
    curves = ice(correct_model(), data, "X", Grid("X", np.array([2.0])))
    assert curves.curves[0, 0] == 2.0


def test_ice_requires_var_to_be_a_feature():
    data = _dataset(X=np.zeros(2), M=np.zeros(2))
    model = ClosedFormPredictor("M", ("M",))
    with pytest.raises(EngineError):
        ice(model, data, "X", Grid("X", np.array([0.0])))


# --- tdp -------------------------------------------------------------------


def test_tdp_propagates_through_mediator():
    # unit with u_M = 0: at x=2, m_cf = 0.5*8 = 4, value 16 - 2 = 14
    scm = mediation_scm()
    data = _dataset(X=np.array([1.0]), M=np.array([0.5]))  # u_M = 0
    ecm = build_ecm(scm, correct_model())
    curves = tdp(ecm, data, "X", Grid("X", np.array([2.0])))
    assert abs(curves.curves[0, 0] - 14.0) < 1e-12


def test_tdp_factual_anchoring():
    scm = mediation_scm()
    data, _ = sample(scm, 20, seed=6)
    ecm = build_ecm(scm, correct_model())
    x_obs = data.column("X")
    unit = 7
    grid = Grid("X", np.sort(np.append(np.linspace(-2, 2, 9), x_obs[unit])))
    curves = tdp(ecm, data, "X", grid)
    gi = int(np.nonzero(grid.values == x_obs[unit])[0][0])
    factual = correct_model().predict(
        np.array([[x_obs[unit], data.column("M")[unit]]])
    )[0]
    assert abs(curves.curves[unit, gi] - factual) < 1e-9


def test_tdp_equals_ice_without_edges():
    scm = build_scm(
        "flat",
        {
            "X": Mechanism((), None, NoiseSpec.normal(0.0, 1.0)),
            "M": Mechanism((), None, NoiseSpec.normal(0.0, 1.0)),
        },
    )
    data, _ = sample(scm, 30, seed=2)
    ecm = build_ecm(scm, correct_model())
    grid = make_grid(data, "X", resolution=7)
    total = tdp(ecm, data, "X", grid)
    conditional = ice(correct_model(), data, "X", grid)
    assert np.max(np.abs(total.curves - conditional.curves)) < 1e-12


# --- pcdp ------------------------------------------------------------------


def test_pcdp_mediator_pinned_to_zero():
    scm = mediation_scm()
    data, _ = sample(scm, 10, seed=1)
    ecm = build_ecm(scm, correct_model())
    curves = pcdp(
        ecm, data, "X", Grid("X", np.array([2.0])), Intervention.do({"M": 0.0})
    )
    assert np.max(np.abs(curves.curves - (-2.0))) < 1e-12


def test_pcdp_empty_control_is_tdp():
    scm = mediation_scm()
    data, _ = sample(scm, 15, seed=9)
    ecm = build_ecm(scm, correct_model())
    grid = make_grid(data, "X", resolution=5)
    a = pcdp(ecm, data, "X", grid, Intervention(()))
    b = tdp(ecm, data, "X", grid)
    assert np.array_equal(a.curves, b.curves)


def test_pcdp_all_controlled_linear_is_affine():
    scm = build_scm(
        "lin",
        {
            "X": Mechanism((), None, NoiseSpec.normal(0.0, 1.0)),
            "M": Mechanism(("X",), parse("2*X"), NoiseSpec.normal(0.0, 1.0)),
        },
    )
    data, _ = sample(scm, 12, seed=3)
    model = OlsPredictor(("X", "M"), 1, ((0, 0), (1, 0), (0, 1)), np.array([1.0, 3.0, -2.0]))
    ecm = build_ecm(scm, model)
    grid = Grid("X", np.array([0.0, 1.0, 2.0]))
    curves = pcdp(ecm, data, "X", grid, Intervention.do({"M": 0.5}))
    slopes = np.diff(curves.curves, axis=1)
    assert np.max(np.abs(slopes - 3.0)) < 1e-12


def test_pcdp_control_may_not_touch_var():
    scm = mediation_scm()
    data, _ = sample(scm, 5, seed=0)
    ecm = build_ecm(scm, correct_model())
    with pytest.raises(EngineError, match="X"):
        pcdp(ecm, data, "X", Grid("X", np.array([0.0])), Intervention.do({"X": 1.0}))


def test_pcdp_control_must_be_constants():
    from cdplot.scm import SeverIncoming

    scm = mediation_scm()
    data, _ = sample(scm, 5, seed=0)
    ecm = build_ecm(scm, correct_model())
    with pytest.raises(EngineError, match="constant"):
        pcdp(
            ecm,
            data,
            "X",
            Grid("X", np.array([0.0])),
            Intervention((SeverIncoming("M"),)),
        )


# --- nddp ------------------------------------------------------------------


def test_nddp_equals_ice_on_mediation():
    scm = mediation_scm()
    data, _ = sample(scm, 40, seed=5)
    ecm = build_ecm(scm, correct_model())
    grid = make_grid(data, "X", resolution=11)
    direct = nddp(ecm, data, "X", grid)
    conditional = ice(correct_model(), data, "X", grid)
    assert np.max(np.abs(direct.curves - conditional.curves)) < 1e-9


def test_nddp_linear_model_slope():
    # f = 1 + 3P - 2F: with F pinned at observed values the mean curve
    # is affine in the grid with slope exactly 3
    scm = salary_scm()
    data, _ = sample(scm, 25, seed=8)
    model = OlsPredictor(("P", "F"), 1, ((0, 0), (1, 0), (0, 1)), np.array([1.0, 3.0, -2.0]))
    ecm = build_ecm(scm, model)
    grid = Grid("P", np.array([0.0, 0.5, 1.0, 1.5]))
    curves = nddp(ecm, data, "P", grid)
    slopes = np.diff(curves.mean) / np.diff(grid.values)
    assert np.max(np.abs(slopes - 3.0)) < 1e-12


def test_nddp_without_children_is_tdp():
    scm = mediation_scm()
    data, _ = sample(scm, 10, seed=4)
    ecm = build_ecm(scm, correct_model())
    grid = make_grid(data, "M", resolution=5)
    a = nddp(ecm, data, "M", grid)
    b = tdp(ecm, data, "M", grid)
    assert np.array_equal(a.curves, b.curves)


# --- nidp ------------------------------------------------------------------


def test_nidp_two_stage_value():
    # unit (x=1, u_M=1): stage 1 at grid 0 gives m_cf = 1; stage 2
    # restores x=1 and pins M=1, value 1 - 0.5 = 0.5
    scm = mediation_scm()
    data = _dataset(X=np.array([1.0]), M=np.array([1.5]))  # u_M = 1
    ecm = build_ecm(scm, correct_model())
    curves = nidp(ecm, data, "X", Grid("X", np.array([0.0])))
    assert abs(curves.curves[0, 0] - 0.5) < 1e-12


def test_nidp_without_children_is_flat_at_factual():
    scm = mediation_scm()
    data, _ = sample(scm, 12, seed=10)
    ecm = build_ecm(scm, correct_model())
    grid = make_grid(data, "M", resolution=6)
    curves = nidp(ecm, data, "M", grid)
    factual = correct_model().predict(
        np.column_stack([data.column("X"), data.column("M")])
    )
    for gi in range(len(grid)):
        assert np.max(np.abs(curves.curves[:, gi] - factual)) < 1e-9


def test_nidp_metadata_records_the_restore_choice():
    scm = mediation_scm()
    data, _ = sample(scm, 5, seed=0)
    ecm = build_ecm(scm, correct_model())
    curves = nidp(ecm, data, "X", Grid("X", np.array([0.0, 1.0])))
    assert curves.metadata["notes"] == NIDP_NOTE


def test_affine_decomposition():
    # with affine f and affine mechanisms the centered TDP splits into
    # centered NDDP plus centered NIDP per unit
    scm = build_scm(
        "affine",
        {
            "X": Mechanism((), None, NoiseSpec.normal(0.0, 1.0)),
            "M": Mechanism(("X",), parse("2*X + 1"), NoiseSpec.normal(0.0, 0.5)),
        },
    )
    data, _ = sample(scm, 30, seed=14)
    model = OlsPredictor(("X", "M"), 1, ((0, 0), (1, 0), (0, 1)), np.array([0.5, -1.0, 2.0]))
    ecm = build_ecm(scm, model)
    grid = Grid("X", np.linspace(-2, 2, 9))
    total = tdp(ecm, data, "X", grid).curves
    direct = nddp(ecm, data, "X", grid).curves
    indirect = nidp(ecm, data, "X", grid).curves
    center = lambda c: c - c[:, :1]
    residual = center(total) - (center(direct) + center(indirect))
    assert np.max(np.abs(residual)) < 1e-9


# --- invariants ------------------------------------------------------------


def test_mean_matches_recomputed_column_mean():
    scm = mediation_scm()
    data, _ = sample(scm, 33, seed=17)
    ecm = build_ecm(scm, correct_model())
    grid = make_grid(data, "X", resolution=9)
    for curves in (
        tdp(ecm, data, "X", grid),
        nddp(ecm, data, "X", grid),
        nidp(ecm, data, "X", grid),
        ice(correct_model(), data, "X", grid),
    ):
        assert np.max(np.abs(curves.mean - curves.curves.mean(axis=0))) < 1e-12


def test_unit_order_independence():
    scm = mediation_scm()
    data, _ = sample(scm, 20, seed=19)
    ecm = build_ecm(scm, correct_model())
    grid = make_grid(data, "X", resolution=7)
    baseline = tdp(ecm, data, "X", grid).curves
    perm = np.random.default_rng(0).permutation(20)
    shuffled = Dataset(data.columns, data.values[perm])
    permuted = tdp(ecm, shuffled, "X", grid).curves
    assert np.array_equal(permuted, baseline[perm])


def test_grid_splitting_is_bitwise_stable():
    scm = mediation_scm()
    data, _ = sample(scm, 20, seed=19)
    ecm = build_ecm(scm, correct_model())
    values = np.linspace(-2, 2, 8)
    whole = tdp(ecm, data, "X", Grid("X", values)).curves
    left = tdp(ecm, data, "X", Grid("X", values[:4])).curves
    right = tdp(ecm, data, "X", Grid("X", values[4:])).curves
    assert np.array_equal(whole, np.hstack([left, right]))


# --- effect differences ----------------------------------------------------


def test_effect_difference_zero_for_same_point():
    scm = mediation_scm()
    data, _ = sample(scm, 8, seed=3)
    ecm = build_ecm(scm, correct_model())
    curves = tdp(ecm, data, "X", Grid("X", np.array([0.0, 1.0])))
    diff = effect_difference(curves, 1.0, 1.0)
    assert np.all(diff.per_unit == 0.0) and diff.mean == 0.0


def test_effect_difference_controlled_direct():
    scm = mediation_scm()
    data, _ = sample(scm, 10, seed=2)
    ecm = build_ecm(scm, correct_model())
    curves = pcdp(
        ecm,
        data,
        "X",
        Grid("X", np.array([0.0, 1.0, 2.0])),
        Intervention.do({"M": 0.0}),
    )
    diff = effect_difference(curves, 0.0, 2.0)
    assert abs(diff.mean - (-2.0)) < 1e-9
    assert np.max(np.abs(diff.per_unit - (-2.0))) < 1e-9


def test_effect_difference_linear_slope():
    scm = salary_scm()
    data, _ = sample(scm, 6, seed=4)
    model = OlsPredictor(("P", "F"), 1, ((0, 0), (1, 0), (0, 1)), np.array([0.0, 4.0, 0.0]))
    ecm = build_ecm(scm, model)
    curves = pcdp(
        ecm, data, "P", Grid("P", np.array([0.0, 1.0])), Intervention.do({"F": 1.0})
    )
    diff = effect_difference(curves, 0.0, 1.0)
    assert np.max(np.abs(diff.per_unit - 4.0)) < 1e-12


def test_effect_difference_requires_grid_points():
    scm = mediation_scm()
    data, _ = sample(scm, 4, seed=1)
    ecm = build_ecm(scm, correct_model())
    curves = tdp(ecm, data, "X", Grid("X", np.array([0.0, 1.0])))
    with pytest.raises(EngineError):
        effect_difference(curves, 0.0, 0.5)


# --- uncertainty bands -----------------------------------------------------


def _salary_full():
    return build_scm(
        "salary",
        {
            "P": Mechanism((), None, NoiseSpec.uniform(0.0, 1.5)),
            "F": Mechanism(("P",), parse("2*P^3"), NoiseSpec.normal(0.0, 0.2)),
            "S": Mechanism(("P", "F"), parse("F - P^2"), NoiseSpec.normal(0.0, 0.2)),
        },
    )


def _salary_independent():
    return build_scm(
        "salary_independent",
        {
            "P": Mechanism((), None, NoiseSpec.uniform(0.0, 1.5)),
            "F": Mechanism((), None, NoiseSpec.normal(1.6875, 1.9239)),
            "S": Mechanism(("P", "F"), parse("F - P^2"), NoiseSpec.normal(0.0, 0.2)),
        },
    )


def test_identical_models_give_zero_width_band():
    data, _ = sample(_salary_full(), 30, seed=6)
    model = fit_ols(data, "S", ("P", "F"), degree=1)
    ecms = [build_ecm(_salary_full(), model), build_ecm(_salary_full(), model)]
    grid = make_grid(data, "P", resolution=9)
    band = uncertainty_band(ecms, data, "P", grid, "TDP")
    assert np.max(band.upper - band.lower) == 0.0
    assert band.labels == ("salary", "salary#1")


def test_band_separates_mediation_from_independence():
    data, _ = sample(_salary_full(), 300, seed=11)
    model = fit_ols(data, "S", ("P", "F"), degree=1)
    ecms = [build_ecm(_salary_full(), model), build_ecm(_salary_independent(), model)]
    grid = Grid("P", np.array([0.0, 0.35, 0.7, 1.05, 1.4]))
    total_band = uncertainty_band(ecms, data, "P", grid, "TDP")
    direct_band = uncertainty_band(ecms, data, "P", grid, "NDDP")
    assert np.max(total_band.upper - total_band.lower) > 0.0
    assert np.max(direct_band.upper - direct_band.lower) < 1e-9
    # at P=1.4 the mediated funding response puts the mediation curve on top
    assert total_band.curves[0, -1] > total_band.curves[1, -1]


def test_band_requires_shared_variables():
    data, _ = sample(_salary_full(), 10, seed=0)
    model = fit_ols(data, "S", ("P", "F"), degree=1)
    ecms = [build_ecm(_salary_full(), model), build_ecm(salary_scm(), model)]
    with pytest.raises(EngineError, match="variable"):
        uncertainty_band(ecms, data, "P", make_grid(data, "P", 5), "TDP")


def test_band_rejects_single_model_and_bad_kind():
    data, _ = sample(_salary_full(), 10, seed=0)
    model = fit_ols(data, "S", ("P", "F"), degree=1)
    ecm = build_ecm(_salary_full(), model)
    grid = make_grid(data, "P", 5)
    with pytest.raises(EngineError):
        uncertainty_band([ecm], data, "P", grid, "TDP")
    with pytest.raises(EngineError):
        uncertainty_band([ecm, ecm], data, "P", grid, "ICE")
    assert band_kinds() == ("TDP", "NDDP", "NIDP")
