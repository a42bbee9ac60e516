"""Causal dependence plots for black-box predictors.

Given a fitted predictor and a structural causal model over its inputs,
this package computes how the prediction responds to interventions on a
chosen variable: the total response, the response with some variables
held fixed, and the direct / mediated decomposition of the total
response. Curves are exported as CSV and deterministic SVG.
"""

from .discovery import (
    Cpdag,
    Dag,
    DagEnumeration,
    DiscoveryError,
    Skeleton,
    cpdag_from_text,
    cpdag_to_text,
    enumerate_dags,
    fisher_z_test,
    fit_anm,
    orient_cpdag,
    pc_skeleton,
)
from .engine import (
    BandSet,
    CurveSet,
    Ecm,
    EffectDifference,
    EngineError,
    Grid,
    PREDICTION_NODE,
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
from .errors import CdpError, ConfigError, DataError
from .expr import (
    BinOp,
    Call,
    Const,
    ExpressionError,
    Neg,
    ParseError,
    Var,
    evaluate,
    evaluate_batch,
    parse,
    to_source,
)
from .predictors import (
    ClosedFormPredictor,
    ExternalPredictor,
    ExternalPredictorError,
    ForestConfig,
    ForestPredictor,
    OlsPredictor,
    Predictor,
    PredictorError,
    fit_forest,
    fit_ols,
    load_predictor,
    open_external,
    save_predictor,
)
from .render import PlotStyle, export_band_csv, export_csv, import_csv, render_band, render_curves
from .scm import (
    Dataset,
    Intervention,
    Mechanism,
    NoiseDataset,
    NoiseSpec,
    ReplaceMechanism,
    Scm,
    ScmError,
    SetConstant,
    SetPerUnit,
    SeverIncoming,
    SeverOutgoing,
    abduct,
    apply_intervention,
    build_scm,
    counterfactual,
    counterfactual_table,
    sample,
)

__version__ = "0.1.0"

__all__ = [
    "BandSet",
    "BinOp",
    "Call",
    "CdpError",
    "ClosedFormPredictor",
    "ConfigError",
    "Const",
    "Cpdag",
    "CurveSet",
    "Dag",
    "DagEnumeration",
    "DataError",
    "Dataset",
    "DiscoveryError",
    "Ecm",
    "EffectDifference",
    "EngineError",
    "ExpressionError",
    "ExternalPredictor",
    "ExternalPredictorError",
    "ForestConfig",
    "ForestPredictor",
    "Grid",
    "Intervention",
    "Mechanism",
    "Neg",
    "NoiseDataset",
    "NoiseSpec",
    "OlsPredictor",
    "PREDICTION_NODE",
    "ParseError",
    "PlotStyle",
    "Predictor",
    "PredictorError",
    "ReplaceMechanism",
    "Scm",
    "ScmError",
    "SetConstant",
    "SetPerUnit",
    "SeverIncoming",
    "SeverOutgoing",
    "Skeleton",
    "Var",
    "abduct",
    "apply_intervention",
    "band_kinds",
    "build_ecm",
    "counterfactual",
    "counterfactual_table",
    "cpdag_from_text",
    "cpdag_to_text",
    "effect_difference",
    "enumerate_dags",
    "evaluate",
    "evaluate_batch",
    "export_band_csv",
    "export_csv",
    "fisher_z_test",
    "fit_anm",
    "fit_forest",
    "fit_ols",
    "ice",
    "import_csv",
    "load_predictor",
    "make_grid",
    "nddp",
    "nidp",
    "open_external",
    "orient_cpdag",
    "parse",
    "pc_skeleton",
    "pcdp",
    "render_band",
    "render_curves",
    "sample",
    "save_predictor",
    "tdp",
    "to_source",
    "uncertainty_band",
]
