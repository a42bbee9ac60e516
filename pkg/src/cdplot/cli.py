"""Command-line interface.

Subcommands: simulate, discover, fit, explain, render, run. The run
subcommand drives the whole pipeline from a JSON config and writes one
CSV and one SVG per (predictor, variable, plot kind) plus a manifest.

Model spec files are line oriented; '#' starts a comment::

    scm salary
    var P { noise = uniform(0.0, 1.5) }
    var F { parents = [P]; eq = "2*P^3"; noise = normal(0.0, 0.2) }

Root variables omit parents and eq. Noise is one of normal(mean, sd),
uniform(low, high), point(value).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 compute
error, 5 external predictor error. On failure, files already written
by the failing invocation are removed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import re
import sys
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import discovery as disc
from . import engine, render
from .errors import CdpError, ConfigError, DataError
from .expr import parse as parse_expression
from .expr import to_source
from .predictors import (
    ExternalPredictorError,
    ForestConfig,
    Predictor,
    fit_forest,
    fit_ols,
    load_predictor,
    open_external,
    save_predictor,
    ClosedFormPredictor,
)
from .scm import (
    Dataset,
    Intervention,
    Mechanism,
    NoiseDataset,
    NoiseSpec,
    Scm,
    SetConstant,
    build_scm,
    sample,
)

__all__ = [
    "load_scm_spec",
    "main",
    "read_dataset_csv",
    "run_pipeline",
    "save_scm_spec",
    "write_dataset_csv",
]

PLOT_KINDS = ("ICE", "PDP", "TDP", "PCDP", "NDDP", "NIDP")

_SCM_HEADER_RE = re.compile(r"scm\s+([A-Za-z_][A-Za-z0-9_]*)\s*$")
_VAR_RE = re.compile(r"var\s+([A-Za-z_][A-Za-z0-9_]*)\s*\{(.*)\}\s*$")
_NOISE_RE = re.compile(
    r"(normal|uniform|point)\s*\(\s*([^,()]+?)\s*(?:,\s*([^,()]+?)\s*)?\)\s*$"
)


# --- model spec files ------------------------------------------------------


def _strip_comment(line: str) -> str:
    """Drop a '#' comment, ignoring '#' inside double quotes."""
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _parse_noise(text: str, lineno: int) -> NoiseSpec:
    match = _NOISE_RE.match(text.strip())
    if match is None:
        raise ConfigError(f"line {lineno}: bad noise spec {text.strip()!r}")
    kind, first, second = match.group(1), match.group(2), match.group(3)
    try:
        p1 = float(first)
        p2 = float(second) if second is not None else None
    except ValueError:
        raise ConfigError(f"line {lineno}: bad noise parameter in {text.strip()!r}") from None
    try:
        if kind == "point":
            if p2 is not None:
                raise ConfigError(f"line {lineno}: point() takes one parameter")
            return NoiseSpec.point(p1)
        if p2 is None:
            raise ConfigError(f"line {lineno}: {kind}() takes two parameters")
        if kind == "normal":
            return NoiseSpec.normal(p1, p2)
        return NoiseSpec.uniform(p1, p2)
    except CdpError as exc:
        raise ConfigError(f"line {lineno}: {exc}") from None


def _parse_var_body(body: str, lineno: int) -> Mechanism:
    parents: tuple[str, ...] = ()
    expression = None
    noise = None
    for chunk in body.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        key, _, value = chunk.partition("=")
        key = key.strip()
        value = value.strip()
        if not value:
            raise ConfigError(f"line {lineno}: bad field {chunk!r}")
        if key == "parents":
            if not (value.startswith("[") and value.endswith("]")):
                raise ConfigError(f"line {lineno}: parents must be a [..] list")
            inner = value[1:-1].strip()
            parents = tuple(p.strip() for p in inner.split(",")) if inner else ()
        elif key == "eq":
            if not (value.startswith('"') and value.endswith('"') and len(value) >= 2):
                raise ConfigError(f"line {lineno}: eq must be a quoted string")
            try:
                expression = parse_expression(value[1:-1])
            except CdpError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
        elif key == "noise":
            noise = _parse_noise(value, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
    if noise is None:
        raise ConfigError(f"line {lineno}: variable is missing a noise field")
    if (expression is None) != (len(parents) == 0):
        raise ConfigError(
            f"line {lineno}: parents and eq must be given together"
        )
    try:
        return Mechanism(parents, expression, noise)
    except CdpError as exc:
        raise ConfigError(f"line {lineno}: {exc}") from None


def load_scm_spec(path: str | Path) -> Scm:
    """Parse and validate a model spec file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read model spec {path}: {exc}") from None
    name = None
    mechanisms: dict[str, Mechanism] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if name is None:
            match = _SCM_HEADER_RE.match(line)
            if match is None:
                raise ConfigError(
                    f"line {lineno}: expected 'scm <name>', got {line!r}"
                )
            name = match.group(1)
            continue
        match = _VAR_RE.match(line)
        if match is None:
            raise ConfigError(f"line {lineno}: expected a var declaration, got {line!r}")
        var = match.group(1)
        if var in mechanisms:
            raise ConfigError(f"line {lineno}: duplicate variable {var!r}")
        mechanisms[var] = _parse_var_body(match.group(2), lineno)
    if name is None:
        raise ConfigError(f"{path}: no 'scm <name>' header")
    if not mechanisms:
        raise ConfigError(f"{path}: no variables declared")
    try:
        return build_scm(name, mechanisms)
    except CdpError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def save_scm_spec(scm: Scm) -> str:
    """Spec text for a plain model; load_scm_spec inverts it exactly."""
    lines = [f"scm {scm.name}"]
    for var in scm.variables:
        mech = scm.mechanisms[var]
        fields = []
        if mech.parents:
            fields.append(f"parents = [{', '.join(mech.parents)}]")
        if mech.expression is not None:
            fields.append(f'eq = "{to_source(mech.expression)}"')
        fields.append(f"noise = {mech.noise.to_text()}")
        lines.append(f"var {var} {{ {'; '.join(fields)} }}")
    return "\n".join(lines) + "\n"


# --- dataset files ---------------------------------------------------------


def _fmt17(value: float) -> str:
    return format(float(value), ".17g")


def write_dataset_csv(data: Dataset) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(data.columns)
    for row in data.values:
        writer.writerow([_fmt17(v) for v in row])
    return out.getvalue()


def read_dataset_csv(
    path: str | Path, label_map: Mapping[str, float] | None = None
) -> Dataset:
    """Read a comma-separated table of numbers. label_map translates
    non-numeric cells (for example benign -> 2)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    matrix = np.empty((len(rows) - 1, len(header)))
    label_map = dict(label_map or {})
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {r} has {len(row)} cells, expected {len(header)}"
            )
        for c, cell in enumerate(row):
            cell = cell.strip()
            try:
                value = float(cell)
            except ValueError:
                if cell in label_map:
                    value = float(label_map[cell])
                else:
                    raise DataError(
                        f"{path}: row {r}, column {header[c]!r}: "
                        f"cannot read {cell!r} as a number"
                    ) from None
            if not math.isfinite(value):
                raise DataError(
                    f"{path}: row {r}, column {header[c]!r}: non-finite value"
                )
            matrix[r - 2, c] = value
    return Dataset(tuple(header), matrix)


# --- run configuration -----------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SimulateBlock:
    n: int
    seed: int


@dataclasses.dataclass(frozen=True)
class DiscoveryBlock:
    alpha: float = 0.05
    max_cond: int = 3
    degree: int = 3
    variables: tuple[str, ...] = ()
    cap: int = 64


@dataclasses.dataclass(frozen=True)
class PredictorBlock:
    label: str
    kind: str
    target: str | None
    features: tuple[str, ...]
    params: dict


@dataclasses.dataclass(frozen=True)
class RunConfig:
    raw: dict
    scm_path: Path | None
    discovery: DiscoveryBlock | None
    data_source: Path | SimulateBlock
    explain_data: Path | None
    predictors: tuple[PredictorBlock, ...]
    variables: tuple[str, ...]
    plots: tuple[str, ...]
    grid_resolution: int
    controls: dict[str, float]
    band_scms: tuple[Path, ...]
    output_dir: Path
    seed: int
    label_map: dict[str, float]


def _config_predictors(raw: dict) -> tuple[PredictorBlock, ...]:
    blocks = raw.get("predictors")
    if blocks is None:
        single = raw.get("predictor")
        if single is None:
            raise ConfigError("config needs a predictor or predictors entry")
        blocks = [single]
    if not isinstance(blocks, list) or not blocks:
        raise ConfigError("predictors must be a nonempty list")
    out = []
    labels = set()
    for i, block in enumerate(blocks):
        if not isinstance(block, dict):
            raise ConfigError("each predictor entry must be an object")
        kind = block.get("kind")
        if kind not in ("ols", "forest", "closed_form", "external"):
            raise ConfigError(f"unknown predictor kind {kind!r}")
        label = str(block.get("label", kind if len(blocks) == 1 else f"{kind}{i}"))
        if label in labels:
            raise ConfigError(f"duplicate predictor label {label!r}")
        labels.add(label)
        target = block.get("target")
        features = tuple(block.get("features", ()))
        if kind in ("ols", "forest") and target is None:
            raise ConfigError(f"predictor {label!r} needs a target")
        if kind in ("closed_form", "external") and not features:
            raise ConfigError(f"predictor {label!r} needs explicit features")
        params = {
            k: v
            for k, v in block.items()
            if k not in ("label", "kind", "target", "features")
        }
        out.append(PredictorBlock(label, kind, target, features, params))
    return tuple(out)


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a run config. Paths inside the file resolve
    relative to the file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    raw = dict(raw)
    raw.update(overrides or {})
    base = path.parent

    has_scm = "scm" in raw
    has_discovery = "discovery" in raw
    if has_scm == has_discovery:
        raise ConfigError("config needs exactly one of 'scm' and 'discovery'")
    scm_path = (base / raw["scm"]) if has_scm else None
    discovery = None
    if has_discovery:
        block = raw["discovery"]
        if not isinstance(block, dict):
            raise ConfigError("'discovery' must be an object")
        try:
            discovery = DiscoveryBlock(
                alpha=float(block.get("alpha", 0.05)),
                max_cond=int(block.get("max_cond", 3)),
                degree=int(block.get("degree", 3)),
                variables=tuple(block.get("variables", ())),
                cap=int(block.get("cap", 64)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad discovery block: {exc}") from None

    data_raw = raw.get("data")
    if data_raw is None:
        raise ConfigError("config needs a 'data' entry")
    if isinstance(data_raw, str):
        data_source: Path | SimulateBlock = base / data_raw
    elif isinstance(data_raw, dict) and "simulate" in data_raw:
        sim = data_raw["simulate"]
        if has_discovery:
            raise ConfigError("simulated data requires an 'scm' entry")
        try:
            data_source = SimulateBlock(n=int(sim["n"]), seed=int(sim.get("seed", raw.get("seed", 0))))
        except (KeyError, TypeError, ValueError):
            raise ConfigError("bad simulate block; need {'n': int}") from None
        if data_source.n < 1:
            raise ConfigError("simulate n must be positive")
    else:
        raise ConfigError("'data' must be a path or a {'simulate': ...} object")

    explain_data = raw.get("explain_data")
    variables = tuple(raw.get("variables", ()))
    if not variables:
        raise ConfigError("config needs a nonempty 'variables' list")
    plots = tuple(raw.get("plots", ("TDP",)))
    for kind in plots:
        if kind not in PLOT_KINDS:
            raise ConfigError(f"unknown plot kind {kind!r}")
    if not plots:
        raise ConfigError("'plots' must be nonempty")
    resolution = int(raw.get("grid_resolution", engine.GRID_RESOLUTION_DEFAULT))
    if resolution < 2:
        raise ConfigError("grid_resolution must be at least 2")
    controls_raw = raw.get("controls", {})
    if not isinstance(controls_raw, dict):
        raise ConfigError("'controls' must be an object")
    try:
        controls = {str(k): float(v) for k, v in controls_raw.items()}
    except (TypeError, ValueError):
        raise ConfigError("control values must be numbers") from None
    band_scms = tuple(base / p for p in raw.get("band_scms", ()))
    if len(band_scms) == 1:
        raise ConfigError("'band_scms' needs at least two model specs")
    label_map_raw = raw.get("label_map", {})
    try:
        label_map = {str(k): float(v) for k, v in label_map_raw.items()}
    except (TypeError, ValueError, AttributeError):
        raise ConfigError("'label_map' must map strings to numbers") from None

    return RunConfig(
        raw=raw,
        scm_path=scm_path,
        discovery=discovery,
        data_source=data_source,
        explain_data=(base / explain_data) if explain_data else None,
        predictors=_config_predictors(raw),
        variables=variables,
        plots=plots,
        grid_resolution=resolution,
        controls=controls,
        band_scms=band_scms,
        output_dir=Path(raw.get("output_dir", "out")),
        seed=int(raw.get("seed", 0)),
        label_map=label_map,
    )


def _config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --- predictors from config ------------------------------------------------


def _build_predictor(
    block: PredictorBlock, data: Dataset, default_features: tuple[str, ...]
) -> Predictor:
    features = block.features or tuple(
        f for f in default_features if f != block.target
    )
    if block.kind == "ols":
        return fit_ols(data, block.target, features, int(block.params.get("degree", 1)))
    if block.kind == "forest":
        config = ForestConfig(
            n_trees=int(block.params.get("trees", 100)),
            max_depth=int(block.params.get("depth", 8)),
            min_leaf=int(block.params.get("min_leaf", 5)),
            features_per_split=block.params.get("features_per_split"),
            bootstrap=bool(block.params.get("bootstrap", True)),
            seed=int(block.params.get("seed", 0)),
        )
        return fit_forest(data, block.target, features, config)
    if block.kind == "closed_form":
        expression = block.params.get("expression")
        if not expression:
            raise ConfigError(f"predictor {block.label!r} needs an expression")
        return ClosedFormPredictor(str(expression), features)
    command = block.params.get("command")
    if not command:
        raise ConfigError(f"predictor {block.label!r} needs a command")
    return open_external(command, features, float(block.params.get("timeout", 30.0)))


# --- the pipeline ----------------------------------------------------------


class _Outputs:
    """Tracks files written so a failed run leaves nothing behind."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.written: list[Path] = []

    def write(self, name: str, text: str) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        target = self.directory / name
        target.write_text(text, encoding="utf-8")
        self.written.append(target)

    def discard_all(self) -> None:
        for target in self.written:
            try:
                target.unlink()
            except OSError:
                pass


def _strip_variable(dag: disc.Dag, drop: set[str]) -> disc.Dag:
    keep = tuple(v for v in dag.variables if v not in drop)
    edges = frozenset(
        (a, b) for a, b in dag.edges if a not in drop and b not in drop
    )
    return disc.Dag(keep, edges)


def run_pipeline(config: RunConfig, config_label: str = "config") -> dict:
    """Execute a run config; returns the manifest dict."""
    outputs = _Outputs(config.output_dir)
    try:
        return _run_stages(config, config_label, outputs)
    except BaseException:
        outputs.discard_all()
        raise


def _run_stages(config: RunConfig, config_label: str, outputs: _Outputs) -> dict:
    inputs: dict = {"config": config_label}
    deviations: list[str] = []

    # data
    scm = load_scm_spec(config.scm_path) if config.scm_path else None
    if isinstance(config.data_source, SimulateBlock):
        data, _ = sample(scm, config.data_source.n, config.data_source.seed)
        inputs["data"] = f"simulate(n={config.data_source.n}, seed={config.data_source.seed})"
    else:
        data = read_dataset_csv(config.data_source, config.label_map)
        inputs["data"] = str(config.data_source)
    explain_data = data
    if config.explain_data is not None:
        explain_data = read_dataset_csv(config.explain_data, config.label_map)
        inputs["explain_data"] = str(config.explain_data)

    # structure
    if config.discovery is not None:
        block = config.discovery
        names = block.variables or data.columns
        for name in names:
            if name not in data.columns:
                raise DataError(f"discovery variable {name!r} not in the data")
        subset = Dataset(
            tuple(names), np.column_stack([data.column(n) for n in names])
        )
        skeleton, sepsets = disc.pc_skeleton(subset, block.alpha, block.max_cond)
        cpdag = disc.orient_cpdag(skeleton, sepsets)
        enumeration = disc.enumerate_dags(cpdag, block.cap)
        if not enumeration.dags:
            raise disc.DiscoveryError("no acyclic orientation of the discovered graph")
        chosen = enumeration.dags[0]
        targets = {b.target for b in config.predictors if b.target}
        predictor_dag = _strip_variable(chosen, targets)
        scm = disc.fit_anm(predictor_dag, data, block.degree)
        inputs["discovery"] = {
            "cpdag": disc.cpdag_to_text(cpdag).splitlines(),
            "chosen_dag": sorted(f"{a} -> {b}" for a, b in chosen.edges),
            "candidates": len(enumeration.dags),
            "truncated": enumeration.truncated,
        }
    else:
        inputs["scm"] = str(config.scm_path)
        for var in scm.variables:
            if var not in data.columns:
                raise DataError(f"model variable {var!r} missing from the data")

    band_scms = [load_scm_spec(p) for p in config.band_scms]
    if band_scms:
        inputs["band_scms"] = [str(p) for p in config.band_scms]

    # predictors
    fitted: list[tuple[PredictorBlock, Predictor]] = []
    for block in config.predictors:
        fitted.append((block, _build_predictor(block, data, scm.variables)))

    # plots
    multiple = len(fitted) > 1
    control = Intervention(
        tuple(SetConstant(v, x) for v, x in sorted(config.controls.items()))
    )
    try:
        for block, predictor in fitted:
            prefix = f"{block.label}_" if multiple else ""
            ecm = None
            if any(kind not in ("ICE", "PDP") for kind in config.plots):
                ecm = engine.build_ecm(scm, predictor)
            for var in config.variables:
                grid = engine.make_grid(explain_data, var, config.grid_resolution)
                for kind in config.plots:
                    curve_set = _compute_plot(
                        kind, ecm, predictor, explain_data, var, grid, control
                    )
                    if kind == "NIDP":
                        note = curve_set.metadata.get("notes")
                        if note and note not in deviations:
                            deviations.append(note)
                    stem = f"{prefix}{var}_{kind.lower()}"
                    outputs.write(f"{stem}.csv", render.export_csv(curve_set))
                    outputs.write(f"{stem}.svg", render.render_curves(curve_set))
                if band_scms:
                    candidates = [engine.build_ecm(s, predictor) for s in band_scms]
                    for kind in config.plots:
                        if kind not in engine.band_kinds():
                            continue
                        band = engine.uncertainty_band(
                            candidates, explain_data, var, grid, kind
                        )
                        stem = f"{prefix}{var}_{kind.lower()}_band"
                        outputs.write(f"{stem}.csv", render.export_band_csv(band))
                        outputs.write(f"{stem}.svg", render.render_band(band))
    finally:
        for _, predictor in fitted:
            close = getattr(predictor, "close", None)
            if close is not None:
                close()

    manifest = {
        "inputs": inputs,
        "outputs": sorted(p.name for p in outputs.written),
        "seed": config.seed,
        "config_hash": _config_hash(config.raw),
        "deviations": deviations,
    }
    outputs.write("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _compute_plot(
    kind: str,
    ecm: engine.Ecm | None,
    predictor: Predictor,
    data: Dataset,
    var: str,
    grid: engine.Grid,
    control: Intervention,
) -> engine.CurveSet:
    if kind in ("ICE", "PDP"):
        curve_set = engine.ice(predictor, data, var, grid)
        if kind == "PDP":
            curve_set = dataclasses.replace(curve_set, kind="PDP")
        return curve_set
    assert ecm is not None
    if kind == "TDP":
        return engine.tdp(ecm, data, var, grid)
    if kind == "PCDP":
        return engine.pcdp(ecm, data, var, grid, control)
    if kind == "NDDP":
        return engine.nddp(ecm, data, var, grid)
    return engine.nidp(ecm, data, var, grid)


# --- subcommand handlers ---------------------------------------------------


def _cmd_simulate(args) -> int:
    scm = load_scm_spec(args.scm)
    data, noise = sample(scm, args.n, args.seed)
    Path(args.out).write_text(write_dataset_csv(data), encoding="utf-8")
    if args.noise_out:
        Path(args.noise_out).write_text(write_dataset_csv(noise), encoding="utf-8")
    print(f"wrote {data.m} rows of {len(data.columns)} variables to {args.out}")
    return 0


def _cmd_discover(args) -> int:
    label_map = json.loads(args.label_map) if args.label_map else None
    data = read_dataset_csv(args.data, label_map)
    if args.variables:
        names = tuple(args.variables.split(","))
        for name in names:
            if name not in data.columns:
                raise DataError(f"unknown variable {name!r}")
        data = Dataset(names, np.column_stack([data.column(n) for n in names]))
    skeleton, sepsets = disc.pc_skeleton(data, args.alpha, args.max_cond)
    cpdag = disc.orient_cpdag(skeleton, sepsets)
    text = disc.cpdag_to_text(cpdag)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _cmd_fit(args) -> int:
    data = read_dataset_csv(args.data)
    features = tuple(args.features.split(",")) if args.features else tuple(
        c for c in data.columns if c != args.target
    )
    if args.kind == "ols":
        predictor: Predictor = fit_ols(data, args.target, features, args.degree)
    else:
        config = ForestConfig(
            n_trees=args.trees,
            max_depth=args.depth,
            min_leaf=args.min_leaf,
            bootstrap=not args.no_bootstrap,
            seed=args.seed,
        )
        predictor = fit_forest(data, args.target, features, config)
    blob = save_predictor(predictor)
    Path(args.out).write_text(
        json.dumps(blob, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"fitted {predictor.describe()} on {data.m} rows -> {args.out}")
    return 0


def _parse_controls(spec: str | None) -> Intervention:
    if not spec:
        return Intervention(())
    actions = []
    for part in spec.split(","):
        name, _, value = part.partition("=")
        if not _:
            raise ConfigError(f"bad control {part!r}; expected VAR=VALUE")
        try:
            actions.append(SetConstant(name.strip(), float(value)))
        except ValueError:
            raise ConfigError(f"bad control value in {part!r}") from None
    return Intervention(tuple(actions))


def _cmd_explain(args) -> int:
    scm = load_scm_spec(args.scm)
    data = read_dataset_csv(args.explain_data or args.data)
    for var in scm.variables:
        if var not in data.columns:
            raise DataError(f"model variable {var!r} missing from the data")
    if args.model:
        blob = json.loads(Path(args.model).read_text(encoding="utf-8"))
        predictor: Predictor = load_predictor(blob)
    elif args.closed_form:
        if not args.features:
            raise ConfigError("--closed-form needs --features")
        predictor = ClosedFormPredictor(args.closed_form, args.features.split(","))
    elif args.external:
        if not args.features:
            raise ConfigError("--external needs --features")
        predictor = open_external(args.external, args.features.split(","), args.timeout)
    else:
        raise ConfigError("need one of --model, --closed-form, --external")
    plots = tuple(args.plots.split(","))
    for kind in plots:
        if kind not in PLOT_KINDS:
            raise ConfigError(f"unknown plot kind {kind!r}")
    control = _parse_controls(args.control)
    outputs = _Outputs(Path(args.out_dir))
    try:
        ecm = None
        if any(kind not in ("ICE", "PDP") for kind in plots):
            ecm = engine.build_ecm(scm, predictor)
        grid = engine.make_grid(data, args.var, args.grid_resolution)
        for kind in plots:
            curve_set = _compute_plot(kind, ecm, predictor, data, args.var, grid, control)
            outputs.write(f"{args.var}_{kind.lower()}.csv", render.export_csv(curve_set))
    except BaseException:
        outputs.discard_all()
        raise
    finally:
        close = getattr(predictor, "close", None)
        if close is not None:
            close()
    for path in outputs.written:
        print(f"wrote {path}")
    return 0


def _cmd_render(args) -> int:
    text = Path(args.csv).read_text(encoding="utf-8")
    curve_set = render.import_csv(text, var=args.var)
    Path(args.svg).write_text(render.render_curves(curve_set), encoding="utf-8")
    print(f"wrote {args.svg}")
    return 0


def _cmd_run(args) -> int:
    overrides: dict = {}
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = load_run_config(args.config, overrides)
    manifest = run_pipeline(config, config_label=str(args.config))
    for name in manifest["outputs"]:
        print(f"wrote {config.output_dir / name}")
    return 0


# --- argument parsing ------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdplot",
        description="Causal dependence plots for black-box predictors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a dataset from a model spec")
    p.add_argument("--scm", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-out")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("discover", help="estimate a partially directed graph")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--max-cond", type=int, default=3)
    p.add_argument("--variables")
    p.add_argument("--label-map")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_discover)

    p = sub.add_parser("fit", help="fit a predictor and save it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--features")
    p.add_argument("--kind", choices=("ols", "forest"), default="ols")
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("explain", help="compute dependence curves as CSV")
    p.add_argument("--scm", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--explain-data")
    p.add_argument("--var", required=True)
    p.add_argument("--plots", default="TDP")
    p.add_argument("--model")
    p.add_argument("--closed-form")
    p.add_argument("--external")
    p.add_argument("--features")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--control")
    p.add_argument("--grid-resolution", type=int, default=engine.GRID_RESOLUTION_DEFAULT)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(handler=_cmd_explain)

    p = sub.add_parser("render", help="render a curve CSV to SVG")
    p.add_argument("--csv", required=True)
    p.add_argument("--svg", required=True)
    p.add_argument("--var", default="x")
    p.set_defaults(handler=_cmd_render)

    p = sub.add_parser("run", help="run a full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_run)

    return parser


def _exit_code(exc: CdpError) -> int:
    if isinstance(exc, ExternalPredictorError):
        return 5
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, DataError):
        return 3
    return 4


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CdpError as exc:
        kind = {2: "config", 3: "data", 5: "external predictor"}.get(
            _exit_code(exc), "compute"
        )
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
