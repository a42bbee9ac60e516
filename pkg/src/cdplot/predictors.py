"""Predictors the plot machinery can explain.

Four kinds share one small interface: an ordered feature tuple and a
batch predict over a row matrix. Fitted predictors are frozen after
construction and predict is deterministic, so repeated calls on the
same rows return identical arrays.

The external kind talks to a subprocess over a line protocol on
stdin/stdout (UTF-8, LF newlines):

    engine -> HELLO CDP/1 <k> <f1,...,fk>
    child  -> READY
    engine -> PREDICT <n>
    engine -> n CSV lines, one row of k floats each
    child  -> n lines, one float each
    ...
    engine -> QUIT

Floats travel with 17 significant digits so values round-trip exactly.
A child that exits nonzero before QUIT, answers with the wrong row
count, or goes silent past the timeout raises ExternalPredictorError.
"""

from __future__ import annotations

import itertools
import math
import os
import select
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CdpError
from .expr import Expression, evaluate_batch, free_variables, parse, to_source
from .scm import Dataset

__all__ = [
    "ClosedFormPredictor",
    "ExternalPredictor",
    "ForestConfig",
    "ForestPredictor",
    "OlsPredictor",
    "Predictor",
    "PredictorError",
    "ExternalPredictorError",
    "fit_forest",
    "fit_ols",
    "load_predictor",
    "open_external",
    "save_predictor",
]

_GRAM_CONDITION_LIMIT = 1e12
_RIDGE = 1e-8


class PredictorError(CdpError):
    """Problem fitting or applying a predictor."""


class ExternalPredictorError(PredictorError):
    """The external predictor subprocess misbehaved."""


def _fmt17(value: float) -> str:
    return format(float(value), ".17g")


class Predictor:
    """Interface: ordered features plus batch predict."""

    features: tuple[str, ...]

    def predict(self, rows: np.ndarray) -> np.ndarray:
        """Predict for a matrix whose columns follow self.features."""
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.features):
            raise PredictorError(
                f"expected rows with {len(self.features)} feature column(s), "
                f"got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise PredictorError("feature rows contain non-finite values")
        out = np.asarray(self._predict(x), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise PredictorError("predictor produced non-finite values")
        return out

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError

    def predict_columns(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        for f in self.features:
            if f not in columns:
                raise PredictorError(f"missing feature column {f!r}")
        return self.predict(np.column_stack([columns[f] for f in self.features]))


def _check_features(data: Dataset, target: str, features: Sequence[str]) -> tuple[str, ...]:
    features = tuple(features)
    if not features:
        raise PredictorError("need at least one feature")
    if len(set(features)) != len(features):
        raise PredictorError("duplicate feature names")
    data.index(target)
    for f in features:
        data.index(f)
    if target in features:
        raise PredictorError(f"target {target!r} cannot also be a feature")
    return features


# --- closed form -----------------------------------------------------------


class ClosedFormPredictor(Predictor):
    """Evaluates a fixed expression of the features."""

    def __init__(self, expression: Expression | str, features: Sequence[str]):
        if isinstance(expression, str):
            expression = parse(expression)
        self.expression = expression
        self.features = tuple(features)
        extra = free_variables(expression) - set(self.features)
        if extra:
            raise PredictorError(
                "expression references non-features: " + ", ".join(sorted(extra))
            )

    def _predict(self, x: np.ndarray) -> np.ndarray:
        env = {f: x[:, i] for i, f in enumerate(self.features)}
        return evaluate_batch(self.expression, env, x.shape[0])

    def describe(self) -> str:
        return f"closed_form({to_source(self.expression)})"


# --- polynomial least squares ----------------------------------------------


def _monomial_exponents(k: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """All exponent vectors with total degree <= degree, low order first."""
    out = []
    for total in range(degree + 1):
        level = [
            e
            for e in itertools.product(range(total + 1), repeat=k)
            if sum(e) == total
        ]
        # graded lexicographic: within a level, earlier features first,
        # so degree 1 reads (intercept, feature coefficients in order)
        out.extend(sorted(level, reverse=True))
    return tuple(out)


def _design(x: np.ndarray, exponents: Sequence[tuple[int, ...]]) -> np.ndarray:
    cols = []
    for exps in exponents:
        col = np.ones(x.shape[0])
        for i, e in enumerate(exps):
            if e:
                col = col * x[:, i] ** e
        cols.append(col)
    return np.column_stack(cols)


class OlsPredictor(Predictor):
    """Polynomial least squares over all monomials up to a total degree."""

    def __init__(
        self,
        features: Sequence[str],
        degree: int,
        exponents: Sequence[tuple[int, ...]],
        coefficients: np.ndarray,
    ):
        self.features = tuple(features)
        self.degree = int(degree)
        self.exponents = tuple(tuple(e) for e in exponents)
        coefficients = np.array(coefficients, dtype=np.float64)
        coefficients.flags.writeable = False
        self.coefficients = coefficients

    def _predict(self, x: np.ndarray) -> np.ndarray:
        return _design(x, self.exponents) @ self.coefficients

    def describe(self) -> str:
        return f"ols(degree={self.degree})"


def fit_ols(data: Dataset, target: str, features: Sequence[str], degree: int = 1) -> OlsPredictor:
    """Least-squares polynomial fit. When the Gram matrix is close to
    singular (condition estimate above 1e12) a small ridge penalty is
    added instead of failing."""
    features = _check_features(data, target, features)
    if degree < 1:
        raise PredictorError(f"degree must be at least 1, got {degree}")
    y = data.column(target)
    x = np.column_stack([data.column(f) for f in features])
    exponents = _monomial_exponents(len(features), degree)
    design = _design(x, exponents)
    gram = design.T @ design
    moment = design.T @ y
    condition = np.linalg.cond(gram)
    if not np.isfinite(condition) or condition > _GRAM_CONDITION_LIMIT:
        gram = gram + _RIDGE * np.eye(gram.shape[0])
    try:
        beta = np.linalg.solve(gram, moment)
    except np.linalg.LinAlgError as exc:
        raise PredictorError(f"least squares failed: {exc}") from None
    if not np.all(np.isfinite(beta)):
        raise PredictorError("least squares produced non-finite coefficients")
    return OlsPredictor(features, degree, exponents, beta)


# --- random forest ---------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    """Knobs for the bagged regression forest."""

    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    features_per_split: int | None = None  # default: ceil(k / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise PredictorError("invalid forest configuration")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise PredictorError("features_per_split must be positive")


class _Tree:
    """Flat arrays for one CART tree; feature -1 marks a leaf."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        index = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return index

    def add_split(self, feature: int, threshold: float) -> int:
        index = len(self.feature)
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return index

    def freeze(self) -> dict[str, np.ndarray]:
        return {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "value": np.asarray(self.value, dtype=np.float64),
        }


def _best_split(x, y, idx, feature, min_leaf):
    """Best SSE-reducing threshold on one feature, or None."""
    values = x[idx, feature]
    order = np.argsort(values, kind="stable")
    xs = values[order]
    ys = y[idx][order]
    n = len(idx)
    if xs[0] == xs[-1]:
        return None
    csum = np.cumsum(ys)
    csum2 = np.cumsum(ys * ys)
    total, total2 = csum[-1], csum2[-1]
    counts = np.arange(1, n)
    left_sse = csum2[:-1] - csum[:-1] ** 2 / counts
    right_sse = (total2 - csum2[:-1]) - (total - csum[:-1]) ** 2 / (n - counts)
    score = left_sse + right_sse
    valid = (counts >= min_leaf) & (counts <= n - min_leaf) & (xs[:-1] < xs[1:])
    if not np.any(valid):
        return None
    score = np.where(valid, score, np.inf)
    best = int(np.argmin(score))
    threshold = 0.5 * (xs[best] + xs[best + 1])
    return float(score[best]), threshold, order[: best + 1], order[best + 1 :]


def _grow(tree, x, y, idx, depth, config, mtry, rng):
    subset = y[idx]
    mean = float(np.mean(subset))
    if (
        depth >= config.max_depth
        or len(idx) < 2 * config.min_leaf
        or np.ptp(subset) == 0.0
    ):
        return tree.add_leaf(mean)
    k = x.shape[1]
    chosen = rng.choice(k, size=min(mtry, k), replace=False)
    best = None
    for feature in chosen:
        found = _best_split(x, y, idx, int(feature), config.min_leaf)
        if found is None:
            continue
        score, threshold, left_local, right_local = found
        if best is None or score < best[0]:
            best = (score, int(feature), threshold, left_local, right_local)
    if best is None:
        return tree.add_leaf(mean)
    _, feature, threshold, left_local, right_local = best
    node = tree.add_split(feature, threshold)
    tree.left[node] = _grow(tree, x, y, idx[left_local], depth + 1, config, mtry, rng)
    tree.right[node] = _grow(tree, x, y, idx[right_local], depth + 1, config, mtry, rng)
    return node


class ForestPredictor(Predictor):
    def __init__(self, features, config: ForestConfig, trees, y_min: float, y_max: float):
        self.features = tuple(features)
        self.config = config
        self.trees = list(trees)
        self.y_min = float(y_min)
        self.y_max = float(y_max)

    def _predict(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += _tree_predict(tree, x)
        return total / len(self.trees)

    def describe(self) -> str:
        return f"forest(trees={self.config.n_trees}, depth={self.config.max_depth})"


def _tree_predict(tree: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    node = np.zeros(x.shape[0], dtype=np.int64)
    rows = np.arange(x.shape[0])
    while True:
        feature = tree["feature"][node]
        internal = feature >= 0
        if not np.any(internal):
            break
        go_left = np.zeros(len(node), dtype=bool)
        go_left[internal] = (
            x[rows[internal], feature[internal]] <= tree["threshold"][node[internal]]
        )
        node = np.where(
            internal,
            np.where(go_left, tree["left"][node], tree["right"][node]),
            node,
        )
    return tree["value"][node]


def fit_forest(
    data: Dataset,
    target: str,
    features: Sequence[str],
    config: ForestConfig | None = None,
) -> ForestPredictor:
    """Bagged CART regression forest with variance-reduction splits."""
    config = config or ForestConfig()
    features = _check_features(data, target, features)
    y = data.column(target)
    x = np.column_stack([data.column(f) for f in features])
    n = x.shape[0]
    if n < 2 * config.min_leaf:
        raise PredictorError(
            f"need at least {2 * config.min_leaf} rows, got {n}"
        )
    mtry = config.features_per_split or math.ceil(len(features) / 3)
    trees = []
    for t in range(config.n_trees):
        seq = np.random.SeedSequence(entropy=config.seed, spawn_key=(t,))
        rng = np.random.Generator(np.random.PCG64(seq))
        idx = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        tree = _Tree()
        _grow(tree, x, y, np.asarray(idx), 0, config, mtry, rng)
        trees.append(tree.freeze())
    return ForestPredictor(features, config, trees, float(np.min(y)), float(np.max(y)))


# --- external subprocess ---------------------------------------------------


class _LineChannel:
    """Buffered line reads from a pipe with a per-read timeout."""

    def __init__(self, fd: int):
        self.fd = fd
        self.buffer = bytearray()
        self.eof = False

    def readline(self, timeout: float) -> bytes | None:
        while True:
            newline = self.buffer.find(b"\n")
            if newline >= 0:
                line = bytes(self.buffer[:newline])
                del self.buffer[: newline + 1]
                return line
            if self.eof:
                return None
            ready, _, _ = select.select([self.fd], [], [], timeout)
            if not ready:
                raise ExternalPredictorError(
                    f"external predictor timed out after {timeout} s"
                )
            chunk = os.read(self.fd, 65536)
            if not chunk:
                self.eof = True
                continue
            self.buffer.extend(chunk)


class ExternalPredictor(Predictor):
    """Bridges predict calls to a subprocess speaking the line protocol."""

    def __init__(self, command: str | Sequence[str], features: Sequence[str], timeout: float = 30.0):
        self.features = tuple(features)
        self.timeout = float(timeout)
        if isinstance(command, str):
            argv = shlex.split(command)
        else:
            argv = list(command)
        self.command = argv
        self._lock = threading.Lock()
        self._quit_sent = False
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as exc:
            raise ExternalPredictorError(f"could not start {argv!r}: {exc}") from None
        assert self._proc.stdout is not None
        self._channel = _LineChannel(self._proc.stdout.fileno())
        hello = f"HELLO CDP/1 {len(self.features)} {','.join(self.features)}"
        self._send(hello)
        answer = self._read_line()
        if answer != "READY":
            self._terminate()
            raise ExternalPredictorError(
                f"handshake failed: expected READY, got {answer!r}"
            )

    def _send(self, line: str) -> None:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write((line + "\n").encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ExternalPredictorError(
                f"external predictor exited (status {self._proc.poll()}) "
                "before QUIT"
            ) from None

    def _read_line(self) -> str:
        raw = self._channel.readline(self.timeout)
        if raw is None:
            raise ExternalPredictorError(
                f"external predictor exited (status {self._proc.poll()}) "
                "before QUIT"
            )
        return raw.decode("utf-8").rstrip("\r")

    def _predict(self, x: np.ndarray) -> np.ndarray:
        with self._lock:
            n = x.shape[0]
            self._send(f"PREDICT {n}")
            for row in x:
                self._send(",".join(_fmt17(v) for v in row))
            out = np.empty(n)
            for i in range(n):
                raw = self._channel.readline(self.timeout)
                if raw is None:
                    raise ExternalPredictorError(
                        f"wrong row count: expected {n} predictions, got {i} "
                        f"(subprocess exited with status {self._proc.poll()})"
                    )
                text = raw.decode("utf-8").strip()
                try:
                    out[i] = float(text)
                except ValueError:
                    raise ExternalPredictorError(
                        f"malformed response line {text!r}"
                    ) from None
            return out

    def describe(self) -> str:
        return f"external({' '.join(self.command)})"

    def close(self) -> None:
        if self._proc.poll() is None and not self._quit_sent:
            self._quit_sent = True
            try:
                self._send("QUIT")
            except ExternalPredictorError:
                pass
        try:
            self._proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self._terminate()

    def _terminate(self) -> None:
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExternalPredictor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self._terminate()
        except Exception:
            pass


def open_external(
    command: str | Sequence[str], features: Sequence[str], timeout: float = 30.0
) -> ExternalPredictor:
    """Spawn the command and perform the protocol handshake."""
    return ExternalPredictor(command, features, timeout)


# --- persistence for the CLI fit/explain split -----------------------------


def save_predictor(predictor: Predictor) -> dict:
    """JSON-ready description of a fitted built-in predictor."""
    if isinstance(predictor, OlsPredictor):
        return {
            "kind": "ols",
            "features": list(predictor.features),
            "degree": predictor.degree,
            "exponents": [list(e) for e in predictor.exponents],
            "coefficients": [float(c) for c in predictor.coefficients],
        }
    if isinstance(predictor, ClosedFormPredictor):
        return {
            "kind": "closed_form",
            "features": list(predictor.features),
            "expression": to_source(predictor.expression),
        }
    if isinstance(predictor, ForestPredictor):
        cfg = predictor.config
        return {
            "kind": "forest",
            "features": list(predictor.features),
            "config": {
                "n_trees": cfg.n_trees,
                "max_depth": cfg.max_depth,
                "min_leaf": cfg.min_leaf,
                "features_per_split": cfg.features_per_split,
                "bootstrap": cfg.bootstrap,
                "seed": cfg.seed,
            },
            "y_min": predictor.y_min,
            "y_max": predictor.y_max,
            "trees": [
                {name: arr.tolist() for name, arr in tree.items()}
                for tree in predictor.trees
            ],
        }
    raise PredictorError(f"cannot save predictor {predictor.describe()}")


def load_predictor(blob: Mapping) -> Predictor:
    """Inverse of save_predictor."""
    kind = blob.get("kind")
    if kind == "ols":
        return OlsPredictor(
            blob["features"],
            blob["degree"],
            [tuple(e) for e in blob["exponents"]],
            np.asarray(blob["coefficients"], dtype=np.float64),
        )
    if kind == "closed_form":
        return ClosedFormPredictor(blob["expression"], blob["features"])
    if kind == "forest":
        config = ForestConfig(**blob["config"])
        trees = [
            {
                "feature": np.asarray(tree["feature"], dtype=np.int64),
                "threshold": np.asarray(tree["threshold"], dtype=np.float64),
                "left": np.asarray(tree["left"], dtype=np.int64),
                "right": np.asarray(tree["right"], dtype=np.int64),
                "value": np.asarray(tree["value"], dtype=np.float64),
            }
            for tree in blob["trees"]
        ]
        return ForestPredictor(
            blob["features"], config, trees, blob["y_min"], blob["y_max"]
        )
    raise PredictorError(f"unknown predictor kind {kind!r}")
