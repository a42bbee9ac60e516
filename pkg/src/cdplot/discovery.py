"""Constraint-based structure discovery for building candidate models.

pc_skeleton runs the stable variant of the PC algorithm: adjacency
sets are frozen at the start of each conditioning level, so the result
does not depend on variable order. Independence is judged by the
Fisher z transform of partial correlation. orient_cpdag then directs
unshielded colliders away from their separating sets and closes under
the four standard propagation rules; a contested edge is logged and
left undirected rather than oriented arbitrarily.

enumerate_dags lists candidate fully directed graphs: orientations of
the undirected edges that keep the graph acyclic, keep every directed
edge, and do not create a collider out of two re-oriented edges. When
the input is fully closed under the propagation rules this is exactly
the set of graphs with the same skeleton and colliders; inputs with
unpropagated edges may also yield candidates that complete a collider
with a pre-directed edge, which is deliberate so structure uncertainty
around a partially oriented output can be explored.

fit_anm turns one candidate DAG into a concrete additive-noise model
by polynomial least squares, so abduction on the training data returns
exactly the per-unit fit residuals.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import CdpError
from .expr import BinOp, Const, Expression, Neg, Var
from .predictors import fit_ols
from .scm import Dataset, Mechanism, NoiseSpec, Scm, build_scm

__all__ = [
    "Cpdag",
    "Dag",
    "DagEnumeration",
    "DiscoveryError",
    "SepsetTable",
    "Skeleton",
    "cpdag_from_text",
    "cpdag_to_text",
    "enumerate_dags",
    "fisher_z_test",
    "fit_anm",
    "orient_cpdag",
    "pc_skeleton",
]

logger = logging.getLogger(__name__)


class DiscoveryError(CdpError):
    """Invalid discovery input or a degenerate test."""


def _edge(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Skeleton:
    """Undirected adjacency structure over named variables."""

    variables: tuple[str, ...]
    edges: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        for a, b in self.edges:
            if a >= b or a not in self.variables or b not in self.variables:
                raise DiscoveryError(f"bad skeleton edge {(a, b)!r}")

    def neighbors(self, var: str) -> tuple[str, ...]:
        out = [b if a == var else a for a, b in self.edges if var in (a, b)]
        return tuple(sorted(out))


class SepsetTable:
    """Separating sets recorded while thinning the skeleton."""

    def __init__(self):
        self._sets: dict[tuple[str, str], tuple[str, ...]] = {}

    def record(self, a: str, b: str, conditioning: tuple[str, ...]) -> None:
        self._sets[_edge(a, b)] = tuple(conditioning)

    def get(self, a: str, b: str) -> tuple[str, ...] | None:
        return self._sets.get(_edge(a, b))

    def items(self):
        return sorted(self._sets.items())


@dataclass(frozen=True)
class Cpdag:
    """Partially directed graph: some edges oriented, some not."""

    variables: tuple[str, ...]
    directed: frozenset[tuple[str, str]]
    undirected: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        known = set(self.variables)
        for a, b in self.directed:
            if a not in known or b not in known or a == b:
                raise DiscoveryError(f"bad directed edge {(a, b)!r}")
        for a, b in self.undirected:
            if a >= b or a not in known or b not in known:
                raise DiscoveryError(f"bad undirected edge {(a, b)!r}")
        if _has_cycle(self.variables, self.directed):
            raise DiscoveryError("directed part contains a cycle")

    def adjacent(self, a: str, b: str) -> bool:
        return (
            (a, b) in self.directed
            or (b, a) in self.directed
            or _edge(a, b) in self.undirected
        )


@dataclass(frozen=True)
class Dag:
    """Fully directed acyclic graph; edges are (parent, child)."""

    variables: tuple[str, ...]
    edges: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        known = set(self.variables)
        for a, b in self.edges:
            if a not in known or b not in known or a == b:
                raise DiscoveryError(f"bad edge {(a, b)!r}")
        if _has_cycle(self.variables, self.edges):
            raise DiscoveryError("graph contains a cycle")

    def parents(self, var: str) -> tuple[str, ...]:
        return tuple(sorted(a for a, b in self.edges if b == var))


def _has_cycle(variables, edges) -> bool:
    in_degree = {v: 0 for v in variables}
    children = {v: [] for v in variables}
    for a, b in edges:
        in_degree[b] += 1
        children[a].append(b)
    ready = [v for v in variables if in_degree[v] == 0]
    seen = 0
    while ready:
        node = ready.pop()
        seen += 1
        for child in children[node]:
            in_degree[child] -= 1
            if in_degree[child] == 0:
                ready.append(child)
    return seen != len(variables)


# --- independence testing --------------------------------------------------


def fisher_z_test(
    data: Dataset,
    i: str,
    j: str,
    conditioning: tuple[str, ...] = (),
    alpha: float = 0.05,
) -> tuple[float, bool]:
    """Partial-correlation independence test.

    Returns (statistic, independent). The statistic is
    sqrt(n - |s| - 3) * |z| for the Fisher transform z of the partial
    correlation of i and j given s; independence is declared when it
    does not exceed the two-sided normal quantile for alpha.
    """
    conditioning = tuple(conditioning)
    names = tuple(sorted((i, j))) + conditioning  # bitwise symmetric in i, j
    if len(set(names)) != len(names):
        raise DiscoveryError(f"test variables not distinct: {names}")
    if not 0.0 < alpha < 1.0:
        raise DiscoveryError(f"alpha must be in (0, 1), got {alpha}")
    n = data.m
    if n <= len(conditioning) + 3:
        raise DiscoveryError(
            f"need more than |s| + 3 = {len(conditioning) + 3} rows, got {n}"
        )
    matrix = np.column_stack([data.column(name) for name in names])
    with np.errstate(invalid="ignore"):
        corr = np.corrcoef(matrix, rowvar=False)
    if not np.all(np.isfinite(corr)):
        raise DiscoveryError(
            "correlation undefined (constant column among "
            + ", ".join(names)
            + ")"
        )
    if not conditioning:
        r = float(corr[0, 1])
    else:
        try:
            precision = np.linalg.inv(corr)
        except np.linalg.LinAlgError:
            raise DiscoveryError(
                "singular correlation matrix for " + ", ".join(names)
            ) from None
        denom = precision[0, 0] * precision[1, 1]
        if denom <= 0.0:
            raise DiscoveryError("ill-conditioned correlation matrix")
        r = float(-precision[0, 1] / np.sqrt(denom))
    if abs(r) >= 1.0:
        return float("inf"), False
    z = 0.5 * np.log((1.0 + r) / (1.0 - r))
    statistic = float(np.sqrt(n - len(conditioning) - 3) * abs(z))
    threshold = float(ndtri(1.0 - alpha / 2.0))
    return statistic, statistic <= threshold


# --- skeleton --------------------------------------------------------------


def pc_skeleton(
    data: Dataset, alpha: float = 0.05, max_cond: int = 3
) -> tuple[Skeleton, SepsetTable]:
    """Stable-PC skeleton search up to conditioning sets of size
    max_cond. Returns the surviving edges and the separating sets."""
    if max_cond < 0:
        raise DiscoveryError(f"max_cond must be nonnegative, got {max_cond}")
    variables = tuple(data.columns)
    if len(variables) < 2:
        raise DiscoveryError("need at least two variables")
    ordered = sorted(variables)
    adjacency: dict[str, set[str]] = {
        v: {w for w in ordered if w != v} for v in ordered
    }
    sepsets = SepsetTable()
    for level in range(max_cond + 1):
        frozen = {v: sorted(adjacency[v]) for v in ordered}
        if all(len(frozen[v]) - 1 < level for v in ordered):
            break
        for a, b in itertools.combinations(ordered, 2):
            if b not in adjacency[a]:
                continue
            separated = False
            for side_a, side_b in ((a, b), (b, a)):
                pool = [v for v in frozen[side_a] if v != side_b]
                if len(pool) < level:
                    continue
                for subset in itertools.combinations(pool, level):
                    _, independent = fisher_z_test(data, a, b, subset, alpha)
                    if independent:
                        adjacency[a].discard(b)
                        adjacency[b].discard(a)
                        sepsets.record(a, b, subset)
                        separated = True
                        break
                if separated:
                    break
    edges = frozenset(
        (a, b)
        for a, b in itertools.combinations(ordered, 2)
        if b in adjacency[a]
    )
    return Skeleton(variables, edges), sepsets


# --- orientation -----------------------------------------------------------


def orient_cpdag(skeleton: Skeleton, sepsets: SepsetTable) -> Cpdag:
    """Orient unshielded colliders, then close under the propagation
    rules. Edges pushed both ways are logged and left undirected."""
    ordered = tuple(sorted(skeleton.variables))
    adjacent = {
        v: set(skeleton.neighbors(v)) for v in ordered
    }
    votes: set[tuple[str, str]] = set()
    for k in ordered:
        for i, j in itertools.combinations(sorted(adjacent[k]), 2):
            if j in adjacent[i]:
                continue
            separating = sepsets.get(i, j)
            if separating is None:
                continue
            if k not in separating:
                votes.add((i, k))
                votes.add((j, k))
    directed: set[tuple[str, str]] = set()
    for a, b in sorted(votes):
        if (b, a) in votes:
            logger.warning(
                "conflicting collider orientations for %s - %s; leaving undirected",
                a,
                b,
            )
            continue
        directed.add((a, b))

    undirected = {
        e for e in skeleton.edges
        if e not in directed and (e[1], e[0]) not in directed
    }

    def rule_fires(x: str, y: str) -> bool:
        """Would one of the four propagation rules orient x -> y?"""
        # Rule 1: c -> x, x - y, c and y non-adjacent.
        for c in adjacent[x]:
            if c != y and (c, x) in directed and y not in adjacent[c]:
                return True
        # Rule 2: x -> c -> y with x - y.
        for c in adjacent[x] & adjacent[y]:
            if (x, c) in directed and (c, y) in directed:
                return True
        # Rule 3: x - c -> y and x - d -> y, c and d non-adjacent.
        spokes = [
            c
            for c in adjacent[x] & adjacent[y]
            if _edge(x, c) in undirected and (c, y) in directed
        ]
        for c, d in itertools.combinations(sorted(spokes), 2):
            if d not in adjacent[c]:
                return True
        # Rule 4: x - c, c -> d, d -> y with c,y non-adjacent and d,x
        # adjacent.
        for c in adjacent[x]:
            if c == y or _edge(x, c) not in undirected or y in adjacent[c]:
                continue
            for d in adjacent[y]:
                if d in adjacent[x] and (c, d) in directed and (d, y) in directed:
                    return True
        return False

    contested: set[tuple[str, str]] = set()
    changed = True
    while changed:
        changed = False
        for a, b in sorted(undirected - contested):
            forward = rule_fires(a, b)
            backward = rule_fires(b, a)
            if forward and backward:
                logger.warning(
                    "propagation conflict on %s - %s; leaving undirected", a, b
                )
                contested.add((a, b))
                changed = True
            elif forward or backward:
                undirected.discard((a, b))
                directed.add((a, b) if forward else (b, a))
                changed = True
            if changed:
                break
    return Cpdag(skeleton.variables, frozenset(directed), frozenset(undirected))


# --- enumeration -----------------------------------------------------------


@dataclass(frozen=True)
class DagEnumeration:
    dags: tuple[Dag, ...]
    truncated: bool


def _colliders(variables, edges, adjacent) -> set[tuple[str, str, str]]:
    found = set()
    by_child: dict[str, list[str]] = {}
    for a, b in edges:
        by_child.setdefault(b, []).append(a)
    for child, parents in by_child.items():
        for p, q in itertools.combinations(sorted(parents), 2):
            if q not in adjacent[p]:
                found.add((p, child, q))
    return found


def enumerate_dags(cpdag: Cpdag, cap: int = 64) -> DagEnumeration:
    """Candidate orientations of the undirected edges, in lexicographic
    order of the orientation vector (0 keeps the name-sorted direction).
    Stops after cap results and flags truncation."""
    if cap < 1:
        raise DiscoveryError(f"cap must be positive, got {cap}")
    undirected = sorted(cpdag.undirected)
    adjacent: dict[str, set[str]] = {v: set() for v in cpdag.variables}
    for a, b in cpdag.directed:
        adjacent[a].add(b)
        adjacent[b].add(a)
    for a, b in undirected:
        adjacent[a].add(b)
        adjacent[b].add(a)
    k = len(undirected)
    dags: list[Dag] = []
    truncated = False
    for bits in range(2 ** k):
        oriented = set()
        for position, (a, b) in enumerate(undirected):
            flip = (bits >> (k - 1 - position)) & 1
            oriented.add((b, a) if flip else (a, b))
        edges = set(cpdag.directed) | oriented
        if _has_cycle(cpdag.variables, edges):
            continue
        # Reject colliders assembled out of two re-oriented edges; a
        # collider completed with a pre-directed edge stays a candidate.
        new_colliders = _colliders(cpdag.variables, oriented, adjacent)
        if new_colliders:
            continue
        if len(dags) == cap:
            truncated = True
            break
        dags.append(Dag(cpdag.variables, frozenset(edges)))
    return DagEnumeration(tuple(dags), truncated)


# --- serialization ---------------------------------------------------------


def cpdag_to_text(cpdag: Cpdag) -> str:
    """Stable text form: one 'A -> B' or 'A -- B' line per edge."""
    lines = [f"{a} -> {b}" for a, b in sorted(cpdag.directed)]
    lines += [f"{a} -- {b}" for a, b in sorted(cpdag.undirected)]
    return "\n".join(sorted(lines)) + ("\n" if lines else "")


def cpdag_from_text(text: str, variables: tuple[str, ...] | None = None) -> Cpdag:
    directed = set()
    undirected = set()
    names = set(variables or ())
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[1] not in ("->", "--"):
            raise DiscoveryError(f"bad edge line {lineno}: {raw!r}")
        a, mark, b = parts
        names.update((a, b))
        if mark == "->":
            directed.add((a, b))
        else:
            undirected.add(_edge(a, b))
    order = variables if variables is not None else tuple(sorted(names))
    return Cpdag(tuple(order), frozenset(directed), frozenset(undirected))


# --- model fitting ---------------------------------------------------------


def _constant(value: float) -> Expression:
    if value < 0.0 or (value == 0.0 and np.signbit(value)):
        return Neg(Const(-float(value)))
    return Const(float(value))


def _monomial(parents, exps) -> Expression | None:
    term: Expression | None = None
    for name, e in zip(parents, exps):
        if e == 0:
            continue
        factor: Expression = Var(name)
        if e > 1:
            factor = BinOp("^", factor, Const(float(e)))
        term = factor if term is None else BinOp("*", term, factor)
    return term


def _polynomial_expression(parents, exponents, coefficients) -> Expression:
    acc: Expression | None = None
    for exps, coef in zip(exponents, coefficients):
        coef = float(coef)
        if coef == 0.0:
            continue
        monomial = _monomial(parents, exps)
        if monomial is None:
            term: Expression = _constant(coef)
        elif coef == 1.0:
            term = monomial
        elif coef == -1.0:
            term = Neg(monomial)
        else:
            term = BinOp("*", _constant(abs(coef)), monomial)
            if coef < 0.0:
                term = Neg(term)
        if acc is None:
            acc = term
        elif isinstance(term, Neg):
            acc = BinOp("-", acc, term.operand)
        else:
            acc = BinOp("+", acc, term)
    return acc if acc is not None else Const(0.0)


def fit_anm(dag: Dag, data: Dataset, degree: int = 3) -> Scm:
    """Fit an additive-noise model along one candidate DAG.

    Roots get a normal noise matched to the sample mean and standard
    deviation. Every other variable gets a least-squares polynomial in
    its parents with Normal(0, residual sd) noise, so abducting the
    training data returns the fit residuals exactly.
    """
    for var in dag.variables:
        data.index(var)
    order = tuple(v for v in data.columns if v in set(dag.variables))
    from .expr import evaluate_batch  # local import to avoid cycle at top

    mechanisms: dict[str, Mechanism] = {}
    for var in order:
        parents = dag.parents(var)
        column = data.column(var)
        if not parents:
            mean = float(np.mean(column))
            sd = float(np.std(column, ddof=1)) if data.m > 1 else 0.0
            mechanisms[var] = Mechanism((), None, NoiseSpec.normal(mean, sd))
            continue
        fitted = fit_ols(data, var, parents, degree)
        expression = _polynomial_expression(
            parents, fitted.exponents, fitted.coefficients
        )
        env = {p: data.column(p) for p in parents}
        residuals = column - evaluate_batch(expression, env, data.m)
        sd = float(np.std(residuals))
        mechanisms[var] = Mechanism(parents, expression, NoiseSpec.normal(0.0, sd))
    return build_scm("anm", mechanisms)
