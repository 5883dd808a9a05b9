"""Discrete random field data model, UAI MARKOV I/O and synthetic instances.

Potentials are stored in log-space: a factor table holds ``phi_c(x_c)`` and the
unnormalized log-probability of an assignment is the sum of the tables it
selects. Tables are dense, row-major, with the last scope variable fastest.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

MAX_ARITY = 8
MAX_TABLE_SIZE = 2**20


class FieldError(ValueError):
    """Raised when a field violates one of its structural invariants."""


class UAIFormatError(ValueError):
    """Raised on malformed UAI input; carries line/column context."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)
        self.line = line
        self.column = column


@dataclass(frozen=True, eq=False)
class Factor:
    """A log-potential table over an ordered scope of variables."""

    scope: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        scope = tuple(int(v) for v in self.scope)
        table = np.array(self.table, dtype=np.float64)
        table.setflags(write=False)
        object.__setattr__(self, "scope", scope)
        object.__setattr__(self, "table", table)

    @property
    def arity(self) -> int:
        return len(self.scope)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    labels: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        mask = np.asarray(self.mask, dtype=bool)
        if labels.shape != mask.shape or labels.ndim != 1:
            raise ValueError("labels and mask must be 1-D arrays of equal length")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """A factor graph over discrete variables.

    Instances are treated as immutable. Use :func:`validate` (or one of the
    constructors in this module, which call it) before running inference.
    """

    num_variables: int
    cardinalities: tuple[int, ...]
    factors: tuple[Factor, ...] = dc_field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "num_variables", int(self.num_variables))
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def max_cardinality(self) -> int:
        return max(self.cardinalities, default=1)

    @property
    def is_pairwise(self) -> bool:
        return all(f.arity <= 2 for f in self.factors)

    @property
    def is_binary(self) -> bool:
        return all(c == 2 for c in self.cardinalities)

    @property
    def state_space_size(self) -> int:
        return math.prod(self.cardinalities)

    @cached_property
    def arrays(self) -> "FieldArrays":
        return FieldArrays(self)


class FieldArrays:
    """Padded array view of a field used by the vectorized inference kernels.

    Per-variable label axes are padded to the largest cardinality; padded
    table entries are zero and ``mask`` marks the real labels.

    Pairwise factors are laid out per variable as ``degree`` slots: slot ``k``
    of variable ``i`` holds a table oriented with ``i``'s label on the rows and
    the index of the other endpoint. Unused slots carry zero tables. Factors
    of arity three or more are kept as a list and contracted on the fly.
    """

    def __init__(self, field: DiscreteField):
        n = field.num_variables
        lmax = field.max_cardinality
        cards = np.asarray(field.cardinalities, dtype=np.int64)
        self.num_variables = n
        self.num_labels = lmax
        self.cardinalities = cards
        self.mask = np.arange(lmax)[None, :] < cards[:, None]

        unary = np.zeros((n, lmax))
        edges_i, edges_j, edge_tables = [], [], []
        higher = []
        for factor in field.factors:
            if factor.arity == 1:
                (i,) = factor.scope
                unary[i, : cards[i]] += factor.table
            elif factor.arity == 2:
                i, j = factor.scope
                t = np.zeros((lmax, lmax))
                t[: cards[i], : cards[j]] = factor.table
                edges_i.append(i)
                edges_j.append(j)
                edge_tables.append(t)
            else:
                higher.append(factor)
        self.unary = unary
        self.edge_i = np.asarray(edges_i, dtype=np.int64)
        self.edge_j = np.asarray(edges_j, dtype=np.int64)
        self.edge_tables = (
            np.asarray(edge_tables) if edge_tables else np.zeros((0, lmax, lmax))
        )
        self.higher = tuple(higher)

        # Half-edge slots, in factor order for every variable.
        slots: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(n)]
        for e in range(len(edges_i)):
            i, j, t = edges_i[e], edges_j[e], edge_tables[e]
            slots[i].append((j, t))
            slots[j].append((i, t.T))
        degree = max((len(s) for s in slots), default=0)
        self.degree = degree
        self.nbr_var = np.zeros((n, degree), dtype=np.int64)
        self.nbr_table = np.zeros((n, degree, lmax, lmax))
        for i, s in enumerate(slots):
            for k, (j, t) in enumerate(s):
                self.nbr_var[i, k] = j
                self.nbr_table[i, k] = t

        self.higher_by_var: list[list[tuple[Factor, int]]] = [[] for _ in range(n)]
        for factor in self.higher:
            for pos, v in enumerate(factor.scope):
                self.higher_by_var[v].append((factor, pos))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_variables, self.num_labels)


def _fail(index: int | None, message: str):
    prefix = f"factor {index}: " if index is not None else ""
    raise FieldError(prefix + message)


def validate(field: DiscreteField) -> DiscreteField:
    """Check every field invariant and return the normalized field.

    Normalization merges duplicate unary factors on the same variable by
    adding their tables; the merged unary takes the position of the first
    one. Raises :class:`FieldError` naming the offending factor.
    """
    n = field.num_variables
    if n < 1:
        raise FieldError("field must have at least one variable")
    if len(field.cardinalities) != n:
        raise FieldError(
            f"expected {n} cardinalities, got {len(field.cardinalities)}"
        )
    for i, c in enumerate(field.cardinalities):
        if c < 2:
            raise FieldError(f"variable {i}: cardinality {c} < 2")

    merged: list[Factor] = []
    unary_pos: dict[int, int] = {}
    for idx, factor in enumerate(field.factors):
        scope = factor.scope
        if len(scope) < 1:
            _fail(idx, "empty scope")
        if len(scope) > MAX_ARITY:
            _fail(idx, f"arity {len(scope)} exceeds the enumeration cap of {MAX_ARITY}")
        if len(set(scope)) != len(scope):
            _fail(idx, "duplicate variable in scope")
        for v in scope:
            if not 0 <= v < n:
                _fail(idx, f"scope index {v} out of range [0, {n})")
        shape = tuple(field.cardinalities[v] for v in scope)
        size = math.prod(shape)
        if size > MAX_TABLE_SIZE:
            _fail(idx, f"table size {size} exceeds {MAX_TABLE_SIZE}")
        if factor.table.size != size:
            _fail(idx, f"table has {factor.table.size} entries, scope requires {size}")
        if not np.all(np.isfinite(factor.table)):
            _fail(idx, "non-finite potential")
        table = factor.table.reshape(shape)
        if len(scope) == 1 and scope[0] in unary_pos:
            pos = unary_pos[scope[0]]
            merged[pos] = Factor(scope, merged[pos].table + table)
            continue
        if len(scope) == 1:
            unary_pos[scope[0]] = len(merged)
        merged.append(factor if factor.table.shape == shape else Factor(scope, table))
    return DiscreteField(n, field.cardinalities, tuple(merged))


# ---------------------------------------------------------------------------
# UAI MARKOV format


def _tokens(text: str) -> Iterator[tuple[str, int, int]]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        col = 0
        for tok in line.split():
            col = line.index(tok, col)
            yield tok, lineno, col + 1
            col += len(tok)


class _TokenStream:
    def __init__(self, text: str):
        self._it = _tokens(text)
        self.last = (None, None)

    def next(self, what: str) -> tuple[str, int, int]:
        try:
            tok, line, col = next(self._it)
        except StopIteration:
            raise UAIFormatError(f"unexpected end of input while reading {what}", *self.last)
        self.last = (line, col)
        return tok, line, col

    def integer(self, what: str) -> int:
        tok, line, col = self.next(what)
        try:
            value = int(tok)
        except ValueError:
            raise UAIFormatError(f"expected integer for {what}, got {tok!r}", line, col)
        if value < 0:
            raise UAIFormatError(f"negative value for {what}", line, col)
        return value

    def real(self, what: str) -> tuple[float, int, int]:
        tok, line, col = self.next(what)
        try:
            return float(tok), line, col
        except ValueError:
            raise UAIFormatError(f"expected number for {what}, got {tok!r}", line, col)

    def exhausted(self) -> tuple[str, int, int] | None:
        return next(self._it, None)


def parse_uai(text: str) -> DiscreteField:
    """Parse a UAI MARKOV network; table entries become ``log`` potentials."""
    ts = _TokenStream(text)
    tok, line, col = ts.next("header")
    if tok.upper() != "MARKOV":
        raise UAIFormatError(f"expected header 'MARKOV', got {tok!r}", line, col)
    n = ts.integer("number of variables")
    cards = [ts.integer(f"cardinality of variable {i}") for i in range(n)]
    num_factors = ts.integer("number of factors")

    scopes = []
    for f in range(num_factors):
        k = ts.integer(f"arity of factor {f}")
        scope = []
        for _ in range(k):
            v = ts.integer(f"scope of factor {f}")
            if v >= n:
                raise UAIFormatError(
                    f"factor {f}: scope index {v} out of range [0, {n})", *ts.last
                )
            scope.append(v)
        scopes.append(tuple(scope))

    factors = []
    for f, scope in enumerate(scopes):
        count = ts.integer(f"entry count of factor {f}")
        line, col = ts.last
        expected = math.prod(cards[v] for v in scope)
        if count != expected:
            raise UAIFormatError(
                f"factor {f}: entry count {count} does not match scope size {expected}",
                line,
                col,
            )
        values = np.empty(count)
        for e in range(count):
            x, line, col = ts.real(f"entry {e} of factor {f}")
            if not x > 0 or not math.isfinite(x):
                raise UAIFormatError(
                    f"factor {f}: table entry {x!r} must be strictly positive and finite",
                    line,
                    col,
                )
            values[e] = x
        factors.append(Factor(scope, np.log(values)))

    extra = ts.exhausted()
    if extra is not None:
        raise UAIFormatError(f"trailing token {extra[0]!r}", extra[1], extra[2])
    try:
        return validate(DiscreteField(n, tuple(cards), tuple(factors)))
    except FieldError as exc:
        raise UAIFormatError(str(exc)) from exc


def serialize_uai(field: DiscreteField) -> str:
    """Write ``field`` in UAI MARKOV format, exponentiating log-potentials."""
    lines = ["MARKOV", str(field.num_variables)]
    lines.append(" ".join(str(c) for c in field.cardinalities))
    lines.append(str(len(field.factors)))
    for f in field.factors:
        lines.append(" ".join(str(x) for x in (f.arity, *f.scope)))
    for f in field.factors:
        lines.append("")
        lines.append(str(f.table.size))
        lines.append(" ".join(repr(float(x)) for x in np.exp(f.table.ravel())))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Internal JSON format


def field_to_dict(field: DiscreteField, truth: GroundTruth | None = None,
                  meta: dict | None = None) -> dict:
    return {
        "format": "proxmf-field",
        "version": 1,
        "num_variables": field.num_variables,
        "cardinalities": list(field.cardinalities),
        "factors": [
            {"scope": list(f.scope), "table": [float(x) for x in f.table.ravel()]}
            for f in field.factors
        ],
        "truth": None if truth is None else {
            "labels": truth.labels.tolist(),
            "mask": truth.mask.tolist(),
        },
        "meta": meta or {},
    }


def field_from_dict(data: dict) -> tuple[DiscreteField, GroundTruth | None, dict]:
    if data.get("format") != "proxmf-field":
        raise ValueError("not a proxmf field document")
    field = DiscreteField(
        data["num_variables"],
        tuple(data["cardinalities"]),
        tuple(Factor(tuple(f["scope"]), f["table"]) for f in data["factors"]),
    )
    field = validate(field)
    truth = None
    if data.get("truth") is not None:
        truth = GroundTruth(data["truth"]["labels"], data["truth"]["mask"])
        if len(truth.labels) != field.num_variables:
            raise ValueError("ground truth length does not match the field")
        if np.any(truth.labels >= np.asarray(field.cardinalities)) or np.any(truth.labels < 0):
            raise ValueError("ground truth label out of range")
    return field, truth, data.get("meta", {})


def dumps_field(field: DiscreteField, truth: GroundTruth | None = None,
                meta: dict | None = None) -> str:
    return json.dumps(field_to_dict(field, truth, meta), sort_keys=True)


def loads_field(text: str) -> tuple[DiscreteField, GroundTruth | None, dict]:
    return field_from_dict(json.loads(text))


def load_field(path) -> tuple[DiscreteField, GroundTruth | None, dict]:
    """Load a ``.uai`` or ``.json`` file."""
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        return loads_field(text)
    return parse_uai(text), None, {}


# ---------------------------------------------------------------------------
# Synthetic instances

KINDS = ("grid", "chain", "complete")
COUPLINGS = ("attractive", "repulsive", "mixed")


def _edges(kind: str, rows: int, cols: int) -> list[tuple[int, int]]:
    n = rows * cols
    if kind == "grid":
        edges = []
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c
                if c + 1 < cols:
                    edges.append((i, i + 1))
                if r + 1 < rows:
                    edges.append((i, i + cols))
        return edges
    if kind == "chain":
        return [(i, i + 1) for i in range(n - 1)]
    if kind == "complete":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")


def potts_field(kind: str, rows: int, cols: int, labels: int,
                weight: float | Sequence[float], unary: np.ndarray | None = None) -> DiscreteField:
    """Field with Potts pairwise tables ``w * [x_i == x_j]`` on a fixed graph.

    ``weight`` is either one coupling shared by every edge or one per edge;
    ``unary`` is an optional ``(N, labels)`` array of unary log-potentials.
    """
    if labels < 2:
        raise ValueError("labels must be >= 2")
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    n = rows * cols
    edges = _edges(kind, rows, cols)
    weights = np.broadcast_to(np.asarray(weight, dtype=np.float64), (len(edges),))
    unary = np.zeros((n, labels)) if unary is None else np.asarray(unary, dtype=np.float64)
    eye = np.eye(labels, dtype=bool)
    factors = [Factor((i,), unary[i]) for i in range(n)]
    factors += [
        Factor((i, j), np.where(eye, w, 0.0)) for (i, j), w in zip(edges, weights)
    ]
    return validate(DiscreteField(n, (labels,) * n, tuple(factors)))


def generate_synthetic(kind: str, rows: int, cols: int, labels: int,
                       unary_scale: float, pair_scale: float, coupling: str,
                       seed: int, map_cap: int = 2**20) -> tuple[DiscreteField, GroundTruth]:
    """Random Potts instance on a grid, chain or complete graph.

    Unaries are uniform in ``[-unary_scale, unary_scale]``; edge weights are
    uniform in ``[0, s]``, ``[-s, 0]`` or ``[-s, s]`` for attractive,
    repulsive and mixed coupling. The ground truth is the exact MAP for
    fields with at most 15 variables whose joint space fits ``map_cap``, and
    the unary argmax otherwise.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    if coupling not in COUPLINGS:
        raise ValueError(f"unknown coupling {coupling!r}; expected one of {COUPLINGS}")
    if rows < 1 or cols < 1:
        raise ValueError("rows * cols must be >= 1")
    if labels < 2:
        raise ValueError("labels must be >= 2")
    if labels**2 > MAX_TABLE_SIZE:
        raise ValueError(f"pairwise table size {labels**2} exceeds {MAX_TABLE_SIZE}")
    if unary_scale < 0 or pair_scale < 0:
        raise ValueError("scales must be >= 0")

    rng = np.random.default_rng(seed)
    n = rows * cols
    edges = _edges(kind, rows, cols)
    unary = rng.uniform(-1.0, 1.0, size=(n, labels)) * unary_scale
    u = rng.uniform(0.0, 1.0, size=len(edges))
    if coupling == "attractive":
        weights = u * pair_scale
    elif coupling == "repulsive":
        weights = -u * pair_scale
    else:
        weights = (2.0 * u - 1.0) * pair_scale
    field = potts_field(kind, rows, cols, labels, weights, unary)

    if n <= 15 and labels**n <= map_cap:
        from .oracle import enumerate_field

        truth_labels = enumerate_field(field, cap=map_cap).map_assignment
    else:
        truth_labels = np.argmax(unary, axis=1)
    return field, GroundTruth(truth_labels, np.ones(n, dtype=bool))
