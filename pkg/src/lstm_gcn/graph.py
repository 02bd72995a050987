"""Dated supplier-customer graphs and the operators built from them."""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc

MIN_CONFIDENCE = 0.2
EDGE_HEADER = ["source", "target", "confidence", "last_updated"]


class GraphError(ValueError):
    """Malformed edge data or an unknown node identifier."""


def parse_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value).strip())
    except ValueError as exc:
        raise GraphError(f"malformed date {value!r}") from exc


@dataclass(frozen=True)
class Edge:
    """A supplier-customer record; ``confidence`` is a fraction in [0, 1]."""

    source: str
    target: str
    confidence: float
    valid_from: dt.date


def read_edges_csv(path) -> list[Edge]:
    """Read ``source,target,confidence,last_updated`` with confidence in percent."""
    edges = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EDGE_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise GraphError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                conf = float(row["confidence"]) / 100.0
            except ValueError as exc:
                raise GraphError(f"{path}:{line}: bad confidence {row['confidence']!r}") from exc
            edges.append(Edge(row["source"], row["target"], conf, parse_date(row["last_updated"])))
    return edges


def write_edges_csv(path, edges: Iterable[Edge]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_HEADER)
        for e in edges:
            w.writerow([e.source, e.target, repr(e.confidence * 100.0), e.valid_from.isoformat()])


@dataclass
class ValueChainGraph:
    """Undirected weighted graph; ``edges`` holds ``(i, j, weight, valid_from)`` with ``i < j``."""

    nodes: list[str]
    edges: list[tuple[int, int, float, dt.date]]
    output_mask: np.ndarray = None
    as_of: dt.date | None = None

    def __post_init__(self):
        n = len(self.nodes)
        if self.output_mask is None:
            self.output_mask = np.ones(n, dtype=bool)
        self.output_mask = np.asarray(self.output_mask, dtype=bool)
        for i, j, _, _ in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) out of range for {n} nodes")

    @property
    def n(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j, w, _ in self.edges:
            a[i, j] = a[j, i] = w
        return a


def build_graph(
    edges: Iterable[Edge],
    as_of,
    nodes: Sequence[str] | None = None,
    output_mask=None,
    min_confidence: float = MIN_CONFIDENCE,
    strict: bool = True,
) -> ValueChainGraph:
    """Graph of the edges valid on ``as_of`` with confidence at least ``min_confidence``.

    Directions are merged; a pair seen more than once keeps its largest confidence.
    With ``strict`` an edge naming a node outside ``nodes`` raises, otherwise it
    is skipped.
    """
    as_of = parse_date(as_of)
    edges = list(edges)
    if nodes is None:
        nodes = sorted({e.source for e in edges} | {e.target for e in edges})
    nodes = list(nodes)
    index = {name: k for k, name in enumerate(nodes)}
    best: dict[tuple[int, int], tuple[float, dt.date]] = {}
    for e in edges:
        if e.source not in index or e.target not in index:
            if strict:
                unknown = e.source if e.source not in index else e.target
                raise GraphError(f"unknown node identifier {unknown!r}")
            continue
        valid_from = parse_date(e.valid_from)
        if valid_from > as_of or e.confidence < min_confidence:
            continue
        i, j = index[e.source], index[e.target]
        if i == j:
            continue
        key = (min(i, j), max(i, j))
        prev = best.get(key)
        if prev is None or e.confidence > prev[0]:
            best[key] = (float(e.confidence), valid_from)
    ordered = [(i, j, w, d) for (i, j), (w, d) in sorted(best.items())]
    return ValueChainGraph(nodes, ordered, output_mask, as_of)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` for one snapshot."""

    matrix: np.ndarray
    snapshot_date: dt.date | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def normalize(g: ValueChainGraph) -> NormalizedAdjacency:
    a = g.adjacency() + np.eye(g.n)
    # sorted row sums make the degrees independent of node order
    deg = np.sort(a, axis=1).sum(axis=1)
    m = a / np.sqrt(np.outer(deg, deg))
    return NormalizedAdjacency(m, g.as_of)


def chebyshev_basis(g, k: int, lambda_max: float | None = 2.0) -> list[np.ndarray]:
    """``[T_0, ..., T_{k-1}]`` of the rescaled Laplacian ``2 L / lambda_max - I``.

    ``L = I - D^-1/2 (A + I) D^-1/2``. Pass ``lambda_max=None`` to use the
    largest eigenvalue of ``L`` instead of the conventional bound 2.
    """
    if k < 1:
        raise ValueError("Chebyshev order must be at least 1")
    adj = g.matrix if isinstance(g, NormalizedAdjacency) else normalize(g).matrix
    n = adj.shape[0]
    lap = np.eye(n) - adj
    if lambda_max is None:
        lambda_max = float(np.linalg.eigvalsh(lap).max())
        if lambda_max <= 0:
            lambda_max = 2.0
    scaled = 2.0 * lap / lambda_max - np.eye(n)
    basis = [np.eye(n)]
    if k > 1:
        basis.append(scaled)
    for _ in range(2, k):
        basis.append(2.0 * scaled @ basis[-1] - basis[-2])
    return basis


def connected_components(g: ValueChainGraph) -> list[set[int]]:
    """Maximal connected node sets, ordered by their smallest member."""
    n = g.n
    if n == 0:
        return []
    rows = [i for i, j, *_ in g.edges] + [j for i, j, *_ in g.edges]
    cols = [j for i, j, *_ in g.edges] + [i for i, j, *_ in g.edges]
    mat = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = _cc(mat, directed=False)
    groups: dict[int, set[int]] = {}
    for node, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(node)
    return sorted(groups.values(), key=min)


@dataclass
class GraphStats:
    node_count: int
    edge_count: int
    density: float
    component_count: int
    max_component_size: int
    mean_component_size: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def graph_stats(g: ValueChainGraph) -> GraphStats:
    n = g.n
    m = len(g.edges)
    comps = connected_components(g)
    pairs = n * (n - 1) / 2
    return GraphStats(
        node_count=n,
        edge_count=m,
        density=m / pairs if pairs else 0.0,
        component_count=len(comps),
        max_component_size=max((len(c) for c in comps), default=0),
        mean_component_size=n / len(comps) if comps else 0.0,
    )


@dataclass
class GraphTimeline:
    """Normalized snapshots of an accumulating edge list, cached per distinct edge set.

    Only edges passing the confidence floor matter; since edges never expire, the
    snapshot for a date is determined by how many of them are valid by then.
    """

    edges: list[Edge]
    nodes: list[str]
    min_confidence: float = MIN_CONFIDENCE
    strict: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        known = set(self.nodes)
        if self.strict:
            for e in self.edges:
                if e.source not in known or e.target not in known:
                    raise GraphError(f"unknown node identifier in edge {e.source!r}-{e.target!r}")
        kept = [e for e in self.edges if e.confidence >= self.min_confidence]
        kept.sort(key=lambda e: e.valid_from)
        self._sorted = kept
        self._dates = [e.valid_from for e in kept]

    def graph(self, as_of) -> ValueChainGraph:
        as_of = parse_date(as_of)
        count = bisect.bisect_right(self._dates, as_of)
        return build_graph(self._sorted[:count], as_of, self.nodes,
                           min_confidence=self.min_confidence, strict=False)

    def __call__(self, as_of) -> NormalizedAdjacency:
        as_of = parse_date(as_of)
        count = bisect.bisect_right(self._dates, as_of)
        if count not in self._cache:
            self._cache[count] = normalize(self.graph(as_of)).matrix
        return NormalizedAdjacency(self._cache[count], as_of)


def write_stats_json(path, stats: GraphStats) -> None:
    Path(path).write_text(stats.to_json() + "\n")
