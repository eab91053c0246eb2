"""Graph representation, edge-list exchange format and synthetic feeder corpora.

Graphs are undirected and simple. Edges are stored normalized as ``(min, max)``
pairs, so ``(u, v)`` and ``(v, u)`` are the same edge.
"""
from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphFormatError(ValueError):
    """Malformed edge-list text or corpus directory."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _normalize(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Graph:
    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_nodes < 0:
            raise ValueError(f"n_nodes must be non-negative, got {self.n_nodes}")
        for u, v in self.edges:
            if not (u < v):
                raise ValueError(f"edge {(u, v)} is not normalized (u < v required)")
            if u < 0 or v >= self.n_nodes:
                raise ValueError(f"edge {(u, v)} out of range for {self.n_nodes} nodes")

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        """Build a graph, rejecting self-loops and duplicates after normalization."""
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            e = _normalize(u, v)
            if e in seen:
                raise ValueError(f"duplicate edge {e}")
            seen.add(e)
        return cls(int(n_nodes), frozenset(seen))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def edge_array(self) -> np.ndarray:
        """Sorted edges as an ``(m, 2)`` int array."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(self.sorted_edges(), dtype=np.int64)

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Graph with node ``i`` renamed to ``perm[i]``."""
        perm = list(perm)
        return Graph(self.n_nodes, frozenset(_normalize(perm[u], perm[v]) for u, v in self.edges))


@dataclass(frozen=True)
class Corpus:
    graphs: tuple
    name: str = "corpus"

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]


@dataclass(frozen=True)
class CorpusStats:
    node_counts: np.ndarray
    edge_counts: np.ndarray
    average_degrees: np.ndarray
    component_counts: np.ndarray

    @property
    def mean_nodes(self) -> float:
        return float(np.mean(self.node_counts))

    @property
    def std_nodes(self) -> float:
        return float(np.std(self.node_counts))

    @property
    def mean_edges(self) -> float:
        return float(np.mean(self.edge_counts))

    @property
    def std_edges(self) -> float:
        return float(np.std(self.edge_counts))

    @property
    def mean_degree(self) -> float:
        return float(np.mean(self.average_degrees))

    @property
    def std_degree(self) -> float:
        # population std (ddof=0)
        return float(np.std(self.average_degrees))

    def as_dict(self) -> dict:
        return {
            "graphs": int(len(self.node_counts)),
            "nodes_mean": self.mean_nodes,
            "nodes_std": self.std_nodes,
            "edges_mean": self.mean_edges,
            "edges_std": self.std_edges,
            "avg_degree_mean": self.mean_degree,
            "avg_degree_std": self.std_degree,
            "disconnected_graphs": int(np.sum(self.component_counts > 1)),
        }


# --------------------------------------------------------------------------
# exchange format

def parse_edge_list(text: str) -> Graph:
    """Parse the ``N M`` / ``u v`` edge-list format.

    >>> parse_edge_list("3 2\\n0 1\\n1 2").sorted_edges()
    [(0, 1), (1, 2)]
    """
    lines = text.split("\n")
    # tolerate a trailing newline (or several) but nothing else blank
    while lines and lines[-1].strip() == "":
        lines.pop()
    if not lines:
        raise GraphFormatError("empty input, expected header 'N M'", line=1)
    header = lines[0].split()
    if len(header) != 2:
        raise GraphFormatError(f"malformed header {lines[0]!r}, expected 'N M'", line=1)
    try:
        n, m = int(header[0]), int(header[1])
    except ValueError:
        raise GraphFormatError(f"malformed header {lines[0]!r}, expected integers", line=1) from None
    if n < 0 or m < 0:
        raise GraphFormatError("negative node or edge count in header", line=1)
    if len(lines) - 1 != m:
        # point at the first missing line, or the first surplus one
        bad = len(lines) + 1 if len(lines) - 1 < m else m + 2
        raise GraphFormatError(f"header declares {m} edges but found {len(lines) - 1} edge lines",
                               line=bad)
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"expected 'u v', got {line!r}", line=lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"non-integer node index in {line!r}", line=lineno) from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"node index out of range [0, {n}) in {line!r}", line=lineno)
        if u == v:
            raise GraphFormatError(f"self-loop on node {u}", line=lineno)
        e = _normalize(u, v)
        if e in seen:
            raise GraphFormatError(f"duplicate edge {e}", line=lineno)
        seen.add(e)
    return Graph(n, frozenset(seen))


def serialize_edge_list(g: Graph) -> str:
    out = [f"{g.n_nodes} {g.n_edges}\n"]
    out.extend(f"{u} {v}\n" for u, v in g.sorted_edges())
    return "".join(out)


def dense_adjacency(g: Graph) -> np.ndarray:
    a = np.zeros((g.n_nodes, g.n_nodes), dtype=np.float64)
    if g.edges:
        e = g.edge_array()
        a[e[:, 0], e[:, 1]] = 1.0
        a[e[:, 1], e[:, 0]] = 1.0
    return a


def connected_components(g: Graph) -> int:
    """Number of connected components, by breadth-first traversal."""
    adj = [[] for _ in range(g.n_nodes)]
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * g.n_nodes
    count = 0
    for s in range(g.n_nodes):
        if seen[s]:
            continue
        count += 1
        seen[s] = True
        queue = deque([s])
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if not seen[y]:
                    seen[y] = True
                    queue.append(y)
    return count


# --------------------------------------------------------------------------
# synthetic radial feeders

def generate_radial_feeder(n_nodes: int, ring_closures: int, branching_bias: float,
                           rng: np.random.Generator) -> Graph:
    """Random radial feeder: a tree grown from node 0 plus ``ring_closures`` extra edges.

    Node ``v`` attaches to ``v - 1`` (extending the current lateral) with
    probability ``1 - branching_bias``, otherwise to a uniformly chosen earlier
    node, so bias 0 gives a chain and bias 1 a bushy random recursive tree.
    Each ring closure joins two distinct, non-adjacent nodes.
    """
    if n_nodes < 2:
        raise ValueError(f"n_nodes must be >= 2, got {n_nodes}")
    if ring_closures < 0:
        raise ValueError(f"ring_closures must be >= 0, got {ring_closures}")
    if not 0.0 <= branching_bias <= 1.0:
        raise ValueError(f"branching_bias must lie in [0, 1], got {branching_bias}")
    free_pairs = n_nodes * (n_nodes - 1) // 2 - (n_nodes - 1)
    if ring_closures > free_pairs:
        raise ValueError(f"cannot place {ring_closures} ring closures on {n_nodes} nodes "
                         f"(only {free_pairs} non-tree pairs)")

    edges = set()
    for v in range(1, n_nodes):
        if rng.random() < branching_bias:
            parent = int(rng.integers(0, v))
        else:
            parent = v - 1
        edges.add((parent, v))

    if ring_closures:
        if ring_closures * 4 > free_pairs:
            # dense request: draw from the explicit complement
            pairs = [(u, v) for u in range(n_nodes) for v in range(u + 1, n_nodes)
                     if (u, v) not in edges]
            pick = rng.choice(len(pairs), size=ring_closures, replace=False)
            edges.update(pairs[i] for i in sorted(pick))
        else:
            added = 0
            while added < ring_closures:
                u, v = (int(x) for x in rng.choice(n_nodes, size=2, replace=False))
                e = _normalize(u, v)
                if e not in edges:
                    edges.add(e)
                    added += 1
    return Graph(n_nodes, frozenset(edges))


@dataclass(frozen=True)
class FeederPreset:
    node_range: tuple[int, int]
    closure_range: tuple[int, int]
    bias_range: tuple[float, float]


FEEDER_PRESETS = {
    # low-entropy regime: narrow sizes, nearly pure trees, one branching style
    "homogeneous": FeederPreset(node_range=(30, 60), closure_range=(0, 1), bias_range=(0.3, 0.3)),
    # wide sizes, several rings, every branching style
    "heterogeneous": FeederPreset(node_range=(30, 300), closure_range=(0, 5), bias_range=(0.0, 1.0)),
}


def synthetic_corpus(preset: str, count: int, seed: int, name: str | None = None) -> Corpus:
    """Corpus of ``count`` radial feeders drawn from a named preset.

    Graph ``i`` uses its own stream ``[seed, i]``, so the first ``k`` graphs do
    not depend on ``count``.
    """
    try:
        p = FEEDER_PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown feeder preset {preset!r}; "
                         f"choose from {sorted(FEEDER_PRESETS)}") from None
    graphs = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        n = int(rng.integers(p.node_range[0], p.node_range[1] + 1))
        closures = int(rng.integers(p.closure_range[0], p.closure_range[1] + 1))
        lo, hi = p.bias_range
        bias = lo if lo == hi else float(rng.uniform(lo, hi))
        graphs.append(generate_radial_feeder(n, closures, bias, rng))
    return Corpus(graphs, name or f"{preset}-{seed}")


def corpus_stats(c: Corpus) -> CorpusStats:
    if len(c) == 0:
        raise ValueError("corpus is empty")
    nodes = np.array([g.n_nodes for g in c], dtype=np.int64)
    edges = np.array([g.n_edges for g in c], dtype=np.int64)
    return CorpusStats(
        node_counts=nodes,
        edge_counts=edges,
        average_degrees=2.0 * edges / nodes,
        component_counts=np.array([connected_components(g) for g in c], dtype=np.int64),
    )


# --------------------------------------------------------------------------
# corpus directories

CORPUS_INDEX = "corpus.json"


def write_corpus(c: Corpus, out_dir: str | os.PathLike) -> Path:
    """Write one ``.edgelist`` per graph plus ``corpus.json`` listing them in order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(max(len(c) - 1, 0))))
    names = []
    for i, g in enumerate(c):
        fname = f"graph_{i:0{width}d}.edgelist"
        with open(out / fname, "w", encoding="ascii", newline="\n") as fh:
            fh.write(serialize_edge_list(g))
        names.append(fname)
    index = {"name": c.name, "graphs": names}
    with open(out / CORPUS_INDEX, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(index, fh, indent=1)
        fh.write("\n")
    return out


def read_corpus(in_dir: str | os.PathLike) -> Corpus:
    src = Path(in_dir)
    index_path = src / CORPUS_INDEX
    if not index_path.is_file():
        raise GraphFormatError(f"{index_path} not found; not a corpus directory")
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
        names = index["graphs"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise GraphFormatError(f"corrupt corpus index {index_path}: {exc}") from None
    graphs = []
    for fname in names:
        path = src / fname
        try:
            graphs.append(parse_edge_list(path.read_text(encoding="ascii")))
        except GraphFormatError as exc:
            raise GraphFormatError(f"{path}: {exc}") from None
    return Corpus(graphs, index.get("name", src.name))
