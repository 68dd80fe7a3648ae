"""Immutable simple undirected graphs, CSR views and JSONL persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs or graph files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def canonical_edges(edges: Iterable[Sequence[int]], num_nodes: int) -> tuple[tuple[int, int], ...]:
    """Validate ``edges`` and return them as sorted ``(min, max)`` pairs."""
    seen: set[tuple[int, int]] = set()
    for e in edges:
        if len(e) != 2:
            raise GraphError(f"edge {e!r} is not a pair")
        i, j = int(e[0]), int(e[1])
        if i < 0 or j < 0 or i >= num_nodes or j >= num_nodes:
            raise GraphError(f"edge ({i}, {j}) has an endpoint outside [0, {num_nodes})")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
    return tuple(sorted(seen))


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with node features and a graph-level target.

    ``edges`` is stored canonically: each pair as ``(min, max)``, sorted.
    ``node_features`` has one row per node, ``target`` may be empty.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    node_features: np.ndarray
    target: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if int(self.num_nodes) < 0:
            raise GraphError(f"num_nodes must be >= 0, got {self.num_nodes}")
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        object.__setattr__(self, "edges", canonical_edges(self.edges, self.num_nodes))
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim == 1 and self.num_nodes == x.shape[0]:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != self.num_nodes:
            raise GraphError(
                f"node_features has shape {x.shape}, expected ({self.num_nodes}, d_in)"
            )
        object.__setattr__(self, "node_features", _frozen(x))
        object.__setattr__(self, "target", _frozen(np.asarray(self.target, dtype=np.float64).ravel()))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.edges == other.edges
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.target, other.target)
        )

    def __hash__(self) -> int:
        return hash((self.num_nodes, self.edges, self.node_features.tobytes(), self.target.tobytes()))

    def with_features(self, features: np.ndarray) -> Graph:
        return Graph(self.num_nodes, self.edges, features, self.target)

    def with_target(self, target: np.ndarray) -> Graph:
        return Graph(self.num_nodes, self.edges, self.node_features, target)

    def to_json(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "edges": [list(e) for e in self.edges],
            "features": self.node_features.tolist(),
            "target": self.target.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Graph:
        try:
            n = obj["num_nodes"]
            feats = obj["features"]
        except KeyError as exc:
            raise GraphError(f"graph record is missing key {exc}") from None
        feats = np.asarray(feats, dtype=np.float64).reshape(n, -1) if n else np.zeros((0, 1))
        return cls(n, obj.get("edges", []), feats, obj.get("target", []))


@dataclass(frozen=True, eq=False)
class AdjacencyView:
    """Compressed sparse row view of a graph's symmetric adjacency."""

    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray
    degrees: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.degrees)

    def neighbors(self, i: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[i] : self.csr_offsets[i + 1]]

    def dense(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix."""
        n = self.num_nodes
        a = np.zeros((n, n))
        rows = np.repeat(np.arange(n), self.degrees)
        a[rows, self.csr_neighbors] = 1.0
        return a


def build_adjacency(g: Graph) -> AdjacencyView:
    n = g.num_nodes
    # re-check: a Graph is validated on construction, but callers may pass
    # objects built with object.__setattr__ tricks
    edges = canonical_edges(g.edges, n)
    if edges:
        e = np.asarray(edges, dtype=np.int64)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    degrees = np.bincount(src, minlength=n).astype(np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(degrees, out=offsets[1:])
    for arr in (offsets, dst, degrees):
        arr.setflags(write=False)
    return AdjacencyView(offsets, dst, degrees)


def permute_graph(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel node ``i`` as ``perm[i]``; feature rows move with their nodes."""
    perm = np.asarray(perm, dtype=np.int64)
    n = g.num_nodes
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise GraphError(f"perm is not a bijection on {n} nodes")
    feats = np.empty_like(g.node_features)
    feats[perm] = g.node_features
    edges = [(int(perm[i]), int(perm[j])) for i, j in g.edges]
    return Graph(n, edges, feats, g.target)


def figure1_pair() -> tuple[Graph, Graph]:
    """The two 10-node graphs that 1-WL cannot tell apart.

    Left: two hexagons sharing the edge (4, 5). Hexagon one is
    0-1-3-5-4-2-0, hexagon two is 4-5-6-8-9-7-4.

    Right: two pentagons 0-1-3-4-2-0 and 5-6-9-8-7-5 joined by the bridge
    (4, 5).

    Labels follow the drawing left to right, top-down within columns, so the
    degree-3 nodes are 4 and 5 in both graphs.
    """
    left = [(0, 1), (0, 2), (2, 4), (4, 5), (3, 5), (1, 3), (5, 6), (4, 7), (7, 9), (8, 9), (6, 8)]
    right = [(0, 1), (0, 2), (2, 4), (4, 5), (3, 4), (1, 3), (5, 6), (5, 7), (7, 8), (8, 9), (6, 9)]
    ones = np.ones((10, 1))
    return Graph(10, left, ones), Graph(10, right, ones)


def degree_sequence(g: Graph) -> list[int]:
    return sorted(build_adjacency(g).degrees.tolist())


# -- persistence -----------------------------------------------------------


@dataclass
class Dataset:
    """A list of graphs plus free-form generator metadata."""

    graphs: list[Graph]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self) -> Iterator[Graph]:
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]


def write_jsonl(path: str | Path, graphs: Iterable[Graph], meta: dict | None = None) -> None:
    """Write one graph per line; an optional leading ``{"meta": ...}`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        if meta:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for g in graphs:
            fh.write(json.dumps(g.to_json()) + "\n")


def read_jsonl(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"graph file not found: {path}")
    graphs: list[Graph] = []
    meta: dict = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if "meta" in obj and "num_nodes" not in obj:
                meta = obj["meta"]
                continue
            try:
                graphs.append(Graph.from_json(obj))
            except GraphError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
    return Dataset(graphs, meta)
