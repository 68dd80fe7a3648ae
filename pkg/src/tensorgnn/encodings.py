"""Per-node structural encodings: random-walk return probabilities and
Laplacian eigenvector coordinates."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .eigen import symmetric_eig
from .graph import AdjacencyView, Graph, build_adjacency

EncodingKind = Literal["rw_diag", "laplacian_eig"]
DEFAULT_RW_STEPS = 20


@dataclass(frozen=True, eq=False)
class EncodingMatrix:
    rows: np.ndarray
    kind: str
    k: int

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.k:
            raise ValueError(f"rows has shape {rows.shape}, expected (n, {self.k})")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def num_nodes(self) -> int:
        return self.rows.shape[0]

    def to_json(self) -> dict:
        return {"kind": self.kind, "k": self.k, "rows": self.rows.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> EncodingMatrix:
        k = int(obj["k"])
        rows = np.asarray(obj["rows"], dtype=np.float64).reshape(-1, k)
        return cls(rows, obj["kind"], k)


def _adj(x: Graph | AdjacencyView) -> AdjacencyView:
    return build_adjacency(x) if isinstance(x, Graph) else x


def rw_transition(adj: Graph | AdjacencyView) -> np.ndarray:
    """R = A D^-1, column-stochastic; columns of isolated nodes are zero."""
    adj = _adj(adj)
    a = adj.dense()
    deg = adj.degrees.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return a * inv[None, :]


def rw_diag_encoding(adj: Graph | AdjacencyView, k: int = DEFAULT_RW_STEPS) -> EncodingMatrix:
    """Row i holds the return probabilities ``[R_ii, (R^2)_ii, ..., (R^k)_ii]``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    r = rw_transition(adj)
    n = r.shape[0]
    out = np.zeros((n, k))
    power = np.eye(n)
    for t in range(k):
        power = power @ r
        out[:, t] = np.diag(power)
    # rounding can push exact zeros of bipartite odd powers to tiny negatives
    np.clip(out, 0.0, 1.0, out=out)
    return EncodingMatrix(out, "rw_diag", k)


def laplacian(adj: Graph | AdjacencyView) -> np.ndarray:
    adj = _adj(adj)
    return np.diag(adj.degrees.astype(np.float64)) - adj.dense()


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (lowest index on ties) is positive."""
    v = np.array(vectors, dtype=np.float64)
    if v.size == 0:
        return v
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[idx, np.arange(v.shape[1])] < 0, -1.0, 1.0)
    return v * signs[None, :]


def laplacian_eig_encoding(
    adj: Graph | AdjacencyView,
    k: int,
    *,
    skip_trivial: bool = True,
    descending: bool = False,
    tol: float = 1e-10,
) -> EncodingMatrix:
    """Eigenvector coordinates of L = D - A as per-node features.

    Eigenvectors are ordered by ascending eigenvalue and the first one (the
    constant vector on connected graphs) is dropped unless ``skip_trivial`` is
    False. ``descending`` reverses the order before the skip is applied, so
    with ``descending=True`` the dropped vector is the top one. Missing
    columns are zero-padded.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lap = laplacian(adj)
    n = lap.shape[0]
    _, vecs = symmetric_eig(lap, tol=tol)
    vecs = fix_signs(vecs)
    if descending:
        vecs = vecs[:, ::-1]
    if skip_trivial:
        vecs = vecs[:, 1:]
    out = np.zeros((n, k))
    m = min(k, vecs.shape[1])
    out[:, :m] = vecs[:, :m]
    return EncodingMatrix(out, "laplacian_eig", k)


def encode_graph(g: Graph, kind: str = "rw_diag", k: int = DEFAULT_RW_STEPS, **kw) -> EncodingMatrix:
    if kind == "rw_diag":
        return rw_diag_encoding(g, k)
    if kind == "laplacian_eig":
        return laplacian_eig_encoding(g, k, **kw)
    raise ValueError(f"unknown encoding kind {kind!r}")


def constant_encoding(g: Graph, k: int, value: float = 1.0) -> EncodingMatrix:
    """Structure-free encoding: every row equal to ``value``."""
    return EncodingMatrix(np.full((g.num_nodes, k), value), "constant", k)


def write_encodings(path: str | Path, encs: Iterable[EncodingMatrix]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for e in encs:
            fh.write(json.dumps(e.to_json()) + "\n")


def read_encodings(path: str | Path) -> list[EncodingMatrix]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"encoding file not found: {path}")
    with path.open() as fh:
        return [EncodingMatrix.from_json(json.loads(line)) for line in fh if line.strip()]
