"""Seeded synthetic graphs and the multiplicative feature-structure task."""

from __future__ import annotations

import numpy as np

from .encodings import DEFAULT_RW_STEPS, rw_diag_encoding
from .graph import Dataset, Graph, GraphError
from .rng import stream


def cycle(n: int) -> Graph:
    """Cycle on n nodes (n=1: isolated node, n=2: single edge)."""
    if n < 1:
        raise GraphError(f"cycle needs n >= 1, got {n}")
    if n == 1:
        edges = []
    elif n == 2:
        edges = [(0, 1)]
    else:
        edges = [(i, (i + 1) % n) for i in range(n)]
    return Graph(n, edges, np.ones((n, 1)))


def path(n: int) -> Graph:
    if n < 1:
        raise GraphError(f"path needs n >= 1, got {n}")
    return Graph(n, [(i, i + 1) for i in range(n - 1)], np.ones((n, 1)))


def fused_cycles(a: int, b: int) -> Graph:
    """An a-cycle and a b-cycle sharing the edge (0, 1)."""
    if a < 3 or b < 3:
        raise GraphError(f"fused_cycles needs cycle lengths >= 3, got ({a}, {b})")
    n = a + b - 2
    first = list(range(a))
    second = [0, 1] + list(range(a, n))
    edges = {tuple(sorted((first[i], first[(i + 1) % a]))) for i in range(a)}
    edges |= {tuple(sorted((second[i], second[(i + 1) % b]))) for i in range(b)}
    return Graph(n, sorted(edges), np.ones((n, 1)))


def erdos_renyi(n: int, p: float, seed: int, d_in: int = 1) -> Graph:
    if n < 1:
        raise GraphError(f"erdos_renyi needs n >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"edge probability must lie in [0, 1], got {p}")
    rng = stream(seed, "graph", "erdos_renyi")
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return Graph(n, list(zip(iu[keep].tolist(), ju[keep].tolist())), np.ones((n, d_in)))


def multiplicative_task(
    n: int,
    p: float,
    d_in: int,
    num_graphs: int,
    seed: int,
    k: int = DEFAULT_RW_STEPS,
    size_jitter: int = 3,
) -> Dataset:
    """Regression graphs whose target needs node-level feature x structure products.

    A bilinear map ``B`` (d_in x k) is drawn once; each graph has
    ``n +/- size_jitter`` nodes, G(n, p) edges, standard normal features
    ``x_i`` and target ``sum_i x_i^T B p_i`` where ``p_i`` is the node's
    k-step random-walk return-probability vector. ``B`` is scaled so targets
    have unit standard deviation over the generated set.
    """
    if n < 1 or num_graphs < 1 or d_in < 1 or k < 1:
        raise GraphError("multiplicative_task needs positive n, num_graphs, d_in and k")
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"edge probability must lie in [0, 1], got {p}")
    if size_jitter < 0 or size_jitter >= n:
        raise GraphError(f"size_jitter must lie in [0, n), got {size_jitter}")
    b = stream(seed, "synthetic", "bilinear").standard_normal((d_in, k))
    sizes = stream(seed, "synthetic", "sizes").integers(n - size_jitter, n + size_jitter + 1, size=num_graphs)
    feat_rng = stream(seed, "synthetic", "features")
    raw = []
    for gi, size in enumerate(sizes):
        g = erdos_renyi(int(size), p, seed=_child_seed(seed, gi))
        x = feat_rng.standard_normal((g.num_nodes, d_in))
        enc = rw_diag_encoding(g, k).rows
        raw.append((g, x, float(np.einsum("nd,de,ne->", x, b, enc))))
    std = float(np.std([t for _, _, t in raw]))
    scale = 1.0 / std if std > 0 else 1.0
    b = b * scale
    graphs = [Graph(g.num_nodes, g.edges, x, [t * scale]) for g, x, t in raw]
    meta = {
        "kind": "multiplicative_task",
        "n": n,
        "p": p,
        "d_in": d_in,
        "k": k,
        "num_graphs": num_graphs,
        "size_jitter": size_jitter,
        "seed": seed,
        "bilinear": b.tolist(),
    }
    return Dataset(graphs, meta)


def _child_seed(seed: int, index: int) -> int:
    return int(stream(seed, "synthetic", "graph", str(index)).integers(0, 2**63 - 1))


def generate_synthetic(kind: str, seed: int = 0, **params) -> Graph | Dataset:
    """Dispatch on ``kind``: cycle(n), path(n), erdos_renyi(n, p),
    fused_cycles(a, b) or multiplicative_task(n, p, d_in, num_graphs)."""
    if kind == "cycle":
        return cycle(params["n"])
    if kind == "path":
        return path(params["n"])
    if kind == "fused_cycles":
        return fused_cycles(params["a"], params["b"])
    if kind == "erdos_renyi":
        return erdos_renyi(params["n"], params["p"], seed, params.get("d_in", 1))
    if kind == "multiplicative_task":
        return multiplicative_task(seed=seed, **params)
    raise GraphError(f"unknown generator {kind!r}")


def random_connected_graph(n: int, rng: np.random.Generator, extra_p: float = 0.3) -> Graph:
    """Random spanning tree plus G(n, extra_p) edges; used by property tests."""
    edges = set()
    order = rng.permutation(n)
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        a, b = int(order[i]), int(j)
        edges.add((min(a, b), max(a, b)))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < extra_p:
                edges.add((a, b))
    return Graph(n, sorted(edges), np.ones((n, 1)))
