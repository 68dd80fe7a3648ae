"""Message-passing layers (GCN, GIN, SAGE) with dense or Kronecker-factorised
projections.

A projection maps a hidden state of width ``d_hidden = d*d`` to the same
width. The ``full`` regime uses one dense ``d_hidden x d_hidden`` matrix. The
``sparse`` regime views each state as a ``d x d`` matrix ``Mat(h)`` and uses
K factor pairs::

    h -> vec(sum_k W_k Mat(h) Q_k^T) == (sum_k kron(W_k, Q_k)) h

which costs ``2 K d^2`` parameters instead of ``d^4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import DimensionError
from .graph import AdjacencyView

LAYER_KINDS = ("gcn", "gin", "sage")
REGIMES = ("full", "sparse", "none")


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def factor_dim(d_hidden: int) -> int:
    d = math.isqrt(d_hidden)
    if d < 1 or d * d != d_hidden:
        raise DimensionError(f"sparse projections need a perfect-square d_hidden, got {d_hidden}")
    return d


@dataclass
class ProjectionParams:
    """``regime`` is 'full' (``weight``: d_hidden x d_hidden) or 'sparse'
    (``W``, ``Q``: K x d x d)."""

    regime: str
    weight: object = None
    W: object = None
    Q: object = None

    @property
    def d_hidden(self) -> int:
        if self.regime == "full":
            return self.weight.shape[0]
        return self.W.shape[1] ** 2

    @property
    def K(self) -> int:
        return self.W.shape[0] if self.regime == "sparse" else 0

    def num_params(self) -> int:
        if self.regime == "full":
            return int(np.prod(self.weight.shape))
        return int(np.prod(self.W.shape) + np.prod(self.Q.shape))

    def kron_matrix(self) -> np.ndarray:
        """The dense d_hidden x d_hidden matrix this projection applies."""
        if self.regime == "full":
            return np.asarray(_t(self.weight).data)
        w, q = _t(self.W).data, _t(self.Q).data
        return sum(np.kron(w[k], q[k]) for k in range(w.shape[0]))


@dataclass
class LayerParams:
    kind: str
    projections: list[ProjectionParams]
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if not math.isfinite(self.epsilon):
            raise ValueError("gin epsilon must be finite")
        widths = {p.d_hidden for p in self.projections}
        if len(widths) != 1:
            raise DimensionError(f"projection widths disagree: {sorted(widths)}")


def init_projection(regime: str, d_hidden: int, rng: np.random.Generator, K: int = 1) -> ProjectionParams:
    """Dense weights ~ U(+-1/sqrt(d_hidden)); each factor ~ U(+-1/sqrt(d))."""
    if regime == "full":
        b = 1.0 / math.sqrt(d_hidden)
        return ProjectionParams("full", weight=rng.uniform(-b, b, size=(d_hidden, d_hidden)))
    if regime == "sparse":
        if K < 1:
            raise ValueError(f"K must be >= 1, got {K}")
        d = factor_dim(d_hidden)
        b = 1.0 / math.sqrt(d)
        w = rng.uniform(-b, b, size=(K, d, d))
        q = rng.uniform(-b, b, size=(K, d, d))
        return ProjectionParams("sparse", W=w, Q=q)
    raise ValueError(f"no projection for regime {regime!r}")


def num_projections(kind: str, gin_depth: int = 1) -> int:
    if kind == "sage":
        return 2
    if kind == "gin":
        return gin_depth
    return 1


def init_layer(
    kind: str,
    regime: str,
    d_hidden: int,
    rng: np.random.Generator,
    K: int = 1,
    epsilon: float = 0.0,
    gin_depth: int = 1,
) -> LayerParams:
    projs = [init_projection(regime, d_hidden, rng, K) for _ in range(num_projections(kind, gin_depth))]
    return LayerParams(kind, projs, epsilon)


def project(p: ProjectionParams, h: Tensor) -> Tensor:
    h = _t(h)
    if h.data.ndim != 2 or h.shape[1] != p.d_hidden:
        raise ad.ShapeError(f"project: input shape {h.shape} does not match d_hidden={p.d_hidden}")
    if p.regime == "full":
        return h @ ad.transpose(_t(p.weight))
    if p.regime == "sparse":
        d = factor_dim(h.shape[1])
        return ad.vec_view(ad.factor_project(ad.mat_view(h, d), _t(p.W), _t(p.Q)))
    raise ValueError(f"cannot project in regime {p.regime!r}")


def layer_param_count(layer: LayerParams) -> int:
    return sum(p.num_params() for p in layer.projections)


def projection_param_count(regime: str, d_hidden: int, K: int = 1) -> int:
    if regime == "full":
        return d_hidden * d_hidden
    if regime == "sparse":
        d = factor_dim(d_hidden)
        return 2 * K * d * d
    return 0


# -- propagation operators ---------------------------------------------------


@dataclass(frozen=True)
class Propagation:
    """Sparse neighbourhood operators for one graph or a block-diagonal batch.

    ``adj``: plain adjacency (sum over neighbours); ``gcn``: symmetric
    normalisation with self-loops; ``mean``: row-normalised adjacency, zero
    rows for isolated nodes. ``mean_t`` caches the transpose of ``mean`` for
    the backward pass (the other two are symmetric).
    """

    adj: sp.csr_matrix
    gcn: sp.csr_matrix
    mean: sp.csr_matrix
    mean_t: sp.csr_matrix
    num_nodes: int = field(default=0)


def propagation(adj: AdjacencyView | Sequence[AdjacencyView]) -> Propagation:
    views = [adj] if isinstance(adj, AdjacencyView) else list(adj)
    sizes = [v.num_nodes for v in views]
    n = int(sum(sizes))
    offsets = np.repeat(np.cumsum([0] + sizes[:-1]), sizes).astype(np.int64) if views else np.zeros(0, np.int64)
    deg = np.concatenate([v.degrees for v in views]).astype(np.float64) if views else np.zeros(0)
    rows = np.repeat(np.arange(n), deg.astype(np.int64))
    cols = np.concatenate([v.csr_neighbors for v in views]).astype(np.int64) + offsets[rows] if views else rows
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg.astype(np.int64), out=indptr[1:])

    def csr(data):
        return sp.csr_matrix((data, cols, indptr), shape=(n, n))

    a = csr(np.ones(len(cols)))
    d_hat = 1.0 / np.sqrt(deg + 1.0)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    mean = csr(inv[rows])
    # graphs carry no self-loops, so the appended diagonal never collides
    g_rows = np.concatenate([rows, np.arange(n)])
    g_cols = np.concatenate([cols, np.arange(n)])
    g_data = np.concatenate([d_hat[rows] * d_hat[cols], d_hat * d_hat])
    gcn = sp.coo_matrix((g_data, (g_rows, g_cols)), shape=(n, n)).tocsr()
    gcn.sort_indices()
    return Propagation(a, gcn, mean, mean.T.tocsr(), n)


def _prop(adj) -> Propagation:
    return adj if isinstance(adj, Propagation) else propagation(adj)


def _check_rows(h: Tensor, prop: Propagation) -> None:
    if h.data.ndim != 2 or h.shape[0] != prop.num_nodes:
        raise ad.ShapeError(f"hidden states have shape {h.shape} but the graph has {prop.num_nodes} nodes")


def gcn_layer(params: LayerParams, h, adj) -> Tensor:
    """relu(project(D^-1/2 (A + I) D^-1/2 H))."""
    prop, h = _prop(adj), _t(h)
    _check_rows(h, prop)
    return ad.relu(project(params.projections[0], ad.spmm(prop.gcn, h, prop.gcn)))


def gin_layer(params: LayerParams, h, adj) -> Tensor:
    """relu(project((1 + eps) h_i + sum_{j~i} h_j)); deeper MLPs chain relu(project(.))."""
    prop, h = _prop(adj), _t(h)
    _check_rows(h, prop)
    z = ad.scale(h, 1.0 + params.epsilon) + ad.spmm(prop.adj, h, prop.adj)
    for p in params.projections:
        z = ad.relu(project(p, z))
    return z


def sage_layer(params: LayerParams, h, adj) -> Tensor:
    """relu(project_self(h_i) + project_nbr(mean_{j~i} h_j))."""
    prop, h = _prop(adj), _t(h)
    _check_rows(h, prop)
    p_self, p_nbr = params.projections
    return ad.relu(project(p_self, h) + project(p_nbr, ad.spmm(prop.mean, h, prop.mean_t)))


LAYER_FUNCS = {"gcn": gcn_layer, "gin": gin_layer, "sage": sage_layer}


def apply_layer(params: LayerParams, h, adj) -> Tensor:
    return LAYER_FUNCS[params.kind](params, h, adj)


# -- Kronecker factor utilities -------------------------------------------------


def kron_rearrange(m: np.ndarray, d: int) -> np.ndarray:
    """Van Loan rearrangement: row (r, s) holds block (r, s) of ``m`` flattened.

    ``kron(W, Q)`` maps to the rank-one matrix ``vec(W) vec(Q)^T``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (d * d, d * d):
        raise DimensionError(f"expected a {d*d}x{d*d} matrix, got {m.shape}")
    return m.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)


def kron_approximation(m: np.ndarray, d: int, K: int) -> ProjectionParams:
    """Best Frobenius-norm approximation of ``m`` by ``sum_k kron(W_k, Q_k)``.

    Exact once ``K >= d*d``.
    """
    r = kron_rearrange(m, d)
    u, s, vt = np.linalg.svd(r)
    K_eff = min(K, len(s))
    w = np.zeros((K, d, d))
    q = np.zeros((K, d, d))
    for k in range(K_eff):
        root = math.sqrt(s[k])
        w[k] = (u[:, k] * root).reshape(d, d)
        q[k] = (vt[k] * root).reshape(d, d)
    return ProjectionParams("sparse", W=w, Q=q)


def extend_factors(p: ProjectionParams, K: int) -> ProjectionParams:
    """Pad a sparse projection with zero factor pairs up to ``K`` pairs."""
    w, q = _t(p.W).data, _t(p.Q).data
    if K < w.shape[0]:
        raise ValueError("cannot shrink the number of factor pairs")
    pad = np.zeros((K - w.shape[0],) + w.shape[1:])
    return ProjectionParams("sparse", W=np.concatenate([w, pad]), Q=np.concatenate([q, pad]))
