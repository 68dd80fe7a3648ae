"""Fusing node features with structural encodings.

Both encoder kinds first embed features and encodings separately
(``W_h h`` and ``W_p p``), fuse them, and optionally apply a joint projection:

* ``concat``: fused = [W_h h; W_p p], each embedding of width d_hidden / 2
* ``tensor``: fused = W_h h (x) W_p p, each embedding of width sqrt(d_hidden)

so the fused vector always has d_hidden entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ENCODER_KINDS = ("concat", "tensor")


class DimensionError(ValueError):
    pass


def embed_dim(kind: str, d_hidden: int) -> int:
    """Width of the separate feature/structure embeddings for ``kind``."""
    if kind == "concat":
        if d_hidden < 2 or d_hidden % 2:
            raise DimensionError(f"concat encoder needs an even d_hidden, got {d_hidden}")
        return d_hidden // 2
    if kind == "tensor":
        d = math.isqrt(d_hidden)
        if d < 1 or d * d != d_hidden:
            raise DimensionError(f"tensor encoder needs a perfect-square d_hidden, got {d_hidden}")
        return d
    raise ValueError(f"unknown encoder kind {kind!r}")


def admissible_hidden(kind: str, requested: int) -> int:
    """Largest admissible d_hidden not exceeding ``requested``.

    Tensor mode rounds down to a perfect square (328 -> 324), concat mode to
    an even number.
    """
    if requested < 1:
        raise DimensionError(f"d_hidden must be positive, got {requested}")
    if kind == "tensor":
        return math.isqrt(requested) ** 2
    if kind == "concat":
        if requested < 2:
            raise DimensionError("concat encoder needs d_hidden >= 2")
        return requested - requested % 2
    raise ValueError(f"unknown encoder kind {kind!r}")


@dataclass
class EncoderParams:
    """Encoder weights. Arrays may be numpy arrays or tape tensors.

    ``joint`` holds the joint-projection matrices in application order
    (empty when the joint encoder is disabled); a relu sits between
    consecutive matrices.
    """

    kind: str
    W_h: object
    W_p: object
    joint: list = field(default_factory=list)

    @property
    def joint_enabled(self) -> bool:
        return bool(self.joint)


def init_encoder(
    kind: str,
    d_in: int,
    k: int,
    d_hidden: int,
    rng: np.random.Generator,
    joint: bool = True,
    mlp_depth: int = 1,
) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, no biases."""
    d_emb = embed_dim(kind, d_hidden)
    if mlp_depth < 1:
        raise DimensionError(f"mlp_depth must be >= 1, got {mlp_depth}")

    def lin(out_dim: int, in_dim: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(in_dim)
        return rng.uniform(-bound, bound, size=(out_dim, in_dim))

    w_h = lin(d_emb, d_in)
    w_p = lin(d_emb, k)
    mats = []
    if joint:
        mats.append(lin(d_hidden, d_hidden))
        for _ in range(mlp_depth - 1):
            mats.append(lin(d_hidden, d_hidden))
    return EncoderParams(kind, w_h, w_p, mats)


def parameter_budget(
    kind: str, d_in: int, k: int, d_hidden: int, joint_enabled: bool = True, mlp_depth: int = 1
) -> int:
    d_emb = embed_dim(kind, d_hidden)
    n = d_emb * d_in + d_emb * k
    if joint_enabled:
        n += mlp_depth * d_hidden * d_hidden
    return n


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def encode(params: EncoderParams, features, enc) -> Tensor:
    """Initial hidden states, one row per node, width d_hidden."""
    x = _t(features)
    p = _t(enc.rows if hasattr(enc, "rows") else enc)
    w_h, w_p = _t(params.W_h), _t(params.W_p)
    if x.shape[0] != p.shape[0]:
        raise DimensionError(f"features have {x.shape[0]} rows but encodings have {p.shape[0]}")
    if x.shape[1] != w_h.shape[1]:
        raise DimensionError(f"features have width {x.shape[1]}, W_h expects {w_h.shape[1]}")
    if p.shape[1] != w_p.shape[1]:
        raise DimensionError(f"encodings have width {p.shape[1]}, W_p expects {w_p.shape[1]}")
    hx = x @ ad.transpose(w_h)
    hp = p @ ad.transpose(w_p)
    if params.kind == "concat":
        fused = ad.rowwise_concat([hx, hp])
    elif params.kind == "tensor":
        fused = ad.kron_rows(hx, hp)
    else:
        raise ValueError(f"unknown encoder kind {params.kind!r}")
    out = fused
    for i, w in enumerate(params.joint):
        if i:
            out = ad.relu(out)
        out = out @ ad.transpose(_t(w))
    return out
