"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation applied to tensors attached to it.
Calling :meth:`Tape.backward` on a scalar result walks the records in reverse
and accumulates vector-Jacobian products. Tensors without a tape are
constants and are never differentiated.

    tape = Tape()
    w = tape.variable(np.ones((3, 2)))
    loss = sum_all(relu(Tensor(x) @ w))
    grads = tape.backward(loss)
    grads[w]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .rng import stream

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array, optionally attached to a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if tape is None:
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, _lift(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other, self.shape), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _lift(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


@dataclass
class _Node:
    op: str
    inputs: tuple[int | None, ...]
    vjp: VJP | None


class Gradients:
    """Gradient lookup keyed by tensor; unreachable tensors get zeros."""

    def __init__(self, tape: Tape, grads: list[np.ndarray | None]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape:
            raise KeyError("tensor is not recorded on this tape")
        g = self._grads[t.node_id]
        return np.zeros(t.shape) if g is None else g


class Tape:
    """Append-only record of operations, in topological order."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._shapes: list[tuple[int, ...]] = []
        self._kinks: list[bytes] = []

    def variable(self, data) -> Tensor:
        arr = np.array(data, dtype=np.float64, copy=True)
        return self._push("leaf", (), None, arr)

    def _push(self, op: str, inputs: tuple[int | None, ...], vjp: VJP | None, out: np.ndarray) -> Tensor:
        self.nodes.append(_Node(op, inputs, vjp))
        self._shapes.append(out.shape)
        return Tensor(out, self, len(self.nodes) - 1)

    def note_kink(self, mask: np.ndarray) -> None:
        self._kinks.append(np.packbits(mask.ravel()).tobytes())

    def kink_signature(self) -> bytes:
        """Activation pattern of every piecewise-linear op recorded so far."""
        return b"|".join(self._kinks)

    def backward(self, loss: Tensor) -> Gradients:
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones(loss.shape)
        for idx in range(loss.node_id, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if inp is None or gi is None:
                    continue
                if grads[inp] is None:
                    grads[inp] = np.array(gi, dtype=np.float64).reshape(self._shapes[inp])
                else:
                    grads[inp] = grads[inp] + gi
        return Gradients(self, grads)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    return tape.backward(loss)


def _record(op: str, args: Sequence[Tensor], out: np.ndarray, vjp: VJP) -> Tensor:
    tape = None
    for a in args:
        if a.tape is not None:
            if tape is not None and a.tape is not tape:
                raise ValueError(f"{op}: inputs live on different tapes")
            tape = a.tape
    if tape is None:
        return Tensor(out)
    return tape._push(op, tuple(a.node_id if a.tape is not None else None for a in args), vjp, out)


def _check(op: str, ok: bool, *shapes) -> None:
    if not ok:
        raise ShapeError(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


# -- core ops ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may also be a 1-D row bias of width ``a.shape[-1]``."""
    if a.shape == b.shape:
        return _record("add", (a, b), a.data + b.data, lambda g: (g, g))
    _check("add", a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1], a.shape, b.shape)
    return _record("add", (a, b), a.data + b.data[None, :], lambda g: (g, g.sum(axis=0)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check("mul", a.shape == b.shape, a.shape, b.shape)
    x, y = a.data, b.data
    return _record("mul", (a, b), x * y, lambda g: (g * y, g * x))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check("matmul", a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0], a.shape, b.shape)
    x, y = a.data, b.data
    return _record("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


def transpose(a: Tensor) -> Tensor:
    _check("transpose", a.data.ndim == 2, a.shape)
    return _record("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def rowwise_concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along columns (row i is [a_i; b_i; ...])."""
    rows = {p.shape[0] for p in parts}
    _check("rowwise_concat", all(p.data.ndim == 2 for p in parts) and len(rows) == 1, *(p.shape for p in parts))
    widths = [p.shape[1] for p in parts]
    cuts = np.cumsum(widths)[:-1]
    out = np.concatenate([p.data for p in parts], axis=1)
    return _record("rowwise_concat", tuple(parts), out, lambda g: tuple(np.split(g, cuts, axis=1)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if a.tape is not None:
        a.tape.note_kink(mask)
    # gradient at exactly 0 is 0
    return _record("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _record("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    if a.tape is not None:
        a.tape.note_kink(a.data > 0)
    return _record("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


def sum_rows(a: Tensor) -> Tensor:
    """Sum over the first axis: (n, d) -> (d,)."""
    _check("sum_rows", a.data.ndim == 2, a.shape)
    n = a.shape[0]
    return _record("sum_rows", (a,), a.data.sum(axis=0), lambda g: (np.broadcast_to(g, (n,) + g.shape),))


def mean_rows(a: Tensor) -> Tensor:
    _check("mean_rows", a.data.ndim == 2 and a.shape[0] > 0, a.shape)
    n = a.shape[0]
    return _record("mean_rows", (a,), a.data.mean(axis=0), lambda g: (np.broadcast_to(g / n, (n,) + g.shape),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record("sum_all", (a,), np.array(a.data.sum()), lambda g: (np.broadcast_to(g, shape),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    _check("mean_all", n > 0, shape)
    return _record("mean_all", (a,), np.array(a.data.mean()), lambda g: (np.broadcast_to(g / n, shape),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    _check("reshape", int(np.prod(shape)) == a.data.size, a.shape, shape)
    old = a.shape
    return _record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def slice_flat(a: Tensor, start: int, shape: Sequence[int]) -> Tensor:
    """View ``a.ravel()[start:start+prod(shape)]`` reshaped to ``shape``."""
    shape = tuple(int(s) for s in shape)
    size = int(np.prod(shape))
    _check("slice_flat", a.data.ndim == 1 and 0 <= start and start + size <= a.shape[0], a.shape, shape)
    total = a.shape[0]

    def vjp(g):
        full = np.zeros(total)
        full[start : start + size] = g.ravel()
        return (full,)

    return _record("slice_flat", (a,), a.data[start : start + size].reshape(shape), vjp)


def segment_max(x: Tensor, offsets: Sequence[int]) -> Tensor:
    """Column-wise max over contiguous row segments ``offsets[i]:offsets[i+1]``.

    Empty segments give zero rows. Ties send the gradient to the first row.
    """
    _check("segment_max", x.data.ndim == 2 and offsets[-1] == x.shape[0], x.shape, f"offsets[-1]={offsets[-1]}")
    nseg = len(offsets) - 1
    out = np.zeros((nseg, x.shape[1]))
    arg = np.full((nseg, x.shape[1]), -1, dtype=np.int64)
    for s in range(nseg):
        lo, hi = offsets[s], offsets[s + 1]
        if hi > lo:
            idx = np.argmax(x.data[lo:hi], axis=0)
            arg[s] = idx + lo
            out[s] = x.data[lo:hi][idx, np.arange(x.shape[1])]
    n = x.shape[0]

    def vjp(g):
        gx = np.zeros((n, g.shape[1]))
        for s in range(nseg):
            ok = arg[s] >= 0
            gx[arg[s][ok], np.nonzero(ok)[0]] += g[s][ok]
        return (gx,)

    return _record("segment_max", (x,), out, vjp)


def spmm(s: sp.spmatrix, x: Tensor, s_t: sp.spmatrix | None = None) -> Tensor:
    """Constant sparse matrix times a dense 2-D tensor.

    ``s_t`` may supply a precomputed transpose of ``s`` for the backward pass.
    """
    _check("spmm", x.data.ndim == 2 and s.shape[1] == x.shape[0], s.shape, x.shape)
    if s_t is None:
        s_t = s.T.tocsr()
    return _record("spmm", (x,), np.asarray(s @ x.data), lambda g: (np.asarray(s_t @ g),))


def kron_rows(h: Tensor, p: Tensor) -> Tensor:
    """Row-wise Kronecker product: row i is ``h_i (x) p_i``.

    Entry ``h_i[a] * p_i[b]`` sits at column ``a * p.shape[1] + b``.
    """
    _check("kron_rows", h.data.ndim == 2 and p.data.ndim == 2 and h.shape[0] == p.shape[0], h.shape, p.shape)
    n, a = h.shape
    b = p.shape[1]
    x, y = h.data, p.data
    out = (x[:, :, None] * y[:, None, :]).reshape(n, a * b)

    def vjp(g):
        g3 = g.reshape(n, a, b)
        return (np.einsum("nab,nb->na", g3, y), np.einsum("nab,na->nb", g3, x))

    return _record("kron_rows", (h, p), out, vjp)


def mat_view(h: Tensor, d: int) -> Tensor:
    """Reshape (n, d*d) rows into (n, d, d) matrices, ``Mat(h)[r, c] = h[r*d + c]``."""
    _check("mat_view", h.data.ndim == 2 and h.shape[1] == d * d, h.shape, f"d={d}")
    return reshape(h, (h.shape[0], d, d))


def vec_view(m: Tensor) -> Tensor:
    """Inverse of :func:`mat_view`."""
    _check("vec_view", m.data.ndim == 3 and m.shape[1] == m.shape[2], m.shape)
    return reshape(m, (m.shape[0], m.shape[1] * m.shape[2]))


def factor_project(m: Tensor, w: Tensor, q: Tensor) -> Tensor:
    """``out[n] = sum_k W_k @ m[n] @ Q_k.T`` for stacks W, Q of shape (K, d, d).

    Flattened row-major, this is multiplication by ``sum_k kron(W_k, Q_k)``.
    """
    _check(
        "factor_project",
        m.data.ndim == 3 and w.data.ndim == 3 and w.shape == q.shape and w.shape[1:] == m.shape[1:],
        m.shape,
        w.shape,
        q.shape,
    )
    mm, ww, qq = m.data, w.data, q.data
    out = np.einsum("kab,nbc,kdc->nad", ww, mm, qq, optimize=True)

    def vjp(g):
        return (
            np.einsum("kab,nad,kdc->nbc", ww, g, qq, optimize=True),
            np.einsum("nad,nbc,kdc->kab", g, mm, qq, optimize=True),
            np.einsum("kab,nbc,nad->kdc", ww, mm, g, optimize=True),
        )

    return _record("factor_project", (m, w, q), out, vjp)


def bce_logits(z: Tensor, y: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy of logits ``z`` against constant labels ``y``."""
    y = np.asarray(y, dtype=np.float64)
    _check("bce_logits", z.shape == y.shape, z.shape, y.shape)
    x = z.data
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)
    return _record("bce_logits", (z,), out, lambda g: (g * (s - y),))


# -- gradient checking --------------------------------------------------------


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    step: float = 1e-5,
    num_coords: int = 20,
    seed: int = 0,
    max_tries: int = 10,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor. For each of
    ``num_coords`` sampled coordinates the error is
    ``|analytic - fd| / max(1, |fd|)``. A coordinate whose +/- step perturbation
    changes the activation pattern of any relu/abs is skipped and resampled.
    """
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    tape = Tape()
    xt = tape.variable(x)
    out = f(xt)
    analytic = tape.backward(out)[xt].ravel()
    base_sig = tape.kink_signature()

    def probe(delta_at: int, delta: float) -> tuple[float, bytes]:
        xp = x.copy().ravel()
        xp[delta_at] += delta
        t = Tape()
        val = f(t.variable(xp.reshape(x.shape)))
        return val.item(), t.kink_signature()

    rng = stream(seed, "autodiff", "grad_check")
    size = x.size
    want = min(num_coords, size)
    order = rng.permutation(size)
    worst = 0.0
    used = 0
    skipped = 0
    for i in order:
        if used >= want:
            break
        fp, sp_ = probe(int(i), step)
        fm, sm = probe(int(i), -step)
        if sp_ != base_sig or sm != base_sig:
            skipped += 1
            if skipped > max_tries * want:
                break
            continue
        fd = (fp - fm) / (2.0 * step)
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(fd)))
        used += 1
    if used == 0:
        raise RuntimeError("grad_check: every sampled coordinate sits next to a kink")
    return worst
