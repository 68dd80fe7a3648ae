"""Cyclic Jacobi eigensolver for small dense symmetric matrices."""

from __future__ import annotations

import numpy as np


class EigenError(RuntimeError):
    pass


def _off_norm(a: np.ndarray) -> float:
    upper = np.triu(a, 1)
    return float(np.sqrt(2.0 * np.sum(upper * upper)))


def symmetric_eig(
    m: np.ndarray, tol: float = 1e-10, max_rotations: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues ``w`` ascending and eigenvectors in the
    columns of ``v`` (orthonormal), so ``m @ v[:, i] ~= w[i] * v[:, i]``.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||m||_F)``. The default rotation cap is ``100 * n**2``.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(a)))
    asym = float(np.max(np.abs(a - a.T))) if n else 0.0
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max |m - m^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    cap = 100 * n * n if max_rotations is None else max_rotations
    threshold = tol * scale
    rotations = 0

    while _off_norm(a) > threshold:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                if rotations >= cap:
                    raise EigenError(
                        f"Jacobi did not converge after {rotations} rotations "
                        f"(off-diagonal norm {_off_norm(a):.3e})"
                    )
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
                rotations += 1

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]
