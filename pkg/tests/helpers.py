"""Independent numerical oracles shared across the test modules.

Everything here deliberately avoids the library's own linear-algebra paths:
nullspaces come from SVD, gradients from central finite differences, and
residuals from a direct lstsq solve, so agreement with the package is
evidence rather than tautology.
"""

from __future__ import annotations

import numpy as np


def svd_nullspace(mat: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of null(mat) via SVD."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    u, s, vt = np.linalg.svd(mat)
    if s.size:
        tol = s[0] * max(mat.shape) * np.finfo(float).eps
        tol = max(tol, rtol * s[0])
    else:
        tol = 0.0
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def subspace_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Largest principal angle (radians) between the column spans of u, v."""
    qu, _ = np.linalg.qr(np.atleast_2d(u))
    qv, _ = np.linalg.qr(np.atleast_2d(v))
    sigma = np.linalg.svd(qu.T @ qv, compute_uv=False)
    return float(np.arccos(np.clip(sigma.min(initial=1.0), -1.0, 1.0)))


def angle_to_span(vec: np.ndarray, basis: np.ndarray) -> float:
    """Angle (radians) between a vector and the span of basis columns."""
    vec = np.asarray(vec, dtype=float)
    norm = np.linalg.norm(vec)
    if norm == 0:
        return 0.0
    q, _ = np.linalg.qr(np.atleast_2d(basis))
    proj = q @ (q.T @ vec)
    cosine = np.clip(np.linalg.norm(proj) / norm, -1.0, 1.0)
    return float(np.arccos(cosine))


def lstsq_residual_norm(h: np.ndarray, z: np.ndarray) -> float:
    """||z - H x*||_2 with x* from numpy's lstsq — the estimation oracle."""
    x, *_ = np.linalg.lstsq(h, z, rcond=None)
    return float(np.linalg.norm(z - h @ x))


def finite_difference_input_gradient(loss_fn, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar loss over the input vector."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        bumped = x.copy()
        bumped[i] += step
        up = loss_fn(bumped)
        bumped[i] -= 2 * step
        down = loss_fn(bumped)
        grad[i] = (up - down) / (2 * step)
    return grad


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """||approx - exact|| / max(1e-12, ||exact||)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    denom = max(1e-12, float(np.linalg.norm(exact)))
    return float(np.linalg.norm(approx - exact)) / denom


THREE_BUS_NATIVE = """\
{
  "name": "toy3",
  "buses": [
    {"id": 1, "ref": true, "angle": 0.0},
    {"id": 2, "ref": false, "angle": 0.0},
    {"id": 3, "ref": false, "angle": 0.0}
  ],
  "branches": [
    {"from": 1, "to": 2, "x": 0.5},
    {"from": 2, "to": 3, "x": 0.25},
    {"from": 1, "to": 3, "x": 0.2}
  ]
}
"""
