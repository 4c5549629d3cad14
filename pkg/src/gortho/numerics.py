"""Dense real-matrix kernels.

Everything here works on small float64 numpy arrays (n <= 64) and is written
against plain array arithmetic: Jacobi rotations for the symmetric
eigenproblem and the SVD, scaling-and-squaring for the matrix exponential.
"""

from __future__ import annotations

import math

import numpy as np

MAX_SWEEPS = 100
EXP_NORM_LIMIT = 50.0


class ConvergenceError(RuntimeError):
    pass


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def sym_eig(m, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(U, d)`` with ``m = U @ diag(d) @ U.T``, ``U`` orthogonal and
    ``d`` sorted in descending order.
    """
    a = as_matrix(m)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    scale = np.abs(a).max() if a.size else 0.0
    if np.abs(a - a.T).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("sym_eig needs a symmetric matrix")
    v = np.eye(n)
    if scale == 0.0 or n == 1:
        return v, np.diag(a).copy()
    # work at unit scale so tiny (subnormal) inputs do not underflow the norms
    a = 0.5 * (a + a.T) / scale
    fro = np.linalg.norm(a)

    offmask = ~np.eye(n, dtype=bool)

    def off(x):
        return float(np.linalg.norm(x[offmask]))

    for _ in range(MAX_SWEEPS):
        if off(a) < tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) > 1e150 * abs(2.0 * apq):
                    t = apq / diff  # 1 / (2 theta) without forming theta
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    else:
        if off(a) >= tol * fro:
            raise ConvergenceError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")
    d = np.diag(a) * scale
    order = np.argsort(-d, kind="stable")
    return v[:, order], d[order]


def _jacobi_columns(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # One-sided (Hestenes) Jacobi: rotate column pairs of a until they are
    # mutually orthogonal. Returns (a @ v, v) with v square orthogonal.
    a = a.copy()
    n = a.shape[1]
    v = np.eye(n)
    # a column at rounding-noise level is numerically zero; rotating it
    # against anything just reshuffles noise and never settles
    floor = (1e-13 * np.linalg.norm(a)) ** 2
    for _ in range(MAX_SWEEPS):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai = a[:, i]
                aj = a[:, j]
                alpha = float(ai @ ai)
                beta = float(aj @ aj)
                gamma = float(ai @ aj)
                if gamma == 0.0 or abs(gamma) <= 1e-15 * math.sqrt(alpha * beta):
                    continue
                if alpha <= floor or beta <= floor:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                ai = ai.copy()
                a[:, i] = c * ai - s * aj
                a[:, j] = s * ai + c * aj
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            return a, v
    raise ConvergenceError(f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps")


def _complete_basis(u: np.ndarray, filled: np.ndarray) -> np.ndarray:
    # Replace columns of u flagged as not filled by unit vectors orthogonal to
    # every other column (Gram-Schmidt against the standard basis).
    u = u.copy()
    m = u.shape[0]
    for j in np.flatnonzero(~filled):
        for e in np.eye(m):
            cand = e.copy()
            for _ in range(2):
                others = u[:, filled]
                cand -= others @ (others.T @ cand)
            norm = np.linalg.norm(cand)
            if norm > 1e-6:
                u[:, j] = cand / norm
                filled = filled.copy()
                filled[j] = True
                break
    return u


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``m = U diag(s) V.T`` with ``s`` descending, k = min(rows, cols)."""
    a = as_matrix(m)
    rows, cols = a.shape
    if rows < cols:
        v, s, u = svd(a.T)
        return u, s, v
    b, v = _jacobi_columns(a)
    s = np.linalg.norm(b, axis=0)
    order = np.argsort(-s, kind="stable")
    s, b, v = s[order], b[:, order], v[:, order]
    # same noise floor as the Jacobi pass: such columns were never
    # orthogonalised, so their directions are meaningless
    tiny = s <= max(1e-13 * np.linalg.norm(a), np.finfo(float).tiny)
    u = np.zeros_like(b)
    u[:, ~tiny] = b[:, ~tiny] / s[~tiny]
    if tiny.any():
        s[tiny] = 0.0
        u = _complete_basis(u, ~tiny)
    return u, s, v


def nullspace(m, rel_tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical nullspace of ``m``.

    A right singular direction counts as null when its singular value is
    below ``rel_tol * s_max``. Columns beyond the row count are always null.
    """
    a = as_matrix(m)
    cols = a.shape[1]
    if a.size == 0:
        return np.eye(cols)
    b, v = _jacobi_columns(a)
    s = np.linalg.norm(b, axis=0)
    smax = s.max(initial=0.0)
    if smax == 0.0:
        return v
    keep = s < rel_tol * smax
    return v[:, keep]


def mat_exp(m) -> np.ndarray:
    """Matrix exponential by scaling to Frobenius norm <= 0.5, Taylor-16, squaring."""
    a = as_matrix(m)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    norm = np.linalg.norm(a)
    if norm > EXP_NORM_LIMIT:
        raise OverflowError(f"|M|_F = {norm:.3g} exceeds {EXP_NORM_LIMIT}")
    squarings = 0
    if norm > 0.5:
        squarings = int(math.ceil(math.log2(norm / 0.5)))
    a = a / (2.0**squarings)
    eye = np.eye(n)
    out = eye.copy()
    for k in range(16, 0, -1):
        out = eye + (a @ out) / k
    for _ in range(squarings):
        out = out @ out
    return out


def _check_orthonormal(b: np.ndarray, name: str) -> None:
    k = b.shape[1]
    err = np.abs(b.T @ b - np.eye(k)).max(initial=0.0)
    if err > 1e-8:
        raise ValueError(f"{name} is not orthonormal (max deviation {err:.2e})")


def principal_angles(b0, b1) -> np.ndarray:
    """Principal angles (ascending, in [0, pi/2]) between two column spans.

    Large angles come from the cosines of ``b0.T @ b1``; angles below pi/4
    are taken from the sines, which keeps nearly equal subspaces accurate.
    """
    b0 = as_matrix(b0, "b0")
    b1 = as_matrix(b1, "b1")
    if b0.shape != b1.shape:
        raise ValueError(f"basis shapes differ: {b0.shape} vs {b1.shape}")
    _check_orthonormal(b0, "b0")
    _check_orthonormal(b1, "b1")
    k = b0.shape[1]
    if k == 0:
        return np.zeros(0)
    cosines = np.clip(svd(b0.T @ b1)[1], 0.0, 1.0)
    residual = b1 - b0 @ (b0.T @ b1)
    sines = np.clip(np.sort(svd(residual)[1])[:k], 0.0, 1.0)
    theta = np.arccos(cosines)
    small = sines**2 < 0.5
    theta[small] = np.arcsin(sines[small])
    return np.sort(theta)
