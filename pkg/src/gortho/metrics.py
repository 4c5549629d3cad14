"""Symmetry-recovery metrics: form cosine, Lie algebra basis, form recovery,
projection distance between algebras, and an equivariance probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quadform as qf
from .group import sample_element
from .numerics import nullspace, principal_angles
from .quadform import QuadraticForm

LIE_RTOL = 1e-6


@dataclass(frozen=True)
class LieBasis:
    generators: np.ndarray  # (k, n, n), vec-orthonormal
    form_id: str = ""

    @property
    def dim(self) -> int:
        return self.generators.shape[0]

    @property
    def n(self) -> int:
        return self.generators.shape[1]

    def as_columns(self) -> np.ndarray:
        return self.generators.reshape(self.dim, -1).T


def _matrix(form_or_matrix) -> np.ndarray:
    if isinstance(form_or_matrix, QuadraticForm):
        return form_or_matrix.A
    return qf.symmetrize(form_or_matrix).A


def cos_similarity(form0, form1, gauge: bool = True) -> float:
    """Frobenius cosine of two forms, optionally after canonical gauging of both."""
    a0, a1 = _matrix(form0), _matrix(form1)
    if a0.shape != a1.shape:
        raise ValueError(f"form sizes differ: {a0.shape} vs {a1.shape}")
    n0, n1 = np.linalg.norm(a0), np.linalg.norm(a1)
    if n0 == 0.0 or n1 == 0.0:
        raise ValueError("cosine of a zero form is undefined")
    if gauge:
        a0 = qf.canonical_gauge(qf.symmetrize(a0)).A
        a1 = qf.canonical_gauge(qf.symmetrize(a1)).A
        n0 = n1 = 1.0
    return float(np.clip(np.sum(a0 * a1) / (n0 * n1), -1.0, 1.0))


def _lie_operator(a: np.ndarray) -> np.ndarray:
    # Row-major vec: vec(X^T A + A X) = (P (I kron A^T) + A kron I) vec(X)
    # written out column by column to stay readable.
    n = a.shape[0]
    op = np.empty((n * n, n * n))
    for k in range(n * n):
        e = np.zeros(n * n)
        e[k] = 1.0
        x = e.reshape(n, n)
        op[:, k] = (x.T @ a + a @ x).ravel()
    return op


def lie_basis(form: QuadraticForm, form_id: str = "") -> LieBasis:
    """Orthonormal basis of {X : X^T A + A X = 0} for invertible A."""
    if not form.invertible:
        raise ValueError(f"lie_basis needs an invertible form, signature {form.signature}")
    n = form.n
    basis = nullspace(_lie_operator(form.A))
    expected = n * (n - 1) // 2
    if basis.shape[1] != expected:
        raise ValueError(f"nullspace has dimension {basis.shape[1]}, expected {expected}")
    gens = basis.T.reshape(expected, n, n)
    return LieBasis(gens, form_id)


def _sym_coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n)


def recover_form(generators) -> tuple[QuadraticForm, bool]:
    """Symmetric A solving X^T A + A X = 0 for every generator.

    Returns the gauged form and an ambiguity flag, set when the solution
    space has dimension above one (the candidate with the smallest
    constraint residual is then returned).
    """
    gens = np.asarray(generators, dtype=np.float64)
    if gens.ndim == 2:
        gens = gens[None]
    if gens.size == 0 or gens.ndim != 3:
        raise ValueError("need at least one n x n generator")
    n = gens.shape[1]
    if gens.shape[2] != n:
        raise ValueError("generators must be square")
    iu, ju = _sym_coords(n)
    cols = []
    for i, j in zip(iu, ju):
        s = np.zeros((n, n))
        s[i, j] = s[j, i] = 1.0
        cols.append(np.concatenate([(x.T @ s + s @ x).ravel() for x in gens]))
    op = np.array(cols).T
    sol = nullspace(op)
    if sol.shape[1] == 0:
        raise ValueError("generators admit no nonzero invariant form")
    ambiguous = sol.shape[1] > 1
    # with several candidates, take the one the constraints pin down best
    coeffs = sol[:, int(np.argmin(np.linalg.norm(op @ sol, axis=0)))]
    a = np.zeros((n, n))
    a[iu, ju] = coeffs
    a[ju, iu] = coeffs
    return qf.canonical_gauge(qf.symmetrize(a)), ambiguous


def projection_distance(basis0: LieBasis, basis1: LieBasis) -> float:
    """sqrt(sum sin^2 theta_i) over the principal angles of the two vec-spans."""
    if basis0.dim != basis1.dim or basis0.n != basis1.n:
        raise ValueError(f"basis dimensions differ: {basis0.dim} vs {basis1.dim}")
    theta = principal_angles(basis0.as_columns(), basis1.as_columns())
    return float(np.sqrt(np.sum(np.sin(theta) ** 2)))


def form_distance(form0: QuadraticForm, form1: QuadraticForm) -> float | None:
    """Projection distance between the algebras of two forms; None if either is singular."""
    if not (form0.invertible and form1.invertible):
        return None
    return projection_distance(lie_basis(form0), lie_basis(form1))


def equivariance_error(
    model, true_form: QuadraticForm, samples, rng, extra=None, n_group: int = 4, scale: float = 0.5
) -> float:
    """Mean action residual of ``model`` under sampled group elements, over the target scale."""
    if not true_form.invertible:
        raise ValueError("equivariance_error needs an invertible true form")
    x = np.asarray(samples, dtype=np.float64)
    x1 = x[:, 0, :] if x.ndim == 3 else x
    q = np.einsum("bi,ij,bj->b", x1, true_form.A, x1)
    keep = np.abs(q) > qf.NULL_RTOL * true_form.fro * np.einsum("bi,bi->b", x1, x1)
    x = x[keep]
    if len(x) == 0:
        raise ValueError("all samples are null")
    extra = None if extra is None else np.asarray(extra)[keep]
    base = model.predict(x, extra)
    scale_y = float(np.sqrt(np.mean(base**2))) or 1.0
    errs = []
    for _ in range(n_group):
        g = sample_element(true_form, rng, scale).g
        moved = model.predict(x @ g.T, extra)
        if model.action == "invariant":
            ref = base
        elif model.action == "left":
            ref = base @ g.T
        else:
            ref = g @ base @ np.linalg.inv(g)
        diff = (moved - ref).reshape(len(x), -1)
        errs.append(np.linalg.norm(diff, axis=1))
    return float(np.mean(errs) / scale_y)
