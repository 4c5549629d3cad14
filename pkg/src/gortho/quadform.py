"""Quadratic forms x -> x^T A x, their pseudonorm and Gram matrices."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix, sym_eig

ZERO_EIG_RTOL = 1e-10
NULL_RTOL = 1e-8
TIE_RTOL = 1e-9


class NearNullCone(ValueError):
    """The vector lies (numerically) on the null cone x^T A x = 0."""


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    A: np.ndarray
    eig_u: np.ndarray = field(repr=False)
    eig_d: np.ndarray
    signature: tuple[int, int, int]

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def fro(self) -> float:
        return float(np.linalg.norm(self.A))

    @property
    def invertible(self) -> bool:
        return self.signature[2] == 0

    def null_eps(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return NULL_RTOL * self.fro * float(x @ x)

    def __repr__(self) -> str:
        p, q, z = self.signature
        return f"QuadraticForm(n={self.n}, signature=({p},{q},{z}))"


def _signature(d: np.ndarray) -> tuple[int, int, int]:
    scale = np.abs(d).max(initial=0.0)
    zero = np.abs(d) <= ZERO_EIG_RTOL * scale
    return int(np.sum((d > 0) & ~zero)), int(np.sum((d < 0) & ~zero)), int(np.sum(zero))


def symmetrize(m) -> QuadraticForm:
    """Build the form of ``m``; the stored matrix is ``(m + m.T) / 2``."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"form matrix must be square, got {a.shape}")
    a = 0.5 * (a + a.T)
    a.setflags(write=False)
    u, d = sym_eig(a)
    return QuadraticForm(A=a, eig_u=u, eig_d=d, signature=_signature(d))


def _vec(form: QuadraticForm, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (form.n,):
        raise ValueError(f"expected a vector of length {form.n}, got shape {x.shape}")
    return x


def quad_eval(form: QuadraticForm, x) -> float:
    x = _vec(form, x)
    return float(x @ form.A @ x)


def pseudonorm(form: QuadraticForm, x) -> float:
    """sign(x^T A x) * sqrt(|x^T A x|), exactly 0 inside the near-null band."""
    x = _vec(form, x)
    q = float(x @ form.A @ x)
    if abs(q) < form.null_eps(x):
        return 0.0
    return float(np.sign(q) * np.sqrt(abs(q)))


def normalize(form: QuadraticForm, x) -> np.ndarray:
    x = _vec(form, x)
    r = pseudonorm(form, x)
    if r == 0.0:
        raise NearNullCone(f"|x^T A x| below {form.null_eps(x):.3g}; x is on the null cone")
    return x / r


def gram(form: QuadraticForm, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != form.n:
        raise ValueError(f"expected p vectors of length {form.n}, got shape {xs.shape}")
    g = xs @ form.A @ xs.T
    return 0.5 * (g + g.T)


def canonical_gauge(form: QuadraticForm) -> QuadraticForm:
    """Rescale to unit Frobenius norm and fix the overall sign.

    The sign makes the eigenvalue of largest magnitude positive. When the
    largest magnitude is attained with both signs, the first nonzero entry
    in row-major order is made positive.
    """
    fro = form.fro
    if fro == 0.0:
        raise ValueError("cannot gauge the zero form")
    d = form.eig_d
    top, bottom = d.max(), d.min()
    if abs(top - abs(bottom)) <= TIE_RTOL * max(abs(top), abs(bottom)):
        flat = form.A.ravel()
        lead = flat[np.flatnonzero(np.abs(flat) > TIE_RTOL * fro)[0]]
        sign = np.sign(lead)
    else:
        sign = 1.0 if top > abs(bottom) else -1.0
    if sign > 0 and abs(fro - 1.0) <= 4 * np.finfo(float).eps:
        return form  # already gauged; dividing again would only shuffle ulps
    a = sign * form.A / fro
    a.setflags(write=False)
    return QuadraticForm(
        A=a,
        eig_u=form.eig_u if sign > 0 else form.eig_u[:, ::-1].copy(),
        eig_d=(sign * d / fro) if sign > 0 else (sign * d / fro)[::-1].copy(),
        signature=form.signature if sign > 0 else (form.signature[1], form.signature[0], form.signature[2]),
    )


def to_csv(form_or_matrix) -> str:
    a = form_or_matrix.A if isinstance(form_or_matrix, QuadraticForm) else np.asarray(form_or_matrix)
    buf = io.StringIO()
    buf.write(f"n={a.shape[0]}\n")
    for row in a:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def from_csv(text: str) -> QuadraticForm:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise ValueError("form CSV must start with a header line 'n=<dim>'")
    n = int(lines[0][2:])
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ValueError(f"form CSV header says n={n} but the body is not {n}x{n}")
    return symmetrize(rows)
