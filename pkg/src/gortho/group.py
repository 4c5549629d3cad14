"""The group of linear maps preserving a quadratic form, O(p, q) and relatives.

Elements are certified on construction: ``g^T A g`` must reproduce ``A`` to
a relative Frobenius tolerance. The alignment routines build explicit group
elements sending a vector to a multiple of a coordinate axis, first in the
definite, semidefinite and 2-D indefinite cases, then composed into a
pipeline for an arbitrary diagonal form. ``transport`` uses that pipeline to
map any vector onto any other of equal pseudonorm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quadform as qf
from .numerics import mat_exp
from .quadform import NearNullCone, QuadraticForm

MEMBER_RTOL = 1e-8
CLOSURE_RTOL = 1e-7
ALIGN_RTOL = 1e-8
HOUSEHOLDER_RTOL = 1e-8


class NotAMember(ValueError):
    pass


class NearNullDirection(ValueError):
    """Householder direction w with w^T A w numerically zero."""


def membership_residual(form: QuadraticForm, g) -> float:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (form.n, form.n):
        raise ValueError(f"expected a {form.n}x{form.n} matrix, got {g.shape}")
    return float(np.linalg.norm(g.T @ form.A @ g - form.A))


def is_member(form: QuadraticForm, g, tol: float = MEMBER_RTOL) -> tuple[bool, float]:
    res = membership_residual(form, g)
    return res <= tol * form.fro, res


@dataclass(frozen=True, eq=False)
class GroupElement:
    g: np.ndarray
    form: QuadraticForm
    residual: float

    @classmethod
    def certify(cls, form: QuadraticForm, g, tol: float = MEMBER_RTOL) -> GroupElement:
        g = np.array(g, dtype=np.float64)
        ok, res = is_member(form, g, tol)
        if not ok:
            raise NotAMember(f"|g^T A g - A|_F = {res:.3e} exceeds {tol:g} * |A|_F")
        g.setflags(write=False)
        return cls(g=g, form=form, residual=res)

    def __matmul__(self, other):
        if isinstance(other, GroupElement):
            if other.form is not self.form:
                raise ValueError("cannot compose elements of different forms")
            return GroupElement.certify(self.form, self.g @ other.g, CLOSURE_RTOL)
        return self.g @ np.asarray(other, dtype=np.float64)

    def inverse(self) -> GroupElement:
        if self.form.invertible:
            # g^-1 = A^-1 g^T A, exact for members
            inv = np.linalg.solve(self.form.A, self.g.T @ self.form.A)
        else:
            inv = np.linalg.inv(self.g)
        return GroupElement.certify(self.form, inv, CLOSURE_RTOL)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.g))


def element_from_skew(form: QuadraticForm, k) -> GroupElement:
    """exp(A^-1 K) for skew-symmetric K; A X = K is skew, so X^T A + A X = 0."""
    if not form.invertible:
        raise ValueError("sampling needs an invertible form")
    k = np.asarray(k, dtype=np.float64)
    k = 0.5 * (k - k.T)
    x = np.linalg.solve(form.A, k)
    return GroupElement.certify(form, mat_exp(x))


def sample_element(form: QuadraticForm, rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
    if scale > 3:
        raise ValueError("scale must be <= 3")
    n = form.n
    k = np.triu(rng.normal(0.0, scale, size=(n, n)), 1)
    return element_from_skew(form, k - k.T)


def a_householder(form: QuadraticForm, w) -> GroupElement:
    """R = I - 2 w w^T A / (w^T A w): an A-orthogonal, self-inverse reflection."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (form.n,):
        raise ValueError(f"expected a vector of length {form.n}, got shape {w.shape}")
    aw = form.A @ w
    s = float(w @ aw)
    if abs(s) < HOUSEHOLDER_RTOL * form.fro * float(w @ w) or s == 0.0:
        raise NearNullDirection(f"w^T A w = {s:.3g} is too close to zero")
    return GroupElement.certify(form, np.eye(form.n) - 2.0 * np.outer(w, aw) / s)


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    """``w @ x == gamma * e[target_axis]``.

    ``gamma`` is nonnegative except for ``align_semidefinite``, which keeps
    the sign of its input coefficient.
    """

    w: GroupElement
    gamma: float
    target_axis: int
    align_residual: float


def _diag_form(d) -> QuadraticForm:
    return qf.symmetrize(np.diag(np.asarray(d, dtype=np.float64)))


def _finish(form: QuadraticForm, w: np.ndarray, x: np.ndarray, gamma: float, axis: int) -> AlignmentResult:
    elem = GroupElement.certify(form, w, ALIGN_RTOL)
    target = np.zeros(form.n)
    target[axis] = gamma
    res = float(np.linalg.norm(elem.g @ x - target))
    if res > ALIGN_RTOL * max(float(np.linalg.norm(x)), 1.0):
        raise ArithmeticError(f"alignment residual {res:.3e} too large")
    return AlignmentResult(w=elem, gamma=gamma, target_axis=axis, align_residual=res)


# -- raw lemma constructions (no certification, 0-based indices) -------------


def _euclid_to_axis(v: np.ndarray, axis: int = 0) -> np.ndarray:
    # Euclidean Householder sending v to |v| e_axis.
    n = v.shape[0]
    norm = np.linalg.norm(v)
    u = -v.copy()
    u[axis] += norm
    uu = float(u @ u)
    if norm == 0.0 or uu <= (1e-15 * norm) ** 2:
        return np.eye(n)
    # reflection about u^perp maps v to |v| e_axis since |v| e_axis - v = u
    return np.eye(n) - 2.0 * np.outer(u, u) / uu


def _definite(d: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, float]:
    s = np.sqrt(np.abs(d))
    h = _euclid_to_axis(s * x)
    w = (h * s[None, :]) / s[:, None]  # S^-1 H S
    alpha = float(np.linalg.norm(s * x) / s[0])
    return w, alpha


def _semidefinite(d: np.ndarray, a: float, b: float, k: int) -> np.ndarray:
    n = d.shape[0]
    d1 = abs(float(d[0]))
    r = np.eye(n)
    r[0, 0] = 1.0
    r[k, 0] = np.sqrt(d1) * a * b
    r[k, k] = -d1 * a * a
    s = np.eye(n)
    s[0, 0] = np.sqrt(d1)
    s_inv = np.eye(n)
    s_inv[0, 0] = 1.0 / np.sqrt(d1)
    return s_inv @ r @ s


def _indefinite(d: np.ndarray, k: int, a: float, b: float) -> tuple[np.ndarray, float, int]:
    # d[0] > 0, d[k] < 0, x = a e_0 + b e_k
    n = d.shape[0]
    s1, sk = np.sqrt(d[0]), np.sqrt(-d[k])
    ap, bp = s1 * a, sk * b
    value = ap * ap - bp * bp
    beta = 1.0 / np.sqrt(abs(value))
    r = np.eye(n)
    if value > 0:
        block = beta * np.array([[ap, -bp], [-bp, ap]])
        axis, alpha = 0, 1.0 / (beta * s1)
    else:
        block = beta * np.array([[bp, -ap], [-ap, bp]])
        axis, alpha = k, 1.0 / (beta * sk)
    r[np.ix_([0, k], [0, k])] = block
    s = np.ones(n)
    s[0], s[k] = s1, sk
    w = (r * s[None, :]) / s[:, None]
    return w, float(alpha), axis


# -- public lemma wrappers ----------------------------------------------------


def align_definite(d, x) -> AlignmentResult:
    d = np.asarray(d, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("align_definite needs entries of one strict sign")
    if not np.any(x):
        raise ValueError("cannot align the zero vector")
    w, alpha = _definite(d, x)
    return _finish(_diag_form(d), w, x, alpha, 0)


def align_semidefinite(d, a: float, b: float, k: int) -> AlignmentResult:
    """Send ``a e_0 + b e_k`` to ``a e_0`` when ``d[k] == 0``."""
    d = np.asarray(d, dtype=np.float64)
    if k == 0 or d[k] != 0.0:
        raise ValueError("k must index a zero entry other than the first")
    if d[0] == 0.0:
        raise ValueError("the first entry must be nonzero")
    if a == 0.0:
        raise ValueError("the construction degenerates for a = 0")
    x = np.zeros(d.shape[0])
    x[0], x[k] = a, b
    return _finish(_diag_form(d), _semidefinite(d, a, b, k), x, a, 0)


def align_indefinite(d, k: int, a: float, b: float) -> AlignmentResult:
    d = np.asarray(d, dtype=np.float64)
    if not (d[0] > 0 and d[k] < 0):
        raise ValueError("need d[0] > 0 and d[k] < 0")
    x = np.zeros(d.shape[0])
    x[0], x[k] = a, b
    form = _diag_form(d)
    if abs(d[0] * a * a + d[k] * b * b) < form.null_eps(x):
        raise NearNullCone("x is on the null cone of the 2-D block")
    w, alpha, axis = _indefinite(d, k, a, b)
    return _finish(form, w, x, alpha, axis)


# -- the full pipeline ----------------------------------------------------------


def _block_permutation(d: np.ndarray) -> np.ndarray:
    scale = np.abs(d).max(initial=0.0)
    zero = np.abs(d) <= qf.ZERO_EIG_RTOL * scale
    pos = np.flatnonzero((d > 0) & ~zero)
    neg = np.flatnonzero((d < 0) & ~zero)
    return np.concatenate([pos, neg, np.flatnonzero(zero)]).astype(int), len(pos), len(neg)


def _pipeline(d: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Align x for d already ordered as (positive, negative, zero) blocks."""
    n = d.shape[0]
    order, p, q = _block_permutation(d)
    assert np.array_equal(order, np.arange(n))
    z = n - p - q
    blocks = [(0, p), (p, p + q), (p + q, n)]

    # Step 1 and 2: align each block to its first axis.
    w1 = np.eye(n)
    for lo, hi in blocks:
        if hi > lo and np.any(x[lo:hi]):
            if lo == p + q:
                w1[lo:hi, lo:hi] = _euclid_to_axis(x[lo:hi])
            else:
                w1[lo:hi, lo:hi] = _definite(d[lo:hi], x[lo:hi])[0]
    y = w1 @ x
    for lo, hi in blocks:
        y[lo + 1 : hi] = 0.0
    alpha = y[0] if p else 0.0
    beta1 = y[p] if q else 0.0
    beta2 = y[p + q] if z else 0.0

    # Step 3: fold the zero-block component into a signed block.
    w2 = np.eye(n)
    tiny = 1e-12 * max(float(np.linalg.norm(x)), 1e-300)
    if z and beta2 != 0.0:
        if q and abs(beta1) > tiny:
            lead, a = p, beta1
        elif p and abs(alpha) > tiny:
            lead, a = 0, alpha
        else:
            raise NearNullCone("x has no component in the signed blocks")
        # sub-problem on (lead block + zero block), lead axis first, zero axis at k
        sub = list(range(lead, lead + (q if lead == p else p))) + list(range(p + q, n))
        k = sub.index(p + q)
        w2[np.ix_(sub, sub)] = _semidefinite(d[sub], a, beta2, k)
        y = w2 @ y
        y[p + q] = 0.0

    # Step 4: merge the positive and negative blocks.
    w3 = np.eye(n)
    alpha = y[0] if p else 0.0
    beta1 = y[p] if q else 0.0
    if p and q:
        sub = [0, p]
        if abs(d[0] * alpha**2 + d[p] * beta1**2) == 0.0:
            raise NearNullCone("x is on the null cone")
        w_sub, gamma, axis_sub = _indefinite(d[sub], 1, alpha, beta1)
        w3[np.ix_(sub, sub)] = w_sub
        axis = sub[axis_sub]
    elif p:
        gamma, axis = alpha, 0
    elif q:
        gamma, axis = beta1, p
    else:
        raise NearNullCone("form has no signed directions")
    if gamma == 0.0:
        raise NearNullCone("x is on the null cone")
    return w3 @ w2 @ w1, float(gamma), axis


def canonical_align(form, x) -> AlignmentResult:
    """Group element W with ``W x = gamma e_t`` for a diagonal form.

    ``t`` is the first positive axis when ``x^T D x > 0`` and the first
    negative axis otherwise. ``form`` may be a diagonal QuadraticForm or the
    vector of its diagonal entries.
    """
    if isinstance(form, QuadraticForm):
        a = form.A
        off = a - np.diag(np.diag(a))
        if np.abs(off).max(initial=0.0) > 1e-12 * form.fro:
            raise ValueError("canonical_align needs a diagonal form")
        d = np.diag(a).copy()
    else:
        d = np.asarray(form, dtype=np.float64)
        form = _diag_form(d)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != d.shape:
        raise ValueError(f"expected a vector of length {d.shape[0]}, got shape {x.shape}")
    value = float(x @ (d * x))
    if abs(value) < form.null_eps(x):
        raise NearNullCone(f"x^T D x = {value:.3g} is inside the null band")

    order, _, _ = _block_permutation(d)
    d_blocks = d[order].copy()
    scale = np.abs(d).max()
    d_blocks[np.abs(d_blocks) <= qf.ZERO_EIG_RTOL * scale] = 0.0
    w_blocks, gamma, axis = _pipeline(d_blocks, x[order])
    n = d.shape[0]
    perm = np.zeros((n, n))
    perm[np.arange(n), order] = 1.0
    w = perm.T @ w_blocks @ perm
    return _finish(form, w, x, gamma, int(order[axis]))


def _eigen_frame(form: QuadraticForm) -> tuple[np.ndarray, np.ndarray]:
    d = form.eig_d.copy()
    d[np.abs(d) <= qf.ZERO_EIG_RTOL * np.abs(d).max()] = 0.0
    return form.eig_u, d


def transport(form: QuadraticForm, x, y, rtol: float = 1e-6) -> GroupElement:
    """A group element W with ``W x = y`` for two vectors of equal pseudonorm."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rx, ry = qf.pseudonorm(form, x), qf.pseudonorm(form, y)
    if rx == 0.0 or ry == 0.0:
        raise NearNullCone("transport needs non-null vectors")
    if abs(rx - ry) > rtol * max(abs(rx), abs(ry)):
        raise ValueError(f"pseudonorms differ: {rx:.6g} vs {ry:.6g}")
    u, d = _eigen_frame(form)
    ax = canonical_align(d, u.T @ x)
    ay = canonical_align(d, u.T @ y)
    if ax.target_axis != ay.target_axis:
        raise ValueError("x and y align to different axes")
    # W_y^-1 W_x, then conjugate back from the eigenframe
    w_diag = np.linalg.solve(ay.w.g, ax.w.g)
    scale_fix = ay.gamma / ax.gamma
    if not np.isclose(scale_fix, 1.0, rtol=rtol):
        raise ValueError("aligned coefficients differ")
    return GroupElement.certify(form, u @ w_diag @ u.T, CLOSURE_RTOL)


def orbit_equivalent(form: QuadraticForm, x, y, tol: float = 1e-6) -> bool:
    rx, ry = qf.pseudonorm(form, x), qf.pseudonorm(form, y)
    if rx == 0.0 or ry == 0.0:
        return False
    return abs(rx - ry) <= tol * max(abs(rx), abs(ry))
