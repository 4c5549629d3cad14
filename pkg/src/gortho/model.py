"""The decomposed equivariant network.

``f(x) = phi_s(x / |x|_A) . phi_n(|x|_A)`` where ``phi_n`` is an MLP on the
pseudonorm (or on the Gram entries of a tuple) and ``phi_s`` emits an
A-Householder reflection. The form ``A`` is either frozen or realized from
parameters as ``U^T diag(d) U`` with ``U`` a product of Euclidean
reflections, so it stays symmetric and ``U`` orthogonal for any values.

Graphs are built on an :class:`~gortho.autodiff.Tape`; :meth:`GOrthoNet.predict`
wraps that for plain numpy use.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import quadform as qf
from .autodiff import Node, Tape
from .group import GroupElement, NearNullDirection
from .quadform import QuadraticForm

ACTIONS = ("invariant", "left", "conjugation")
EPS_SKIP = 0.1
NULL_RTOL = 1e-8
BLOB_MAGIC = b"GON1"


@dataclass
class Mlp:
    widths: list[int]
    activation: str = "tanh"

    def init(self, rng: np.random.Generator, prefix: str, zero_last: bool = False) -> dict[str, np.ndarray]:
        params = {}
        last = len(self.widths) - 2
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if zero_last and i == last:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            params[f"{prefix}.w{i}"] = w
            params[f"{prefix}.b{i}"] = np.zeros((1, fan_out))
        return params

    def apply(self, tape: Tape, x: Node, nodes: dict[str, Node], prefix: str) -> Node:
        h = x
        layers = len(self.widths) - 1
        act = getattr(tape, self.activation)
        for i in range(layers):
            h = h @ nodes[f"{prefix}.w{i}"] + nodes[f"{prefix}.b{i}"]
            if i < layers - 1:
                h = act(h)
        return h


@dataclass
class LearnableForm:
    """Parameters of ``A = U^T diag(d) U`` with ``U = H(v_1) ... H(v_n)``."""

    n: int

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {
            "form.v": np.eye(self.n) + rng.normal(0.0, 0.01, size=(self.n, self.n)),
            "form.d": np.ones((1, self.n)),
        }


def realize_on_tape(tape: Tape, v: Node, d: Node, n: int) -> tuple[Node, Node]:
    """Differentiable ``(U, A)``; a reflection with |v|^2 < 1e-12 becomes I."""
    eye = tape.constant(np.eye(n))
    u = eye
    for i in range(n):
        vi = v[i : i + 1, :]
        coef = tape.reciprocal_guarded(tape.sum(tape.square(vi)), 1e-12, fallback="zero") * 2.0
        u = u @ (eye - coef * (vi.T @ vi))
    a = u.T @ (tape.reshape(d, (n, 1)) * u)
    return u, (a + a.T) * 0.5


def realize_form(params: dict[str, np.ndarray]) -> tuple[np.ndarray, QuadraticForm]:
    """Numeric ``(U, form)`` from learnable-form parameters."""
    v = params["form.v"]
    tape = Tape()
    u, a = realize_on_tape(tape, tape.constant(v), tape.constant(params["form.d"]), v.shape[0])
    tape.forward()
    return u.value, qf.symmetrize(a.value)


class GOrthoNet:
    """phi_s / phi_n network over a frozen or learnable quadratic form.

    ``tuple_size`` > 0 switches to tuple inputs of shape (batch, p, n); the
    norm network then reads the p(p+1)/2 distinct Gram entries plus
    ``extra_features`` invariant channels (e.g. masses).
    """

    def __init__(
        self,
        n: int,
        action: str = "invariant",
        form: QuadraticForm | None = None,
        out_dim: int | None = None,
        hidden: tuple[int, ...] = (64, 64),
        tuple_size: int = 0,
        extra_features: int = 0,
        symmetric_output: bool = False,
        activation: str = "tanh",
        seed: int = 0,
    ):
        if action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}")
        self.n = n
        self.action = action
        self.frozen_form = form
        self.tuple_size = tuple_size
        self.extra_features = extra_features
        self.symmetric_output = symmetric_output
        if action == "left":
            out_dim = n
        elif action == "conjugation":
            out_dim = n * n
        elif out_dim is None:
            out_dim = 1
        self.out_dim = out_dim
        n_in = tuple_size * (tuple_size + 1) // 2 + extra_features if tuple_size else 1
        self.phi_n = Mlp([n_in, *hidden, out_dim], activation)
        self.phi_s = None if action == "invariant" else Mlp([n, *hidden, n], activation)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        if form is None:
            self.params.update(LearnableForm(n).init(rng))
        self.params.update(self.phi_n.init(rng, "phi_n"))
        if self.phi_s is not None:
            self.params.update(self.phi_s.init(rng, "phi_s", zero_last=True))

    @property
    def learnable(self) -> bool:
        return self.frozen_form is None

    def current_form(self) -> QuadraticForm:
        if self.frozen_form is not None:
            return self.frozen_form
        return realize_form(self.params)[1]

    # -- graph construction
    def leaves(self, tape: Tape) -> dict[str, Node]:
        return {name: tape.parameter(val, name) for name, val in self.params.items()}

    def form_node(self, tape: Tape, nodes: dict[str, Node]) -> Node:
        if self.frozen_form is not None:
            return tape.constant(self.frozen_form.A)
        return realize_on_tape(tape, nodes["form.v"], nodes["form.d"], self.n)[1]

    def householder(self, tape: Tape, w: Node, a: Node, a_fro: Node) -> Node:
        """Batched ``I - 2 w (A w)^T / (w^T A w)`` of shape (batch, n, n)."""
        n = self.n
        u = w @ a
        s = tape.sum(w * u, axis=1, keepdims=True)
        guard = tape.sum(tape.square(w), axis=1, keepdims=True) * a_fro * NULL_RTOL
        coef = tape.reciprocal_guarded(s, guard) * 2.0
        outer = tape.reshape(w, (-1, n, 1)) @ tape.reshape(u, (-1, 1, n))
        return tape.constant(np.eye(n)) - tape.reshape(coef, (-1, 1, 1)) * outer

    def phi_s_on_tape(self, tape: Tape, x_hat: Node, nodes, a: Node, a_fro: Node) -> Node:
        w = self.phi_s.apply(tape, x_hat, nodes, "phi_s") + x_hat * EPS_SKIP
        return self.householder(tape, w, a, a_fro)

    def build(self, tape: Tape, x: Node, extra: Node | None = None, nodes=None) -> dict[str, Node]:
        """Record the forward graph; returns named intermediate nodes incl. ``out``."""
        nodes = self.leaves(tape) if nodes is None else nodes
        n, p = self.n, self.tuple_size
        a = self.form_node(tape, nodes)
        a_fro = tape.sqrt_abs_signed(tape.sum(tape.square(a)), 0.0)
        if p:
            ax = x @ a  # (B, p, n)
            g = ax @ x.T  # (B, p, p)
            iu = np.triu_indices(p)
            flat = tape.reshape(g, (-1, p * p))
            feats = flat[:, iu[0] * p + iu[1]]
            if self.extra_features:
                feats = tape.concat([feats, extra], axis=1)
            x1 = x[:, 0, :]
            q1 = flat[:, 0:1]
            norm_in = feats
        else:
            x1 = x
            q1 = tape.sum((x @ a) * x, axis=1, keepdims=True)
            norm_in = None
        eps = tape.sum(tape.square(x1), axis=1, keepdims=True) * a_fro * NULL_RTOL
        r = tape.sqrt_abs_signed(q1, eps)
        if norm_in is None:
            norm_in = r
        out_n = self.phi_n.apply(tape, norm_in, nodes, "phi_n")
        graph = {"A": a, "r": r, "phi_n": out_n, "features": norm_in}
        if self.action == "invariant":
            graph["out"] = out_n
            return graph
        inv_r = tape.reciprocal_guarded(r, tape.sqrt_abs_signed(eps, 0.0))
        x_hat = x1 * inv_r
        rmat = self.phi_s_on_tape(tape, x_hat, nodes, a, a_fro)
        graph.update(x_hat=x_hat, R=rmat)
        if self.action == "left":
            out = tape.reshape(rmat @ tape.reshape(out_n, (-1, n, 1)), (-1, n))
        else:
            m = tape.reshape(out_n, (-1, n, n))
            if self.symmetric_output:
                m = (m + m.T) * 0.5
            graph["M"] = m
            out = rmat @ m @ rmat
        graph["out"] = out
        return graph

    # -- numpy conveniences
    def run(self, x, extra=None) -> dict[str, np.ndarray]:
        tape = Tape()
        xn = tape.constant(np.asarray(x, dtype=np.float64), "x")
        en = tape.constant(np.asarray(extra, dtype=np.float64), "extra") if extra is not None else None
        graph = self.build(tape, xn, en)
        tape.forward()
        return {k: v.value for k, v in graph.items()}

    def predict(self, x, extra=None) -> np.ndarray:
        return self.run(x, extra)["out"]

    def phi_s_forward(self, x_hat) -> GroupElement:
        """The reflection emitted for one A-normalized input, certified."""
        if self.phi_s is None:
            raise ValueError("invariant models have no phi_s")
        form = self.current_form()
        tape = Tape()
        nodes = self.leaves(tape)
        xn = tape.constant(np.asarray(x_hat, dtype=np.float64).reshape(1, self.n))
        a = self.form_node(tape, nodes)
        a_fro = tape.sqrt_abs_signed(tape.sum(tape.square(a)), 0.0)
        w = self.phi_s.apply(tape, xn, nodes, "phi_s") + xn * EPS_SKIP
        rmat = self.householder(tape, w, a, a_fro)
        tape.forward()
        wv = w.value[0]
        if abs(wv @ form.A @ wv) < NULL_RTOL * form.fro * (wv @ wv):
            raise NearNullDirection("phi_s produced a null direction")
        return GroupElement.certify(form, rmat.value[0], 1e-9)

    # -- serialization
    def to_blob(self) -> bytes:
        buf = io.BytesIO()
        buf.write(BLOB_MAGIC)
        buf.write(struct.pack("<I", len(self.params)))
        for name, arr in self.params.items():
            raw = name.encode()
            buf.write(struct.pack("<H", len(raw)) + raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in self.params.values():
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    def load_blob(self, blob: bytes) -> None:
        if blob[:4] != BLOB_MAGIC:
            raise ValueError("not a GON1 parameter blob")
        pos = 4
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        specs = []
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + ln].decode()
            pos += ln
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            specs.append((name, shape))
        if [s[0] for s in specs] != list(self.params):
            raise ValueError("blob parameters do not match this model")
        for name, shape in specs:
            size = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
            if arr.shape != self.params[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            self.params[name] = arr.astype(np.float64)
            pos += 8 * size
