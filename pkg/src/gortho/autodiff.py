"""A small reverse-mode autodiff tape over float64 arrays.

Graphs are recorded first and evaluated by :meth:`Tape.forward`; nodes run in
insertion order and :meth:`Tape.backward` visits them in exact reverse order.
Values are numpy arrays; ``matmul`` broadcasts over leading batch axes and
the elementwise ops broadcast numpy-style, with adjoints summed back to the
operand shape.

The vocabulary is closed: every op has a hand-written adjoint below. The two
guarded ops (``sqrt_abs_signed`` and ``reciprocal_guarded``) take their
threshold as a second, non-differentiated input node and declare a zero
subgradient inside the guard band.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np


class TapeError(RuntimeError):
    pass


class Node:
    __slots__ = ("tape", "index", "op", "inputs", "attrs", "name", "value", "grad", "mask")

    def __init__(self, tape, index, op, inputs, attrs=None, name=None, value=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}
        self.name = name
        self.value = value
        self.grad = None
        self.mask = None

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        return f"Node({self.index}, {self.op}, name={self.name}, shape={shape})"

    def __add__(self, other):
        return self.tape.add(self, self.tape.lift(other))

    def __radd__(self, other):
        return self.tape.add(self.tape.lift(other), self)

    def __sub__(self, other):
        return self.tape.sub(self, self.tape.lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self.tape.lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, self.tape.lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, self.tape.lift(other))

    def __rmatmul__(self, other):
        return self.tape.matmul(self.tape.lift(other), self)

    def __getitem__(self, key):
        return self.tape.slice(self, key)

    @property
    def T(self):
        return self.tape.transpose(self)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# -- forward and adjoint rules --------------------------------------------------
# forward(node, *input_values) -> value
# adjoint(node, g, *input_values) -> tuple of input adjoints (None = no gradient)


def _fwd_matmul(node, a, b):
    return a @ b


def _adj_matmul(node, g, a, b):
    if a.ndim == 1 or b.ndim == 1:
        raise TapeError("matmul operands must be at least 2-D")
    return _unbroadcast(g @ _swap(b), a.shape), _unbroadcast(_swap(a) @ g, b.shape)


def _adj_add(node, g, a, b):
    return _unbroadcast(g, np.shape(a)), _unbroadcast(g, np.shape(b))


def _adj_sub(node, g, a, b):
    return _unbroadcast(g, np.shape(a)), _unbroadcast(-g, np.shape(b))


def _adj_mul(node, g, a, b):
    return _unbroadcast(g * b, np.shape(a)), _unbroadcast(g * a, np.shape(b))


def _fwd_sum(node, a):
    return np.sum(a, axis=node.attrs["axis"], keepdims=node.attrs["keepdims"])


def _adj_sum(node, g, a):
    axis, keepdims = node.attrs["axis"], node.attrs["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _fwd_mean(node, a):
    return np.mean(a, axis=node.attrs["axis"], keepdims=node.attrs["keepdims"])


def _adj_mean(node, g, a):
    axis = node.attrs["axis"]
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return (_adj_sum(node, g, a)[0] / count,)


def _fwd_sqrt_abs_signed(node, u, eps):
    mag = np.abs(u)
    node.mask = mag < eps
    out = np.sign(u) * np.sqrt(mag)
    return np.where(node.mask, 0.0, out)


def _adj_sqrt_abs_signed(node, g, u, eps):
    mag = np.where(node.mask, 1.0, np.abs(u))
    d = np.where(node.mask, 0.0, 0.5 / np.sqrt(mag))
    return _unbroadcast(g * d, u.shape), None


def _fwd_recip(node, u, eps):
    node.mask = np.abs(u) < eps
    safe = np.where(node.mask, 1.0, u)
    out = 1.0 / safe
    if node.attrs["fallback"] == "zero":
        return np.where(node.mask, 0.0, out)
    clamp = np.where(u < 0, -1.0, 1.0) / np.maximum(eps, 1e-300)
    return np.where(node.mask, clamp, out)


def _adj_recip(node, g, u, eps):
    safe = np.where(node.mask, 1.0, u)
    d = np.where(node.mask, 0.0, -1.0 / (safe * safe))
    return _unbroadcast(g * d, u.shape), None


def _fwd_slice(node, a):
    return a[node.attrs["key"]]


def _adj_slice(node, g, a):
    out = np.zeros_like(a)
    np.add.at(out, node.attrs["key"], g)
    return (out,)


def _fwd_concat(node, *xs):
    return np.concatenate(xs, axis=node.attrs["axis"])


def _adj_concat(node, g, *xs):
    axis = node.attrs["axis"]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _sigmoid(a):
    return np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))), np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))


class _Op(NamedTuple):
    forward: Callable
    adjoint: Callable


OPS: dict[str, _Op] = {
    "matmul": _Op(_fwd_matmul, _adj_matmul),
    "add": _Op(lambda n, a, b: a + b, _adj_add),
    "sub": _Op(lambda n, a, b: a - b, _adj_sub),
    "mul": _Op(lambda n, a, b: a * b, _adj_mul),
    "scale": _Op(lambda n, a: n.attrs["c"] * a, lambda n, g, a: (n.attrs["c"] * g,)),
    "transpose": _Op(lambda n, a: _swap(a), lambda n, g, a: (_swap(g),)),
    "sum": _Op(_fwd_sum, _adj_sum),
    "mean": _Op(_fwd_mean, _adj_mean),
    "tanh": _Op(lambda n, a: np.tanh(a), lambda n, g, a: (g * (1.0 - np.tanh(a) ** 2),)),
    "relu": _Op(lambda n, a: np.maximum(a, 0.0), lambda n, g, a: (g * (a > 0),)),
    "sigmoid": _Op(lambda n, a: _sigmoid(a), lambda n, g, a: (g * _sigmoid(a) * (1.0 - _sigmoid(a)),)),
    "softplus": _Op(lambda n, a: np.logaddexp(0.0, a), lambda n, g, a: (g * _sigmoid(a),)),
    "square": _Op(lambda n, a: a * a, lambda n, g, a: (2.0 * a * g,)),
    "sqrt_abs_signed": _Op(_fwd_sqrt_abs_signed, _adj_sqrt_abs_signed),
    "reciprocal_guarded": _Op(_fwd_recip, _adj_recip),
    "slice": _Op(_fwd_slice, _adj_slice),
    "concat": _Op(_fwd_concat, _adj_concat),
    "reshape": _Op(lambda n, a: np.reshape(a, n.attrs["shape"]), lambda n, g, a: (np.reshape(g, a.shape),)),
}


class Tape:
    """Append-only op graph. Build with the op methods, then ``forward``."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._evaluated = False

    def _push(self, op, inputs=(), attrs=None, name=None, value=None) -> Node:
        for x in inputs:
            if x.tape is not self:
                raise TapeError("node belongs to another tape")
        node = Node(self, len(self.nodes), op, tuple(inputs), attrs, name, value)
        self.nodes.append(node)
        self._evaluated = False
        return node

    # -- leaves
    def parameter(self, value, name: str) -> Node:
        return self._push("parameter", name=name, value=np.array(value, dtype=np.float64))

    def constant(self, value=None, name: str | None = None) -> Node:
        """A non-differentiated leaf. ``value=None`` declares a placeholder."""
        v = None if value is None else np.array(value, dtype=np.float64)
        return self._push("constant", name=name, value=v)

    def lift(self, x) -> Node:
        return x if isinstance(x, Node) else self.constant(x)

    # -- ops
    def matmul(self, a, b):
        return self._push("matmul", (a, b))

    def add(self, a, b):
        return self._push("add", (a, b))

    def sub(self, a, b):
        return self._push("sub", (a, b))

    def mul(self, a, b):
        return self._push("mul", (a, b))

    def scale(self, a, c: float):
        return self._push("scale", (a,), {"c": float(c)})

    def transpose(self, a):
        return self._push("transpose", (a,))

    def sum(self, a, axis=None, keepdims=False):
        return self._push("sum", (a,), {"axis": axis, "keepdims": keepdims})

    def mean(self, a, axis=None, keepdims=False):
        return self._push("mean", (a,), {"axis": axis, "keepdims": keepdims})

    def tanh(self, a):
        return self._push("tanh", (a,))

    def relu(self, a):
        return self._push("relu", (a,))

    def sigmoid(self, a):
        return self._push("sigmoid", (a,))

    def softplus(self, a):
        return self._push("softplus", (a,))

    def square(self, a):
        return self._push("square", (a,))

    def sqrt_abs_signed(self, a, eps):
        """sign(u) sqrt|u|, exactly 0 (with zero subgradient) where |u| < eps."""
        return self._push("sqrt_abs_signed", (a, self.lift(eps)))

    def reciprocal_guarded(self, a, eps, fallback: str = "clamp"):
        """1/u; inside |u| < eps returns sign(u)/eps ("clamp") or 0 ("zero")."""
        if fallback not in ("clamp", "zero"):
            raise ValueError(f"unknown fallback {fallback!r}")
        return self._push("reciprocal_guarded", (a, self.lift(eps)), {"fallback": fallback})

    def slice(self, a, key):
        return self._push("slice", (a,), {"key": key})

    def concat(self, xs, axis=-1):
        return self._push("concat", tuple(xs), {"axis": axis})

    def reshape(self, a, shape):
        return self._push("reshape", (a,), {"shape": tuple(shape)})

    # -- evaluation
    def leaves(self, op: str | None = None) -> dict[str, Node]:
        return {
            n.name: n
            for n in self.nodes
            if n.name is not None and n.op in (("parameter", "constant") if op is None else (op,))
        }

    def forward(self, inputs: dict | None = None) -> None:
        """Bind named leaves from ``inputs`` and evaluate every node in order."""
        named = self.leaves()
        for key, val in (inputs or {}).items():
            if key not in named:
                raise TapeError(f"no leaf named {key!r}")
            named[key].value = np.array(val, dtype=np.float64)
        for node in self.nodes:
            node.grad = None
            if node.op in ("parameter", "constant"):
                if node.value is None:
                    raise TapeError(f"input {node.name!r} is unbound")
                continue
            args = [x.value for x in node.inputs]
            try:
                node.value = np.asarray(OPS[node.op].forward(node, *args), dtype=np.float64)
            except ValueError as exc:
                raise TapeError(f"shape mismatch at node {node.index} ({node.op}): {exc}") from exc
        self._evaluated = True

    def backward(self, output: Node, seed=None) -> dict[str, np.ndarray]:
        """Accumulate adjoints from ``output``; returns gradients by parameter name."""
        if not self._evaluated:
            raise TapeError("backward called before forward")
        for node in self.nodes:
            node.grad = None
        if seed is None:
            if output.value.size != 1:
                raise TapeError("a seed is required for non-scalar outputs")
            seed = np.ones_like(output.value)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.value.shape:
            raise TapeError(f"seed shape {seed.shape} != output shape {output.value.shape}")
        output.grad = seed.copy()
        for node in reversed(self.nodes[: output.index + 1]):
            if node.grad is None or not node.inputs:
                continue
            adjs = OPS[node.op].adjoint(node, node.grad, *[x.value for x in node.inputs])
            for x, adj in zip(node.inputs, adjs):
                if adj is None or x.op == "constant":
                    continue
                x.grad = adj if x.grad is None else x.grad + adj
        return {
            name: (node.grad if node.grad is not None else np.zeros_like(node.value))
            for name, node in self.leaves("parameter").items()
        }

    def guard_masks(self) -> list[np.ndarray]:
        return [n.mask.copy() for n in self.nodes if n.mask is not None]


class GradCheck(NamedTuple):
    max_rel_error: float
    checked: int
    skipped: int


def grad_check(tape: Tape, output: Node, params=None, eps: float = 1e-5) -> GradCheck:
    """Compare reverse-mode gradients with central differences.

    Coordinates whose perturbation moves any guarded op across its guard
    band are skipped (their declared subgradient is not a derivative there)
    and counted in ``skipped``.
    """
    tape.forward()
    if output.value.size != 1:
        raise TapeError("grad_check needs a scalar output")
    grads = tape.backward(output)
    base_masks = tape.guard_masks()
    leaves = tape.leaves("parameter")
    names = list(leaves) if params is None else list(params)
    worst, checked, skipped = 0.0, 0, 0
    for name in names:
        node = leaves[name]
        flat = node.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals, stable = [], True
            for step in (eps, -eps):
                flat[i] = orig + step
                tape.forward()
                vals.append(float(output.value.reshape(-1)[0]))
                masks = tape.guard_masks()
                stable &= all(np.array_equal(m, b) for m, b in zip(masks, base_masks))
            flat[i] = orig
            if not stable:
                skipped += 1
                continue
            fd = (vals[0] - vals[1]) / (2.0 * eps)
            g = float(grads[name].reshape(-1)[i])
            worst = max(worst, abs(fd - g) / max(abs(g), 1e-8))
            checked += 1
    tape.forward()
    return GradCheck(worst, checked, skipped)
