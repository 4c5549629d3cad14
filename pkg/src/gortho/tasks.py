"""Data generators: synthetic O(2,2) regression, inertia tensors, Lorentz labels."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import quadform as qf
from .group import sample_element
from .quadform import QuadraticForm

NULL_MARGIN = 0.1
# median of x^T eta x for x ~ N(0, I_4) after null rejection (10^6-sample estimate)
LORENTZ_THRESHOLD = -1.68
MINKOWSKI = np.diag([1.0, -1.0, -1.0, -1.0])


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, n) or (N, p, n)
    targets: np.ndarray  # (N,), (N, n) or (N, n, n)
    true_form: QuadraticForm
    action: str
    masses: np.ndarray | None = None  # (N, p), inertia only
    classification: bool = False
    name: str = ""

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def tuple_size(self) -> int:
        return self.inputs.shape[1] if self.inputs.ndim == 3 else 0

    def subset(self, idx) -> Dataset:
        return replace(
            self,
            inputs=self.inputs[idx],
            targets=self.targets[idx],
            masses=None if self.masses is None else self.masses[idx],
        )

    def with_targets(self, targets) -> Dataset:
        return replace(self, targets=np.asarray(targets, dtype=np.float64))


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def o22_form(rng: np.random.Generator) -> QuadraticForm:
    q = random_rotation(4, rng)
    return qf.symmetrize(q.T @ np.diag([1.0, 1.0, -1.0, -1.0]) @ q)


def _non_null_normals(form: QuadraticForm, count: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((0, form.n))
    while len(out) < count:
        x = rng.normal(size=(2 * (count - len(out)) + 8, form.n))
        q = np.einsum("bi,ij,bj->b", x, form.A, x)
        out = np.concatenate([out, x[np.abs(q) >= NULL_MARGIN]])
    return out[:count]


def synthetic_target(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """9 (x x^T A)^2 + 2 x x^T A, batched over the leading axis of x."""
    m = np.einsum("bi,bj->bij", x, x) @ a
    return 9.0 * (m @ m) + 2.0 * m


def gen_synthetic_o22(n_samples: int, rng: np.random.Generator, form: QuadraticForm | None = None) -> Dataset:
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    form = o22_form(rng) if form is None else form
    x = _non_null_normals(form, n_samples, rng)
    return Dataset(x, synthetic_target(form.A, x), form, "conjugation", name="synthetic_o22")


def inertia_target(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    r2 = np.einsum("bpi,bpi->bp", x, x)
    iso = np.einsum("bp,bp->b", m, r2)[:, None, None] * np.eye(x.shape[-1])
    return iso - np.einsum("bp,bpi,bpj->bij", m, x, x)


def gen_inertia(n_points: int, n_samples: int, rng: np.random.Generator) -> Dataset:
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    form = qf.symmetrize(np.eye(3))
    x = _non_null_normals(form, n_points * n_samples, rng).reshape(n_samples, n_points, 3)
    m = rng.uniform(0.1, 2.0, size=(n_samples, n_points))
    return Dataset(x, inertia_target(x, m), form, "conjugation", masses=m, name="inertia")


def lorentz_label(x: np.ndarray) -> np.ndarray:
    q = np.einsum("bi,ij,bj->b", x, MINKOWSKI, x)
    return (q > LORENTZ_THRESHOLD).astype(np.float64)


def gen_lorentz_cls(n_samples: int, rng: np.random.Generator) -> Dataset:
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    form = qf.symmetrize(MINKOWSKI)
    x = _non_null_normals(form, n_samples, rng)
    return Dataset(x, lorentz_label(x), form, "invariant", classification=True, name="lorentz_cls")


def act_on_targets(action: str, g: np.ndarray, y: np.ndarray) -> np.ndarray:
    if action == "invariant":
        return y.copy()
    if action == "left":
        return y @ g.T
    return g @ y @ np.linalg.inv(g)


def augment_with_group(ds: Dataset, rng: np.random.Generator, k: int) -> Dataset:
    """Append k group-transformed copies of every sample."""
    if not ds.true_form.invertible:
        raise ValueError("augmentation needs an invertible true form")
    xs, ys, ms = [ds.inputs], [ds.targets], [ds.masses]
    for _ in range(k):
        gx = np.empty_like(ds.inputs)
        gy = np.empty_like(ds.targets)
        for i in range(len(ds)):
            g = sample_element(ds.true_form, rng, 0.5).g
            gx[i] = ds.inputs[i] @ g.T
            gy[i] = act_on_targets(ds.action, g, ds.targets[i])
        xs.append(gx)
        ys.append(gy)
        ms.append(ds.masses)
    masses = None if ds.masses is None else np.concatenate(ms)
    return replace(ds, inputs=np.concatenate(xs), targets=np.concatenate(ys), masses=masses)


def split(ds: Dataset, rng: np.random.Generator, val_fraction: float = 0.1) -> tuple[Dataset, Dataset]:
    perm = rng.permutation(len(ds))
    n_val = int(round(val_fraction * len(ds)))
    return ds.subset(perm[n_val:]), ds.subset(perm[:n_val])


def target_rms(ds: Dataset) -> float:
    return float(np.sqrt(np.mean(ds.targets**2)))


def write_dataset(ds: Dataset, path) -> None:
    """One sample per line: inputs (then masses) | targets; header in ``<path>.header``."""
    path = Path(path)
    lines = []
    for i in range(len(ds)):
        left = ds.inputs[i].ravel()
        if ds.masses is not None:
            left = np.concatenate([left, ds.masses[i]])
        right = np.atleast_1d(ds.targets[i]).ravel()
        lines.append(" ".join(map(repr, left.tolist())) + " | " + " ".join(map(repr, right.tolist())))
    path.write_text("\n".join(lines) + "\n")
    gauged = qf.canonical_gauge(ds.true_form)
    header = [
        f"name={ds.name}",
        f"n={ds.true_form.n}",
        f"p={ds.tuple_size}",
        f"action={ds.action}",
        f"classification={int(ds.classification)}",
        f"masses={int(ds.masses is not None)}",
        f"target_shape={' '.join(map(str, ds.targets.shape[1:]))}",
        "true_form_gauged:",
        qf.to_csv(gauged.A).strip(),
    ]
    Path(str(path) + ".header").write_text("\n".join(header) + "\n")


def read_dataset(path, true_form: QuadraticForm | None = None) -> Dataset:
    path = Path(path)
    head_lines = Path(str(path) + ".header").read_text().splitlines()
    meta = dict(ln.split("=", 1) for ln in head_lines[: head_lines.index("true_form_gauged:")])
    form_csv = "\n".join(head_lines[head_lines.index("true_form_gauged:") + 1 :])
    form = true_form if true_form is not None else qf.from_csv(form_csv)
    n, p = int(meta["n"]), int(meta["p"])
    tshape = tuple(int(s) for s in meta["target_shape"].split())
    xs, ms, ys = [], [], []
    for ln in path.read_text().splitlines():
        if not ln.strip():
            continue
        left, right = ln.split("|")
        lv = np.array(left.split(), dtype=np.float64)
        width = n * max(p, 1)
        xs.append(lv[:width])
        ms.append(lv[width:])
        ys.append(np.array(right.split(), dtype=np.float64))
    inputs = np.array(xs).reshape((-1, p, n) if p else (-1, n))
    targets = np.array(ys).reshape((-1, *tshape))
    masses = np.array(ms) if int(meta["masses"]) else None
    return Dataset(inputs, targets, form, meta["action"], masses, bool(int(meta["classification"])), meta["name"])
