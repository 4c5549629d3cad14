"""Executable invariant suites behind ``gortho verify``.

Every invariant the library promises is listed in ``CHECKLIST``; each suite
function returns one :class:`Check` per item, and :func:`run` refuses to
report success if an item has no check. Fuzz counts are smaller than the
acceptance tests so that ``verify all`` finishes in a few seconds.
"""

from __future__ import annotations

import tempfile
import time
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from . import group as grp
from . import metrics, numerics
from . import quadform as qf
from . import tasks, training
from .model import GOrthoNet, realize_form


class Check(NamedTuple):
    suite: str
    name: str
    passed: bool | None  # None: skipped
    residual: float
    detail: str = ""


CHECKLIST: dict[str, tuple[str, ...]] = {
    "numerics": ("sym_eig_reconstruction", "svd_reconstruction", "mat_exp_inverse", "principal_angles_symmetric"),
    "quadform": ("pseudonorm_invariance", "gram_invariance", "normalize_unit", "gauge_idempotent"),
    "group": ("certified_closure", "householder_self_inverse", "align_idempotent", "transport_round_trip",
              "orbit_equivalent"),
    "autodiff": ("grad_check_fuzz", "backward_linear_in_seed", "forward_deterministic"),
    "model": ("reflection_membership", "invariant_exactness", "representability", "full_grad_check",
              "realize_orthogonality"),
    "training": ("seed_determinism", "final_not_above_initial", "noise_keeps_inputs"),
    "tasks": ("independent_recompute", "data_equivariance"),
    "metrics": ("lie_dimension", "recover_after_lie_basis", "projection_distance_metric"),
    "cli": ("report_reproducible", "checklist_coverage"),
}


def random_form(n: int, rng: np.random.Generator, invertible: bool = True) -> qf.QuadraticForm:
    while True:
        a = rng.normal(size=(n, n))
        form = qf.symmetrize(a + a.T)
        if not invertible or np.abs(form.eig_d).min() > 0.1 * np.abs(form.eig_d).max():
            return form


def standard_forms(rng: np.random.Generator) -> list[qf.QuadraticForm]:
    return [
        qf.symmetrize(np.eye(3)),
        qf.symmetrize(np.diag([1.0, -1.0, -1.0, -1.0])),
        qf.symmetrize(np.diag([1.0, 1.0, -1.0, -1.0])),
        *(random_form(n, rng) for n in (2, 3, 4, 5, 6)),
    ]


def non_null(form: qf.QuadraticForm, count: int, rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
    out = []
    while len(out) < count:
        x = rng.normal(size=form.n)
        if abs(x @ form.A @ x) >= margin * form.fro * (x @ x) / form.n:
            out.append(x)
    return np.array(out)


def _ok(suite, name, residual, tol, detail="") -> Check:
    return Check(suite, name, bool(residual <= tol), float(residual), detail or f"tol {tol:g}")


# -- random graphs over the full op set

def random_graph(rng: np.random.Generator, max_size: int = 16) -> tuple[ad.Tape, ad.Node]:
    """A random scalar-valued graph that touches every op kind at least once."""
    t = ad.Tape()
    b = int(rng.integers(2, 5))
    k = int(rng.integers(2, min(6, max_size) + 1))
    x = t.parameter(rng.normal(size=(b, k)), "x")
    w = t.parameter(rng.normal(size=(k, k)) / np.sqrt(k), "w")
    v = t.parameter(rng.normal(size=(1, k)), "v")
    h = t.tanh(x @ w + v)
    h = t.add(h, t.scale(t.sigmoid(x), 0.5))
    h = t.sub(h, t.relu(x - 0.3) * 0.2)
    h = t.mul(h, t.softplus(x))
    h = h @ w.T
    s = t.sum(t.square(h), axis=1, keepdims=True)
    r = t.sqrt_abs_signed(s - 1.0, 1e-6)
    inv = t.reciprocal_guarded(s + 0.5, 1e-6)
    mixed = t.concat([h[:, 0:1] * r, inv, t.mean(h, axis=1, keepdims=True)], axis=1)
    flat = t.reshape(mixed, (1, -1))
    tail = t.transpose(flat) @ flat
    out = t.mean(tail) + t.sum(t.tanh(t.slice(h, (slice(None), slice(1, None)))))
    return t, out


# -- suites

def suite_numerics(rng, full=False) -> list[Check]:
    count = 1000 if full else 200
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, 9))
        m = rng.normal(size=(n, n))
        m = m + m.T
        u, d = numerics.sym_eig(m)
        worst = max(worst, np.linalg.norm(m - u @ np.diag(d) @ u.T) / max(np.linalg.norm(m), 1e-300))
    out = [_ok("numerics", "sym_eig_reconstruction", worst, 1e-9)]
    worst = 0.0
    for _ in range(count):
        r, c = rng.integers(1, 9, size=2)
        m = rng.normal(size=(r, c))
        u, s, v = numerics.svd(m)
        k = min(r, c)
        rec = np.linalg.norm(m - u @ np.diag(s) @ v.T) / np.linalg.norm(m)
        orth = max(np.abs(u.T @ u - np.eye(k)).max(), np.abs(v.T @ v - np.eye(k)).max())
        worst = max(worst, rec, orth)
    out.append(_ok("numerics", "svd_reconstruction", worst, 1e-9))
    worst = 0.0
    for _ in range(count // 2):
        n = int(rng.integers(1, 7))
        m = rng.normal(size=(n, n))
        m *= rng.uniform(0, 5) / np.linalg.norm(m)
        worst = max(worst, np.abs(numerics.mat_exp(m) @ numerics.mat_exp(-m) - np.eye(n)).max())
    out.append(_ok("numerics", "mat_exp_inverse", worst, 1e-8))
    worst = 0.0
    for _ in range(count // 2):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, n + 1))
        b0 = np.linalg.qr(rng.normal(size=(n, k)))[0]
        b1 = np.linalg.qr(rng.normal(size=(n, k)))[0]
        worst = max(worst, np.abs(numerics.principal_angles(b0, b1) - numerics.principal_angles(b1, b0)).max())
    out.append(_ok("numerics", "principal_angles_symmetric", worst, 1e-10))
    return out


def suite_quadform(rng, full=False) -> list[Check]:
    count = 1000 if full else 200
    forms = standard_forms(rng)
    pn = gram = unit = gauge = 0.0
    for i in range(count):
        form = forms[i % len(forms)]
        g = grp.sample_element(form, rng, 0.7).g
        x = non_null(form, 3, rng)
        p0 = qf.pseudonorm(form, x[0])
        pn = max(pn, abs(qf.pseudonorm(form, g @ x[0]) - p0) / max(1.0, abs(p0)))
        g0 = qf.gram(form, x)
        gram = max(gram, np.abs(qf.gram(form, x @ g.T) - g0).max() / max(1.0, np.abs(g0).max()))
        unit = max(unit, abs(abs(qf.quad_eval(form, qf.normalize(form, x[1]))) - 1.0))
        once = qf.canonical_gauge(form)
        gauge = max(gauge, np.abs(qf.canonical_gauge(once).A - once.A).max())
    return [
        _ok("quadform", "pseudonorm_invariance", pn, 1e-8),
        _ok("quadform", "gram_invariance", gram, 1e-8),
        _ok("quadform", "normalize_unit", unit, 1e-10),
        _ok("quadform", "gauge_idempotent", gauge, 1e-12),
    ]


def _diag_forms() -> list[qf.QuadraticForm]:
    sigs = ([1, 1, 1], [1, 1, -1], [1, -1, 0], [1, 1, -1, -1], [1, -1, -1, -1], [2.0, 0.5, -3.0])
    return [qf.symmetrize(np.diag(np.array(s, dtype=float))) for s in sigs]


def suite_group(rng, full=False) -> list[Check]:
    count = 1000 if full else 150
    forms = standard_forms(rng)
    closure = hh = 0.0
    for i in range(count // 5):
        form = forms[i % len(forms)]
        acc = grp.sample_element(form, rng, 0.5)
        for _ in range(int(rng.integers(1, 9))):
            nxt = grp.sample_element(form, rng, 0.5)
            acc = acc @ (nxt.inverse() if rng.random() < 0.5 else nxt)
        closure = max(closure, grp.membership_residual(form, acc.g))
    for i in range(count):
        form = forms[i % len(forms)]
        w = non_null(form, 1, rng, 0.05)[0]
        r = grp.a_householder(form, w).g
        hh = max(hh, np.abs(r @ r - np.eye(form.n)).max())
    idem = 0.0
    for form in _diag_forms():
        for _ in range(count // 30 + 1):
            x = non_null(form, 1, rng)[0]
            res = grp.canonical_align(form, x)
            e = np.zeros(form.n)
            e[res.target_axis] = res.gamma
            again = grp.canonical_align(form, e)
            idem = max(idem, np.linalg.norm(again.w @ e - e) / abs(res.gamma))
    trip = 0.0
    orbit_ok = True
    for i in range(count // 5):
        form = forms[i % len(forms)]
        x = non_null(form, 1, rng)[0]
        g = grp.sample_element(form, rng, 0.5).g
        y = g @ x
        t_xy = grp.transport(form, x, y).g
        t_yx = grp.transport(form, y, x).g
        trip = max(trip, np.linalg.norm(t_yx @ t_xy @ x - x) / np.linalg.norm(x))
        orbit_ok &= grp.orbit_equivalent(form, x, y)
    for i in range(count):
        form = forms[i % len(forms)]
        x = non_null(form, 1, rng)[0]
        orbit_ok &= grp.orbit_equivalent(form, x, grp.sample_element(form, rng, 0.5).g @ x)
    return [
        _ok("group", "certified_closure", closure, grp.CLOSURE_RTOL),
        _ok("group", "householder_self_inverse", hh, 1e-10),
        _ok("group", "align_idempotent", idem, 1e-8),
        _ok("group", "transport_round_trip", trip, 1e-6),
        Check("group", "orbit_equivalent", bool(orbit_ok), 0.0, f"{count + count // 5} pairs"),
    ]


def suite_autodiff(rng, full=False) -> list[Check]:
    count = 50 if full else 10
    worst = 0.0
    lin = 0.0
    det = True
    for _ in range(count):
        tape, out = random_graph(rng)
        worst = max(worst, ad.grad_check(tape, out).max_rel_error)
        tape.forward()
        g1 = tape.backward(out, np.ones_like(out.value))
        a = float(rng.uniform(-3, 3))
        g2 = tape.backward(out, a * np.ones_like(out.value))
        lin = max(lin, max(np.abs(g2[k] - a * g1[k]).max() / (1 + np.abs(a * g1[k]).max()) for k in g1))
        before = [n.value.copy() for n in tape.nodes]
        tape.forward()
        det &= all(np.array_equal(b, n.value) for b, n in zip(before, tape.nodes))
    return [
        _ok("autodiff", "grad_check_fuzz", worst, 1e-4),
        _ok("autodiff", "backward_linear_in_seed", lin, 1e-12),
        Check("autodiff", "forward_deterministic", bool(det), 0.0, "bit-exact re-run"),
    ]


def random_model(rng: np.random.Generator, n: int | None = None, action: str | None = None, learnable=None,
                 hidden=(5, 4), **kw) -> GOrthoNet:
    n = int(rng.integers(2, 5)) if n is None else n
    action = rng.choice(["invariant", "left", "conjugation"]) if action is None else action
    learnable = bool(rng.random() < 0.5) if learnable is None else learnable
    form = None if learnable else random_form(n, rng)
    net = GOrthoNet(n, str(action), form=form, hidden=hidden, seed=int(rng.integers(1 << 30)), **kw)
    for k, v in net.params.items():
        if k.startswith("phi_s") and not np.any(v):
            net.params[k] = rng.normal(0.0, 0.3, size=v.shape)
    if learnable:
        net.params["form.d"] = rng.normal(size=(1, n))
    return net


def grad_inputs(net: GOrthoNet, rng: np.random.Generator, batch: int = 3):
    """Non-null inputs (and extra features, if any) for a gradient check of ``net``."""
    form = net.current_form()
    x = non_null(form, batch * max(net.tuple_size, 1), rng, 0.2)
    x = x.reshape(batch, net.tuple_size, net.n) if net.tuple_size else x
    extra = rng.uniform(0.5, 1.5, size=(batch, net.extra_features)) if net.extra_features else None
    return x, extra


def reflection_norm(net: GOrthoNet, x, extra=None) -> float:
    """Largest ||R||_F over the batch; about 2 kappa for a reflection vector w."""
    graph = net.run(x, extra)
    return float(np.linalg.norm(graph["R"], axis=(1, 2)).max()) if "R" in graph else 0.0


def conditioned_grad_case(rng: np.random.Generator, max_reflection: float = 20.0, **model_kw):
    """Redraw a random model and inputs until every reflection is moderately conditioned.

    Near the null cone of the form, 1/(w^T A w) makes the loss so curved
    that an eps = 1e-5 central difference is off by more than 1e-4 even
    though the reverse-mode gradient is exact.
    """
    while True:
        net = random_model(rng, **model_kw)
        x, extra = grad_inputs(net, rng)
        if reflection_norm(net, x, extra) <= max_reflection:
            return net, x, extra


def model_grad_check(net: GOrthoNet, rng: np.random.Generator, batch: int = 3, inputs=None) -> ad.GradCheck:
    x, extra = grad_inputs(net, rng, batch) if inputs is None else inputs
    tape = ad.Tape()
    xn = tape.constant(x)
    en = tape.constant(extra) if extra is not None else None
    out = net.build(tape, xn, en)["out"]
    loss = tape.mean(tape.square(out))
    return ad.grad_check(tape, loss)


def suite_model(rng, full=False) -> list[Check]:
    count = 1000 if full else 100
    member = 0.0
    for _ in range(count):
        n = int(rng.integers(2, 6))
        net = random_model(rng, n, "conjugation", learnable=False)
        form = net.frozen_form
        xh = qf.normalize(form, non_null(form, 1, rng)[0])
        try:
            r = net.phi_s_forward(xh).g
        except grp.NearNullDirection:
            continue
        member = max(member, grp.membership_residual(form, r))
    inv = 0.0
    for _ in range(count // 10):
        form = random_form(int(rng.integers(2, 6)), rng)
        net = GOrthoNet(form.n, "invariant", form=form, out_dim=2, hidden=(8, 8), seed=int(rng.integers(1000)))
        x = non_null(form, 10, rng)
        g = grp.sample_element(form, rng, 0.7).g
        inv = max(inv, np.abs(net.predict(x @ g.T) - net.predict(x)).max())
    gc = 0.0
    for _ in range(50 if full else 8):
        net, x, extra = conditioned_grad_case(rng, learnable=True)
        gc = max(gc, model_grad_check(net, rng, inputs=(x, extra)).max_rel_error)
    orth = 0.0
    for _ in range(count):
        n = int(rng.integers(1, 7))
        params = {"form.v": rng.normal(size=(n, n)) * rng.uniform(0.01, 10), "form.d": rng.normal(size=(1, n))}
        u, _ = realize_form(params)
        orth = max(orth, np.linalg.norm(u.T @ u - np.eye(n)))
    return [
        _ok("model", "reflection_membership", member, 1e-9),
        _ok("model", "invariant_exactness", inv, 1e-8),
        representability_check(full),
        _ok("model", "full_grad_check", gc, 1e-4),
        _ok("model", "realize_orthogonality", orth, 1e-10),
    ]


REPRESENTABILITY_CONFIG = """
[experiment]
task = synthetic_o22
form_mode = frozen
n_samples = 8000
activation = relu
output_dir = {out}
[train]
epochs = 1500
"""


def representability_check(full: bool) -> Check:
    if not full:
        return Check("model", "representability", None, float("nan"), "training run; use --full")
    from .experiment import parse_config, run_experiment

    with tempfile.TemporaryDirectory() as tmp:
        rep = run_experiment(parse_config(REPRESENTABILITY_CONFIG.format(out=tmp)))[0]
    return _ok("model", "representability", rep["train_loss_clean"], 1e-3, "frozen-form Task 1 train MSE")


def _tiny_train(task: str, seed: int, epochs: int = 3):
    from .experiment import make_data, make_model, parse_config

    cfg = parse_config(f"[experiment]\ntask={task}\nn_samples=400\nn_test=50\nseed={seed}\n[train]\nepochs={epochs}\n")
    ds, _ = make_data(cfg)
    if not ds.classification:
        ds = ds.with_targets(ds.targets / tasks.target_rms(ds))
    net = make_model(cfg, ds)
    before = training.evaluate(net, ds)
    net, hist = training.train(net, ds, cfg.train)
    return net, before, hist


def suite_training(rng, full=False) -> list[Check]:
    a, _, _ = _tiny_train("lorentz_cls", 3)
    b, _, _ = _tiny_train("lorentz_cls", 3)
    same = a.to_blob() == b.to_blob()
    worst = -np.inf
    for task in tasks_names():
        _, before, hist = _tiny_train(task, 1, 5)
        worst = max(worst, hist.train_loss[-1] - before)
    ds = tasks.gen_synthetic_o22(2000, rng)
    noisy = training.inject_label_noise(ds, 0.5, rng)
    return [
        Check("training", "seed_determinism", bool(same), 0.0, "blob equality"),
        Check("training", "final_not_above_initial", bool(worst <= 0), float(worst), "max(final - initial)"),
        Check("training", "noise_keeps_inputs", bool(np.array_equal(noisy.inputs, ds.inputs)), 0.0, "bit-exact"),
    ]


def tasks_names() -> tuple[str, ...]:
    from .experiment import TASKS

    return TASKS


def _independent_synthetic(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    # expand (x x^T A)^2 = (x^T A x) x x^T A, a different code path
    q = x @ a @ x
    return (9.0 * q + 2.0) * np.outer(x, a @ x)


def _independent_inertia(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    out = np.zeros((3, 3))
    for xi, mi in zip(x, m):
        for r in range(3):
            for c in range(3):
                out[r, c] += mi * ((xi @ xi) * (r == c) - xi[r] * xi[c])
    return out


def suite_tasks(rng, full=False) -> list[Check]:
    syn = tasks.gen_synthetic_o22(200, rng)
    ine = tasks.gen_inertia(5, 100, rng)
    lor = tasks.gen_lorentz_cls(200, rng)
    rec = 0.0
    for x, y in zip(syn.inputs, syn.targets):
        rec = max(rec, np.abs(_independent_synthetic(syn.true_form.A, x) - y).max() / (1 + np.abs(y).max()))
    for x, m, y in zip(ine.inputs, ine.masses, ine.targets):
        rec = max(rec, np.abs(_independent_inertia(x, m) - y).max() / (1 + np.abs(y).max()))
    eta = np.diag([1.0, -1.0, -1.0, -1.0])
    labels = np.array([float(x @ eta @ x > tasks.LORENTZ_THRESHOLD) for x in lor.inputs])
    rec = max(rec, float(np.abs(labels - lor.targets).max()))
    eq = 0.0
    for x in syn.inputs:
        g = grp.sample_element(syn.true_form, rng, 0.5).g
        lhs = tasks.synthetic_target(syn.true_form.A, (g @ x)[None])[0]
        rhs = g @ _independent_synthetic(syn.true_form.A, x) @ np.linalg.inv(g)
        eq = max(eq, np.abs(lhs - rhs).max() / (1 + np.abs(rhs).max()))
    return [_ok("tasks", "independent_recompute", rec, 1e-10), _ok("tasks", "data_equivariance", eq, 1e-8)]


def suite_metrics(rng, full=False) -> list[Check]:
    dims_ok = True
    rec = 1.0
    for n in range(2, 7):
        for _ in range(5 if full else 2):
            form = random_form(n, rng)
            basis = metrics.lie_basis(form)
            dims_ok &= basis.dim == n * (n - 1) // 2
            if n <= 5:
                got, _ = metrics.recover_form(basis.generators)
                rec = min(rec, abs(metrics.cos_similarity(got, form)))
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 5))
        b0 = metrics.lie_basis(random_form(n, rng))
        b1 = metrics.lie_basis(random_form(n, rng))
        d01 = metrics.projection_distance(b0, b1)
        d10 = metrics.projection_distance(b1, b0)
        worst = max(worst, abs(d01 - d10), metrics.projection_distance(b0, b0))
    return [
        Check("metrics", "lie_dimension", bool(dims_ok), 0.0, "n(n-1)/2 for n in 2..6"),
        Check("metrics", "recover_after_lie_basis", bool(rec >= 0.999), float(rec), "min |cos| >= 0.999"),
        _ok("metrics", "projection_distance_metric", worst, 1e-8),
    ]


def suite_cli(rng, full=False) -> list[Check]:
    import json

    from .experiment import parse_config, run_experiment

    with tempfile.TemporaryDirectory() as tmp:
        text = f"[experiment]\ntask=lorentz_cls\nn_samples=300\nn_test=100\noutput_dir={tmp}/a\n[train]\nepochs=2\n"
        first = run_experiment(parse_config(text))[0]
        again = parse_config(first["config"].replace(f"{tmp}/a", f"{tmp}/b"))
        second = run_experiment(again)[0]
        keys = ("test_loss", "test_accuracy", "cos", "abs_cos", "d_pa", "equivariance_error", "train_loss_final")
        same = all(first[k] == second[k] for k in keys)
        same &= Path(tmp, "a", "params.gon1").read_bytes() == Path(tmp, "b", "params.gon1").read_bytes()
        json.loads(Path(tmp, "a", "report.json").read_text())
    covered = set(CHECKLIST) == set(SUITES)
    return [
        Check("cli", "report_reproducible", bool(same), 0.0, "metrics and blob bit-identical"),
        Check("cli", "checklist_coverage", bool(covered), 0.0, "every module has a suite"),
    ]


SUITES: dict[str, Callable] = {
    "numerics": suite_numerics,
    "quadform": suite_quadform,
    "group": suite_group,
    "autodiff": suite_autodiff,
    "model": suite_model,
    "training": suite_training,
    "tasks": suite_tasks,
    "metrics": suite_metrics,
    "cli": suite_cli,
}


def run(names: list[str] | None = None, seed: int = 0, full: bool = False) -> list[Check]:
    """Run the named suites (all by default) and enforce checklist coverage."""
    names = list(SUITES) if not names or names == ["all"] else names
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {unknown}; choose from {list(SUITES)} or 'all'")
    results = []
    for name in names:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        t0 = time.perf_counter()
        try:
            got = SUITES[name](rng, full)
        except Exception as exc:  # a crashing suite is a failing suite
            got = [Check(name, "suite_crashed", False, float("nan"), f"{type(exc).__name__}: {exc}")]
        have = {c.name for c in got}
        for item in CHECKLIST[name]:
            if item not in have and "suite_crashed" not in have:
                got.append(Check(name, item, False, float("nan"), "no check implemented"))
        got = [c._replace(detail=f"{c.detail}; {time.perf_counter() - t0:.1f}s") if c is got[-1] else c
               for c in got]
        results.extend(got)
    return results


def as_dict(check: Check) -> dict:
    return check._asdict()
