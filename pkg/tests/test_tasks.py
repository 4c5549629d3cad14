import numpy as np
import pytest

from gortho import group as gr, quadform as qf, tasks
from conftest import ETA


def oracle_synthetic(a, x):
    # independent path: explicit loops over the 4x4 entries
    n = len(x)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            m[i, j] = x[i] * sum(x[k] * a[k, j] for k in range(n))
    q = sum(x[i] * a[i, j] * x[j] for i in range(n) for j in range(n))
    return (9 * q + 2) * m  # (x x^T A)^2 = q x x^T A


def oracle_inertia(xs, ms):
    out = np.zeros((3, 3))
    for x, m in zip(xs, ms):
        for i in range(3):
            for j in range(3):
                out[i, j] += m * ((x @ x) * (i == j) - x[i] * x[j])
    return out


class TestSynthetic:
    def test_reduced_two_dim(self):
        y = tasks.synthetic_target(np.diag([1.0, -1.0]), np.array([[1.0, 0.0]]))[0]
        assert np.array_equal(y, [[11.0, 0.0], [0.0, 0.0]])

    def test_generator(self, rng):
        ds = tasks.gen_synthetic_o22(300, rng)
        assert ds.true_form.signature == (2, 2, 0)
        assert ds.action == "conjugation" and ds.inputs.shape == (300, 4) and ds.targets.shape == (300, 4, 4)
        q = np.einsum("bi,ij,bj->b", ds.inputs, ds.true_form.A, ds.inputs)
        assert np.all(np.abs(q) >= 0.1)
        # hidden form is genuinely non-diagonal
        assert np.abs(ds.true_form.A - np.diag(np.diag(ds.true_form.A))).max() > 1e-3
        for x, y in zip(ds.inputs[:100], ds.targets[:100]):
            assert np.allclose(y, oracle_synthetic(ds.true_form.A, x), rtol=1e-12, atol=1e-10)

    def test_equivariance_of_data(self, rng):
        ds = tasks.gen_synthetic_o22(200, rng)
        a = ds.true_form.A
        for x, y in zip(ds.inputs, ds.targets):
            g = gr.sample_element(ds.true_form, rng, 0.5).g
            lhs = tasks.synthetic_target(a, (g @ x)[None])[0]
            rhs = g @ y @ np.linalg.inv(g)
            assert np.abs(lhs - rhs).max() <= 1e-8 * max(1.0, np.abs(y).max())

    def test_transpose_convention_differs(self, rng):
        # g f g^T is not the right action for non-orthogonal g
        ds = tasks.gen_synthetic_o22(5, rng)
        g = gr.sample_element(ds.true_form, rng, 0.8).g
        x, y = ds.inputs[0], ds.targets[0]
        lhs = tasks.synthetic_target(ds.true_form.A, (g @ x)[None])[0]
        assert not np.allclose(lhs, g @ y @ g.T, atol=1e-6)

    def test_seeded(self):
        a = tasks.gen_synthetic_o22(10, np.random.default_rng(3))
        b = tasks.gen_synthetic_o22(10, np.random.default_rng(3))
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.true_form.A, b.true_form.A)

    def test_rejects_empty(self, rng):
        with pytest.raises(ValueError):
            tasks.gen_synthetic_o22(0, rng)


class TestInertia:
    def test_single_mass(self):
        y = tasks.inertia_target(np.array([[[1.0, 0, 0]]]), np.array([[1.0]]))[0]
        assert np.array_equal(y, np.diag([0.0, 1.0, 1.0]))

    def test_two_masses(self):
        y = tasks.inertia_target(np.array([[[1.0, 0, 0], [0, 1.0, 0]]]), np.ones((1, 2)))[0]
        assert np.array_equal(y, np.diag([1.0, 1.0, 2.0]))

    def test_generator(self, rng):
        ds = tasks.gen_inertia(5, 200, rng)
        assert ds.inputs.shape == (200, 5, 3) and ds.masses.shape == (200, 5)
        assert np.all((ds.masses >= 0.1) & (ds.masses <= 2.0))
        assert np.array_equal(ds.true_form.A, np.eye(3))
        for xs, ms, y in zip(ds.inputs, ds.masses, ds.targets):
            assert np.allclose(y, oracle_inertia(xs, ms), atol=1e-12)
            assert np.allclose(y, y.T)
            assert np.linalg.eigvalsh(y).min() >= -1e-12

    def test_rotation_equivariance(self, rng):
        ds = tasks.gen_inertia(4, 200, rng)
        for xs, ms, y in zip(ds.inputs, ds.masses, ds.targets):
            g = tasks.random_rotation(3, rng)
            got = tasks.inertia_target((xs @ g.T)[None], ms[None])[0]
            assert np.abs(got - g @ y @ g.T).max() <= 1e-8

    def test_rejects(self, rng):
        with pytest.raises(ValueError):
            tasks.gen_inertia(0, 5, rng)


class TestLorentz:
    def test_invariance(self, rng):
        ds = tasks.gen_lorentz_cls(500, rng)
        for _ in range(20):
            g = gr.sample_element(ds.true_form, rng, 0.5).g
            moved = tasks.lorentz_label(ds.inputs @ g.T)
            far = np.abs(np.einsum("bi,ij,bj->b", ds.inputs, ETA, ds.inputs) - tasks.LORENTZ_THRESHOLD) > 1e-9
            assert np.array_equal(moved[far], ds.targets[far])

    def test_gauged_form(self, rng):
        assert np.allclose(qf.canonical_gauge(tasks.gen_lorentz_cls(5, rng).true_form).A, ETA / 2)

    def test_balance(self, rng):
        ds = tasks.gen_lorentz_cls(10_000, rng)
        assert abs(ds.targets.mean() - 0.5) <= 0.05
        assert ds.classification and ds.action == "invariant"


class TestAugment:
    def test_zero_copies(self, rng):
        ds = tasks.gen_synthetic_o22(20, rng)
        out = tasks.augment_with_group(ds, rng, 0)
        assert np.array_equal(out.inputs, ds.inputs) and np.array_equal(out.targets, ds.targets)

    def test_invariant_copies_labels(self, rng):
        ds = tasks.gen_lorentz_cls(20, rng)
        out = tasks.augment_with_group(ds, rng, 2)
        assert len(out) == 60
        assert np.array_equal(out.targets, np.tile(ds.targets, 3))

    def test_conjugation_formula(self, rng):
        ds = tasks.gen_synthetic_o22(30, rng)
        out = tasks.augment_with_group(ds, rng, 2)
        assert np.abs(tasks.synthetic_target(ds.true_form.A, out.inputs) - out.targets).max() <= 1e-8 * np.abs(
            out.targets
        ).max()

    def test_inertia_formula(self, rng):
        ds = tasks.gen_inertia(3, 30, rng)
        out = tasks.augment_with_group(ds, rng, 1)
        assert np.abs(tasks.inertia_target(out.inputs, out.masses) - out.targets).max() <= 1e-8

    def test_singular_rejected(self, rng):
        ds = tasks.gen_synthetic_o22(5, rng)
        ds.true_form = qf.symmetrize(np.diag([1.0, 0, 0, 0]))
        with pytest.raises(ValueError):
            tasks.augment_with_group(ds, rng, 1)


@pytest.mark.parametrize("make", [
    lambda r: tasks.gen_synthetic_o22(7, r),
    lambda r: tasks.gen_inertia(3, 7, r),
    lambda r: tasks.gen_lorentz_cls(7, r),
])
def test_dataset_file_round_trip(make, rng, tmp_path):
    ds = make(rng)
    tasks.write_dataset(ds, tmp_path / "data.txt")
    back = tasks.read_dataset(tmp_path / "data.txt")
    assert np.array_equal(back.inputs, ds.inputs)
    assert np.array_equal(back.targets, ds.targets)
    assert (back.masses is None) == (ds.masses is None)
    if ds.masses is not None:
        assert np.array_equal(back.masses, ds.masses)
    assert back.action == ds.action and back.classification == ds.classification
    assert np.allclose(back.true_form.A, qf.canonical_gauge(ds.true_form).A)


def test_split(rng):
    ds = tasks.gen_synthetic_o22(100, rng)
    tr, va = tasks.split(ds, rng, 0.1)
    assert len(tr) == 90 and len(va) == 10
    both = np.concatenate([tr.inputs, va.inputs])
    assert sorted(map(tuple, both)) == sorted(map(tuple, ds.inputs))
