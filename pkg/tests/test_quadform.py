import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gortho import group, quadform as qf
from conftest import ETA, random_symmetric

ETA_F = qf.symmetrize(ETA)


class TestSymmetrize:
    def test_direct_formula(self):
        f = qf.symmetrize([[1.0, 2.0], [0.0, 1.0]])
        assert np.array_equal(f.A, [[1.0, 1.0], [1.0, 1.0]])
        assert f.signature == (1, 0, 1)

    def test_symmetric_unchanged(self, rng):
        m = random_symmetric(rng, 4)
        assert np.array_equal(qf.symmetrize(m).A, m)

    def test_minkowski_signature(self):
        assert ETA_F.signature == (1, 3, 0)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            qf.symmetrize(np.ones((2, 3)))

    def test_stored_matrix_is_read_only(self):
        with pytest.raises(ValueError):
            ETA_F.A[0, 0] = 2.0

    @given(st.integers(1, 6).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-5, 5))))
    def test_invariants(self, m):
        f = qf.symmetrize(m)
        assert np.array_equal(f.A, f.A.T)
        assert np.linalg.norm(f.eig_u @ np.diag(f.eig_d) @ f.eig_u.T - f.A) <= 1e-9 * max(f.fro, 1e-300)
        assert sum(f.signature) == f.n


class TestEvaluation:
    def test_quad_eval(self):
        assert qf.quad_eval(qf.symmetrize(np.eye(2)), [1, 2]) == 5.0
        assert qf.quad_eval(ETA_F, [5, 3, 0, 0]) == 16.0
        assert qf.quad_eval(ETA_F, [1, 1, 0, 0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            qf.quad_eval(ETA_F, [1, 2, 3])

    def test_pseudonorm(self):
        assert qf.pseudonorm(ETA_F, [5, 3, 0, 0]) == 4.0
        assert qf.pseudonorm(ETA_F, [3, 5, 0, 0]) == -4.0
        assert qf.pseudonorm(qf.symmetrize(np.eye(2)), [3, 4]) == 5.0

    def test_pseudonorm_zero_in_null_band(self):
        assert qf.pseudonorm(ETA_F, [1.0, 1.0 + 1e-12, 0, 0]) == 0.0

    def test_normalize(self):
        assert np.allclose(qf.normalize(qf.symmetrize(np.eye(2)), [3, 4]), [0.6, 0.8])
        assert np.allclose(qf.normalize(ETA_F, [5, 3, 0, 0]), [1.25, 0.75, 0, 0])
        with pytest.raises(qf.NearNullCone):
            qf.normalize(ETA_F, [1, 1, 0, 0])

    def test_normalize_unit_value(self, rng):
        for _ in range(200):
            n = rng.integers(1, 7)
            f = qf.symmetrize(random_symmetric(rng, n))
            x = rng.normal(size=n)
            if qf.pseudonorm(f, x) == 0.0:
                continue
            v = qf.normalize(f, x)
            assert abs(abs(qf.quad_eval(f, v)) - 1.0) <= 1e-10

    def test_gram(self):
        assert np.array_equal(qf.gram(ETA_F, np.eye(4)[:2]), [[1, 0], [0, -1]])
        assert np.array_equal(qf.gram(qf.symmetrize(np.eye(2)), [[1, 0], [1, 0]]), np.ones((2, 2)))
        assert np.array_equal(qf.gram(ETA_F, [[5, 3, 0, 0], [3, 5, 0, 0]]), [[16, 0], [0, -16]])
        with pytest.raises(ValueError):
            qf.gram(ETA_F, [[1, 2, 3]])


class TestInvariance:
    def test_pseudonorm_invariant_under_group(self, rng):
        for _ in range(300):
            n = rng.integers(1, 7)
            f = qf.symmetrize(random_symmetric(rng, n))
            g = group.sample_element(f, rng, scale=0.4)
            x = rng.normal(size=n)
            q = qf.quad_eval(f, x)
            if abs(q) < 1e-3 * f.fro * (x @ x):
                continue
            r0, r1 = qf.pseudonorm(f, x), qf.pseudonorm(f, g.g @ x)
            assert abs(r0 - r1) <= 1e-8 * max(1.0, abs(r0))

    def test_gram_invariant_under_diagonal_action(self, rng):
        for _ in range(200):
            n = rng.integers(2, 7)
            f = qf.symmetrize(random_symmetric(rng, n))
            g = group.sample_element(f, rng, scale=0.4)
            xs = rng.normal(size=(3, n))
            g0 = qf.gram(f, xs)
            assert np.allclose(qf.gram(f, xs @ g.g.T), g0, atol=1e-8 * max(1.0, np.abs(g0).max()))


class TestGauge:
    def test_scaled_minkowski(self):
        assert np.allclose(qf.canonical_gauge(qf.symmetrize(2 * ETA)).A, ETA / 2)

    def test_negative_identity(self):
        assert np.allclose(qf.canonical_gauge(qf.symmetrize(-np.eye(2))).A, np.eye(2) / math.sqrt(2))

    def test_already_gauged(self):
        f = qf.canonical_gauge(qf.symmetrize(np.diag([3.0, -1.0])))
        assert np.array_equal(qf.canonical_gauge(f).A, f.A)

    def test_dominant_negative_eigenvalue_flips(self):
        f = qf.canonical_gauge(qf.symmetrize(np.diag([1.0, -3.0])))
        assert f.eig_d[0] > 0 and f.signature == (1, 1, 0)
        assert np.allclose(f.A, np.diag([-1.0, 3.0]) / math.sqrt(10))

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            qf.canonical_gauge(qf.symmetrize(np.zeros((2, 2))))

    @given(st.integers(1, 6).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-5, 5))))
    def test_idempotent_and_unit(self, m):
        f = qf.symmetrize(m)
        if f.fro < 1e-6:
            return
        g1 = qf.canonical_gauge(f)
        g2 = qf.canonical_gauge(g1)
        assert abs(g1.fro - 1.0) < 1e-12
        assert np.allclose(g2.A, g1.A, atol=1e-12)
        assert g1.eig_d[0] >= -g1.eig_d[-1] - 1e-9
        # cached eigen data still describes the gauged matrix
        assert np.allclose(g1.eig_u @ np.diag(g1.eig_d) @ g1.eig_u.T, g1.A, atol=1e-9)

    def test_positive_scale_invariant(self, rng):
        for _ in range(50):
            f = qf.symmetrize(random_symmetric(rng, 4))
            c = rng.uniform(0.1, 10)
            assert np.allclose(qf.canonical_gauge(f).A, qf.canonical_gauge(qf.symmetrize(c * f.A)).A)


def test_csv_round_trip(rng):
    f = qf.symmetrize(random_symmetric(rng, 3))
    assert np.array_equal(qf.from_csv(qf.to_csv(f)).A, f.A)
    with pytest.raises(ValueError):
        qf.from_csv("1,0\n0,1\n")
    with pytest.raises(ValueError):
        qf.from_csv("n=3\n1,0\n0,1\n")
