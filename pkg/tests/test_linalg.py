import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rstrack.errors import (
    DimensionMismatch,
    IllConditioned,
    NoConvergence,
    RankDeficient,
)
from rstrack.linalg import (
    Basis,
    gram_min_eig,
    orthonormalize,
    project_complement,
    restricted_ls,
    subspace_error,
    top_r_left_singular_vectors,
    top_singular_vector,
)


def se_oracle(p_hat, p):
    """Dense oracle: materialize the n x n projector and take the 2-norm."""
    n = p_hat.shape[0]
    return np.linalg.norm((np.eye(n) - p_hat @ p_hat.T) @ p, 2)


def random_basis(rng, n, d):
    return orthonormalize(rng.standard_normal((n, d)))


class TestBasis:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(DimensionMismatch):
            Basis(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_rejects_wide(self):
        with pytest.raises(DimensionMismatch):
            Basis(np.eye(2, 3))  # more columns than rows

    def test_accepts_vector(self):
        b = Basis(np.array([0.0, 1.0, 0.0]))
        assert (b.n, b.d) == (3, 1)


class TestOrthonormalize:
    def test_identity_columns_unchanged(self):
        m = np.eye(3)[:, :2]
        b = orthonormalize(m)
        assert se_oracle(b.cols, m) <= 1e-12

    def test_axis_aligned_scaling(self):
        m = np.array([[2.0, 0.0], [0.0, 0.0], [0.0, 3.0]])
        b = orthonormalize(m)
        expect = np.eye(3)[:, [0, 2]]
        assert subspace_error(b, Basis(expect)) <= 1e-12

    def test_matches_full_svd_span(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((50, 5))
        b = orthonormalize(m)
        u = np.linalg.svd(m, full_matrices=False)[0]
        assert subspace_error(b, Basis(u)) <= 1e-9

    def test_rank_deficient_raises(self):
        m = np.ones((4, 2))
        with pytest.raises(RankDeficient):
            orthonormalize(m)

    def test_zero_matrix_raises(self):
        with pytest.raises(RankDeficient):
            orthonormalize(np.zeros((3, 2)))


class TestSubspaceError:
    def test_self_is_zero(self):
        p = random_basis(np.random.default_rng(0), 12, 4)
        assert subspace_error(p, p) <= 1e-12

    def test_orthogonal_lines(self):
        e1 = Basis(np.eye(3)[:, :1])
        e2 = Basis(np.eye(3)[:, 1:2])
        assert subspace_error(e1, e2) == pytest.approx(1.0, abs=1e-12)

    def test_analytic_angle(self):
        th = np.deg2rad(30.0)
        e1 = Basis(np.eye(3)[:, :1])
        v = Basis(np.array([np.cos(th), np.sin(th), 0.0]))
        assert subspace_error(e1, v) == pytest.approx(0.5, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            subspace_error(Basis(np.eye(3)[:, :1]), Basis(np.eye(4)[:, :1]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 20), st.data())
    def test_matches_dense_oracle_and_symmetry(self, seed, n, data):
        rng = np.random.default_rng(seed)
        d1 = data.draw(st.integers(1, n - 1))
        d2 = data.draw(st.integers(1, n - 1))
        a = random_basis(rng, n, d1)
        b = random_basis(rng, n, d2)
        se = subspace_error(a, b)
        assert 0.0 <= se <= 1.0
        assert abs(se - se_oracle(a.cols, b.cols)) <= 1e-10
        if d1 == d2:
            assert abs(se - subspace_error(b, a)) <= 1e-10

    def test_orthonormalize_idempotent_on_basis(self):
        rng = np.random.default_rng(3)
        for n, d in [(10, 3), (40, 7)]:
            b = random_basis(rng, n, d)
            assert subspace_error(orthonormalize(b.cols), b) <= 1e-10


class TestTopSingularVector:
    def test_diagonal(self):
        u, s1 = top_singular_vector(np.diag([3.0, 1.0]))
        assert s1 == pytest.approx(3.0, rel=1e-10)
        assert abs(u[0]) == pytest.approx(1.0, abs=1e-10)
        assert u[0] > 0  # sign convention

    def test_rank_one(self):
        rng = np.random.default_rng(11)
        u0 = rng.standard_normal(20)
        u0 /= np.linalg.norm(u0)
        v0 = rng.standard_normal(9)
        v0 /= np.linalg.norm(v0)
        m = 5.0 * np.outer(u0, v0)
        u, s1 = top_singular_vector(m)
        assert s1 == pytest.approx(5.0, rel=1e-10)
        assert abs(abs(u @ u0) - 1.0) <= 1e-8

    def test_matches_full_svd(self):
        rng = np.random.default_rng(23)
        m = rng.standard_normal((40, 30))
        u, s1 = top_singular_vector(m)
        sv = np.linalg.svd(m, compute_uv=False)
        assert s1 == pytest.approx(sv[0], rel=1e-8)

    def test_residual_postcondition(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((25, 12))
        u, s1 = top_singular_vector(m, tol=1e-12)
        assert np.linalg.norm(m @ (m.T @ u) - s1 * s1 * u) <= 1e-10 * s1 * s1
        assert np.linalg.norm(m.T @ u) == pytest.approx(s1, rel=1e-12)

    def test_zero_matrix(self):
        with pytest.raises(NoConvergence):
            top_singular_vector(np.zeros((5, 3)))


class TestTopRLeftSingularVectors:
    def _with_spectrum(self, rng, n, m, sv):
        u = random_basis(rng, n, len(sv)).cols
        v = random_basis(rng, m, len(sv)).cols
        return u @ np.diag(sv) @ v.T, u

    def test_gap_spectrum_matches_oracle(self):
        rng = np.random.default_rng(1)
        m, _ = self._with_spectrum(rng, 30, 18, [5.0, 4.0, 1e-6, 1e-7])
        b = top_r_left_singular_vectors(m, 2)
        uo = np.linalg.svd(m, full_matrices=False)[0][:, :2]
        assert subspace_error(b, Basis(uo)) <= 1e-8

    def test_exact_rank_two(self):
        rng = np.random.default_rng(2)
        u = random_basis(rng, 25, 2)
        g = random_basis(rng, 10, 2).cols
        m = u.cols @ np.diag([3.0, 2.0]) @ g.T
        b = top_r_left_singular_vectors(m, 2)
        assert subspace_error(b, u) <= 1e-8

    def test_degenerate_spectrum_any_invariant_subspace(self):
        b = top_r_left_singular_vectors(np.eye(8), 3)
        # any 3 directions are fine; check orthonormality and unit singular values
        assert np.allclose(b.cols.T @ b.cols, np.eye(3), atol=1e-12)
        assert np.allclose(np.linalg.norm(b.cols, axis=0), 1.0, atol=1e-12)

    def test_spans_range_at_full_rank(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((30, 6)) @ rng.standard_normal((6, 20))
        b = top_r_left_singular_vectors(m, 6)
        assert subspace_error(b, orthonormalize(m[:, :6] if np.linalg.matrix_rank(m[:, :6]) == 6 else m)) <= 1e-8 or subspace_error(b, Basis(np.linalg.svd(m, full_matrices=False)[0][:, :6])) <= 1e-8

    def test_rank_deficient(self):
        rng = np.random.default_rng(6)
        u0 = rng.standard_normal(12)
        m = np.outer(u0, rng.standard_normal(7))
        with pytest.raises(RankDeficient):
            top_r_left_singular_vectors(m, 3)


class TestProjectComplement:
    def test_own_direction_annihilated(self):
        p = Basis(np.eye(3)[:, :1])
        assert np.allclose(project_complement(p, np.eye(3)[:, 0]), 0.0, atol=1e-15)

    def test_orthogonal_direction_unchanged(self):
        p = Basis(np.eye(3)[:, :1])
        v = np.eye(3)[:, 1]
        assert np.array_equal(project_complement(p, v), v)

    def test_result_orthogonal_to_basis(self):
        rng = np.random.default_rng(9)
        p = random_basis(rng, 20, 4)
        v = rng.standard_normal(20) * 3.0
        res = project_complement(p, v)
        assert np.linalg.norm(p.cols.T @ res) <= 1e-12 * np.linalg.norm(v)

    def test_none_is_identity(self):
        v = np.arange(4.0)
        assert np.array_equal(project_complement(None, v), v)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            project_complement(Basis(np.eye(3)[:, :1]), np.ones(4))


class TestRestrictedLS:
    def test_empty_support(self):
        p = Basis(np.eye(5)[:, :2])
        out = restricted_ls(p, np.ones(5), np.array([], dtype=int))
        assert np.array_equal(out, np.zeros(5))

    def test_exact_recovery_noiseless(self):
        rng = np.random.default_rng(10)
        p = random_basis(rng, 30, 4)
        x = np.zeros(30)
        supp = np.array([2, 11, 17])
        x[supp] = [4.0, -3.0, 7.5]
        y_tilde = project_complement(p, x)
        got = restricted_ls(p, y_tilde, supp)
        assert np.linalg.norm(got - x) <= 1e-10

    def test_matches_pinv_oracle(self):
        rng = np.random.default_rng(12)
        for trial in range(25):
            n = 40
            p = random_basis(rng, n, 5)
            supp = np.sort(rng.choice(n, size=5, replace=False))
            if gram_min_eig(p, supp) < 1e-6:
                continue
            y_tilde = project_complement(p, rng.standard_normal(n))
            got = restricted_ls(p, y_tilde, supp)
            psi = np.eye(n) - p.cols @ p.cols.T
            x_oracle = np.zeros(n)
            x_oracle[supp] = np.linalg.pinv(psi[:, supp]) @ y_tilde
            assert np.linalg.norm(got - x_oracle) <= 1e-9

    def test_identity_sensing(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        out = restricted_ls(None, y, np.array([1, 3]))
        assert np.array_equal(out, np.array([0.0, 2.0, 0.0, 4.0]))

    def test_ill_conditioned(self):
        p = Basis(np.eye(2)[:, :1])
        with pytest.raises(IllConditioned):
            restricted_ls(p, np.ones(2), np.array([0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_restricted_ls_oracle_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 48))
    d = int(rng.integers(1, max(2, n // 4)))
    k = int(rng.integers(0, max(1, n // 4)))
    p = random_basis(rng, n, d)
    supp = np.sort(rng.choice(n, size=k, replace=False))
    if gram_min_eig(p, supp) < 1e-6:
        return
    y_tilde = project_complement(p, rng.standard_normal(n))
    got = restricted_ls(p, y_tilde, supp)
    psi = np.eye(n) - p.cols @ p.cols.T
    x_oracle = np.zeros(n)
    if k:
        x_oracle[supp] = np.linalg.pinv(psi[:, supp]) @ y_tilde
    assert np.linalg.norm(got - x_oracle) <= 1e-8 * max(1.0, np.linalg.norm(x_oracle))
