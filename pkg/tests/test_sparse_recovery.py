from itertools import combinations

import numpy as np
import pytest

from rstrack.linalg import Basis, orthonormalize, project_complement
from rstrack.sparse_recovery import (
    ADAPTIVE_XI_FROM_PREV_LHAT,
    ADAPTIVE_XMIN_FROM_PREV_SUPPORT,
    PrevFrame,
    ProjCsParams,
    bpdn_solve,
    estimate_support,
    hard_threshold,
    projected_cs_step,
)


def random_basis(rng, n, d):
    return orthonormalize(rng.standard_normal((n, d)))


def ric_brute_force(p_cols, size):
    """delta_s(I - PP') = max_{|T|<=s} ||I_T' P||^2, by enumeration of size-s sets."""
    n = p_cols.shape[0]
    subs = np.array(list(combinations(range(n), size)))
    rows = p_cols[subs]  # (num, size, d)
    grams = rows.transpose(0, 2, 1) @ rows
    return float(np.linalg.eigvalsh(grams)[:, -1].max())


def exhaustive_support_oracle(p_cols, y_tilde, smax):
    """Best support over all <=smax-sparse LS fits of the projected system."""
    n = p_cols.shape[0]
    psi = np.eye(n) - p_cols @ p_cols.T
    best = (np.inf, ())
    for size in range(smax + 1):
        for supp in combinations(range(n), size):
            cols = psi[:, list(supp)] if size else np.zeros((n, 0))
            if size:
                sol, *_ = np.linalg.lstsq(cols, y_tilde, rcond=None)
                resid = np.linalg.norm(y_tilde - cols @ sol)
            else:
                resid = np.linalg.norm(y_tilde)
            if resid < best[0] - 1e-12:
                best = (resid, supp)
    return np.array(best[1], dtype=int)


def low_coherence_basis(rng, n, d, sweeps=60):
    """Row-norm-equalized orthonormal basis (small restricted isometry const)."""
    m = rng.standard_normal((n, d))
    q = np.linalg.qr(m)[0]
    for _ in range(sweeps):
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        q = np.linalg.qr(q / np.maximum(norms, 1e-12))[0]
    return Basis(q)


class TestBpdnSolve:
    def test_zero_input(self):
        rng = np.random.default_rng(0)
        p = random_basis(rng, 12, 3)
        assert np.array_equal(bpdn_solve(p, np.zeros(12), 0.5), np.zeros(12))

    def test_identity_sensing_one_sparse(self):
        y = np.zeros(8)
        y[3] = 5.0
        x = bpdn_solve(None, y, 0.01)
        assert abs(x[3] - 5.0) <= 0.02
        assert np.all(np.abs(np.delete(x, 3)) <= 0.02)

    def test_residual_within_budget(self):
        rng = np.random.default_rng(1)
        n = 24
        p = random_basis(rng, n, 4)
        x = np.zeros(n)
        x[[2, 17]] = [12.0, -15.0]
        noise = project_complement(p, rng.standard_normal(n))
        noise *= 0.4 / np.linalg.norm(noise)
        y_tilde = project_complement(p, x) + noise
        xi = 0.67
        sol = bpdn_solve(p, y_tilde, xi, tol=1e-8)
        psi_sol = project_complement(p, sol)
        assert np.linalg.norm(y_tilde - psi_sol) <= xi * (1 + 1e-6)

    def test_support_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(42)
        n, d, xmin = 16, 3, 10.0
        hits = 0
        trials = 40
        for _ in range(trials):
            p = random_basis(rng, n, d)
            x = np.zeros(n)
            supp = rng.choice(n, size=2, replace=False)
            x[supp] = rng.uniform(xmin, 2.5 * xmin, size=2) * rng.choice([-1, 1], 2)
            y_tilde = project_complement(p, x)
            sol = bpdn_solve(p, y_tilde, xmin / 15.0)
            got = estimate_support(hard_threshold(sol, xmin / 2.0), xmin / 2.0)
            oracle = exhaustive_support_oracle(p.cols, y_tilde, 2)
            if np.array_equal(np.sort(got), np.sort(oracle)):
                hits += 1
        assert hits >= trials - 1


class TestEstimateSupport:
    def test_basic(self):
        got = estimate_support(np.array([0.9, 0.1, -2.0]), 0.5)
        assert np.array_equal(got, [0, 2])

    def test_all_below(self):
        assert estimate_support(np.array([0.1, -0.2]), 0.5).size == 0

    def test_boundary_strict(self):
        got = estimate_support(np.array([0.5, 0.6]), 0.5)
        assert np.array_equal(got, [1])

    def test_scaling_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(30)
        for c in [0.1, 1.0, 7.3]:
            assert np.array_equal(
                estimate_support(x, 0.4), estimate_support(c * x, c * 0.4)
            )


class TestProjectedCsStep:
    def params(self, xi=10 / 15, omega=5.0, **kw):
        return ProjCsParams(xi=xi, omega_supp=omega, **kw)

    def test_inlier_frame_passthrough(self):
        rng = np.random.default_rng(5)
        p = random_basis(rng, 20, 4)
        y = p.cols @ rng.standard_normal(4)
        res = projected_cs_step(p, y, self.params())
        assert res.support.size == 0
        assert np.array_equal(res.x_hat, np.zeros(20))
        assert np.array_equal(res.l_hat, y)

    def test_exact_support_recovery(self):
        rng = np.random.default_rng(6)
        n = 60
        p = random_basis(rng, n, 5)
        for _ in range(20):
            a = rng.uniform(-1, 1, size=5) * 2.0
            y = p.cols @ a
            supp = np.sort(rng.choice(n, size=4, replace=False))
            y = y.copy()
            y[supp] += rng.uniform(10, 25, size=4)
            res = projected_cs_step(p, y, self.params())
            assert np.array_equal(res.support, supp)

    def test_error_identity_noiseless(self):
        # l in span(P_hat) exactly makes the debiased error vanish
        rng = np.random.default_rng(7)
        n = 40
        p = random_basis(rng, n, 4)
        l = p.cols @ rng.standard_normal(4)
        x = np.zeros(n)
        supp = np.array([3, 21])
        x[supp] = [14.0, -11.0]
        y = l + x
        res = projected_cs_step(p, y, self.params())
        assert np.array_equal(res.support, supp)
        assert np.linalg.norm(res.x_hat - x) <= 1e-8
        # e_t = x_hat - x equals l - l_hat when v = 0
        assert np.linalg.norm((res.x_hat - x) - (l - res.l_hat)) <= 1e-12

    def test_subtraction_identity_is_exact(self):
        rng = np.random.default_rng(8)
        n = 35
        p = random_basis(rng, n, 3)
        for _ in range(10):
            y = p.cols @ rng.standard_normal(3)
            supp = rng.choice(n, size=3, replace=False)
            y = y.copy()
            y[supp] += rng.uniform(10, 25, size=3) * rng.choice([-1, 1], 3)
            res = projected_cs_step(p, y, self.params())
            assert np.array_equal(res.l_hat, y - res.x_hat)

    def test_adaptive_xi_from_prev_lhat(self):
        rng = np.random.default_rng(9)
        n = 30
        p = random_basis(rng, n, 3)
        prev_l = p.cols @ rng.standard_normal(3) + 0.05 * rng.standard_normal(n)
        y = p.cols @ rng.standard_normal(3)
        res = projected_cs_step(
            p, y, self.params(adaptive=ADAPTIVE_XI_FROM_PREV_LHAT),
            prev=PrevFrame(l_hat=prev_l),
        )
        expect = np.linalg.norm(project_complement(p, prev_l))
        assert res.xi_used == pytest.approx(expect, rel=1e-12)

    def test_adaptive_xmin_from_prev_support(self):
        rng = np.random.default_rng(10)
        p = random_basis(rng, 30, 3)
        y = p.cols @ rng.standard_normal(3)
        res = projected_cs_step(
            p, y, self.params(adaptive=ADAPTIVE_XMIN_FROM_PREV_SUPPORT),
            prev=PrevFrame(x_min_hat=12.0),
        )
        assert res.xi_used == pytest.approx(12.0 / 15.0)
        assert res.omega_used == pytest.approx(6.0)

    def test_adaptive_empty_prev_clamps_to_params(self):
        rng = np.random.default_rng(11)
        p = random_basis(rng, 30, 3)
        y = p.cols @ rng.standard_normal(3)
        res = projected_cs_step(
            p, y, self.params(adaptive=ADAPTIVE_XMIN_FROM_PREV_SUPPORT),
            prev=PrevFrame(x_min_hat=None),
        )
        assert res.xi_used == pytest.approx(10 / 15)
        assert res.omega_used == pytest.approx(5.0)


class TestRecoveryBound:
    def test_seven_xi_bound_on_low_ric_instances(self):
        # Bases built so delta_{2s} <= 0.15 holds (verified by enumeration);
        # across those, the l1 error bound ||x_cs - x|| <= 7 xi must hold
        # whenever the projected noise is within budget.
        rng = np.random.default_rng(1234)
        n, d, s = 64, 2, 2
        bases = []
        attempts = 0
        while len(bases) < 5 and attempts < 40:
            attempts += 1
            p = low_coherence_basis(rng, n, d)
            if ric_brute_force(p.cols, 2 * s) <= 0.15:
                bases.append(p)
        assert len(bases) >= 5, "could not construct enough low-RIC bases"
        checked = 0
        for trial in range(100):
            p = bases[trial % len(bases)]
            x = np.zeros(n)
            supp = rng.choice(n, size=s, replace=False)
            x[supp] = rng.uniform(10, 25, size=s) * rng.choice([-1, 1], s)
            xi = 10.0 / 15.0
            noise = project_complement(p, rng.standard_normal(n))
            noise *= (0.9 * xi) / np.linalg.norm(noise)
            y_tilde = project_complement(p, x) + noise
            sol = bpdn_solve(p, y_tilde, xi, tol=1e-8)
            assert np.linalg.norm(sol - x) <= 7 * xi
            checked += 1
        assert checked >= 100
