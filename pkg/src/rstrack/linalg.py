"""Dense linear-algebra kernels and the subspace-error metric.

All routines treat a subspace as a column-orthonormal matrix (a ``Basis``).
Projectors of the form I - P P' are always applied operator-style as two
thin matrix-vector products; the n x n projector is never materialized.
Top singular factors are computed by (block) power iteration on the
outer-product operator, which is cheap because every matrix we factor is
n x alpha with only the top one or top-r directions needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    IllConditioned,
    NoConvergence,
    RankDeficient,
)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class Basis:
    """Column-orthonormal n x d matrix representing a subspace.

    Invariants: ||B'B - I||_F <= 1e-10 * d and 1 <= d <= n.
    """

    cols: np.ndarray

    def __post_init__(self):
        cols = np.ascontiguousarray(np.asarray(self.cols, dtype=np.float64))
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.ndim != 2:
            raise DimensionMismatch(f"basis must be 2-D, got shape {cols.shape}")
        n, d = cols.shape
        if not 1 <= d <= n:
            raise DimensionMismatch(f"need 1 <= d <= n, got n={n}, d={d}")
        gram = cols.T @ cols
        dev = np.linalg.norm(gram - np.eye(d), "fro")
        if dev > 1e-10 * d:
            raise DimensionMismatch(
                f"columns not orthonormal: ||B'B - I||_F = {dev:.3e} > {1e-10 * d:.3e}"
            )
        object.__setattr__(self, "cols", cols)

    @property
    def n(self) -> int:
        return self.cols.shape[0]

    @property
    def d(self) -> int:
        return self.cols.shape[1]


def orthonormalize(M: np.ndarray, tol: float = 1e-12) -> Basis:
    """Reduced QR of M, keeping only columns that span range(M).

    Raises RankDeficient if any diagonal of R falls below tol * ||M||_2,
    leaving the caller to decide whether to drop columns.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[1] > M.shape[0]:
        raise DimensionMismatch(f"more columns than rows: {M.shape}")
    q, r = np.linalg.qr(M)
    diag = np.abs(np.diag(r))
    scale = diag.max(initial=0.0)
    if scale == 0.0:
        raise RankDeficient("zero matrix has no basis")
    if diag.min() < tol * scale:
        raise RankDeficient(
            f"rank-deficient input: min |R_ii| = {diag.min():.3e} < {tol * scale:.3e}"
        )
    return Basis(q)


def subspace_error(p_hat: Basis, p: Basis) -> float:
    """sin of the largest principal angle: ||(I - P_hat P_hat') P||_2.

    Dimensions of the two bases may differ; ambient n must match. The
    projector is applied operator-form: sigma_max(P - P_hat (P_hat' P)).
    """
    if p_hat.n != p.n:
        raise DimensionMismatch(f"ambient dims differ: {p_hat.n} vs {p.n}")
    resid = p.cols - p_hat.cols @ (p_hat.cols.T @ p.cols)
    se = np.linalg.svd(resid, compute_uv=False)[0]
    return float(min(max(se, 0.0), 1.0))


def _fix_sign(u: np.ndarray) -> np.ndarray:
    # Deterministic sign: entry of largest magnitude is positive.
    i = int(np.argmax(np.abs(u)))
    return -u if u[i] < 0 else u


def top_singular_vector(
    M: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> tuple[np.ndarray, float]:
    """Leading left singular vector and singular value via power iteration.

    Iterates u <- M M'u / ||.|| until ||M M'u - sigma1^2 u|| <= tol * sigma1^2.
    Deterministic start (column of M with largest norm). Sign convention:
    largest-magnitude entry of u is positive.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    col_norms = np.linalg.norm(M, axis=0)
    j = int(np.argmax(col_norms))
    if col_norms[j] == 0.0:
        raise NoConvergence("zero matrix has no singular vector", {"sigma1": 0.0})
    u = M[:, j] / col_norms[j]
    lam = 0.0
    for it in range(max_iter):
        w = M @ (M.T @ u)
        lam = float(u @ w)
        resid = np.linalg.norm(w - lam * u)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            raise NoConvergence("iterate collapsed to zero", {"iteration": it})
        u = w / nw
        if resid <= tol * max(lam, np.finfo(float).tiny):
            sigma1 = float(np.linalg.norm(M.T @ u))
            return _fix_sign(u), sigma1
    raise NoConvergence(
        "power iteration did not converge",
        {"iterations": max_iter, "last_residual": resid, "lambda": lam},
    )


def top_r_left_singular_vectors(
    M: np.ndarray,
    r: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Basis:
    """r leading left singular vectors by orthogonal (block power) iteration.

    QR re-orthonormalization each sweep; stops when the subspace change per
    iteration drops below tol. Finishes with a Rayleigh-Ritz rotation so
    columns are ordered by singular value, each sign-fixed. With a
    degenerate spectrum any invariant subspace is an acceptable result.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    n, m = M.shape
    if not 1 <= r <= min(n, m):
        raise DimensionMismatch(f"need 1 <= r <= min{M.shape}, got r={r}")
    # Fixed-seed start keeps the routine deterministic for fixed inputs while
    # avoiding adversarial alignment with the data.
    g = np.random.default_rng(0x5EED).standard_normal((m, r))
    try:
        q = orthonormalize(M @ g).cols
    except RankDeficient as exc:
        raise RankDeficient(f"input has rank < {r}") from exc
    prev = q
    for _ in range(max_iter):
        z = M @ (M.T @ q)
        try:
            q = orthonormalize(z, tol=1e-14).cols
        except RankDeficient as exc:
            raise RankDeficient(f"input has rank < {r}") from exc
        change = np.linalg.svd(q - prev @ (prev.T @ q), compute_uv=False)[0]
        prev = q
        if change <= tol:
            break
    else:
        raise NoConvergence(
            "block power iteration did not converge",
            {"iterations": max_iter, "last_change": float(change)},
        )
    # Rayleigh-Ritz: rotate the converged block into singular-vector order.
    b = M.T @ q
    w, v = np.linalg.eigh(b.T @ b)
    order = np.argsort(w)[::-1]
    q = q @ v[:, order]
    q = np.column_stack([_fix_sign(q[:, i]) for i in range(r)])
    return Basis(q)


def project_complement(p_hat: Basis | None, v: np.ndarray) -> np.ndarray:
    """Apply I - P_hat P_hat' to a vector (or to each column of a matrix)."""
    v = np.asarray(v, dtype=np.float64)
    if p_hat is None:
        return v.copy()
    if v.shape[0] != p_hat.n:
        raise DimensionMismatch(f"vector dim {v.shape[0]} != ambient {p_hat.n}")
    return v - p_hat.cols @ (p_hat.cols.T @ v)


def gram_min_eig(p_hat: Basis | None, support: np.ndarray) -> float:
    """Smallest eigenvalue of Psi_T' Psi_T = I - B B' with B the support rows
    of P_hat. Equals 1 - sigma_max(B)^2, computed from the thin SVD of B."""
    if p_hat is None or len(support) == 0:
        return 1.0
    b = p_hat.cols[support, :]
    smax = np.linalg.svd(b, compute_uv=False)[0]
    return float(1.0 - smax * smax)


def restricted_ls(
    p_hat: Basis | None,
    y_tilde: np.ndarray,
    support: np.ndarray,
    min_eig: float = 1e-10,
) -> np.ndarray:
    """Solve the support-restricted normal equations (Psi_T' Psi_T) x_T = Psi_T' y.

    Psi_T is formed implicitly as the support columns of I - P_hat P_hat'.
    The |T| x |T| Gram matrix is I - B B' with B the support rows of P_hat,
    so the solve reduces (Woodbury) to a Cholesky factorization of the d x d
    capacitance I_d - B'B. Returns a dense vector supported on `support`.

    Raises IllConditioned when the Gram matrix's smallest eigenvalue falls
    below min_eig (support too large, or denseness violated).
    """
    y_tilde = np.asarray(y_tilde, dtype=np.float64)
    support = np.asarray(support, dtype=np.intp)
    x = np.zeros_like(y_tilde)
    if len(support) == 0:
        return x
    if support.max() >= y_tilde.shape[0] or support.min() < 0:
        raise DimensionMismatch("support index out of range")
    if p_hat is None:
        # Psi = I: the restricted system is the identity.
        x[support] = y_tilde[support]
        return x
    if p_hat.n != y_tilde.shape[0]:
        raise DimensionMismatch(f"vector dim {y_tilde.shape[0]} != ambient {p_hat.n}")
    b = p_hat.cols[support, :]
    rhs = y_tilde[support] - b @ (p_hat.cols.T @ y_tilde)
    if gram_min_eig(p_hat, support) < min_eig:
        raise IllConditioned(
            f"restricted Gram matrix min eigenvalue below {min_eig:.1e}"
        )
    cap = np.eye(p_hat.d) - b.T @ b
    try:
        c = np.linalg.cholesky(cap)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned("capacitance matrix not positive definite") from exc
    w = np.linalg.solve(c.T, np.linalg.solve(c, b.T @ rhs))
    x[support] = rhs + b @ w
    return x
