"""Dense numerical kernels: rank, pivoting, Newton projection, linear solves."""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, SingularMatrixError, VerificationError


def singular_values(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def svd_rank(M, abstol: float = 1e-6) -> int:
    """Count singular values above abstol * max(sigma_1, 1)."""
    s = singular_values(M)
    if s.size == 0:
        return 0
    return int(np.sum(s > abstol * max(s[0], 1.0)))


def _pivot_order(M) -> np.ndarray:
    if M.shape[0] == 0 or M.shape[1] == 0:
        return np.arange(M.shape[1])
    # LAPACK geqp3 keeps the first maximal column norm, so ties go to the lowest index
    _, piv = sla.qr(M, mode="r", pivoting=True)
    return piv


def hqr_permutations(M, r: int | None = None, abstol: float = 1e-6):
    """Row and column orders that put a nonsingular r x r block first.

    Columns come from column-pivoted QR of M, rows from column-pivoted QR of
    the chosen r columns transposed.  The leading block is checked by SVD.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if r is None:
        r = svd_rank(M, abstol)
    piv_col = _pivot_order(M)
    piv_row = _pivot_order(M[:, piv_col[:r]].T) if r else np.arange(M.shape[0])
    lead = M[np.ix_(piv_row[:r], piv_col[:r])]
    if r and svd_rank(lead, abstol) < r:
        # fall back to pivoting the full transpose
        piv_row = _pivot_order(M.T)
        lead = M[np.ix_(piv_row[:r], piv_col[:r])]
        if svd_rank(lead, abstol) < r:
            raise VerificationError(
                f"leading {r}x{r} block is singular after pivoting")
    return [int(i) for i in piv_row], [int(j) for j in piv_col]


def newton_refine(fun, jac, x0, abstol: float = 1e-6, max_iter: int = 25,
                  xtol: float | None = None) -> np.ndarray:
    """Newton iteration with minimum-norm steps.

    For an underdetermined system this moves x0 to a nearby point of the
    zero set.  With ``xtol`` the iteration keeps polishing until the step is
    below ``xtol * (1 + |x|)``; reaching the residual tolerance is enough
    once the iteration budget runs out.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    x = np.array(x0, dtype=float)
    if x.size == 0:
        return x
    res = np.atleast_1d(np.asarray(fun(x), dtype=float))
    if res.size == 0:
        return x
    for _ in range(max_iter):
        norm = np.max(np.abs(res))
        if not np.isfinite(norm):
            break
        if norm <= abstol and xtol is None:
            return x
        J = np.atleast_2d(np.asarray(jac(x), dtype=float))
        if not np.all(np.isfinite(J)):
            break
        step, *_ = np.linalg.lstsq(J, -res, rcond=None)
        # halve the step while the residual grows or overflows
        for _ in range(30):
            with np.errstate(all="ignore"):
                trial = np.atleast_1d(np.asarray(fun(x + step), dtype=float))
            if np.all(np.isfinite(trial)) and np.max(np.abs(trial)) <= 2.0 * norm:
                break
            step = 0.5 * step
        x = x + step
        res = trial
        if xtol is not None and np.max(np.abs(res)) <= abstol:
            if np.linalg.norm(step) <= xtol * (1.0 + np.linalg.norm(x)):
                return x
    if np.all(np.isfinite(res)) and np.max(np.abs(res)) <= abstol:
        return x
    raise ConvergenceError(
        f"Newton did not converge in {max_iter} iterations "
        f"(residual {np.max(np.abs(res)):.3g})")


def solve_linear(A, b) -> np.ndarray:
    """Solve a square system by partially pivoted LU."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise SingularMatrixError(f"matrix is not square: {A.shape}")
    if A.size == 0:
        return np.zeros(0)
    scale = np.linalg.norm(A, np.inf)
    if scale == 0 or not np.isfinite(scale):
        raise SingularMatrixError("matrix is zero or not finite")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    if np.min(np.abs(np.diag(lu))) < 1e-12 * scale:
        raise SingularMatrixError("matrix is numerically singular")
    return sla.lu_solve((lu, piv), b, check_finite=False)
