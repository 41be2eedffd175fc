"""Preconditioned conjugate gradient with residual and Ritz diagnostics."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal


class SolverError(RuntimeError):
    """Raised when an iterative solve fails to reach its tolerance."""

    def __init__(self, message, residuals):
        super().__init__(f"{message} (final relative residual {residuals[-1]:.3e})")
        self.residuals = list(residuals)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    ritz_min: float = np.nan
    ritz_max: float = np.nan


def conjugate_gradient(A, b, x0=None, tol=1e-10, maxiter=None, precond="jacobi"):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Parameters
    ----------
    A : sparse matrix or LinearOperator-like object with ``@``
    b : ndarray
    x0 : ndarray, optional
    tol : float
        Target for ``||b - A x|| / ||b||``.
    maxiter : int, optional
        Defaults to ``10 * len(b)``.
    precond : {"jacobi", None} or callable
        Callable preconditioners receive a residual and return ``M^-1 r``.

    Returns
    -------
    CGResult
        Solution plus residual history and the extreme Ritz values of the
        preconditioned operator, estimated from the Lanczos coefficients.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    if precond == "jacobi":
        d = np.asarray(A.diagonal(), dtype=np.float64)
        if np.any(d <= 0):
            raise SolverError("non-positive diagonal, matrix is not SPD", [np.inf])
        inv_d = 1.0 / d

        def apply_m(r):
            return inv_d * r
    elif precond is None:
        def apply_m(r):
            return r
    else:
        apply_m = precond

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CGResult(np.zeros(n), 0, [0.0])
    r = b - A @ x
    res = [np.linalg.norm(r) / bnorm]
    if res[0] <= tol:
        return CGResult(x, 0, res)
    z = apply_m(r)
    p = z.copy()
    rz = r @ z
    alphas, betas = [], []
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("non-positive curvature, matrix is not SPD", res)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res.append(np.linalg.norm(r) / bnorm)
        alphas.append(alpha)
        if not np.isfinite(res[-1]):
            raise SolverError("conjugate gradient diverged", res)
        if res[-1] <= tol:
            lo, hi = _ritz_extremes(alphas, betas)
            return CGResult(x, it, res, lo, hi)
        z = apply_m(r)
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    raise SolverError(f"conjugate gradient did not converge in {maxiter} iterations", res)


def _ritz_extremes(alphas, betas):
    k = len(alphas)
    a = np.asarray(alphas)
    bt = np.asarray(betas[: k - 1])
    diag = 1.0 / a
    diag[1:] += bt / a[:-1]
    off = np.sqrt(np.maximum(bt, 0.0)) / a[:-1]
    ev = eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    return float(ev[0]), float(ev[-1])
