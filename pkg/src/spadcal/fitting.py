"""Weighted nonlinear least squares: damped Gauss-Newton iteration with
Levenberg-style damping fallback and a numerically differentiated Jacobian."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FitConvergenceError, SingularFitError

JACOBIAN_STEP_REL = 1e-6


def numerical_jacobian(residual_fn, params: np.ndarray, step_rel: float = JACOBIAN_STEP_REL) -> np.ndarray:
    """Central-difference Jacobian of the residual vector; per-parameter step
    step_rel * max(|p|, 1)."""
    params = np.asarray(params, dtype=np.float64)
    r0 = np.asarray(residual_fn(params), dtype=np.float64)
    jac = np.empty((r0.size, params.size))
    for j in range(params.size):
        h = step_rel * max(abs(params[j]), 1.0)
        hi = params.copy()
        lo = params.copy()
        hi[j] += h
        lo[j] -= h
        jac[:, j] = (np.asarray(residual_fn(hi)) - np.asarray(residual_fn(lo))) / (2.0 * h)
    return jac


@dataclass
class LsqResult:
    params: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    chisq: float
    converged: bool
    iterations: int
    jacobian: np.ndarray = field(repr=False, default=None)


def least_squares(residual_fn, x0, max_iter: int = 100, dx_tol: float = 1e-10,
                  scale_covariance: bool = False) -> LsqResult:
    """Minimize sum(residual_fn(x)^2).

    residual_fn returns the (already weighted) residual vector. The step
    solves the Gauss-Newton normal equations; on a rejected step the damping
    factor is raised tenfold until the chi-square decreases. Convergence is
    max|dx_j| / max(|x_j|, 1) < dx_tol.

    With scale_covariance the covariance is multiplied by chisq/(n - p),
    appropriate when the residuals carry no per-point sigma.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    r = np.asarray(residual_fn(x), dtype=np.float64)
    chisq = float(r @ r)
    lam = 0.0
    jac = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        jac = numerical_jacobian(residual_fn, x)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        accepted = False
        at_minimum = False
        lam = lam / 10.0 if lam > 1e-12 else 0.0
        for _ in range(25):
            a = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-300))
            try:
                dx = np.linalg.solve(a, -jtr)
            except np.linalg.LinAlgError:
                if lam == 0.0 and np.linalg.matrix_rank(jtj) < x.size:
                    raise SingularFitError(
                        f"normal matrix is singular (rank {np.linalg.matrix_rank(jtj)} < {x.size})"
                    )
                lam = max(lam * 10.0, 1e-6)
                continue
            step = float(np.max(np.abs(dx) / np.maximum(np.abs(x), 1.0)))
            x_new = x + dx
            r_new = np.asarray(residual_fn(x_new), dtype=np.float64)
            chisq_new = float(r_new @ r_new)
            if np.isfinite(chisq_new) and chisq_new <= chisq * (1.0 + 1e-14):
                accepted = True
                break
            if step < dx_tol:  # proposed move below tolerance: already at the minimum
                at_minimum = True
                break
            lam = max(lam * 10.0, 1e-6)
        if at_minimum:
            converged = True
            break
        if not accepted:
            break
        x, r, chisq = x_new, r_new, chisq_new
        if step < dx_tol:
            converged = True
            break
    if not converged:
        raise FitConvergenceError(
            f"no convergence after {iterations} iterations (chisq={chisq:.6g})",
            diagnostics={
                "params": x.copy(),
                "chisq": chisq,
                "residuals": r.copy(),
                "iterations": iterations,
            },
        )
    jac = numerical_jacobian(residual_fn, x)
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        raise SingularFitError("normal matrix is singular at the solution")
    if scale_covariance:
        dof = max(r.size - x.size, 1)
        cov = cov * (chisq / dof)
    return LsqResult(
        params=x,
        covariance=cov,
        residuals=r,
        chisq=chisq,
        converged=True,
        iterations=iterations,
        jacobian=jac,
    )
