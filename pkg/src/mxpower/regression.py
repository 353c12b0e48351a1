"""Nuisance regressions of Y on Z: cross-validated ridge and the lasso."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, FoldError


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    coefficients: np.ndarray
    lambda_chosen: float
    cv_mse: np.ndarray | None = None
    lambda_grid: np.ndarray | None = None
    fold_seed: int | None = None
    n_sweeps: int = 0
    objective_path: tuple = field(default=(), repr=False)

    def predict(self, Z):
        return predict(self, Z)

    def __call__(self, Z):
        return predict(self, Z)


def predict(fit, z):
    """intercept + z^T coefficients; ``z`` may be one row or a matrix."""
    z = np.asarray(z, dtype=float)
    coef = fit.coefficients
    if z.shape[-1] != coef.shape[0]:
        raise DomainError(f"z has {z.shape[-1]} features, fit has {coef.shape[0]}")
    out = fit.intercept + z @ coef
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Ridge
# ---------------------------------------------------------------------------

def default_ridge_grid(Z, num=50):
    n, p = Z.shape
    scale = float(np.sum(Z * Z)) / (n * p)
    if scale <= 0:
        scale = 1.0
    return np.logspace(-4, 4, num) * scale


def _ridge_path(Z, Y, lambdas):
    """Ridge coefficients for each lambda, objective (1/n)||r||^2 + lam ||b||^2.

    Returns (intercepts, coefs) with coefs of shape (len(lambdas), p).
    Columns of Z and Y are centred so the intercept is unpenalized; lam = 0
    gives the minimum-norm least-squares solution.
    """
    n = Z.shape[0]
    zbar = Z.mean(axis=0)
    ybar = Y.mean()
    Zc = Z - zbar
    U, s, Vt = np.linalg.svd(Zc, full_matrices=False)
    uy = U.T @ (Y - ybar)
    keep = s > s.max(initial=0.0) * max(Zc.shape) * np.finfo(float).eps if s.size else s > 0
    coefs = np.empty((len(lambdas), Z.shape[1]))
    for k, lam in enumerate(lambdas):
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(keep, s / (s * s + n * lam), 0.0)
        coefs[k] = Vt.T @ (shrink * uy)
    intercepts = ybar - coefs @ zbar
    return intercepts, coefs


def ridge_cv(Z, Y, lambda_grid=None, K=10, seed=0):
    """K-fold cross-validated ridge with an unpenalized intercept.

    Folds are contiguous blocks of a permutation drawn from ``seed``. The
    chosen lambda minimizes mean held-out squared error; the returned fit is
    refit on all rows.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Z.ndim == 1:
        Z = Z[:, None]
    n = Z.shape[0]
    if K < 2:
        raise FoldError(f"need at least two folds, got K={K}")
    if n < K:
        raise FoldError(f"cannot form {K} folds from {n} rows")
    grid = default_ridge_grid(Z) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0 or np.any(grid < 0):
        raise DomainError("lambda grid must be nonempty and nonnegative")

    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, K)
    sse = np.zeros(grid.size)
    for held in folds:
        train = np.setdiff1d(perm, held, assume_unique=True)
        b0, B = _ridge_path(Z[train], Y[train], grid)
        pred = b0[:, None] + B @ Z[held].T
        sse += np.sum((pred - Y[held]) ** 2, axis=1)
    cv_mse = sse / n
    best = int(np.argmin(cv_mse))
    b0, B = _ridge_path(Z, Y, grid[best:best + 1])
    return LinearFit(
        intercept=float(b0[0]),
        coefficients=B[0],
        lambda_chosen=float(grid[best]),
        cv_mse=cv_mse,
        lambda_grid=grid,
        fold_seed=seed,
    )


# ---------------------------------------------------------------------------
# Lasso
# ---------------------------------------------------------------------------

def lasso_objective(Z, Y, gamma, lam):
    r = Y - Z @ gamma
    return float(r @ r) / (2 * Z.shape[0]) + lam * float(np.abs(gamma).sum())


def lasso_kkt_residual(Z, Y, gamma, lam):
    """Largest violation of the lasso optimality conditions."""
    n = Z.shape[0]
    grad = Z.T @ (Y - Z @ gamma) / n
    active = gamma != 0
    viol = np.where(active, np.abs(grad - lam * np.sign(gamma)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(viol.max(initial=0.0))


def lasso(Z, Y, lam, max_sweeps=100_000, tol=1e-10, gamma0=None, track_objective=False):
    """Coordinate descent for (1/(2n))||Y - Z gamma||^2 + lam ||gamma||_1.

    No intercept. Works on the Gram matrix Z^T Z / n, so cost per sweep is
    O(p * #nonzero updates). Sweeps alternate between the active set and the
    full coordinate set; convergence is declared after a full sweep whose
    largest coordinate change is below ``tol``.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if lam <= 0:
        raise DomainError(f"lasso needs lam > 0, got {lam}")
    n, p = Z.shape
    G = Z.T @ Z / n
    c = Z.T @ Y / n
    diag = np.diag(G).copy()
    gamma = np.zeros(p) if gamma0 is None else np.array(gamma0, dtype=float)
    q = G @ gamma
    path = [lasso_objective(Z, Y, gamma, lam)] if track_objective else []

    live = np.flatnonzero(diag > 0)
    gamma[diag <= 0] = 0.0

    def sweep(coords):
        biggest = 0.0
        for j in coords:
            old = gamma[j]
            rho = c[j] - q[j] + diag[j] * old
            if rho > lam:
                new = (rho - lam) / diag[j]
            elif rho < -lam:
                new = (rho + lam) / diag[j]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                gamma[j] = new
                np.add(q, G[:, j] * delta, out=q)
                biggest = max(biggest, abs(delta))
        return biggest

    sweeps = 0
    while sweeps < max_sweeps:
        change = sweep(live)
        sweeps += 1
        if track_objective:
            path.append(lasso_objective(Z, Y, gamma, lam))
        if change < tol:
            break
        # settle the active set before the next full pass
        while sweeps < max_sweeps:
            active = live[gamma[live] != 0]
            change = sweep(active)
            sweeps += 1
            if track_objective:
                path.append(lasso_objective(Z, Y, gamma, lam))
            if change < tol:
                break
    else:
        raise ConvergenceError(
            f"lasso did not converge in {max_sweeps} sweeps",
            residual=lasso_kkt_residual(Z, Y, gamma, lam),
        )
    return LinearFit(
        intercept=0.0,
        coefficients=gamma,
        lambda_chosen=float(lam),
        n_sweeps=sweeps,
        objective_path=tuple(path),
    )
