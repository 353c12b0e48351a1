"""Knockoff one-bit p-values and the Selective SeqStep filter.

Columns are indexed from 0. A contrast statistic is any callable
``T(a, Y, j) -> float`` taking an AugmentedDesign; the one-bit p-value for
column j compares T on the design against T on the design with column j
swapped for its knockoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConstructionError, DomainError
from .numkit import as_sym


@dataclass(frozen=True)
class AugmentedDesign:
    original: np.ndarray
    knockoff: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.original, dtype=float))
        Xk = np.atleast_2d(np.asarray(self.knockoff, dtype=float))
        if X.shape != Xk.shape:
            raise DomainError(f"original {X.shape} and knockoff {Xk.shape} shapes differ")
        object.__setattr__(self, "original", X)
        object.__setattr__(self, "knockoff", Xk)

    @property
    def m(self):
        return self.original.shape[1]

    def stacked(self):
        return np.hstack([self.original, self.knockoff])

    def __eq__(self, other):
        return (
            isinstance(other, AugmentedDesign)
            and np.array_equal(self.original, other.original)
            and np.array_equal(self.knockoff, other.knockoff)
        )


def swap(a, j):
    """Exchange column j of the original design with column j of the knockoffs."""
    if not 0 <= j < a.m:
        raise DomainError(f"column index {j} out of range for m = {a.m}")
    X = a.original.copy()
    Xk = a.knockoff.copy()
    X[:, j], Xk[:, j] = a.knockoff[:, j], a.original[:, j]
    return AugmentedDesign(X, Xk)


# ---------------------------------------------------------------------------
# Knockoff samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndependentDesign:
    """Mutually independent coordinates; ``marginals[j](rng, n)`` draws column j."""

    marginals: Sequence[Callable]

    def sample(self, n, rng):
        return np.column_stack([draw(rng, n) for draw in self.marginals])


@dataclass(frozen=True)
class GaussianKnockoffDesign:
    """Rows X_i ~ N(0, sigma) with known sigma; equicorrelated knockoffs."""

    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", as_sym(self.sigma))

    def sample(self, n, rng):
        L = np.linalg.cholesky(self.sigma)
        return rng.standard_normal((n, self.sigma.shape[0])) @ L.T

    def knockoff_params(self):
        """(s, A, V): knockoff rows are X A^T + N(0, V)."""
        S = self.sigma
        m = S.shape[0]
        lam_min = float(np.linalg.eigvalsh(S).min())
        s = min(1.0, 2.0 * lam_min)
        if s <= 1e-12:
            raise ConstructionError(
                f"smallest eigenvalue {lam_min:.3e} forces s = 0, which makes knockoffs copies of X"
            )
        D = s * np.eye(m)
        SinvD = np.linalg.solve(S, D)
        A = np.eye(m) - SinvD.T  # I - D Sigma^{-1}
        V = as_sym(2.0 * D - D @ SinvD)
        vals = np.linalg.eigvalsh(V)
        if vals.min() < -1e-10:
            raise ConstructionError(f"2D - D Sigma^-1 D is not PSD (eigenvalue {vals.min():.3e})")
        return s, A, V


def sample_knockoffs(design, X, rng):
    """Draw knockoffs for the rows of ``X`` under a known design."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if isinstance(design, IndependentDesign):
        if len(design.marginals) != X.shape[1]:
            raise DomainError("design and X disagree on the number of columns")
        return AugmentedDesign(X, design.sample(n, rng))
    if isinstance(design, GaussianKnockoffDesign):
        _, A, V = design.knockoff_params()
        vals, vecs = np.linalg.eigh(V)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        Xk = X @ A.T + rng.standard_normal(X.shape) @ root.T
        return AugmentedDesign(X, Xk)
    raise TypeError(f"unsupported design {type(design).__name__}")


# ---------------------------------------------------------------------------
# Contrasts and one-bit p-values
# ---------------------------------------------------------------------------

def one_bit_pvalue(T, a, Y, j):
    """1/2 when T(a) > T(swap(a, j)), else 1 (ties go to 1)."""
    return 0.5 if T(a, Y, j) > T(swap(a, j), Y, j) else 1.0


def likelihood_contrast(fbar, log=True):
    """T_j(a, Y) = sum_i log fbar(Y_i | original columns of a).

    ``fbar(Y, X)`` returns per-row (log) densities. The value does not look
    at the knockoff block or at j; the one-bit p-value gets its contrast
    from comparing the design with its j-swapped version.
    """

    def T(a, Y, j):
        vals = np.asarray(fbar(Y, a.original), dtype=float)
        if not log:
            if np.any(vals <= 0):
                raise DomainError("density must be positive at every observation")
            vals = np.log(vals)
        return float(vals.sum())

    return T


def gaussian_linear_fbar(beta, sigma2=1.0):
    """log density of Y | X ~ N(X beta, sigma2)."""
    beta = np.asarray(beta, dtype=float)
    const = -0.5 * math.log(2 * math.pi * sigma2)

    def fbar(Y, X):
        r = Y - X @ beta
        return const - 0.5 * r * r / sigma2

    return fbar


def fit_symmetric_fbar(a, Y, ridge=1.0):
    """Gaussian-linear fbar fitted on [X, Xk] by ridge.

    The fit is equivariant under swapping (a swap exchanges the two fitted
    coefficients), so the design's original and knockoff columns are treated
    symmetrically. Returns a contrast T(a', Y, j) for swapped versions of
    ``a``: the fitted log likelihood of Y given the original block of a',
    each column carrying the coefficient fitted to it.
    """
    W = a.stacked()
    n, two_m = W.shape
    m = two_m // 2
    coef = np.linalg.solve(W.T @ W + ridge * np.eye(two_m), W.T @ Y)
    b, bk = coef[:m], coef[m:]
    resid = Y - W @ coef
    sigma2 = max(float(resid @ resid) / max(n - 1, 1), 1e-12)

    def T(a2, Y2, j):
        # a column of a2 that came from the knockoff block keeps its knockoff coefficient
        from_knockoff = np.all(a2.original == a.knockoff, axis=0) & ~np.all(a2.original == a.original, axis=0)
        beta = np.where(from_knockoff, bk, b)
        r = Y2 - a2.original @ beta
        return -0.5 * float(r @ r) / sigma2

    return T


def contrast_stats(T, a, Y):
    """Signed contrasts T(a) - T(swap(a, j)) for every column."""
    return np.array([T(a, Y, j) - T(swap(a, j), Y, j) for j in range(a.m)])


def marginal_correlation_contrast():
    """T_j = |X_j^T Y| on the original block."""

    def T(a, Y, j):
        return abs(float(a.original[:, j] @ Y))

    return T


# ---------------------------------------------------------------------------
# Selective SeqStep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeqStepResult:
    k_stop: int
    rejected: tuple
    fdr_estimate_path: np.ndarray


def selective_seqstep(pvals, q, c=0.5):
    """Ordered testing with the +1 offset.

    For each prefix k, FDR_hat(k) = c/(1-c) * (1 + #{p_j > c}) / max(1, #{p_j <= c});
    stop at the largest k with FDR_hat(k) <= q and reject the prefix entries
    with p_j <= c. Returned indices are positions in the supplied order.
    """
    if not 0.0 < q < 1.0:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    if not 0.0 < c < 1.0:
        raise DomainError(f"c must lie in (0, 1), got {c}")
    p = np.asarray(pvals, dtype=float)
    small = np.cumsum(p <= c)
    large = np.cumsum(p > c)
    fdr_hat = (c / (1.0 - c)) * (1.0 + large) / np.maximum(1, small)
    ok = np.flatnonzero(fdr_hat <= q)
    k_stop = int(ok[-1] + 1) if ok.size else 0
    rejected = tuple(int(i) for i in np.flatnonzero(p[:k_stop] <= c))
    return SeqStepResult(k_stop=k_stop, rejected=rejected, fdr_estimate_path=fdr_hat)


@dataclass(frozen=True)
class KnockoffSelection:
    order: np.ndarray
    pvalues: np.ndarray
    contrasts: np.ndarray
    seqstep: SeqStepResult
    selected: tuple


def knockoff_filter(T, a, Y, q, order=None):
    """One-bit p-values tested in decreasing |contrast| order.

    ``order`` may be supplied as any permutation computed symmetrically in
    each (X_j, Xk_j) pair; the default ranks by |T(a) - T(swap(a, j))|,
    which is invariant to swapping j. Ties in the ranking keep column order.
    """
    W = contrast_stats(T, a, Y)
    pvals = np.where(W > 0, 0.5, 1.0)
    if order is None:
        order = np.argsort(-np.abs(W), kind="stable")
    order = np.asarray(order)
    res = selective_seqstep(pvals[order], q)
    selected = tuple(sorted(int(order[i]) for i in res.rejected))
    return KnockoffSelection(order=order, pvalues=pvals, contrasts=W, seqstep=res, selected=selected)
