"""Resampling-free tests that use only the first two conditional moments of X|Z.

The statistic is the generalized covariance measure
    rho = (1/n) sum_i (Y_i - ghat(Z_i)) (X_i - mu(Z_i)),
standardized by the plug-in variance
    S2 = (1/n) sum_i (Y_i - ghat(Z_i))^2 Sigma(Z_i),
giving U = S2^{-1/2} sqrt(n) rho and T = ||U||^2, compared with chi2_d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crt import Statistic
from .errors import DomainError, SingularityError
from .models import Dataset
from .numkit import chi2_quantile, chi2_sf, inv_sqrt, norm_ppf, norm_sf


@dataclass(frozen=True)
class Mx2Outcome:
    rho_hat: np.ndarray
    s_hat2: np.ndarray
    u: np.ndarray
    t: float
    p_value: float
    reject: bool


def _residuals(data, ghat):
    return data.Y - np.asarray(ghat(data.Z), dtype=float).reshape(-1)


def gcm_rho(data, ghat, mu):
    """Sample covariance between Y - ghat(Z) and X - mu(Z), a d-vector."""
    resid = _residuals(data, ghat)
    centred = data.X - np.asarray(mu(data.Z), dtype=float).reshape(data.X.shape)
    return centred.T @ resid / data.n


def plug_in_variance(resid, sigmas):
    """(1/n) sum_i resid_i^2 Sigma(Z_i) for Sigma stacked as (n, d, d)."""
    sig = np.asarray(sigmas, dtype=float)
    return np.einsum("i,ijk->jk", resid * resid, sig) / resid.shape[0]


def _standardizer(s_hat2, resid):
    try:
        return inv_sqrt(s_hat2)
    except SingularityError as err:
        if np.all(resid == 0):
            cause = "all residuals Y - ghat(Z) are zero"
        elif np.allclose(s_hat2, 0):
            cause = "conditional variance Sigma(Z_i) vanishes at every observation"
        else:
            cause = "plug-in variance is rank deficient"
        raise SingularityError(f"singular plug-in variance: {cause}", eigenvalue=err.eigenvalue) from err


def mx2_statistics(data, ghat, moments):
    """Return (rho_hat, S2, U, T)."""
    resid = _residuals(data, ghat)
    s_hat2 = plug_in_variance(resid, moments.sigma(data.Z))
    A = _standardizer(s_hat2, resid)
    rho = gcm_rho(data, ghat, moments.mu)
    u = A @ (np.sqrt(data.n) * rho)
    return rho, s_hat2, u, float(u @ u)


def mx2_test(data, ghat, moments, alpha=0.05):
    """MX(2) F-test: reject when ||U||^2 exceeds the chi2_d (1 - alpha) quantile."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    rho, s_hat2, u, t = mx2_statistics(data, ghat, moments)
    d = u.shape[0]
    return Mx2Outcome(
        rho_hat=rho,
        s_hat2=s_hat2,
        u=u,
        t=t,
        p_value=chi2_sf(d, t),
        reject=bool(t > chi2_quantile(d, 1.0 - alpha)),
    )


def mx2_t_test(data, ghat, moments, alpha=0.05, side="right"):
    """One-sided MX(2) t-test for d = 1.

    ``side="right"`` rejects for large U, ``"left"`` for small U.
    """
    if data.d != 1:
        raise DomainError(f"the t-test needs d = 1, got d = {data.d}")
    if side not in ("right", "left"):
        raise DomainError(f"side must be 'right' or 'left', got {side!r}")
    rho, s_hat2, u, t = mx2_statistics(data, ghat, moments)
    signed = float(u[0]) if side == "right" else -float(u[0])
    return Mx2Outcome(
        rho_hat=rho,
        s_hat2=s_hat2,
        u=u,
        t=t,
        p_value=norm_sf(signed),
        reject=bool(signed > norm_ppf(1.0 - alpha)),
    )


def gcm_u_batch(Xs, Y, Z, ghat, moments):
    """U for a stack of designs Xs (B, n, d) sharing (Y, Z); returns (B, d).

    Residuals and the plug-in variance depend on (Y, Z) only, so they are
    computed once for the whole batch.
    """
    resid = Y - np.asarray(ghat(Z), dtype=float).reshape(-1)
    A = _standardizer(plug_in_variance(resid, moments.sigma(Z)), resid)
    mu = np.asarray(moments.mu(Z), dtype=float)
    s = np.einsum("i,bij->bj", resid, np.asarray(Xs, dtype=float) - mu) / np.sqrt(Y.shape[0])
    return s @ A.T


def gcm_statistic(ghat, moments):
    """T = ||U||^2 as a CRT statistic, with a batched path for resamples."""

    def fn(X, Y, Z):
        return mx2_statistics(Dataset(X, Y, Z), ghat, moments)[3]

    def batch(Xs, Y, Z):
        u = gcm_u_batch(Xs, Y, Z, ghat, moments)
        return np.sum(u * u, axis=1)

    return Statistic(fn, batch, name="gcm")
