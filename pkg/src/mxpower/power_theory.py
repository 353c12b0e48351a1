"""Theoretical power: local-alternative chi-square power and the lasso
effective-noise fixed point."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError
from .numkit import (
    as_sym,
    chi2_quantile,
    gauss_hermite,
    inv_sqrt,
    noncentral_chi2_sf,
    norm_cdf,
    norm_ppf,
    soft_threshold,
    sqrt_psd,
)


@dataclass(frozen=True)
class LocalAlternative:
    """beta_n = h / sqrt(n); err2 is the limiting variance-weighted MSE of ghat."""

    h: np.ndarray
    sigma2: float
    err2: np.ndarray
    sigma_bar: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        d = h.shape[0]
        err2 = as_sym(np.asarray(self.err2, dtype=float).reshape(d, d))
        sbar = as_sym(np.asarray(self.sigma_bar, dtype=float).reshape(d, d))
        if self.sigma2 <= 0:
            raise DomainError("sigma2 must be positive")
        if np.linalg.eigvalsh(err2).min() < -1e-12:
            raise DomainError("err2 must be positive semidefinite")
        if np.linalg.eigvalsh(sbar).min() <= 0:
            raise DomainError("sigma_bar must be positive definite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "err2", err2)
        object.__setattr__(self, "sigma_bar", sbar)

    @property
    def d(self):
        return self.h.shape[0]

    def noncentrality(self):
        A = inv_sqrt(self.sigma2 * np.eye(self.d) + self.err2)
        v = A @ sqrt_psd(self.sigma_bar) @ self.h
        return float(v @ v)


def local_power(alt, d=None, alpha=0.05):
    """P[chi2_d(||(sigma2 I + E2)^{-1/2} Sigma_bar^{1/2} h||^2) > c_{d,1-alpha}]."""
    d = alt.d if d is None else d
    if d != alt.d:
        raise DomainError(f"d={d} disagrees with h of length {alt.d}")
    return noncentral_chi2_sf(d, alt.noncentrality(), chi2_quantile(d, 1.0 - alpha))


def lasso_crt_power(h, pi, tau_star, alpha=0.05):
    """P[|N(h sqrt(1 - pi) / tau_star, 1)| > z_{1 - alpha/2}]."""
    if tau_star <= 0:
        raise DomainError("tau_star must be positive")
    if not 0.0 < pi <= 1.0:
        raise DomainError(f"pi must lie in (0, 1], got {pi}")
    m = h * math.sqrt(1.0 - pi) / tau_star
    z = norm_ppf(1.0 - alpha / 2.0)
    return norm_cdf(m - z) + norm_cdf(-m - z)


# ---------------------------------------------------------------------------
# Lasso fixed point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaPrior:
    """Limiting law of the scaled coefficients sqrt(n) gamma_j, as atoms."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        w = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if v.shape != w.shape or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("prior needs matching values/probs with probs summing to one")
        if not np.any((v != 0) & (w > 0)):
            raise DomainError("prior must put positive mass away from zero")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", w)

    @classmethod
    def three_point(cls, a, p_zero=1.0 / 3.0):
        side = 0.5 * (1.0 - p_zero)
        return cls(np.array([-a, 0.0, a]), np.array([side, p_zero, side]))

    @classmethod
    def gaussian_mixture(cls, means, sds, weights, rule=None):
        """Nested quadrature: each component is replaced by Gauss-Hermite atoms."""
        rule = gauss_hermite(41) if rule is None else rule
        vals, probs = [], []
        for m, s, w in zip(means, sds, weights):
            vals.append(m + s * rule.nodes)
            probs.append(w * rule.weights)
        probs = np.concatenate(probs)
        return cls(np.concatenate(vals), probs / probs.sum())

    @property
    def second_moment(self):
        return float(np.dot(self.probs, self.values ** 2))


@dataclass(frozen=True)
class AmpInputs:
    lam: float
    delta: float
    pi: float
    sigma2: float
    prior: GammaPrior

    def __post_init__(self):
        if self.lam <= 0 or self.delta <= 0 or self.sigma2 <= 0:
            raise DomainError("lam, delta and sigma2 must be positive")
        if not 0.0 < self.pi <= 1.0:
            raise DomainError(f"pi must lie in (0, 1], got {self.pi}")


@dataclass(frozen=True)
class AmpSolution:
    alpha_star: float
    tau_star: float
    residuals: tuple
    iterations: int
    inputs: AmpInputs = field(repr=False)

    @property
    def err2(self):
        """Limiting out-of-sample excess error tau*^2 - sigma^2."""
        return self.tau_star ** 2 - self.inputs.sigma2

    def to_dict(self):
        inp = self.inputs
        return {
            "lambda": inp.lam,
            "delta": inp.delta,
            "pi": inp.pi,
            "sigma2": inp.sigma2,
            "prior_values": inp.prior.values.tolist(),
            "prior_probs": inp.prior.probs.tolist(),
            "alpha_star": self.alpha_star,
            "tau_star": self.tau_star,
            "residual_lambda": self.residuals[0],
            "residual_tau2": self.residuals[1],
            "iterations": self.iterations,
        }


def _expectations(inp, alpha, tau, rule):
    """(E[eta'], E[(eta - sqrt(pi) Gamma)^2]) under the quadrature rule.

    E[eta'(mu + tau W)] is evaluated as E[W eta(mu + tau W)] / tau (Gaussian
    integration by parts), which keeps it continuous in (alpha, tau).
    """
    theta = alpha * tau
    shift = math.sqrt(inp.pi) * inp.prior.values[:, None]
    x = shift + tau * rule.nodes[None, :]
    eta = soft_threshold(x, theta)
    w = rule.weights[None, :]
    deriv = np.sum(w * rule.nodes[None, :] * eta, axis=1) / tau
    mse = np.sum(w * (eta - shift) ** 2, axis=1)
    return float(inp.prior.probs @ deriv), float(inp.prior.probs @ mse)


def amp_equations(inp, alpha, tau, rule):
    """Residuals of the two fixed-point equations at (alpha, tau)."""
    scale = 1.0 / (inp.pi * inp.delta)
    e_deriv, e_mse = _expectations(inp, alpha, tau, rule)
    r1 = alpha * tau * (1.0 - scale * e_deriv) - inp.lam
    r2 = inp.sigma2 + scale * e_mse - tau * tau
    return r1, r2


def _alpha_for_tau(inp, tau, rule):
    def f(a):
        return amp_equations(inp, a, tau, rule)[0]

    lo, hi = 0.0, 1.0
    while f(hi) <= 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise ConvergenceError("could not bracket alpha in the first equation", trace=[tau])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def amp_solve(inp, rule=None, damping=0.5, tol=1e-10, max_iter=10_000):
    """Solve for (alpha*, tau*).

    For the current tau, alpha is found by bisection on the first equation;
    tau^2 is then moved a fraction ``damping`` of the way to the right-hand
    side of the second equation. Starts from tau^2 = sigma^2 + E[Gamma^2]/delta.
    """
    rule = gauss_hermite(61) if rule is None else rule
    tau2 = inp.sigma2 + inp.prior.second_moment / inp.delta
    trace = []
    for it in range(1, max_iter + 1):
        tau = math.sqrt(tau2)
        alpha = _alpha_for_tau(inp, tau, rule)
        r1, r2 = amp_equations(inp, alpha, tau, rule)
        trace.append((alpha, tau, r1, r2))
        if abs(r1) < tol and abs(r2) < tol:
            return AmpSolution(alpha, tau, (r1, r2), it, inp)
        tau2 = tau2 + damping * r2
    raise ConvergenceError(
        f"fixed point iteration did not converge in {max_iter} steps; try smaller damping",
        residual=trace[-1][2:],
        trace=trace[-50:],
    )


def amp_lambda_to_lasso(lam, n_train):
    """Penalty for (1/(2n))||Y - Z g||^2 + lam' ||g||_1 matching fixed-point lambda.

    The fixed point is stated for coefficients of order one and columns of
    norm about one; with N(0, 1) entries in Z and coefficients of order
    1/sqrt(n) the two problems match when lam' = lam / sqrt(n_train).
    """
    return lam / math.sqrt(n_train)
