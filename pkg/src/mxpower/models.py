"""Covariate and response models.

Covariate models know the law of X given Z (the model-X assumption) and
expose its first two moments. Arrays follow one convention throughout:
``X`` is (n, d), ``Y`` is (n,), ``Z`` is (n, p), and batched resamples of X
are (B, n, d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateModelError, DomainError
from .numkit import as_sym, is_psd, sqrt_psd


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if not X.shape[0] == Y.shape[0] == Z.shape[0]:
            raise DomainError(f"row counts disagree: X {X.shape}, Y {Y.shape}, Z {Z.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def rows(self, idx):
        return Dataset(self.X[idx], self.Y[idx], self.Z[idx])


@dataclass(frozen=True)
class MomentOracle:
    """Known conditional moments of X given Z.

    ``mu(Z)`` returns (n, d) and ``sigma(Z)`` returns (n, d, d).
    """

    mu: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Binary Markov chain: X = state 0, Z_1..Z_p = states 1..p
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkovChainModel:
    pi_init: float
    pi_flip: float
    p: int

    def __post_init__(self):
        for name in ("pi_init", "pi_flip"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie strictly inside (0, 1), got {v}")
        if self.p < 1:
            raise DomainError(f"p must be >= 1, got {self.p}")

    d = 1

    def sample(self, n, rng):
        x = (rng.random(n) < self.pi_init).astype(np.int64)
        flips = (rng.random((n, self.p)) < self.pi_flip).astype(np.int64)
        z = (x[:, None] + np.cumsum(flips, axis=1)) % 2
        return x[:, None].astype(float), z.astype(float)

    def conditional(self, Z):
        """P[X = 1 | Z] for each row; only the first coordinate matters."""
        z1 = np.asarray(Z, dtype=float)
        z1 = z1[..., 0] if z1.ndim >= 1 else z1
        a, f = self.pi_init, self.pi_flip
        w1 = np.where(z1 == 1, 1.0 - f, f)
        w0 = np.where(z1 == 0, 1.0 - f, f)
        return a * w1 / (a * w1 + (1.0 - a) * w0)

    def moments(self, Z):
        mu = self.conditional(Z)
        return mu, mu * (1.0 - mu)

    def moment_oracle(self):
        return MomentOracle(
            mu=lambda Z: self.conditional(np.atleast_2d(Z))[:, None],
            sigma=lambda Z: _bernoulli_var(self.conditional(np.atleast_2d(Z))),
        )

    def resample(self, Z, rng, size=None):
        prob = self.conditional(np.atleast_2d(Z))
        shape = prob.shape if size is None else (size,) + prob.shape
        return (rng.random(shape) < prob).astype(float)[..., None]

    def marginal_means(self):
        """E[Z_j] for j = 1..p via m_j = m_{j-1}(1 - f) + (1 - m_{j-1}) f."""
        m = np.empty(self.p)
        prev = self.pi_init
        for j in range(self.p):
            prev = prev * (1.0 - self.pi_flip) + (1.0 - prev) * self.pi_flip
            m[j] = prev
        return m

    def expected_sq_norm(self):
        # binary entries: E[Z_j^2] = E[Z_j]
        return float(self.marginal_means().sum())


def _bernoulli_var(mu):
    return (mu * (1.0 - mu))[:, None, None]


# ---------------------------------------------------------------------------
# Jointly Gaussian (X, Z)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianDesign:
    """(X, Z) ~ N(0, cov) with X the first ``d`` coordinates.

    ``cov=None`` is the orthogonal design N(0, I_{d+p}).
    """

    d: int
    p: int
    cov: np.ndarray | None = None
    _coef: np.ndarray = field(init=False, repr=False, compare=False)
    _cond_cov: np.ndarray = field(init=False, repr=False, compare=False)
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.p < 0:
            raise DomainError(f"need d >= 1 and p >= 0, got d={self.d}, p={self.p}")
        d, p = self.d, self.p
        if self.cov is None:
            coef = np.zeros((d, p))
            cond = np.eye(d)
            chol = None
        else:
            C = as_sym(self.cov)
            if C.shape != (d + p, d + p):
                raise DomainError(f"covariance must be {(d + p, d + p)}, got {C.shape}")
            if not is_psd(C):
                raise DomainError("covariance is not positive semidefinite")
            object.__setattr__(self, "cov", C)
            Cxx, Cxz, Czz = C[:d, :d], C[:d, d:], C[d:, d:]
            coef = np.linalg.solve(Czz, Cxz.T).T if p else np.zeros((d, 0))
            cond = as_sym(Cxx - coef @ Cxz.T)
            chol = sqrt_psd(C)
        object.__setattr__(self, "_coef", coef)
        object.__setattr__(self, "_cond_cov", cond)
        object.__setattr__(self, "_chol", chol)

    @property
    def orthogonal(self):
        return self.cov is None

    def sample(self, n, rng):
        W = rng.standard_normal((n, self.d + self.p))
        if self._chol is not None:
            W = W @ self._chol
        return W[:, : self.d], W[:, self.d:]

    def conditional_mean(self, Z):
        return np.atleast_2d(Z) @ self._coef.T

    def expected_sq_norm(self):
        """E||Z||^2, the trace of the Z block of the covariance."""
        if self.cov is None:
            return float(self.p)
        return float(np.trace(self.cov[self.d:, self.d:]))

    def conditional_cov(self):
        return self._cond_cov.copy()

    def moment_oracle(self):
        S = self._cond_cov
        return MomentOracle(
            mu=self.conditional_mean,
            sigma=lambda Z: np.broadcast_to(S, (np.atleast_2d(Z).shape[0],) + S.shape),
        )

    def resample(self, Z, rng, size=None):
        mean = self.conditional_mean(Z)
        shape = mean.shape if size is None else (size,) + mean.shape
        noise = rng.standard_normal(shape)
        if not self.orthogonal:
            noise = noise @ sqrt_psd(self._cond_cov)
        return mean + noise


# ---------------------------------------------------------------------------
# Responses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomEffectsResponse:
    """Y = Z gamma + eps with gamma ~ N(0, sigma_gamma2 I_p)."""

    sigma_gamma2: float
    sigma_eps2: float
    snr: float = float("nan")

    def __post_init__(self):
        if self.sigma_gamma2 < 0:
            raise DomainError("sigma_gamma2 must be >= 0")
        if self.sigma_eps2 < 0:
            raise DomainError("sigma_eps2 must be >= 0")

    def draw_gamma(self, p, rng):
        return np.sqrt(self.sigma_gamma2) * rng.standard_normal(p)

    def sample(self, Z, rng, gamma=None):
        Z = np.atleast_2d(Z)
        if gamma is None:
            gamma = self.draw_gamma(Z.shape[1], rng)
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (Z.shape[1],):
            raise DomainError(f"gamma has shape {gamma.shape}, expected ({Z.shape[1]},)")
        return Z @ gamma + np.sqrt(self.sigma_eps2) * rng.standard_normal(Z.shape[0])


@dataclass(frozen=True)
class SemiparamResponse:
    """Y = (X - mu(Z))^T beta + g(Z) + eps, eps ~ N(0, sigma2)."""

    beta: np.ndarray
    g: Callable[[np.ndarray], np.ndarray]
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if self.sigma2 < 0:
            raise DomainError("sigma2 must be >= 0")

    def mean(self, X, Z, moments):
        X = np.atleast_2d(X)
        if X.shape[1] != self.beta.shape[0]:
            raise DomainError(f"X has {X.shape[1]} columns but beta has {self.beta.shape[0]} entries")
        centred = X - moments.mu(Z)
        return centred @ self.beta + np.asarray(self.g(Z), dtype=float).reshape(-1)

    def sample(self, X, Z, moments, rng):
        m = self.mean(X, Z, moments)
        return m + np.sqrt(self.sigma2) * rng.standard_normal(m.shape[0])


def calibrate_random_effects(model, snr, sigma_eps2=1.0):
    """Pick sigma_gamma2 so that E||Z||^2 sigma_gamma2 / sigma_eps2 = snr."""
    if snr < 0:
        raise DomainError(f"snr must be >= 0, got {snr}")
    ez2 = model.expected_sq_norm()
    if ez2 <= 0:
        raise DegenerateModelError("E||Z||^2 is zero; SNR cannot be calibrated")
    return RandomEffectsResponse(sigma_gamma2=snr * sigma_eps2 / ez2, sigma_eps2=sigma_eps2, snr=snr)


def sample_response(resp, X, Z, moments=None, rng=None, gamma=None):
    """Draw Y for a whole dataset.

    Random-effects responses draw ``gamma`` once for the dataset unless one is
    supplied (pass the same ``gamma`` to share a population coefficient
    between training and test data).
    """
    if isinstance(resp, RandomEffectsResponse):
        if X is not None and np.atleast_2d(X).shape[0] != np.atleast_2d(Z).shape[0]:
            raise DomainError("X and Z row counts differ")
        return resp.sample(Z, rng, gamma=gamma)
    if isinstance(resp, SemiparamResponse):
        if moments is None:
            raise DomainError("semiparametric responses need the conditional moments")
        return resp.sample(X, Z, moments, rng)
    raise TypeError(f"unknown response type {type(resp).__name__}")


def mc_sample(model, rng, n=1):
    return model.sample(n, rng)


def mc_conditional(model, z):
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise DomainError("z must be nonempty")
    return float(model.conditional(z.reshape(1, -1))[0]) if z.ndim == 1 else model.conditional(z)


def mc_moments(model, z):
    mu = mc_conditional(model, z)
    return mu, mu * (1.0 - mu)


def gaussian_sample(design, rng, n=1):
    return design.sample(n, rng)
