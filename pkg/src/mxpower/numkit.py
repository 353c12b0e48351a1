"""Numerical primitives: chi-square laws, small symmetric matrices, Gaussian
quadrature and seedable random streams.

Everything here is dependency-light (``math`` plus numpy) so the statistical
code above it can be checked against independent oracles in the tests.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import DomainError, NumericError, SingularityError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 200_000
_STD_NORMAL = NormalDist()


# ---------------------------------------------------------------------------
# Regularized incomplete gamma
# ---------------------------------------------------------------------------

def _gamma_prefactor(a, x):
    return math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_p_series(a, x):
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * _gamma_prefactor(a, x)
    raise NumericError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _gamma_q_contfrac(a, x):
    # modified Lentz
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * _gamma_prefactor(a, x)
    raise NumericError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def gamma_p(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise DomainError(f"gamma_p needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_contfrac(a, x)


def gamma_q(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0 or x < 0:
        raise DomainError(f"gamma_q needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


# ---------------------------------------------------------------------------
# Chi-square and normal laws
# ---------------------------------------------------------------------------

def chi2_cdf(d, x):
    if d < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {d}")
    if x <= 0:
        return 0.0
    return gamma_p(0.5 * d, 0.5 * x)


def chi2_sf(d, x):
    if d < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {d}")
    if x <= 0:
        return 1.0
    return gamma_q(0.5 * d, 0.5 * x)


def chi2_pdf(d, x):
    if x <= 0:
        return 0.0
    a = 0.5 * d
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a))


def chi2_quantile(d, p):
    """Return c with P[chi2_d <= c] = p.

    Safeguarded Newton iteration inside a bisection bracket. For p > 1/2 the
    survival function is matched instead of the CDF so upper quantiles keep
    full relative accuracy.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {p}")
    if d < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {d}")

    upper = p > 0.5
    target = 1.0 - p if upper else p

    def resid(x):
        return (chi2_sf(d, x) - target) if upper else (chi2_cdf(d, x) - target)

    # resid is decreasing in x for the upper branch, increasing otherwise
    sign = -1.0 if upper else 1.0
    lo, hi = 0.0, max(1.0, float(d))
    while sign * resid(hi) < 0:
        lo, hi = hi, 2.0 * hi
    # Wilson-Hilferty start
    z = _STD_NORMAL.inv_cdf(p)
    k = 2.0 / (9.0 * d)
    x = d * max(1.0 - k + z * math.sqrt(k), 1e-3) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(500):
        r = resid(x)
        if sign * r < 0:
            lo = x
        else:
            hi = x
        dens = chi2_pdf(d, x)
        step = sign * r / dens if dens > 0 else math.inf
        x_new = x - step
        if not lo < x_new < hi or not math.isfinite(x_new):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(x, 1e-300) or hi - lo <= 1e-15 * hi:
            return x_new
        x = x_new
    return x


def noncentral_chi2_sf(d, lam, t):
    """P[chi2_d(lam) > t] as a Poisson(lam/2) mixture of central tails.

    The central tails Q(d/2 + k, t/2) are obtained from one direct evaluation
    at the Poisson mode and the recurrence Q(a+1, x) = Q(a, x) + x^a e^{-x} / Gamma(a+1),
    walking outwards until the Poisson weights drop below 1e-17.
    """
    if lam < 0 or t < 0:
        raise DomainError(f"noncentral_chi2_sf needs lam >= 0 and t >= 0, got lam={lam}, t={t}")
    if d < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {d}")
    x = 0.5 * t
    mu = 0.5 * lam
    if x == 0.0:
        # t == 0, or subnormal enough that halving it underflows
        return 1.0
    if mu == 0.0:
        # lam == 0, or subnormal enough that halving it underflows
        return chi2_sf(d, t)
    log_mu, log_x = math.log(mu), math.log(x)
    k0 = int(math.floor(mu))
    a0 = 0.5 * d + k0

    def log_pois(k):
        return -mu + k * log_mu - math.lgamma(k + 1.0)

    def increment(a):
        # x^a e^{-x} / Gamma(a + 1)
        return math.exp(-x + a * log_x - math.lgamma(a + 1.0))

    q0 = gamma_q(a0, x)
    total = math.exp(log_pois(k0)) * q0

    q, k = q0, k0
    while True:
        q = min(1.0, q + increment(0.5 * d + k))
        k += 1
        w = math.exp(log_pois(k))
        total += w * q
        if w < 1e-17:
            break

    q, k = q0, k0
    while k > 0:
        k -= 1
        q = max(0.0, q - increment(0.5 * d + k))
        w = math.exp(log_pois(k))
        total += w * q
        if w < 1e-17 or q == 0.0:
            break

    return min(1.0, max(0.0, total))


def norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_sf(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def norm_ppf(p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


# ---------------------------------------------------------------------------
# Small symmetric matrices
# ---------------------------------------------------------------------------

def as_sym(S):
    """Return a symmetric copy of ``S`` built from its upper triangle."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {S.shape}")
    upper = np.triu(S)
    return upper + np.triu(S, 1).T


def sym_eig(S):
    return np.linalg.eigh(as_sym(S))


def is_psd(S, tol=1e-10):
    vals = np.linalg.eigvalsh(as_sym(S))
    return bool(vals.min() >= -tol * max(1.0, abs(vals).max()))


def inv_sqrt(S, eig_tol=1e-12):
    """Symmetric inverse square root A with A S A = I.

    Raises SingularityError when the smallest eigenvalue is not above
    ``eig_tol`` times the largest.
    """
    vals, vecs = sym_eig(S)
    top = vals.max()
    if top <= 0 or vals.min() <= eig_tol * top:
        raise SingularityError(
            f"matrix is singular or not positive definite (smallest eigenvalue {vals.min():.3e})",
            eigenvalue=float(vals.min()),
        )
    A = (vecs / np.sqrt(vals)) @ vecs.T
    return 0.5 * (A + A.T)


def sqrt_psd(S):
    vals, vecs = sym_eig(S)
    if vals.min() < -1e-10 * max(1.0, abs(vals).max()):
        raise SingularityError("matrix is not positive semidefinite", eigenvalue=float(vals.min()))
    A = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return 0.5 * (A + A.T)


# ---------------------------------------------------------------------------
# Gaussian quadrature and soft thresholding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for expectations over W ~ N(0, 1)."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise DomainError("quadrature weights must sum to one")
        if np.any(self.weights <= 0):
            raise DomainError("quadrature weights must be positive")


def gauss_hermite(order=61):
    """Probabilists' Gauss-Hermite rule normalized to a probability measure."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / weights.sum()
    # exact symmetry about zero
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(nodes=nodes, weights=weights / weights.sum())


def gh_expect(f, rule):
    """Approximate E[f(W)], W ~ N(0, 1). ``f`` is called on the node array."""
    vals = np.asarray(f(rule.nodes), dtype=float)
    if vals.shape != rule.nodes.shape:
        vals = np.array([float(f(w)) for w in rule.nodes])
    if not np.all(np.isfinite(vals)):
        raise NumericError("integrand is not finite at every quadrature node")
    return float(np.dot(rule.weights, vals))


def soft_threshold(x, theta):
    """eta(x; theta) = (|x| - theta)_+ sign(x)."""
    if np.any(np.asarray(theta) < 0):
        raise DomainError("threshold must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def stable_key(*parts):
    """64-bit key from arbitrary hashable parts, stable across processes."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair naming one reproducible random stream.

    Streams are single-owner: call ``generator()`` once per task and derive
    child streams for parallel work instead of sharing a generator.
    """

    seed: int
    stream_id: int = 0

    def generator(self):
        seq = np.random.SeedSequence(
            entropy=int(self.seed) % 2**64, spawn_key=(int(self.stream_id) % 2**64,)
        )
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, *keys):
        return RngStream(self.seed, stable_key(self.stream_id, *keys))


def derive_stream(seed, *keys):
    """Stream for ``keys`` such as (experiment, replicate, role)."""
    return RngStream(int(seed), stable_key(*keys))
