"""Conditional randomization test with a finite number of resamples."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError


class Statistic:
    """A test statistic T(X, Y, Z) -> float.

    ``batch`` optionally evaluates T on a stack of resampled designs of shape
    (B, n, d) with (Y, Z) held fixed; without it the CRT loops over ``fn``.
    Any fitting a statistic needs must happen at construction, never on the
    X it is evaluated on.
    """

    def __init__(self, fn: Callable, batch: Callable | None = None, name: str = "statistic"):
        self.fn = fn
        self._batch = batch
        self.name = name

    def __call__(self, X, Y, Z):
        return float(self.fn(X, Y, Z))

    def evaluate(self, X, Y, Z):
        return self(X, Y, Z)

    def batch(self, Xs, Y, Z):
        if self._batch is not None:
            return np.asarray(self._batch(Xs, Y, Z), dtype=float)
        return np.array([self.fn(Xb, Y, Z) for Xb in Xs], dtype=float)

    def __neg__(self):
        return Statistic(
            lambda X, Y, Z: -self.fn(X, Y, Z),
            lambda Xs, Y, Z: -self.batch(Xs, Y, Z),
            name=f"-{self.name}",
        )

    def __repr__(self):
        return f"Statistic({self.name!r})"


@dataclass(frozen=True)
class CrtOutcome:
    t_obs: float
    threshold: float
    p_value: float
    gamma: float
    reject: bool
    B: int
    n_greater: int
    n_ties: int
    warning: str | None = None


def randomization_gamma(t_obs, t_resampled, alpha):
    """Rejection probability of the exact-size rule on the pooled values.

    With the B resamples and t_obs pooled into B + 1 exchangeable values, the
    test rejects outright above the pooled upper-alpha quantile, never below,
    and with probability gamma at it. Equivalently gamma is
    clip((alpha (B + 1) - #greater) / (#ties + 1), 0, 1).
    Other exact-size choices exist, for instance breaking ties among the
    pooled values by an independent uniform before ranking; they differ only
    in how rejection mass is spread over ties.
    Returns (gamma, threshold, #greater, #ties).
    """
    t = np.asarray(t_resampled, dtype=float)
    B = t.size
    n_greater = int(np.sum(t > t_obs))
    n_ties = int(np.sum(t == t_obs))
    gamma = (alpha * (B + 1) - n_greater) / (n_ties + 1)
    gamma = min(1.0, max(0.0, gamma))

    pooled = np.sort(np.append(t, t_obs))[::-1]
    # smallest C with P_pooled(T > C) <= alpha
    k = int(math.floor(alpha * (B + 1) + 1e-12))
    threshold = float(pooled[min(k, B)])
    return gamma, threshold, n_greater, n_ties


def crt_pvalue(t_obs, t_resampled):
    t = np.asarray(t_resampled, dtype=float)
    return (1.0 + float(np.sum(t >= t_obs))) / (t.size + 1.0)


def crt_run(stat, data, resampler, B, alpha, rng, coin_rng=None):
    """Run the CRT on ``data`` (a Dataset).

    ``resampler.resample(Z, rng, size=B)`` must return B independent draws of
    X given Z, shape (B, n, d). The randomized decision uses a uniform coin
    from ``coin_rng`` (defaults to ``rng``) so resampling and tie-breaking can
    live on separate streams.
    """
    if B < 1:
        raise DomainError(f"B must be >= 1, got {B}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    note = None
    if alpha < 1.0 / (B + 1):
        note = f"alpha={alpha} is below 1/(B+1)={1.0 / (B + 1):.4g}; outright rejection is impossible"
        warnings.warn(note, RuntimeWarning, stacklevel=2)

    X, Y, Z = data.X, data.Y, data.Z
    t_obs = stat(X, Y, Z)
    Xs = resampler.resample(Z, rng, size=B)
    t_res = stat.batch(Xs, Y, Z)
    gamma, threshold, n_greater, n_ties = randomization_gamma(t_obs, t_res, alpha)
    coin = (coin_rng if coin_rng is not None else rng).random()
    return CrtOutcome(
        t_obs=t_obs,
        threshold=threshold,
        p_value=crt_pvalue(t_obs, t_res),
        gamma=gamma,
        reject=bool(coin < gamma),
        B=B,
        n_greater=n_greater,
        n_ties=n_ties,
        warning=note,
    )


def likelihood_statistic(fbar, log=False):
    """T = sum_i log fbar(Y_i | X_i, Z_i).

    ``fbar(Y, X, Z)`` returns per-row densities (or log densities with
    ``log=True``) for arrays Y (n,), X (n, d), Z (n, p). Batched X of shape
    (B, n, d) is passed through as is, so a vectorized ``fbar`` gets the
    batch path for free.
    """

    def to_log(vals):
        vals = np.asarray(vals, dtype=float)
        if log:
            return vals
        if np.any(vals <= 0):
            raise DomainError("density must be positive at every observation")
        return np.log(vals)

    def fn(X, Y, Z):
        return float(np.sum(to_log(fbar(Y, X, Z))))

    def batch(Xs, Y, Z):
        vals = to_log(fbar(Y, Xs, Z))
        if vals.ndim == 2:
            return vals.sum(axis=1)
        return np.array([fn(Xb, Y, Z) for Xb in Xs])

    return Statistic(fn, batch, name="likelihood")


def gaussian_linear_density(beta, gamma, sigma2, log=True):
    """Y | X, Z ~ N(X beta + Z gamma, sigma2) as an ``fbar`` callable."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    const = -0.5 * math.log(2 * math.pi * sigma2)

    def fbar(Y, X, Z):
        mean = np.asarray(X) @ beta + np.asarray(Z) @ gamma
        logd = const - 0.5 * (Y - mean) ** 2 / sigma2
        return logd if log else np.exp(logd)

    return fbar


def marginal_correlation_statistic():
    """|sum_i X_i Y_i| for d = 1, ignoring Z."""

    def fn(X, Y, Z):
        return abs(float(np.asarray(X)[:, 0] @ Y))

    def batch(Xs, Y, Z):
        return np.abs(Xs[..., 0] @ Y)

    return Statistic(fn, batch, name="marginal_correlation")
