"""Bivariate normal conjugate model with one correct and five broken posteriors.

The model draws a 2-vector mean from MVN(0, Sigma) with unit variances and
correlation 0.8, then n observations from MVN(mean, Sigma). The correct
posterior is MVN(n * ybar / (n + 1), Sigma / (n + 1)). The broken variants
each embody one classic failure mode: ignoring all data, ignoring one data
point, dropping the posterior correlation, adding a small per-fit bias, and
a marginal-preserving non-monotone warp that only data-dependent or
non-monotone test quantities can see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ..core import TestQuantity

__all__ = [
    "SIGMA",
    "GaussianGenerator",
    "make_variant",
    "quantity_library",
    "default_quantity_names",
    "VARIANT_NAMES",
    "grand_mean_positive",
    "component_mean_positive",
]

SIGMA = np.array([[1.0, 0.8], [0.8, 1.0]])
_CHOL = np.linalg.cholesky(SIGMA)
_SIGMA_INV = np.linalg.inv(SIGMA)
_LOGDET = float(np.linalg.slogdet(SIGMA)[1])
_LOG2PI = float(np.log(2.0 * np.pi))

VARIANT_NAMES = (
    "correct",
    "prior-only",
    "ignore-first",
    "independent-marginals",
    "small-bias",
    "non-monotonic",
)


@dataclass(frozen=True)
class GaussianGenerator:
    """Prior and observation sampler; data is an (n, 2) matrix."""

    n: int = 3

    def generate(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        mu = _CHOL @ rng.standard_normal(2)
        y = mu[None, :] + rng.standard_normal((self.n, 2)) @ _CHOL.T
        return mu, y


def _mvn_draws(rng: np.random.Generator, mean: np.ndarray, scale: float, M: int) -> np.ndarray:
    """M draws from MVN(mean, scale * Sigma)."""
    return mean[None, :] + np.sqrt(scale) * rng.standard_normal((M, 2)) @ _CHOL.T


def _mvn_log_density(draws: np.ndarray, mean: np.ndarray, scale: float) -> np.ndarray:
    """Log density of MVN(mean, scale * Sigma) at each draw."""
    diff = draws - mean[None, :]
    quad = np.einsum("ni,ij,nj->n", diff, _SIGMA_INV, diff) / scale
    return -_LOG2PI - 0.5 * (_LOGDET + 2.0 * np.log(scale)) - 0.5 * quad


def _correct_mean(y: np.ndarray, n: int) -> np.ndarray:
    return n * y.mean(axis=0) / (n + 1.0)


class CorrectPosterior:
    name = "correct"

    def __init__(self, n: int):
        self.n = n

    def sample(self, y, M, rng, thin=1):
        return _mvn_draws(rng, _correct_mean(y, self.n), 1.0 / (self.n + 1), M)

    def log_density(self, draws, y):
        return _mvn_log_density(draws, _correct_mean(y, self.n), 1.0 / (self.n + 1))


class PriorOnlyPosterior:
    """Ignores the data entirely and samples from the prior."""

    name = "prior-only"

    def __init__(self, n: int):
        self.n = n

    def sample(self, y, M, rng, thin=1):
        return _mvn_draws(rng, np.zeros(2), 1.0, M)

    def log_density(self, draws, y):
        return _mvn_log_density(draws, np.zeros(2), 1.0)


class IgnoreFirstPosterior:
    """Correct-form posterior computed on y_2..y_n only."""

    name = "ignore-first"

    def __init__(self, n: int):
        self.n = n

    def _mean(self, y):
        rest = y[1:]
        return (self.n - 1) * rest.mean(axis=0) / self.n

    def sample(self, y, M, rng, thin=1):
        return _mvn_draws(rng, self._mean(y), 1.0 / self.n, M)

    def log_density(self, draws, y):
        return _mvn_log_density(draws, self._mean(y), 1.0 / self.n)


class IndependentMarginalsPosterior:
    """Correct marginals but no posterior correlation."""

    name = "independent-marginals"

    def __init__(self, n: int):
        self.n = n

    def sample(self, y, M, rng, thin=1):
        mean = _correct_mean(y, self.n)
        sd = 1.0 / np.sqrt(self.n + 1)
        return mean[None, :] + sd * rng.standard_normal((M, 2))

    def log_density(self, draws, y):
        mean = _correct_mean(y, self.n)
        var = 1.0 / (self.n + 1)
        return (
            -_LOG2PI
            - np.log(var)
            - 0.5 * ((draws - mean[None, :]) ** 2).sum(axis=1) / var
        )


class SmallBiasPosterior:
    """Correct draws shifted by one bias vector drawn per simulation."""

    name = "small-bias"

    def __init__(self, n: int, sd: float = 0.3):
        self.n = n
        self.sd = sd

    def sample(self, y, M, rng, thin=1):
        bias = self.sd * rng.standard_normal(2)
        return _mvn_draws(rng, _correct_mean(y, self.n) + bias, 1.0 / (self.n + 1), M)


class NonMonotonicPosterior:
    """Marginal-CDF warp of the correct posterior, keyed on the data region.

    Each component of a correct draw is pushed through its correct marginal
    posterior normal CDF, warped by u**2 when the grand mean of y is positive
    and by 2u - u**2 otherwise (ties resolve to the second branch), and
    mapped back through the quantile function. The two warps average to the
    identity over the data space, so projections of the mean pass SBC while
    non-monotone quantities do not.
    """

    name = "non-monotonic"

    def __init__(self, n: int):
        self.n = n

    def sample(self, y, M, rng, thin=1):
        mean = _correct_mean(y, self.n)
        sd = 1.0 / np.sqrt(self.n + 1)
        draws = _mvn_draws(rng, mean, 1.0 / (self.n + 1), M)
        u = ndtr((draws - mean[None, :]) / sd)
        w = u * u if grand_mean_positive(y) else u * (2.0 - u)
        return mean[None, :] + sd * ndtri(w)


def make_variant(name: str, n: int, bias_sd: float = 0.3):
    """Posterior family for one variant name."""
    if name == "correct":
        return CorrectPosterior(n)
    if name == "prior-only":
        return PriorOnlyPosterior(n)
    if name == "ignore-first":
        return IgnoreFirstPosterior(n)
    if name == "independent-marginals":
        return IndependentMarginalsPosterior(n)
    if name == "small-bias":
        return SmallBiasPosterior(n, sd=bias_sd)
    if name == "non-monotonic":
        return NonMonotonicPosterior(n)
    raise ValueError(f"unknown gaussian variant {name!r}; known: {', '.join(VARIANT_NAMES)}")


def grand_mean_positive(y: np.ndarray) -> bool:
    """Sign predicate on the mean over all entries of the data matrix."""
    return float(np.mean(y)) > 0.0


def component_mean_positive(component: int):
    """Sign predicate on the mean of one data column (0-based)."""

    def predicate(y: np.ndarray) -> bool:
        return float(np.mean(y[:, component])) > 0.0

    return predicate


def _joint_log_lik(draws: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = y[None, :, :] - draws[:, None, :]
    quad = np.einsum("nki,ij,nkj->nk", diff, _SIGMA_INV, diff)
    return y.shape[0] * (-_LOG2PI - 0.5 * _LOGDET) - 0.5 * quad.sum(axis=1)


def _pointwise_log_lik(draws: np.ndarray, y_k: np.ndarray) -> np.ndarray:
    diff = y_k[None, :] - draws
    quad = np.einsum("ni,ij,nj->n", diff, _SIGMA_INV, diff)
    return -_LOG2PI - 0.5 * _LOGDET - 0.5 * quad


def quantity_library(n: int, variant=None) -> list[TestQuantity]:
    """Test quantities for the bivariate model.

    ``density_ratio`` (correct posterior density over the variant's density)
    is included only when the variant exposes a closed-form ``log_density``;
    requesting it for a density-free variant is an error handled upstream.
    """
    quantities = [
        TestQuantity("mu[1]", lambda d, y: d[:, 0]),
        TestQuantity("mu[2]", lambda d, y: d[:, 1]),
        TestQuantity("sum", lambda d, y: d[:, 0] + d[:, 1]),
        TestQuantity("diff", lambda d, y: d[:, 0] - d[:, 1]),
        TestQuantity("product", lambda d, y: d[:, 0] * d[:, 1]),
        TestQuantity("mvn_log_lik", _joint_log_lik),
        TestQuantity("mvn_log_lik[1]", lambda d, y: _pointwise_log_lik(d, y[0])),
        TestQuantity("mvn_log_lik[2]", lambda d, y: _pointwise_log_lik(d, y[1])),
        TestQuantity("abs_mu1", lambda d, y: np.abs(d[:, 0])),
        TestQuantity("drop_mu1", lambda d, y: np.where(d[:, 0] < 1.0, d[:, 0], d[:, 0] - 5.0)),
    ]
    if variant is not None and hasattr(variant, "log_density"):
        correct = CorrectPosterior(n)

        def ratio(d, y):
            return np.exp(correct.log_density(d, y) - variant.log_density(d, y))

        quantities.append(TestQuantity("density_ratio", ratio))
    return quantities


def default_quantity_names(variant=None) -> list[str]:
    names = [
        "mu[1]",
        "mu[2]",
        "sum",
        "diff",
        "product",
        "mvn_log_lik",
        "mvn_log_lik[1]",
        "mvn_log_lik[2]",
        "abs_mu1",
        "drop_mu1",
    ]
    if variant is not None and hasattr(variant, "log_density"):
        names.append("density_ratio")
    return names
