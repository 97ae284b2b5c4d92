"""Uniformity diagnostics on SBC rank sets.

The workhorse is the gamma statistic: twice the most extreme pointwise
binomial tail probability of the rank ECDF against the uniform reference.
Its null distribution (uniform ranks) is estimated once per (S, M) by Monte
Carlo from a fixed calibration stream and cached, so the reported threshold
is reproducible across runs and shared across seeds, quantities and variants.
All gamma arithmetic happens in log space; see :mod:`sbc_lab.binomial`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Mapping

import numpy as np
from scipy import stats

from .binomial import log_binom_pmf, log_binom_tables
from .core import SbcRun
from .rng import stream

__all__ = [
    "NULL_CALIBRATION_SEED",
    "RankSet",
    "GammaResult",
    "EvolutionTrace",
    "EcdfBand",
    "ChiSquareResult",
    "gamma_statistic",
    "log_gamma_statistic",
    "gamma_null_quantile",
    "log_gamma_null_quantile_cached",
    "gamma_result",
    "evolution_table",
    "evolution_trace",
    "ecdf_band",
    "split_ranks",
    "chi_square_uniformity",
]

# Seed of the dedicated stream namespace behind cached null quantiles and
# bands. A constant (rather than the experiment seed) keeps report files
# byte-reproducible and lets every run share one null table per (S, M).
NULL_CALIBRATION_SEED = 0x5BC1AB

_LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class RankSet:
    """Multiset of ranks on {0..max_rank} from one quantity."""

    ranks: np.ndarray
    max_rank: int

    def __post_init__(self) -> None:
        ranks = np.asarray(self.ranks, dtype=int)
        object.__setattr__(self, "ranks", ranks)
        if ranks.size and (ranks.min() < 0 or ranks.max() > self.max_rank):
            raise ValueError("ranks must lie in [0, max_rank]")

    @property
    def S(self) -> int:
        return int(self.ranks.size)

    @classmethod
    def from_run(cls, run: SbcRun, quantity: str) -> "RankSet":
        return cls(ranks=run.ranks(quantity), max_rank=run.M)


@dataclass(frozen=True)
class GammaResult:
    quantity: str
    S: int
    M: int
    gamma: float
    gamma_bar: float
    log_gamma: float
    log_gamma_bar: float

    @property
    def log_ratio(self) -> float:
        return self.log_gamma - self.log_gamma_bar

    @property
    def rejects(self) -> bool:
        return self.log_ratio < 0.0


@dataclass(frozen=True)
class EvolutionTrace:
    """log(gamma/gamma_bar) recomputed on growing simulation prefixes."""

    quantity: str
    n_sims: np.ndarray
    log_ratio: np.ndarray

    def first_rejection(self) -> int | None:
        """Smallest prefix length with log_ratio < 0, or None."""
        below = np.nonzero(self.log_ratio < 0.0)[0]
        return int(self.n_sims[below[0]]) if below.size else None

    @property
    def final_log_ratio(self) -> float:
        return float(self.log_ratio[-1])


def _rank_counts(ranks: np.ndarray, M: int) -> np.ndarray:
    """R[i-1] = #{ranks < i} for i = 1..M+1."""
    return np.cumsum(np.bincount(ranks, minlength=M + 1))


def _z_points(M: int) -> np.ndarray:
    return np.arange(1, M + 2, dtype=float) / (M + 1)


def _masked_logsumexp(lp: np.ndarray, mask: np.ndarray) -> np.ndarray:
    shifted = np.where(mask, lp, -np.inf)
    mx = shifted.max(axis=1)
    finite = mx > -np.inf
    out = np.full(lp.shape[0], -np.inf)
    if np.any(finite):
        with np.errstate(invalid="ignore"):
            terms = np.exp(shifted[finite] - mx[finite, None])
        out[finite] = mx[finite] + np.log(terms.sum(axis=1))
    return out


def _log_gamma_from_counts(R: np.ndarray, S: int, M: int) -> float:
    """Exact log gamma for one rank-count vector, no precomputed tables."""
    z = _z_points(M)
    lp = log_binom_pmf(S, z)
    k = np.arange(S + 1)[None, :]
    log_cdf = _masked_logsumexp(lp, k <= R[:, None])
    log_ge = _masked_logsumexp(lp, k >= R[:, None])
    return _LOG2 + float(np.minimum(log_cdf, log_ge).min())


def log_gamma_statistic(rank_set: RankSet) -> float:
    """Log of the gamma statistic, exact even when gamma underflows."""
    if rank_set.S < 1:
        raise ValueError("rank set must contain at least one rank")
    R = _rank_counts(rank_set.ranks, rank_set.max_rank)
    return _log_gamma_from_counts(R, rank_set.S, rank_set.max_rank)


def gamma_statistic(rank_set: RankSet) -> float:
    """Likelihood of the most extreme ECDF point under uniform ranks.

    2 * min over i in {1..M+1} of min(Bin(R_i | S, z_i), 1 - Bin(R_i - 1 | S, z_i))
    with z_i = i / (M + 1) and R_i the count of ranks below i. May underflow
    to 0.0 in extreme cases; use :func:`log_gamma_statistic` then.
    """
    return float(np.exp(log_gamma_statistic(rank_set)))


@lru_cache(maxsize=4)
def _cached_tables(S: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    return log_binom_tables(S, _z_points(M))


def _log_gammas_for_matrix(ranks: np.ndarray, M: int) -> np.ndarray:
    """Log gamma of each row of an (B, S) rank matrix, via shared tables."""
    B, S = ranks.shape
    log_cdf, log_ge = _cached_tables(S, M)
    offsets = np.arange(B) * (M + 1)
    counts = np.bincount(
        (ranks + offsets[:, None]).ravel(), minlength=B * (M + 1)
    ).reshape(B, M + 1)
    R = np.cumsum(counts, axis=1)
    cols = np.arange(M + 1)[None, :]
    term_lo = log_cdf[cols, R]
    term_hi = log_ge[cols, R]
    return _LOG2 + np.minimum(term_lo, term_hi).min(axis=1)


def gamma_null_quantile(
    S: int, M: int, level: float, n_mc: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo quantile of gamma under uniform ranks, deterministic given rng."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    ranks = rng.integers(0, M + 1, size=(n_mc, S))
    log_gammas = _log_gammas_for_matrix(ranks, M)
    return float(np.exp(np.quantile(log_gammas, level)))


_null_cache: dict[tuple[int, int, int], np.ndarray] = {}
_null_lock = threading.Lock()


def _null_log_gammas(S: int, M: int, n_mc: int) -> np.ndarray:
    key = (S, M, n_mc)
    got = _null_cache.get(key)
    if got is None:
        rng = stream(NULL_CALIBRATION_SEED, (S << 21) ^ M)
        ranks = rng.integers(0, M + 1, size=(n_mc, S))
        got = np.sort(_log_gammas_for_matrix(ranks, M))
        with _null_lock:
            _null_cache.setdefault(key, got)
    return got


def log_gamma_null_quantile_cached(
    S: int, M: int, level: float = 0.05, n_mc: int = 5000
) -> float:
    """Log of the null quantile from the fixed calibration stream, cached."""
    return float(np.quantile(_null_log_gammas(S, M, n_mc), level))


def gamma_result(
    rank_set: RankSet, quantity: str = "", level: float = 0.05, n_mc: int = 5000
) -> GammaResult:
    """Gamma statistic of a rank set with its cached null threshold."""
    log_gamma = log_gamma_statistic(rank_set)
    log_bar = log_gamma_null_quantile_cached(rank_set.S, rank_set.max_rank, level, n_mc)
    return GammaResult(
        quantity=quantity,
        S=rank_set.S,
        M=rank_set.max_rank,
        gamma=float(np.exp(log_gamma)),
        gamma_bar=float(np.exp(log_bar)),
        log_gamma=log_gamma,
        log_gamma_bar=log_bar,
    )


def _prefix_lengths(S: int, step: int) -> list[int]:
    lengths = list(range(step, S + 1, step))
    if not lengths or lengths[-1] != S:
        lengths.append(S)
    return lengths


def evolution_table(
    ranks_by_quantity: Mapping[str, np.ndarray],
    M: int,
    step: int = 10,
    level: float = 0.05,
    n_mc: int = 5000,
) -> list[EvolutionTrace]:
    """Evolution traces for several quantities over shared prefixes.

    For each prefix length the observed log gamma is compared against the
    cached null quantile for that prefix size; log_ratio < 0 means rejection
    of uniformity at ``level``. Prefix lengths run step, 2*step, ..., S with
    S always included, and the binomial work per prefix is shared across
    quantities, so prefer this over per-quantity calls for wide rank tables.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    items = [(q, np.asarray(r, dtype=int)) for q, r in ranks_by_quantity.items()]
    if not items:
        return []
    S = items[0][1].size
    if any(r.size != S for _, r in items):
        raise ValueError("all quantities must have the same number of ranks")
    lengths = _prefix_lengths(S, step)
    z = _z_points(M)
    cols = np.arange(M + 1)
    out = {q: np.empty(len(lengths)) for q, _ in items}
    for j, n in enumerate(lengths):
        lp = log_binom_pmf(n, z)
        k = np.arange(n + 1)[None, :]
        log_bar = log_gamma_null_quantile_cached(n, M, level, n_mc)
        for q, ranks in items:
            R = _rank_counts(ranks[:n], M)
            log_cdf = _masked_logsumexp(lp, k <= R[:, None])
            log_ge = _masked_logsumexp(lp, k >= R[:, None])
            log_gamma = _LOG2 + float(np.minimum(log_cdf, log_ge).min())
            out[q][j] = log_gamma - log_bar
    n_sims = np.asarray(lengths, dtype=int)
    return [EvolutionTrace(quantity=q, n_sims=n_sims, log_ratio=out[q]) for q, _ in items]


def evolution_trace(
    ranks: np.ndarray,
    M: int,
    quantity: str = "",
    step: int = 10,
    level: float = 0.05,
    n_mc: int = 5000,
) -> EvolutionTrace:
    """Evolution trace of one quantity; see :func:`evolution_table`."""
    trace = evolution_table({quantity: ranks}, M, step=step, level=level, n_mc=n_mc)[0]
    return trace


@dataclass(frozen=True)
class EcdfBand:
    """Simultaneous bounds on rank ECDF counts at i = 1..M+1."""

    S: int
    M: int
    coverage: float
    pointwise_level: float
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, rank_set: RankSet) -> bool:
        R = _rank_counts(rank_set.ranks, self.M)
        return bool(np.all(R >= self.lower) and np.all(R <= self.upper))


def _pointwise_bounds(S: int, z: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    lower = stats.binom.ppf(alpha / 2.0, S, z)
    upper = stats.binom.ppf(1.0 - alpha / 2.0, S, z)
    return np.clip(lower, 0, S).astype(int), np.clip(upper, 0, S).astype(int)


def ecdf_band(
    S: int,
    M: int,
    coverage: float = 0.95,
    n_mc: int = 5000,
    rng: np.random.Generator | None = None,
) -> EcdfBand:
    """Simultaneous prediction band for uniform rank ECDF counts.

    Bisects the pointwise binomial level alpha until the per-point intervals
    jointly contain a uniform rank ECDF with probability ``coverage`` (under
    the Monte-Carlo reference draws). Returns per-point count bounds.
    """
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must lie strictly between 0 and 1")
    z = _z_points(M)
    if coverage >= 1.0 - 0.5 / n_mc:
        # beyond Monte-Carlo resolution only the sure box has the coverage
        return EcdfBand(
            S=S,
            M=M,
            coverage=coverage,
            pointwise_level=0.0,
            lower=np.zeros(M + 1, dtype=int),
            upper=np.full(M + 1, S, dtype=int),
        )
    if rng is None:
        rng = stream(NULL_CALIBRATION_SEED, ((S << 21) ^ M) + (1 << 55))
    ranks = rng.integers(0, M + 1, size=(n_mc, S))
    offsets = np.arange(n_mc) * (M + 1)
    counts = np.bincount((ranks + offsets[:, None]).ravel(), minlength=n_mc * (M + 1))
    R = np.cumsum(counts.reshape(n_mc, M + 1), axis=1)

    def joint_coverage(alpha: float) -> float:
        lo, hi = _pointwise_bounds(S, z, alpha)
        inside = np.all((R >= lo[None, :]) & (R <= hi[None, :]), axis=1)
        return float(inside.mean())

    lo_a, hi_a = 0.0, 1.0 - 1e-9  # alpha = 0 degenerates to the full box [0, S]
    for _ in range(60):
        mid = 0.5 * (lo_a + hi_a)
        if joint_coverage(mid) >= coverage:
            lo_a = mid  # wider alpha still covers; tighten the band
        else:
            hi_a = mid
    alpha_star = lo_a
    lower, upper = _pointwise_bounds(S, z, alpha_star)
    return EcdfBand(
        S=S, M=M, coverage=coverage, pointwise_level=alpha_star, lower=lower, upper=upper
    )


def split_ranks(
    run: SbcRun, predicate: Callable[[Any], bool], quantity: str
) -> tuple[RankSet, RankSet]:
    """Partition one quantity's ranks by a predicate on the dataset.

    Returns (ranks where predicate holds, ranks where it does not). Either
    part may be empty; gamma and chi-square evaluation then must be skipped
    for that part by the caller.
    """
    hit: list[int] = []
    miss: list[int] = []
    for record, row in run.results():
        side = hit if predicate(record.data) else miss
        for stat in row:
            if stat.quantity == quantity:
                side.append(stat.rank)
    return (
        RankSet(ranks=np.asarray(hit, dtype=int), max_rank=run.M),
        RankSet(ranks=np.asarray(miss, dtype=int), max_rank=run.M),
    )


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    dof: int
    low_expected: bool


def chi_square_uniformity(rank_set: RankSet, n_bins: int | None = None) -> ChiSquareResult:
    """Chi-square test of the ranks against uniform{0..M}.

    Cells are contiguous, as equal as possible in width over the M+1 rank
    values (equal-probability cells). ``low_expected`` flags any expected
    cell count below 5.
    """
    M = rank_set.max_rank
    S = rank_set.S
    if S < 1:
        raise ValueError("rank set must contain at least one rank")
    if n_bins is None:
        n_bins = default_chi2_bins(S, M)
    n_bins = int(min(max(n_bins, 1), M + 1))
    base, extra = divmod(M + 1, n_bins)
    sizes = np.full(n_bins, base, dtype=int)
    sizes[:extra] += 1
    edges = np.concatenate([[0], np.cumsum(sizes)])
    counts = np.bincount(rank_set.ranks, minlength=M + 1)
    observed = np.add.reduceat(counts, edges[:-1]).astype(float)
    expected = S * sizes / (M + 1)
    statistic, p_value = stats.chisquare(observed, f_exp=expected)
    return ChiSquareResult(
        statistic=float(statistic),
        p_value=float(p_value),
        dof=n_bins - 1,
        low_expected=bool(np.any(expected < 5.0)),
    )


def default_chi2_bins(S: int, M: int) -> int:
    """Finest equal-probability binning keeping expected counts at 5 or more."""
    if S >= 5 * (M + 1):
        return M + 1
    return max(2, min(M + 1, S // 5))
