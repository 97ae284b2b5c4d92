"""Ordered-simplex case study: constrained transforms, MCMC, and the test model.

The model places a symmetric Dirichlet(2, 2, 2, 2) prior on a strictly
increasing simplex of dimension 4 and observes 10 multinomial counts. Three
transform variants build the ordered simplex from unconstrained primitives:
a recursive bounded-vector construction ("min"), a softmax of a positive
ordered vector whose published Jacobian determinant carries a deliberate
off-by-one error in the exponent ("softmax-bad", with "softmax-fixed" the
corrected version), and normalization of a positive ordered gamma vector
("gamma", no Jacobian needed). Sampling is done with an adaptive
random-walk Metropolis sampler run in parallel across simulations; an exact
rejection sampler for the ordered Dirichlet posterior provides an MCMC-free
cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from ..core import SamplerError, TestQuantity, ess

__all__ = [
    "ALPHA",
    "N_TRIALS",
    "DomainError",
    "TransformResult",
    "transform_min",
    "transform_softmax",
    "transform_gamma",
    "log_posterior",
    "RwmConfig",
    "rwm_sample",
    "RwmSimplexFamily",
    "ExactOrderedDirichletFamily",
    "SimplexGenerator",
    "quantity_library",
    "VARIANT_NAMES",
]

ALPHA = np.array([2.0, 2.0, 2.0, 2.0])
N_TRIALS = 10
VARIANT_NAMES = ("min", "softmax-bad", "softmax-fixed", "gamma")

_LOG_DIRICHLET_NORM = float(gammaln(ALPHA.sum()) - gammaln(ALPHA).sum())


class DomainError(ValueError):
    """Input outside the transform's open domain."""


@dataclass(frozen=True)
class TransformResult:
    x: np.ndarray
    log_jacobian: float


def transform_min(u: np.ndarray) -> TransformResult:
    """Ordered simplex from a bounded vector via the recursive construction.

    Starting with b=0 and remaining mass r=1, element i takes b + r*u_i/(K+1-i)
    and shrinks the remainder by (1 - u_i); the last element absorbs what is
    left. The Jacobian is triangular, so log|det J| = sum_i log(r_i/(K+1-i)).
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size < 1:
        raise DomainError("u must be a vector of length K-1 >= 1")
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise DomainError("all entries of u must lie strictly in (0, 1)")
    K = u.size + 1
    x = np.empty(K)
    b, r = 0.0, 1.0
    log_jac = 0.0
    for i in range(K - 1):
        denom = K - i  # K + 1 - (i + 1) with zero-based i
        x[i] = b + r * u[i] / denom
        log_jac += np.log(r) - np.log(denom)
        b = x[i]
        r = r * (1.0 - u[i])
    x[K - 1] = b + r
    return TransformResult(x=x, log_jacobian=float(log_jac))


def transform_softmax(v: np.ndarray, fixed: bool) -> TransformResult:
    """Ordered simplex via softmax of (0, v) for a positive ordered vector v.

    With s = 1 + sum(exp(v)) the simplex is (1/s, exp(v_1)/s, ...). The
    log-Jacobian is sum(v) - (K-1)*log(s) for the published determinant and
    sum(v) - K*log(s) for the corrected one; ``fixed`` selects which.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise DomainError("v must be a vector of length K-1 >= 1")
    if v[0] <= 0.0 or np.any(np.diff(v) <= 0.0):
        raise DomainError("v must be strictly positive and strictly increasing")
    K = v.size + 1
    ev = np.exp(v)
    s = 1.0 + ev.sum()
    x = np.concatenate([[1.0 / s], ev / s])
    exponent = K if fixed else K - 1
    return TransformResult(x=x, log_jacobian=float(v.sum() - exponent * np.log(s)))


def transform_gamma(w: np.ndarray) -> np.ndarray:
    """Ordered simplex by normalizing a positive ordered vector; no Jacobian.

    Normalized ordered gamma variates are ordered Dirichlet variates, so the
    prior is placed on w directly and the map itself needs no adjustment.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise DomainError("w must be a vector of length K >= 2")
    if w[0] <= 0.0 or np.any(np.diff(w) <= 0.0):
        raise DomainError("w must be strictly positive and strictly increasing")
    return w / w.sum()


def dirichlet_log_density(x: np.ndarray, alpha: np.ndarray = ALPHA) -> np.ndarray:
    x = np.atleast_2d(x)
    return _LOG_DIRICHLET_NORM + ((alpha - 1.0) * np.log(x)).sum(axis=1)


def multinomial_log_lik(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=float)
    norm = gammaln(y.sum() + 1.0) - gammaln(y + 1.0).sum()
    return norm + (y * np.log(x)).sum(axis=1)


def unconstrained_dim(variant: str) -> int:
    if variant not in VARIANT_NAMES:
        raise ValueError(f"unknown simplex variant {variant!r}; known: {', '.join(VARIANT_NAMES)}")
    return 4 if variant == "gamma" else 3


def _log_posterior_batch(variant: str, z: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized posterior log density over rows of z, with the implied x.

    Rows that overflow or leave the domain get -inf (rejected by the
    sampler) and an x row of NaN.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    B = z.shape[0]
    K = 4
    lp = np.full(B, -np.inf)
    xs = np.full((B, K), np.nan)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if variant == "min":
            u = expit(z)
            ok = np.all((u > 0.0) & (u < 1.0), axis=1)
            base = np.where(ok, np.log(u * (1.0 - u)).sum(axis=1), -np.inf)
            # unrolled recursion, vectorized across rows
            b = np.zeros(B)
            r = np.ones(B)
            log_jac = np.zeros(B)
            x = np.empty((B, K))
            for i in range(K - 1):
                denom = K - i
                x[:, i] = b + r * u[:, i] / denom
                log_jac += np.log(r) - np.log(denom)
                b = x[:, i]
                r = r * (1.0 - u[:, i])
            x[:, K - 1] = b + r
            ll = _model_log_density(x, ys)
            lp = np.where(ok, base + log_jac + ll, -np.inf)
            xs = x
        elif variant in ("softmax-bad", "softmax-fixed"):
            ez = np.exp(z)
            v = np.cumsum(ez, axis=1)
            ok = np.all(np.isfinite(v), axis=1) & np.all(ez > 0.0, axis=1)
            base = z.sum(axis=1)
            ev = np.exp(v)
            s = 1.0 + ev.sum(axis=1)
            ok &= np.isfinite(s)
            x = np.concatenate([1.0 / s[:, None], ev / s[:, None]], axis=1)
            exponent = K if variant == "softmax-fixed" else K - 1
            log_jac = v.sum(axis=1) - exponent * np.log(s)
            ll = _model_log_density(x, ys)
            lp = np.where(ok, base + log_jac + ll, -np.inf)
            xs = x
        else:  # gamma
            ez = np.exp(z)
            w = np.cumsum(ez, axis=1)
            ok = np.all(np.isfinite(w), axis=1) & np.all(ez > 0.0, axis=1)
            base = z.sum(axis=1)
            x = w / w.sum(axis=1)[:, None]
            prior = ((ALPHA - 1.0) * np.log(w) - w).sum(axis=1)
            ll = _multinomial_rows(x, ys)
            lp = np.where(ok, base + prior + ll, -np.inf)
            xs = x
    lp = np.where(np.isfinite(lp), lp, -np.inf)
    return lp, xs


def _multinomial_rows(x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    norm = gammaln(ys.sum(axis=1) + 1.0) - gammaln(ys + 1.0).sum(axis=1)
    return norm + (ys * np.log(x)).sum(axis=1)


def _model_log_density(x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return dirichlet_log_density(x, ALPHA) + _multinomial_rows(x, ys)


def log_posterior(variant: str, z: np.ndarray, y: np.ndarray) -> float:
    """Posterior log density of the embedded model on the unconstrained scale.

    Adds the base-transform log-Jacobian (logit for the bounded vector,
    log-gap for positive ordered vectors), the variant's own log-Jacobian,
    and the model terms. Overflow maps to -inf so the sampler rejects.
    """
    unconstrained_dim(variant)
    lp, _ = _log_posterior_batch(variant, np.asarray(z, float)[None, :], np.asarray(y, float)[None, :])
    return float(lp[0])


@dataclass(frozen=True)
class RwmConfig:
    """Adaptive random-walk Metropolis settings.

    ``retained`` is the number of post-warmup iterations kept before
    thinning; None means exactly M * thin at sampling time.
    """

    warmup: int = 2000
    retained: int | None = None
    thin: int = 20
    init_step: float = 0.5
    target_accept: float = 0.3

    def __post_init__(self) -> None:
        if self.warmup < 100:
            raise ValueError("warmup must be at least 100")
        if self.thin < 1 or self.init_step <= 0.0:
            raise ValueError("thin must be >= 1 and init_step positive")


class _ChainState:
    """Per-chain sampler state: position, step scale, proposal Cholesky."""

    def __init__(self, z0: np.ndarray, lp: np.ndarray, init_step: float):
        B, dim = z0.shape
        self.z = z0.copy()
        self.lp = lp
        self.log_step = np.full(B, np.log(init_step))
        self.chol = np.tile(np.eye(dim), (B, 1, 1))

    def select(self, idx: np.ndarray) -> "_ChainState":
        out = object.__new__(_ChainState)
        out.z = self.z[idx]
        out.lp = self.lp[idx]
        out.log_step = self.log_step[idx]
        out.chol = self.chol[idx]
        return out


def _metropolis_block(
    log_density_batch,
    state: _ChainState,
    normals: np.ndarray,
    uniforms: np.ndarray,
    config: RwmConfig,
    warmup: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance B chains through one block of iterations, in lockstep.

    The first ``warmup`` iterations adapt the global step scale toward the
    target acceptance and, from a quarter of the warmup onward, a per-chain
    proposal covariance (through its Cholesky factor). Iterations after
    ``warmup`` run with the kernel frozen and are returned along with the
    per-chain acceptance counts. Pass warmup=0 to extend a frozen chain.
    """
    B, T, dim = normals.shape
    keep = np.empty((B, T - warmup, dim))
    accepts = np.zeros(B, dtype=int)
    adapt_from = warmup // 4
    mean = state.z.copy()
    cov_acc = np.zeros((B, dim, dim))
    count = 0
    for t in range(T):
        direction = np.einsum("bij,bj->bi", state.chol, normals[:, t, :])
        prop = state.z + np.exp(state.log_step)[:, None] * direction
        lp_prop = log_density_batch(prop)
        with np.errstate(over="ignore"):
            alpha = np.exp(np.minimum(0.0, lp_prop - state.lp))
        alpha = np.where(np.isfinite(lp_prop), alpha, 0.0)
        take = uniforms[:, t] < alpha
        state.z = np.where(take[:, None], prop, state.z)
        state.lp = np.where(take, lp_prop, state.lp)
        if t < warmup:
            state.log_step += (t + 1.0) ** (-0.6) * (alpha - config.target_accept)
            if t >= adapt_from:
                count += 1
                delta = state.z - mean
                mean += delta / count
                cov_acc += np.einsum("bi,bj->bij", state.z - mean, delta)
                if count >= 20 * dim and count % 100 == 0:
                    cov = cov_acc / count + 1e-8 * np.eye(dim)
                    try:
                        state.chol = np.linalg.cholesky(cov)
                    except np.linalg.LinAlgError:
                        pass
        else:
            keep[:, t - warmup, :] = state.z
            accepts += take
    return keep, accepts


def rwm_sample(
    log_density,
    dim: int,
    config: RwmConfig,
    rng: np.random.Generator,
    M: int = 100,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, float, float]:
    """Adaptive Gaussian-proposal Metropolis on one target.

    Adapts the proposal (global scale and covariance) toward the target
    acceptance during warmup, keeps every ``thin``-th post-warmup state until
    M draws accumulate, and reports the post-warmup acceptance rate plus the
    minimum effective sample size across dimensions of the unthinned
    post-warmup chain. Zero post-warmup acceptance raises
    :class:`SamplerError`.
    """
    retained = config.retained if config.retained is not None else M * config.thin
    if retained < M * config.thin:
        raise ValueError("retained must cover M * thin iterations")
    T = config.warmup + retained
    z0 = np.zeros((1, dim)) if init is None else np.asarray(init, float)[None, :]

    def batch(zs: np.ndarray) -> np.ndarray:
        return np.array([log_density(row) for row in zs])

    lp0 = batch(z0)
    if not np.all(np.isfinite(lp0)):
        raise SamplerError("log density not finite at the initial point")
    state = _ChainState(z0, lp0, config.init_step)
    normals = rng.standard_normal((1, T, dim))
    uniforms = rng.uniform(size=(1, T))
    keep, accepts = _metropolis_block(batch, state, normals, uniforms, config, config.warmup)
    if accepts[0] == 0:
        raise SamplerError("zero acceptance after warmup")
    chain = keep[0]
    draws = chain[config.thin - 1 :: config.thin][:M]
    ess_min = min(ess(chain[:, d]).ess for d in range(dim))
    return draws, float(accepts[0] / retained), float(ess_min)


class RwmSimplexFamily:
    """Posterior family sampling the embedded model by adaptive RWM.

    Batched across simulations: every simulation keeps its own stream,
    proposal noise is drawn per simulation in fixed-size blocks, and chains
    step in lockstep, so results do not depend on how simulations are
    grouped. After warmup each chain runs a base block of M * thin
    iterations; chains whose minimum effective sample size is still below
    ``min_ess`` are extended (kernel frozen) in further blocks, and the M
    returned draws are re-thinned evenly over the whole kept chain. A chain
    with zero post-warmup acceptance, or still short of the target after
    ``max_extensions`` blocks, fails with :class:`SamplerError` and is
    excluded upstream.
    """

    def __init__(
        self,
        variant: str,
        config: RwmConfig | None = None,
        min_ess: float = 100.0,
        max_extensions: int = 9,
    ):
        self.variant = variant
        self.dim = unconstrained_dim(variant)
        self.config = config if config is not None else RwmConfig()
        self.min_ess = min_ess
        self.max_extensions = max_extensions
        self.name = variant

    def sample(self, data, M, rng, thin=None):
        out = self.sample_batch([data], M, [rng], thin)
        if isinstance(out[0], SamplerError):
            raise out[0]
        return out[0]

    def _ess_min(self, chain: np.ndarray) -> float:
        return min(ess(chain[:, d]).ess for d in range(self.dim))

    def sample_batch(self, datas, M, streams, thin=None):
        config = self.config
        if thin is not None and thin != config.thin:
            config = RwmConfig(
                warmup=config.warmup,
                retained=config.retained,
                thin=thin,
                init_step=config.init_step,
                target_accept=config.target_accept,
            )
        block = config.retained if config.retained is not None else M * config.thin
        if block < M * config.thin:
            raise ValueError("retained must cover M * thin iterations")
        B = len(datas)
        ys = np.asarray(datas, dtype=float)

        def batch_for(rows: np.ndarray):
            def batch(zs: np.ndarray) -> np.ndarray:
                lp, _ = _log_posterior_batch(self.variant, zs, rows)
                return lp

            return batch

        z0 = np.zeros((B, self.dim))
        state = _ChainState(z0, batch_for(ys)(z0), config.init_step)
        T0 = config.warmup + block
        normals = np.empty((B, T0, self.dim))
        uniforms = np.empty((B, T0))
        for b, rng in enumerate(streams):
            normals[b] = rng.standard_normal((T0, self.dim))
            uniforms[b] = rng.uniform(size=T0)
        keep, accepts = _metropolis_block(
            batch_for(ys), state, normals, uniforms, config, config.warmup
        )
        chains = [keep[b] for b in range(B)]
        failed: dict[int, SamplerError] = {}
        for b in range(B):
            if accepts[b] == 0:
                failed[b] = SamplerError("zero acceptance after warmup")
        pending = [
            b for b in range(B) if b not in failed and self._ess_min(chains[b]) < self.min_ess
        ]
        for _ in range(self.max_extensions):
            if not pending:
                break
            idx = np.asarray(pending)
            ext_normals = np.empty((idx.size, block, self.dim))
            ext_uniforms = np.empty((idx.size, block))
            for j, b in enumerate(idx):
                ext_normals[j] = streams[b].standard_normal((block, self.dim))
                ext_uniforms[j] = streams[b].uniform(size=block)
            sub = state.select(idx)
            kept, acc = _metropolis_block(
                batch_for(ys[idx]), sub, ext_normals, ext_uniforms, config, warmup=0
            )
            state.z[idx] = sub.z
            state.lp[idx] = sub.lp
            still = []
            for j, b in enumerate(idx):
                chains[b] = np.concatenate([chains[b], kept[j]], axis=0)
                accepts[b] += acc[j]
                if self._ess_min(chains[b]) < self.min_ess:
                    still.append(b)
            pending = still
        for b in pending:
            failed[b] = SamplerError(
                f"min ESS below {self.min_ess:g} after {self.max_extensions} chain extensions"
            )
        out: list[np.ndarray | SamplerError] = []
        for b in range(B):
            if b in failed:
                out.append(failed[b])
                continue
            chain = chains[b]
            stride = chain.shape[0] // M
            picks = chain[stride - 1 :: stride][:M]
            _, xs = _log_posterior_batch(self.variant, picks, np.tile(ys[b], (M, 1)))
            out.append(xs)
        return out


class ExactOrderedDirichletFamily:
    """Exact posterior draws by rejection: Dirichlet(alpha + y) kept if ordered.

    The model's posterior is the Dirichlet(alpha + y) density restricted to
    the strictly increasing region, so rejection from the unordered
    posterior is exact. Fails if the ordered region is too improbable.
    """

    name = "exact-min"

    def sample(self, data, M, rng, thin=1):
        alpha_post = ALPHA + np.asarray(data, dtype=float)
        out = np.empty((M, 4))
        filled = 0
        for _ in range(400):
            draws = rng.dirichlet(alpha_post, size=512)
            good = draws[np.all(np.diff(draws, axis=1) > 0.0, axis=1)]
            take = min(M - filled, good.shape[0])
            out[filled : filled + take] = good[:take]
            filled += take
            if filled == M:
                return out
        raise SamplerError("ordered region too improbable for rejection sampling")


@dataclass(frozen=True)
class SimplexGenerator:
    """Sorted symmetric-Dirichlet prior draw plus multinomial counts."""

    def generate(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        while True:
            x = np.sort(rng.dirichlet(ALPHA))
            if np.all(np.diff(x) > 0.0):
                break
        y = rng.multinomial(N_TRIALS, x)
        return x, y


def quantity_library() -> list[TestQuantity]:
    return [
        TestQuantity("x[1]", lambda d, y: d[:, 0]),
        TestQuantity("x[2]", lambda d, y: d[:, 1]),
        TestQuantity("x[3]", lambda d, y: d[:, 2]),
        TestQuantity("x[4]", lambda d, y: d[:, 3]),
        TestQuantity("log_lik", lambda d, y: multinomial_log_lik(d, y)),
        TestQuantity("log_prior", lambda d, y: dirichlet_log_density(d)),
    ]
