"""Metropolis-Hastings in the active and inactive variables.

The active chain targets ``exp(-g(y)) * rho(y)`` where ``g`` is the quadratic
surrogate of the misfit and ``rho`` the KDE of the prior pushed onto the
active variable. For every effective active sample, chains in the inactive
variable target the uniform prior restricted to ``W1 y + W2 z`` in the box.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .active_subspace import ActiveSubspace
from .prior import PriorBox

log = logging.getLogger(__name__)

ESS_CUTOFF = 0.05


class NoFeasibleStart(RuntimeError):
    """No point of the prior box projects onto the given active sample."""


@dataclass(frozen=True)
class ChainConfig:
    n_steps: int
    burn_in: int = 0
    proposal_cov: float | np.ndarray = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if not 0 <= self.burn_in < self.n_steps:
            raise ValueError("burn_in must lie in [0, n_steps)")
        cov = np.asarray(self.proposal_cov, dtype=float)
        if cov.ndim == 0 and not cov > 0:
            raise ValueError("proposal variance must be positive")
        if cov.ndim == 1 and np.any(~(cov > 0)):
            raise ValueError("proposal variances must be positive")

    def proposal_factor(self, dim: int) -> np.ndarray:
        """Lower Cholesky factor of the proposal covariance."""
        cov = np.asarray(self.proposal_cov, dtype=float)
        if cov.ndim == 0:
            return math.sqrt(float(cov)) * np.eye(dim)
        if cov.ndim == 1:
            return np.diag(np.sqrt(cov))
        return np.linalg.cholesky(cov)


@dataclass
class ChainResult:
    samples: np.ndarray
    acceptance_rate: float
    autocorrelation: np.ndarray
    ess: np.ndarray
    burn_in: int = 0

    @property
    def min_ess(self) -> float:
        return float(np.min(self.ess))


@dataclass
class PosteriorSampleSet:
    x_normalized: np.ndarray
    x_physical: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_active: int = 0
    n_inactive: int = 0
    skipped: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------
def autocorrelation(x, max_lag: int | None = None) -> np.ndarray:
    """Normalised autocorrelation along the last axis via FFT.

    Constant series give ``r_0 = 1`` and zeros elsewhere.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(xc, n=size, axis=-1)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), n=size, axis=-1)[..., :n]
    var = acov[..., :1]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(var > 0, acov / np.where(var > 0, var, 1.0), 0.0)
    r[..., 0] = 1.0
    if max_lag is not None:
        r = r[..., : max_lag + 1]
    return r


def _truncated_sum(r: np.ndarray, n: int) -> np.ndarray:
    """Sum of ``r_1 .. r_{J-1}``, J the first lag with ``r_J < 0.05`` (capped at n/3)."""
    cap = max(1, n // 3)
    lags = r[..., 1 : cap + 1]
    below = lags < ESS_CUTOFF
    first = np.where(below.any(axis=-1), below.argmax(axis=-1), lags.shape[-1])
    mask = np.arange(lags.shape[-1]) < first[..., None]
    return (lags * mask).sum(axis=-1)


def ess(series, j_max: int | None = None) -> float:
    """Effective sample size ``N / (1 + 2 sum_j r_j)``, clamped to ``[1, N]``.

    With ``j_max=None`` the sum stops before the first lag whose
    autocorrelation drops below 0.05, and never extends past ``N/3``. A
    constant series has ESS 1.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 10:
        raise ValueError("series must have at least 10 entries")
    if np.all(x == x[0]):
        return 1.0
    r = autocorrelation(x)
    s = r[1 : j_max + 1].sum() if j_max is not None else float(_truncated_sum(r, n))
    return float(np.clip(n / (1.0 + 2.0 * s), 1.0, n))


def ess_batch(x: np.ndarray) -> np.ndarray:
    """ESS of every series along the last axis of ``x`` (same rule as ``ess``)."""
    n = x.shape[-1]
    r = autocorrelation(x)
    out = np.clip(n / (1.0 + 2.0 * _truncated_sum(r, n)), 1.0, n)
    const = np.all(x == x[..., :1], axis=-1)
    return np.where(const, 1.0, out)


def thin_effective(chain, ess_min: int) -> np.ndarray:
    """Equally spaced subsample of ``ess_min`` entries ending at the last sample."""
    chain = np.asarray(chain)
    n = len(chain)
    m = int(ess_min)
    if not 1 <= m <= n:
        raise ValueError(f"cannot take {m} samples from a chain of length {n}")
    idx = n - 1 - (np.arange(m)[::-1] * n) // m
    return chain[idx]


def _diagnostics(samples: np.ndarray, max_lag: int):
    series = samples.T
    r = autocorrelation(series, max_lag=min(max_lag, samples.shape[0] - 1))
    e = np.array([ess(s) for s in series]) if samples.shape[0] >= 10 else np.ones(samples.shape[1])
    return r, e


# ---------------------------------------------------------------------------
# Active chain
# ---------------------------------------------------------------------------
def mh_active(surface, density, cfg: ChainConfig, y0=None, rng=None, max_lag: int = 200,
              block: int = 65536) -> ChainResult:
    """Random-walk Metropolis-Hastings on ``exp(-surface(y)) * density(y)``.

    Proposals where ``density`` vanishes are rejected outright.
    """
    k = surface.k
    if getattr(density, "k", k) != k:
        raise ValueError(f"surrogate dimension {k} does not match density dimension {density.k}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    L = cfg.proposal_factor(k)
    y = np.zeros(k) if y0 is None else np.asarray(y0, dtype=float).copy()

    def log_target(v):
        rho = density(v)
        if not rho > 0:
            return -math.inf
        return -surface(v) + math.log(rho)

    lt = log_target(y)
    if lt == -math.inf:
        raise ValueError("initial point has zero density")
    n = cfg.n_steps
    chain = np.empty((n, k))
    chain[0] = y
    accepted = 0
    for start in range(1, n, block):
        stop = min(start + block, n)
        steps = rng.standard_normal((stop - start, k)) @ L.T
        log_u = np.log(rng.uniform(size=stop - start))
        for i in range(stop - start):
            prop = y + steps[i]
            lt_prop = log_target(prop)
            # Accept iff u <= min(1, ratio); log_u <= 0 makes the min implicit.
            if lt_prop > -math.inf and log_u[i] <= lt_prop - lt:
                y, lt = prop, lt_prop
                accepted += 1
            chain[start + i] = y
    kept = chain[cfg.burn_in :]
    r, e = _diagnostics(kept, max_lag)
    return ChainResult(kept, accepted / max(n - 1, 1), r, e, cfg.burn_in)


# ---------------------------------------------------------------------------
# Inactive chains
# ---------------------------------------------------------------------------
def combine(y, z, subspace: ActiveSubspace) -> np.ndarray:
    """``W1 y + W2 z`` with a fixed, shape-independent summation order."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    W1, W2 = subspace.W1, subspace.W2
    shape = np.broadcast_shapes(y.shape[:-1], z.shape[:-1]) + (W1.shape[0],)
    x = np.zeros(shape)
    for j in range(W1.shape[1]):
        x = x + y[..., j, None] * W1[:, j]
    for j in range(W2.shape[1]):
        x = x + z[..., j, None] * W2[:, j]
    return x


def _inside(x) -> np.ndarray:
    return np.all(np.abs(x) <= 1.0, axis=-1)


def find_feasible_start(y, subspace: ActiveSubspace, rng=None, retries: int = 100) -> np.ndarray:
    """Inactive coordinates ``z`` with ``W1 y + W2 z`` inside ``[-1, 1]^n``.

    Tries the projection of the clamped active point, then random prior
    points, then a linear programme maximising the distance to the faces.
    """
    y = np.asarray(y, dtype=float)
    W1, W2 = subspace.W1, subspace.W2
    if W2.shape[1] == 0:
        if _inside(combine(y, np.zeros(0), subspace)):
            return np.zeros(0)
        raise NoFeasibleStart(f"active sample {y} lies outside the prior box")
    x0 = np.clip(combine(y, np.zeros(W2.shape[1]), subspace), -1.0, 1.0)
    z = x0 @ W2
    if _inside(combine(y, z, subspace)):
        return z
    rng = np.random.default_rng() if rng is None else rng
    for _ in range(retries):
        z = rng.uniform(-1.0, 1.0, W1.shape[0]) @ W2
        if _inside(combine(y, z, subspace)):
            return z
    # Chebyshev-style centre: maximise t with |x_i| <= 1 - t and W1^T x = y.
    n = W1.shape[0]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.vstack([np.hstack([np.eye(n), np.ones((n, 1))]), np.hstack([-np.eye(n), np.ones((n, 1))])])
    b_ub = np.ones(2 * n)
    A_eq = np.hstack([W1.T, np.zeros((W1.shape[1], 1))])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=y, bounds=[(None, None)] * (n + 1))
    if res.status == 0 and res.x[-1] > 0:
        z = res.x[:n] @ W2
        if _inside(combine(y, z, subspace)):
            return z
    raise NoFeasibleStart(f"no point of the prior box projects onto active sample {y}")


def _run_inactive(y, z0, subspace, L, n_steps, rng):
    """Vectorised indicator-target random walks, one chain per row of ``y``."""
    M, m = z0.shape
    out = np.empty((M, n_steps, m))
    z = z0.copy()
    out[:, 0] = z
    accepted = np.zeros(M, dtype=np.int64)
    for i in range(1, n_steps):
        prop = z + rng.standard_normal((M, m)) @ L.T
        # Uniform prior: the ratio is 1 inside the box and 0 outside.
        ok = _inside(combine(y, prop, subspace))
        z = np.where(ok[:, None], prop, z)
        accepted += ok
        out[:, i] = z
    return out, accepted


def mh_inactive(y, subspace: ActiveSubspace, cfg: ChainConfig, z0=None, rng=None, max_lag: int = 200) -> ChainResult:
    """Sample the inactive variable conditioned on one active sample ``y``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    m = subspace.W2.shape[1]
    z0 = find_feasible_start(y, subspace, rng) if z0 is None else np.asarray(z0, dtype=float)
    L = cfg.proposal_factor(m)
    y = np.asarray(y, dtype=float)[None, :]
    chain, acc = _run_inactive(y, z0[None, :], subspace, L, cfg.n_steps, rng)
    kept = chain[0, cfg.burn_in :]
    r, e = _diagnostics(kept, max_lag)
    return ChainResult(kept, float(acc[0]) / max(cfg.n_steps - 1, 1), r, e, cfg.burn_in)


@dataclass
class InactiveBatch:
    z: np.ndarray
    chain_lengths: np.ndarray
    acceptance_rates: np.ndarray
    skipped: list


def sample_inactive(y_samples, subspace: ActiveSubspace, proposal_cov, n_z_ess: int = 10, rng=None,
                    initial_length: int | None = None, max_length: int = 100_000) -> InactiveBatch:
    """Equalised inactive samples for many active samples at once.

    Each chain is extended (length doubled) until its minimum per-component
    ESS reaches ``n_z_ess``, then thinned to exactly ``n_z_ess`` samples.
    Active samples without a feasible start are skipped and reported.
    """
    rng = np.random.default_rng() if rng is None else rng
    Y = np.atleast_2d(np.asarray(y_samples, dtype=float))
    m = subspace.W2.shape[1]
    M = len(Y)
    if m == 0:
        return InactiveBatch(np.zeros((M, n_z_ess, 0)), np.zeros(M, int), np.ones(M), [])
    L = ChainConfig(2, 0, proposal_cov).proposal_factor(m)
    starts, keep, skipped = [], [], []
    for i, y in enumerate(Y):
        try:
            starts.append(find_feasible_start(y, subspace, rng))
            keep.append(i)
        except NoFeasibleStart:
            skipped.append(i)
    if skipped:
        log.warning("%d of %d active samples have no feasible inactive start", len(skipped), M)
    keep = np.array(keep, dtype=int)
    Yk = Y[keep]
    length = initial_length or max(20 * n_z_ess, 100)
    chains, acc = _run_inactive(Yk, np.array(starts).reshape(len(keep), m), subspace, L, length, rng)
    lengths = np.full(len(keep), length)
    accepted = acc.astype(float)
    result = np.empty((len(keep), n_z_ess, m))
    pending = np.arange(len(keep))
    while True:
        e = ess_batch(np.swapaxes(chains, 1, 2)).min(axis=1)
        done = (e >= n_z_ess) | (lengths[pending] >= max_length)
        for local in np.flatnonzero(done):
            result[pending[local]] = thin_effective(chains[local], n_z_ess)
        if np.any(done & (e < n_z_ess)):
            warnings.warn("inactive chain reached max_length before the target ESS", RuntimeWarning, stacklevel=2)
        pending, chains = pending[~done], chains[~done]
        if len(pending) == 0:
            break
        extra = chains.shape[1]
        more, acc = _run_inactive(Yk[pending], chains[:, -1], subspace, L, extra + 1, rng)
        chains = np.concatenate([chains, more[:, 1:]], axis=1)
        lengths[pending] += extra
        accepted[pending] += acc
    rates = accepted / np.maximum(lengths - 1, 1)
    return InactiveBatch(result, lengths, rates, skipped)


def reconstruct(y_samples, z_samples_per_y, subspace: ActiveSubspace, box: PriorBox | None = None) -> PosteriorSampleSet:
    """Full-space samples ``W1 y_i + W2 z_ij`` and physical means/standard deviations."""
    Y = np.atleast_2d(np.asarray(y_samples, dtype=float))
    Z = np.asarray(z_samples_per_y, dtype=float)
    if Z.ndim == 2:
        Z = Z[:, None, :]
    x = combine(Y[:, None, :], Z, subspace).reshape(-1, subspace.W1.shape[0])
    if not np.all(_inside(x)):
        raise AssertionError("reconstructed sample outside the prior box")
    box = PriorBox.default() if box is None else box
    phys = box.to_physical_array(x)
    return PosteriorSampleSet(x, phys, phys.mean(axis=0), phys.std(axis=0), len(Y), Z.shape[1])
