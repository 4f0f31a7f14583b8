"""Active subspace estimation from misfit gradient samples."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


class DegenerateSpectrum(UserWarning):
    pass


@dataclass
class SpectrumEstimate:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    eigenvalue_intervals: np.ndarray | None = None
    subspace_errors: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def gap_ratios(self, rel_floor: float = 1e-12) -> np.ndarray:
        """``lambda_k / lambda_{k+1}`` for k = 1..n-1.

        Eigenvalues below ``rel_floor * lambda_1`` are round-off; they are
        raised to that floor so the ratios stay finite and the drop into the
        numerical null space counts as a large gap.
        """
        lam = self.eigenvalues
        if not lam[0] > 0:
            return np.ones(len(lam) - 1)
        lam = np.maximum(lam, rel_floor * lam[0])
        return lam[:-1] / lam[1:]

    def suggested_dim(self) -> int:
        """Dimension after the largest spectral gap (first one on ties)."""
        return int(np.argmax(self.gap_ratios())) + 1


@dataclass
class ActiveSubspace:
    W1: np.ndarray
    W2: np.ndarray

    @property
    def k(self) -> int:
        return self.W1.shape[1]

    @property
    def W(self) -> np.ndarray:
        return np.hstack([self.W1, self.W2])


def heuristic_sample_count(alpha_factor: float, ell: int, n: float) -> int:
    """Rule-of-thumb gradient count ``ceil(alpha * ell * ln n)``."""
    if not 2 <= alpha_factor <= 10:
        raise ValueError("sampling factor must lie in [2, 10]")
    if not 1 <= ell <= n:
        raise ValueError("need 1 <= ell <= n")
    # Round away float noise before the ceiling so exact products stay exact.
    return math.ceil(round(alpha_factor * ell * math.log(n), 9))


def _fix_signs(W: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1.0
    return W * signs


def gradient_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.atleast_2d(samples).astype(float)
    return np.array([s.grad for s in samples], dtype=float)


def _decompose(grads: np.ndarray):
    C = grads.T @ grads / len(grads)
    C = 0.5 * (C + C.T)
    lam, W = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    return lam, _fix_signs(W[:, order])


def estimate_C(samples) -> SpectrumEstimate:
    """Eigendecomposition of the Monte Carlo average of gradient outer products.

    ``samples`` is a list of ``MisfitGradientSample`` or an ``(N, n)`` array of
    gradients. Eigenvalues are sorted descending and clipped at zero; each
    eigenvector is signed so its largest-magnitude entry is positive.
    """
    grads = gradient_matrix(samples)
    if len(grads) < grads.shape[1]:
        raise ValueError(f"need at least {grads.shape[1]} gradient samples, got {len(grads)}")
    lam, W = _decompose(grads)
    if np.all(lam < 1e-30):
        warnings.warn("all eigenvalues are numerically zero", DegenerateSpectrum, stacklevel=2)
    return SpectrumEstimate(lam, W)


def subspace_distance(W1a: np.ndarray, W1b: np.ndarray) -> float:
    """``|| P_a - P_b ||_2`` for two equal-dimension subspaces with orthonormal bases.

    Computed as the largest singular value of ``W1a^T W2b`` where ``W2b`` spans
    the orthogonal complement of ``W1b``.
    """
    n, k = W1b.shape
    if k == n:
        return 0.0
    q, _ = np.linalg.qr(W1b, mode="complete")
    W2b = q[:, k:]
    return float(np.linalg.svd(W1a.T @ W2b, compute_uv=False)[0])


def bootstrap_errors(samples, n_boot: int = 200, rng: np.random.Generator | None = None, k_range=None,
                     percentiles=(2.5, 97.5)):
    """Bootstrap eigenvalue intervals and mean subspace distances.

    Returns ``(subspace_errors, eigenvalue_intervals)``; ``subspace_errors[i]``
    belongs to ``k = k_range[i]`` and intervals have shape ``(n, 2)``.
    """
    if n_boot < 30:
        raise ValueError("n_boot must be at least 30")
    rng = np.random.default_rng() if rng is None else rng
    grads = gradient_matrix(samples)
    N, n = grads.shape
    k_range = list(range(1, n)) if k_range is None else list(k_range)
    _, W = _decompose(grads)
    boot_lam = np.empty((n_boot, n))
    errors = np.zeros((n_boot, len(k_range)))
    for b in range(n_boot):
        idx = rng.integers(0, N, size=N)
        lam_b, W_b = _decompose(grads[idx])
        boot_lam[b] = lam_b
        for i, k in enumerate(k_range):
            errors[b, i] = np.linalg.svd(W[:, :k].T @ W_b[:, k:], compute_uv=False)[0]
    intervals = np.percentile(boot_lam, percentiles, axis=0).T
    return errors.mean(axis=0), intervals


def estimate_spectrum(samples, n_boot: int = 200, rng=None) -> SpectrumEstimate:
    """``estimate_C`` plus bootstrap intervals and subspace errors for k = 1..n-1."""
    spectrum = estimate_C(samples)
    spectrum.subspace_errors, spectrum.eigenvalue_intervals = bootstrap_errors(samples, n_boot, rng)
    return spectrum


def split(spectrum: SpectrumEstimate, k: int) -> ActiveSubspace:
    n = spectrum.n
    if not 1 <= k <= n:
        raise ValueError(f"active dimension must lie in [1, {n}], got {k}")
    W = spectrum.eigenvectors
    return ActiveSubspace(W[:, :k].copy(), W[:, k:].copy())


def project_active(subspace: ActiveSubspace, x) -> np.ndarray:
    return np.asarray(x) @ subspace.W1


def project_inactive(subspace: ActiveSubspace, x) -> np.ndarray:
    return np.asarray(x) @ subspace.W2
