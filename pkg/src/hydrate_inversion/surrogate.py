"""Quadratic response surface in the active variable."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .prior import DimensionMismatch


class InsufficientSamples(ValueError):
    pass


class RankDeficient(UserWarning):
    pass


def n_coefficients(k: int) -> int:
    return 1 + k + k * (k + 1) // 2


@dataclass
class QuadraticSurface:
    """``g(y) = intercept + linear . y + y^T H y`` with symmetric ``H``."""

    intercept: float
    linear: np.ndarray
    quadratic: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.linear)

    def coefficients(self) -> np.ndarray:
        """Flat coefficients: intercept, linear terms, then ``y_i y_j`` (i <= j)."""
        iu = np.triu_indices(self.k)
        H = self.quadratic
        quad = np.where(iu[0] == iu[1], H[iu], 2.0 * H[iu])
        return np.concatenate([[self.intercept], self.linear, quad])

    @classmethod
    def from_coefficients(cls, k: int, coef) -> "QuadraticSurface":
        coef = np.asarray(coef, dtype=float)
        if len(coef) != n_coefficients(k):
            raise ValueError(f"expected {n_coefficients(k)} coefficients for k={k}, got {len(coef)}")
        iu = np.triu_indices(k)
        H = np.zeros((k, k))
        quad = coef[1 + k :]
        H[iu] = np.where(iu[0] == iu[1], quad, 0.5 * quad)
        H = H + np.triu(H, 1).T
        return cls(float(coef[0]), coef[1 : 1 + k].copy(), H)

    def __call__(self, y):
        return surface_eval(self, y)

    def to_dict(self) -> dict:
        return {"k": self.k, "coefficients": self.coefficients().tolist(), "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d) -> "QuadraticSurface":
        surf = cls.from_coefficients(int(d["k"]), d["coefficients"])
        surf.flags = list(d.get("flags", []))
        return surf


def _design(u: np.ndarray) -> np.ndarray:
    k = u.shape[1]
    iu = np.triu_indices(k)
    return np.hstack([np.ones((len(u), 1)), u, u[:, iu[0]] * u[:, iu[1]]])


def fit(y, f, k: int | None = None):
    """Least-squares full quadratic fit of ``f`` against ``y``.

    Inputs are centred and scaled before solving and the coefficients mapped
    back. Returns ``(surface, r2)`` with ``r2`` computed on the training
    pairs; constant targets give ``r2 = 1`` and the flag ``"constant_target"``.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    f = np.asarray(f, dtype=float)
    k = y.shape[1] if k is None else k
    if y.shape[1] != k:
        raise DimensionMismatch(f"inputs have dimension {y.shape[1]}, expected {k}")
    if len(y) != len(f):
        raise ValueError("y and f must have the same number of rows")
    if len(f) < n_coefficients(k):
        raise InsufficientSamples(f"a quadratic in {k} variables needs {n_coefficients(k)} pairs, got {len(f)}")
    if not np.all(np.isfinite(f)):
        raise ValueError("targets must be finite")

    flags = []
    m = y.mean(axis=0)
    s = y.std(axis=0)
    s[s == 0] = 1.0
    A = _design((y - m) / s)
    coef_u, _, rank, _ = np.linalg.lstsq(A, f, rcond=None)
    if rank < A.shape[1]:
        flags.append("rank_deficient")
        warnings.warn(f"design matrix rank {rank} < {A.shape[1]}; using the minimum-norm solution",
                      RankDeficient, stacklevel=2)

    su = QuadraticSurface.from_coefficients(k, coef_u)
    D = 1.0 / s
    H = D[:, None] * su.quadratic * D[None, :]
    b = D * su.linear - 2.0 * H @ m
    c = su.intercept - su.linear @ (D * m) + m @ H @ m
    surface = QuadraticSurface(float(c), b, H, flags)

    ss_tot = float(((f - f.mean()) ** 2).sum())
    if ss_tot == 0.0:
        surface.flags.append("constant_target")
        return surface, 1.0
    ss_res = float(((f - surface_eval(surface, y)) ** 2).sum())
    return surface, 1.0 - ss_res / ss_tot


def surface_eval(surface: QuadraticSurface, y):
    """Evaluate at a single point ``(k,)`` or a batch ``(m, k)``."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y[None]
    if y.shape[-1] != surface.k:
        raise DimensionMismatch(f"surface has dimension {surface.k}, got {y.shape[-1]}")
    val = surface.intercept + y @ surface.linear + np.einsum("...i,ij,...j->...", y, surface.quadratic, y)
    return float(val) if np.ndim(val) == 0 else val
