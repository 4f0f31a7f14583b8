"""Uniform box prior, physical parameter mapping and KDE of projected priors."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .constitutive import PARAM_NAMES, PlasticParams


class OutOfBox(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


# (min, max, unit) per parameter, in PlasticParams order.
TABLE1_BOUNDS = (
    (1.8e6, 2.4e6, "Pa"),
    (0.5, 0.6, "-"),
    (0.2, 0.3, "-"),
    (1.6e-3, 1.9e-3, "-"),
    (0.75, 1.05, "-"),
    (0.3, 0.45, "-"),
    (0.01, 0.011, "-"),
    (0.67, 0.74, "-"),
)


@dataclass(frozen=True)
class PriorBox:
    lower: np.ndarray
    upper: np.ndarray
    units: tuple = tuple(b[2] for b in TABLE1_BOUNDS)
    names: tuple = PARAM_NAMES

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper bounds must be 1-D arrays of equal length")
        bad = np.flatnonzero(~(lower < upper))
        if bad.size:
            raise ValueError(f"empty prior interval for {self.names[bad[0]]}")

    @classmethod
    def default(cls) -> "PriorBox":
        return cls(np.array([b[0] for b in TABLE1_BOUNDS]), np.array([b[1] for b in TABLE1_BOUNDS]))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def to_physical_array(self, x_norm) -> np.ndarray:
        """Affine map from ``[-1, 1]^n`` to the physical box; works row-wise."""
        x = np.asarray(x_norm, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} coordinates, got {x.shape[-1]}")
        if np.any(np.abs(x) > 1.0):
            raise OutOfBox("normalized parameters must lie in [-1, 1]")
        return self.lower + 0.5 * (x + 1.0) * (self.upper - self.lower)

    def to_physical(self, x_norm) -> PlasticParams:
        return PlasticParams.from_vector(self.to_physical_array(x_norm))

    def to_normalized(self, pp) -> np.ndarray:
        v = pp.to_vector() if isinstance(pp, PlasticParams) else np.asarray(pp, dtype=float)
        if np.any(v < self.lower) or np.any(v > self.upper):
            raise OutOfBox("physical parameters lie outside the prior box")
        return 2.0 * (v - self.lower) / (self.upper - self.lower) - 1.0


def sample_prior(rng: np.random.Generator, count: int, dim: int = 8) -> np.ndarray:
    """I.i.d. uniform samples on ``[-1, 1]^dim``, shape ``(count, dim)``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    return rng.uniform(-1.0, 1.0, size=(count, dim))


def in_box(x, tol: float = 0.0) -> np.ndarray:
    """Row-wise membership test for ``[-1, 1]^n``."""
    return np.all(np.abs(np.asarray(x)) <= 1.0 + tol, axis=-1)


@dataclass
class KdeEstimate:
    """Gaussian product-kernel density estimate."""

    points: np.ndarray
    bandwidth: np.ndarray
    _cols: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.bandwidth = np.asarray(self.bandwidth, dtype=float)
        # Scaled points, one contiguous row per dimension.
        self._cols = np.ascontiguousarray((self.points / self.bandwidth).T)

    @property
    def k(self) -> int:
        return self.points.shape[1]

    def __call__(self, y) -> np.ndarray | float:
        return kde_eval(self, y)


def scott_bandwidth(points: np.ndarray) -> np.ndarray:
    n, k = points.shape
    return points.std(axis=0, ddof=1) * n ** (-1.0 / (k + 4))


def kde_fit(y_samples, bandwidth=None) -> KdeEstimate:
    pts = np.asarray(y_samples, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 100:
        warnings.warn(f"KDE built from only {pts.shape[0]} samples", stacklevel=2)
    if bandwidth is None:
        bw = scott_bandwidth(pts)
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (pts.shape[1],)).copy()
    if np.any(~(bw > 0)):
        raise ValueError("KDE bandwidths must be positive")
    return KdeEstimate(pts, bw)


def kde_eval(kde: KdeEstimate, y, max_block: int = 4_000_000):
    """Density at one point ``(k,)`` or at many points ``(m, k)``."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts_y = y[None, :] if single else y
    if pts_y.shape[-1] != kde.k:
        raise DimensionMismatch(f"KDE has dimension {kde.k}, got points of dimension {pts_y.shape[-1]}")
    norm = len(kde.points) * np.prod(kde.bandwidth) * (2.0 * np.pi) ** (kde.k / 2.0)
    cols = kde._cols
    u = pts_y / kde.bandwidth
    chunk = max(1, max_block // len(kde.points))
    out = np.empty(len(pts_y))
    for start in range(0, len(pts_y), chunk):
        block = u[start : start + chunk]
        d2 = np.zeros((len(block), cols.shape[1]))
        for j in range(kde.k):
            diff = cols[j][None, :] - block[:, j, None]
            d2 += diff * diff
        out[start : start + chunk] = np.exp(-0.5 * d2).sum(axis=1) / norm
    return float(out[0]) if single else out
