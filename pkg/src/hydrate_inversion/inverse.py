"""Bayesian data model: dataset, Gaussian noise, misfit and its FD gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constitutive import ElasticParams, ReturnMapDivergence
from .prior import PriorBox
from .triax import LateralControlFailure, LoadingSchedule, default_stations, qoi_map


class MisfitEvaluationError(RuntimeError):
    """Forward model failure at a parameter point.

    ``stencil`` is ``None`` for the centre evaluation, else ``(j, +1|-1)``
    naming the perturbed coordinate and direction.
    """

    def __init__(self, x_norm, cause, stencil=None):
        where = "centre" if stencil is None else f"stencil {stencil}"
        super().__init__(f"forward model failed at {where} x={np.array2string(np.asarray(x_norm), precision=4)}: {cause}")
        self.x_norm = np.asarray(x_norm, dtype=float).copy()
        self.stencil = stencil


@dataclass
class Dataset:
    stations: np.ndarray
    d_eps: np.ndarray
    d_sigma: np.ndarray

    def __post_init__(self):
        self.stations = np.asarray(self.stations, dtype=float)
        self.d_eps = np.asarray(self.d_eps, dtype=float)
        self.d_sigma = np.asarray(self.d_sigma, dtype=float)
        if not len(self.stations) == len(self.d_eps) == len(self.d_sigma):
            raise ValueError("stations, d_eps and d_sigma must have equal lengths")
        if np.any(np.diff(np.abs(self.stations)) <= 0):
            raise ValueError("stations must be strictly ordered by magnitude")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.d_eps, self.d_sigma])


@dataclass
class NoiseModel:
    sigma: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        if np.any(~(self.sigma > 0)):
            raise ValueError("noise standard deviations must be strictly positive")

    @classmethod
    def relative(cls, values, n_eps: int, level: float = 0.02, floor_eps: float = 1e-5, floor_sigma: float = 1e3):
        """``level * |value|`` per observation, floored separately per block."""
        values = np.abs(np.asarray(values, dtype=float))
        floors = np.where(np.arange(len(values)) < n_eps, floor_eps, floor_sigma)
        return cls(np.maximum(level * values, floors))


def misfit_from_response(g, d, noise: NoiseModel) -> float:
    r = (np.asarray(d) - np.asarray(g)) / noise.sigma
    return 0.5 * float(r @ r)


def misfit(x_norm, dataset: Dataset, noise: NoiseModel, forward) -> float:
    """Half the squared noise-weighted residual, ``0.5 * sum(((d - G) / s)^2)``."""
    try:
        g = forward(x_norm)
    except (ReturnMapDivergence, LateralControlFailure, FloatingPointError, ValueError) as exc:
        raise MisfitEvaluationError(x_norm, exc) from exc
    return misfit_from_response(g, dataset.vector(), noise)


def _evaluate(forward, x, stencil, x_ref):
    try:
        return np.asarray(forward(x), dtype=float)
    except (ReturnMapDivergence, LateralControlFailure, FloatingPointError, ValueError) as exc:
        raise MisfitEvaluationError(x_ref if stencil is None else x, exc, stencil) from exc


@dataclass
class Jacobian:
    matrix: np.ndarray
    center: np.ndarray | None
    clamped: np.ndarray
    n_evaluations: int


def fd_jacobian(x_norm, h: float, forward, with_center: bool = False, lower=-1.0, upper=1.0) -> Jacobian:
    """Central-difference Jacobian of ``forward`` at ``x_norm``.

    Stencil points leaving ``[lower, upper]`` are clamped to the face, which
    turns that column into a one-sided difference; such columns are flagged
    in ``clamped``.
    """
    x = np.asarray(x_norm, dtype=float)
    n = len(x)
    cols = []
    clamped = np.zeros(n, dtype=bool)
    n_eval = 0
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[j] = min(x[j] + h, upper)
        xm[j] = max(x[j] - h, lower)
        clamped[j] = (xp[j] - xm[j]) < 2.0 * h * (1 - 1e-12)
        gp = _evaluate(forward, xp, (j, +1), x)
        gm = _evaluate(forward, xm, (j, -1), x)
        n_eval += 2
        cols.append((gp - gm) / (xp[j] - xm[j]))
    center = None
    if with_center:
        center = _evaluate(forward, x, None, x)
        n_eval += 1
    return Jacobian(np.column_stack(cols), center, clamped, n_eval)


@dataclass
class MisfitGradientSample:
    x_normalized: np.ndarray
    f: float
    grad: np.ndarray
    clamped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        if len(self.grad) != len(self.x_normalized):
            raise ValueError("gradient length must equal the parameter dimension")


def misfit_gradient(x_norm, dataset: Dataset, noise: NoiseModel, forward, h: float = 1e-4) -> MisfitGradientSample:
    """Misfit and ``J^T Gamma^{-1} (G(x) - d)`` from a finite-difference Jacobian."""
    jac = fd_jacobian(x_norm, h, forward, with_center=True)
    d = dataset.vector()
    resid = jac.center - d
    grad = jac.matrix.T @ (resid / noise.sigma**2)
    f = misfit_from_response(jac.center, d, noise)
    return MisfitGradientSample(np.asarray(x_norm, dtype=float).copy(), f, grad, jac.clamped)


class TriaxialForward:
    """Picklable forward map ``x_norm -> (G_eps, G_sigma)`` for the triaxial test."""

    def __init__(self, box: PriorBox, ep: ElasticParams, sched: LoadingSchedule, stations=None):
        self.box = box
        self.ep = ep
        self.sched = sched
        self.stations = default_stations(sched) if stations is None else np.asarray(stations, dtype=float)

    @property
    def n_eps(self) -> int:
        return len(self.stations)

    def response(self, x_norm):
        return qoi_map(self.box.to_physical(x_norm), self.ep, self.sched, self.stations)

    def __call__(self, x_norm) -> np.ndarray:
        return self.response(x_norm).vector()


class PlantedRidgeForward:
    """Cheap synthetic forward whose misfit has a planted two-dimensional ridge.

    Observations are ``profile(w1 . x)`` and ``sqrt(weight) * profile(w2 . x)``
    spread over the stations, with ``profile(t) = t + curvature * t^2``. With
    zero data and unit noise the misfit is ``H(w1 . x) + weight * H(w2 . x)``
    where ``H = profile^2 / 2``.
    """

    def __init__(self, w1, w2, weight: float = 0.01, n_stations: int = 23, shift: float = 0.0,
                 curvature: float = 0.1):
        self.w1 = np.asarray(w1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.weight = weight
        self.n_stations = n_stations
        self.shift = shift
        self.curvature = curvature
        self.stations = np.linspace(1.0, 2.0, n_stations)

    @property
    def n_eps(self) -> int:
        return self.n_stations

    def profile(self, t):
        return t + self.curvature * t**2

    def __call__(self, x_norm) -> np.ndarray:
        x = np.asarray(x_norm, dtype=float)
        a = self.profile(self.w1 @ x - self.shift)
        b = np.sqrt(self.weight) * self.profile(self.w2 @ x - self.shift)
        scale = 1.0 / np.sqrt(self.n_stations)
        return np.concatenate([np.full(self.n_stations, a * scale), np.full(self.n_stations, b * scale)])
