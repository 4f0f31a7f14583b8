"""Drained triaxial compression at a single material point.

A one-element specimen with uniform boundary conditions has spatially
uniform fields, so the test reduces to mixed control of one material point:
the axial strain is prescribed while both lateral stresses are held at the
confining pressure. The axial direction is ``zz``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constitutive import (
    RATE_TIME,
    ElasticParams,
    MaterialState,
    PlasticParams,
    ReturnMapDivergence,
    default_tol_yield,
    elastic_stiffness,
    evolve_hardening,
    integrate_step,
    stress_invariants,
    trace,
    yield_value,
    youngs_modulus,
)


class LateralControlFailure(RuntimeError):
    """The lateral strain increment holding the confining stress was not found."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class StationOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class LoadingSchedule:
    sigma_c: float = 1e6
    eps_a_rate: float = -1.04167e-5
    n_steps: int = 1350
    dt: float = 10.0
    tol_lat: float = 1.0
    rate_time: float = RATE_TIME

    def __post_init__(self):
        if not self.sigma_c > 0:
            raise ValueError(f"sigma_c must be positive, got {self.sigma_c}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be nonnegative, got {self.n_steps}")

    @property
    def final_axial_strain(self) -> float:
        return self.eps_a_rate * self.dt * self.n_steps

    def refined(self, factor: int = 2) -> "LoadingSchedule":
        """Same loading history with ``factor`` times smaller steps."""
        return replace(self, n_steps=self.n_steps * factor, dt=self.dt / factor)


def default_stations(sched: LoadingSchedule, count: int = 23) -> np.ndarray:
    """Uniformly spaced axial strains up to the final strain, excluding zero."""
    return sched.final_axial_strain * np.arange(1, count + 1) / count


@dataclass
class TrajectoryRecord:
    axial_strain: np.ndarray
    vol_strain: np.ndarray
    p: np.ndarray
    q: np.ndarray
    lambda_acc: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    lateral_stress: np.ndarray

    COLUMNS = ("axial_strain", "vol_strain", "p", "q", "lambda_acc", "alpha", "beta")

    def __len__(self):
        return len(self.axial_strain)

    def as_table(self) -> np.ndarray:
        return np.column_stack([getattr(self, name) for name in self.COLUMNS])


@dataclass
class QoIResponse:
    axial_strain_stations: np.ndarray
    vol_strain: np.ndarray
    shear_stress: np.ndarray

    def vector(self) -> np.ndarray:
        """Observation vector: all volumetric strains, then all shear stresses."""
        return np.concatenate([self.vol_strain, self.shear_stress])


@dataclass
class _Recorder:
    rows: list = field(default_factory=list)

    def add(self, eps, state, pp):
        p, _ = stress_invariants(state.sigma)
        alpha, beta, _ = evolve_hardening(state.lambda_acc, state.lambda_dot, pp)
        q = abs(state.sigma[2] - state.sigma[0])
        self.rows.append((eps[2], trace(eps), p, q, state.lambda_acc, alpha, beta, state.sigma[0]))

    def finish(self) -> TrajectoryRecord:
        cols = np.array(self.rows).T
        return TrajectoryRecord(*cols)


def isotropic_state(pp: PlasticParams, ep: ElasticParams, sigma_c: float):
    """Closed-form stage 1: elastic isotropic compression to ``-sigma_c``."""
    stiff = elastic_stiffness(youngs_modulus(ep, sigma_c), ep.nu)
    sigma = np.array([-sigma_c] * 3 + [0.0] * 3)
    alpha, _, c = evolve_hardening(0.0, 0.0, pp)
    if yield_value(-sigma_c, 0.0, alpha, c) > 0:
        raise ValueError("isotropic confining state lies outside the initial yield surface")
    eps_iso = -sigma_c / (3.0 * stiff.bulk)
    eps = np.array([eps_iso] * 3 + [0.0] * 3)
    return MaterialState.initial(sigma), eps, stiff


def _lateral_step(state, d_eps_a, guess, sched, ep, pp, stiff, tol_yield, step):
    """Find the lateral strain increment keeping the lateral stress at ``-sigma_c``.

    Safeguarded secant: once the residual changes sign the iterate is kept
    inside the bracket, falling back to bisection when the secant leaves it.
    """
    target = -sched.sigma_c
    tol_solve = 1e-6 * sched.tol_lat

    def solve(d_lat):
        d_eps = np.array([d_lat, d_lat, d_eps_a, 0.0, 0.0, 0.0])
        new = integrate_step(
            state, d_eps, sched.dt, ep, pp,
            tol_yield=tol_yield, stiffness=stiff, rate_time=sched.rate_time,
        )
        return new.sigma[0] - target, new, d_eps

    x0 = guess
    r0, new0, de0 = solve(x0)
    if abs(r0) <= tol_solve:
        return new0, de0
    # Elastic lateral stiffness gives a well-scaled second point.
    x1 = x0 - r0 / (stiff.lame1 + 2.0 * stiff.lame2)
    lo = hi = None
    best = (abs(r0), new0, de0)
    for _ in range(30):
        r1, new1, de1 = solve(x1)
        if abs(r1) < best[0]:
            best = (abs(r1), new1, de1)
        if abs(r1) <= tol_solve:
            return new1, de1
        # Track bracket ends explicitly: residual increases with x.
        if r1 < 0:
            lo = x1 if lo is None or x1 > lo else lo
        else:
            hi = x1 if hi is None or x1 < hi else hi
        if r0 < 0:
            lo = x0 if lo is None or x0 > lo else lo
        else:
            hi = x0 if hi is None or x0 < hi else hi
        denom = r1 - r0
        x2 = x1 - r1 * (x1 - x0) / denom if denom != 0 else math.nan
        if lo is not None and hi is not None and not (min(lo, hi) < x2 < max(lo, hi)):
            x2 = 0.5 * (lo + hi)
        elif not math.isfinite(x2):
            x2 = x1 - r1 / (stiff.lame1 + 2.0 * stiff.lame2)
        if abs(x2 - x1) <= 1e-15 * max(abs(x1), abs(d_eps_a)):
            break
        x0, r0 = x1, r1
        x1 = x2
    if best[0] <= sched.tol_lat:
        return best[1], best[2]
    raise LateralControlFailure(f"lateral stress residual {best[0]:.3e} Pa", step)


def simulate(pp: PlasticParams, ep: ElasticParams, sched: LoadingSchedule = LoadingSchedule()) -> TrajectoryRecord:
    """Run the two-stage triaxial test and record every step.

    Raises
    ------
    ReturnMapDivergence
        Tagged with the failing step index (``exc.step``).
    LateralControlFailure
        If the lateral stress cannot be held within ``sched.tol_lat``.
    """
    state, _, stiff = isotropic_state(pp, ep, sched.sigma_c)
    # Strains are reported from the start of shearing, as measured in the lab.
    eps = np.zeros(6)
    tol_yield = default_tol_yield(pp)
    rec = _Recorder()
    rec.add(eps, state, pp)

    d_eps_a = sched.eps_a_rate * sched.dt
    ratio = -ep.nu
    for step in range(1, sched.n_steps + 1):
        try:
            state, d_eps = _lateral_step(
                state, d_eps_a, ratio * d_eps_a, sched, ep, pp, stiff, tol_yield, step
            )
        except ReturnMapDivergence as exc:
            err = ReturnMapDivergence(f"step {step}: {exc}")
            err.step = step
            raise err from exc
        ratio = d_eps[0] / d_eps_a
        eps = eps + d_eps
        rec.add(eps, state, pp)
    return rec.finish()


def interpolate_stations(traj: TrajectoryRecord, stations) -> QoIResponse:
    stations = np.asarray(stations, dtype=float)
    mag = np.abs(traj.axial_strain)
    target = np.abs(stations)
    if np.any(target < mag[0]) or np.any(target > mag[-1] * (1 + 1e-12)):
        raise StationOutOfRange(
            f"stations span [{target.min():.4g}, {target.max():.4g}] "
            f"but the simulation covers [0, {mag[-1]:.4g}]"
        )
    target = np.minimum(target, mag[-1])
    vol = np.interp(target, mag, traj.vol_strain)
    q = np.interp(target, mag, traj.q)
    return QoIResponse(stations.copy(), vol, q)


def qoi_map(pp: PlasticParams, ep: ElasticParams, sched: LoadingSchedule, stations) -> QoIResponse:
    """Forward map: simulate and sample volumetric strain and shear stress at stations."""
    return interpolate_stations(simulate(pp, ep, sched), stations)
