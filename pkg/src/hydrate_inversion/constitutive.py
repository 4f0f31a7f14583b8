"""Elasto-plastic material model for gas hydrate-bearing sand.

Small-strain, rate-dependent Drucker-Prager plasticity with a non-associative
flow rule and smooth evolution laws for dilatancy and residual friction::

    F = q + alpha * p - c            (yield function)
    G = q + beta * p                 (plastic potential)
    alpha = beta + alpha_res

Stresses follow the tension-positive convention, so compression gives a
negative mean stress ``p`` and raises the admissible shear stress ``q``.

Symmetric second-order tensors are stored as length-6 arrays of tensor
components ordered ``[xx, yy, zz, yz, xz, xy]`` (no engineering factor on
the shear terms).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SQRT_3_2 = math.sqrt(1.5)
SQRT_2_3 = math.sqrt(2.0 / 3.0)

IDENTITY = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
# Weights turning a component-wise product into the full double contraction.
_CONTRACT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

PARAM_NAMES = (
    "c",
    "alpha_res_l",
    "delta_alpha_res",
    "lambda_dot_star",
    "m_alpha",
    "beta_star",
    "lambda_star",
    "m_beta",
)


class ReturnMapDivergence(RuntimeError):
    """Local return-mapping iteration failed even after substepping."""


# ---------------------------------------------------------------------------
# Symmetric tensor helpers
# ---------------------------------------------------------------------------
def sym(xx=0.0, yy=0.0, zz=0.0, yz=0.0, xz=0.0, xy=0.0) -> np.ndarray:
    return np.array([xx, yy, zz, yz, xz, xy], dtype=float)


def diag(a, b, c) -> np.ndarray:
    return sym(a, b, c)


def from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.array([m[i, j] for i, j in _PAIRS])


def to_matrix(a) -> np.ndarray:
    m = np.empty((3, 3))
    for k, (i, j) in enumerate(_PAIRS):
        m[i, j] = m[j, i] = a[k]
    return m


def trace(a) -> float:
    return float(a[0] + a[1] + a[2])


def dev(a) -> np.ndarray:
    return a - trace(a) / 3.0 * IDENTITY


def contract(a, b) -> float:
    """Double contraction ``a : b``."""
    return float(np.dot(_CONTRACT * a, b))


def norm(a) -> float:
    return math.sqrt(contract(a, a))


# ---------------------------------------------------------------------------
# Parameters and state
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ElasticParams:
    """Elastic constants. ``E_s`` and ``E_h`` in Pa."""

    E_s: float = 100e6
    E_h: float = 800e6
    m: float = 3.0
    nu: float = 0.25
    S_h: float = 0.5

    def __post_init__(self):
        if not self.E_s > 0:
            raise ValueError(f"E_s must be positive, got {self.E_s}")
        if self.E_h < 0:
            raise ValueError(f"E_h must be nonnegative, got {self.E_h}")
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"nu must lie in (0, 0.5), got {self.nu}")
        if not 0.0 <= self.S_h <= 1.0:
            raise ValueError(f"S_h must lie in [0, 1], got {self.S_h}")


@dataclass(frozen=True)
class PlasticParams:
    """The eight inferred plasticity parameters, in physical units.

    Field order is the order of the inferred parameter vector.
    """

    c: float
    alpha_res_l: float
    delta_alpha_res: float
    lambda_dot_star: float
    m_alpha: float
    beta_star: float
    lambda_star: float
    m_beta: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")

    @classmethod
    def from_vector(cls, x) -> "PlasticParams":
        x = np.asarray(x, dtype=float)
        if x.shape != (len(PARAM_NAMES),):
            raise ValueError(f"expected {len(PARAM_NAMES)} parameters, got shape {x.shape}")
        return cls(*(float(v) for v in x))

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES])


# Plastic strain rates are expressed per loading step of this duration (s),
# the time base of ``lambda_dot_star``.
RATE_TIME = 10.0


@dataclass(frozen=True)
class MaterialState:
    """Converged state at a material point.

    ``lambda_dot`` is the plastic multiplier rate of the last step in units
    of 1/step, i.e. ``dlambda / dt * rate_time``.
    """

    sigma: np.ndarray
    eps_p: np.ndarray
    lambda_acc: float = 0.0
    lambda_dot: float = 0.0

    @classmethod
    def initial(cls, sigma=None) -> "MaterialState":
        sigma = np.zeros(6) if sigma is None else np.asarray(sigma, dtype=float).copy()
        return cls(sigma=sigma, eps_p=np.zeros(6))


# ---------------------------------------------------------------------------
# Invariants and elasticity
# ---------------------------------------------------------------------------
def stress_invariants(sigma) -> tuple[float, float]:
    """Mean stress ``p`` and shear stress ``q = sqrt(3/2) |dev sigma|``."""
    p = trace(sigma) / 3.0
    return p, SQRT_3_2 * norm(dev(sigma))


def strain_rate_invariants(eps_dot) -> tuple[float, float]:
    """Volumetric rate ``Tr eps_dot`` and shear rate ``sqrt(2/3) |dev eps_dot|``."""
    return trace(eps_dot), SQRT_2_3 * norm(dev(eps_dot))


def youngs_modulus(ep: ElasticParams, sigma_c: float | None = None) -> float:
    # E_s is a configured constant; sigma_c is accepted for interface symmetry.
    return ep.E_s + ep.S_h**ep.m * ep.E_h


@dataclass(frozen=True)
class ElasticStiffness:
    """Isotropic stiffness ``L1 I(x)I + 2 L2 I``."""

    lame1: float
    lame2: float

    @property
    def bulk(self) -> float:
        return self.lame1 + 2.0 * self.lame2 / 3.0

    @property
    def shear(self) -> float:
        return self.lame2

    def apply(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        return self.lame1 * trace(e) * IDENTITY + 2.0 * self.lame2 * e

    __call__ = apply

    def matrix(self) -> np.ndarray:
        """6x6 matrix acting on the component storage used in this module."""
        m = 2.0 * self.lame2 * np.eye(6)
        m[:3, :3] += self.lame1
        return m


def elastic_stiffness(E: float, nu: float) -> ElasticStiffness:
    if not E > 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")
    lame1 = nu * E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    lame2 = E / (2.0 * (1.0 + nu))
    return ElasticStiffness(lame1, lame2)


# ---------------------------------------------------------------------------
# Evolution laws and yield
# ---------------------------------------------------------------------------
def _rate_factor(lambda_dot: float, pp: PlasticParams) -> float:
    # (1 + 1/r)^-1 written as r / (1 + r); finite at r = 0.
    r = lambda_dot / pp.lambda_dot_star
    return r / (1.0 + r)


def dilatancy(lambda_acc: float, pp: PlasticParams) -> float:
    lbar = lambda_acc / pp.lambda_star
    return pp.beta_star * lbar * math.exp(1.0 - lbar**pp.m_beta)


def evolve_hardening(lambda_acc: float, lambda_dot: float, pp: PlasticParams):
    """Return ``(alpha, beta, c)`` for the given plastic shear strain and rate."""
    lbar = lambda_acc / pp.lambda_star
    beta = pp.beta_star * lbar * math.exp(1.0 - lbar**pp.m_beta)
    alpha_res = pp.alpha_res_l + pp.delta_alpha_res * _rate_factor(lambda_dot, pp) * lbar**pp.m_alpha
    return beta + alpha_res, beta, pp.c


def yield_value(p: float, q: float, alpha: float, c: float) -> float:
    return q + alpha * p - c


def default_tol_yield(pp: PlasticParams) -> float:
    return 1e-6 * pp.c


# ---------------------------------------------------------------------------
# Return mapping
# ---------------------------------------------------------------------------
def _plastic_residual(dl, lam_old, rate_scale, p_tr, q_tr, shear_on, K, G, pp):
    """Yield value after a plastic increment ``dl`` and its derivative."""
    lam = lam_old + dl
    lbar = lam / pp.lambda_star
    e = math.exp(1.0 - lbar**pp.m_beta)
    beta = pp.beta_star * lbar * e
    dbeta = pp.beta_star / pp.lambda_star * e * (1.0 - pp.m_beta * lbar**pp.m_beta)

    r = dl / rate_scale
    rf = r / (1.0 + r)
    drf = 1.0 / ((1.0 + r) ** 2 * rate_scale)
    lm = lbar**pp.m_alpha
    dlm = pp.m_alpha * lbar ** (pp.m_alpha - 1.0) / pp.lambda_star if lbar > 0 else 0.0
    alpha = beta + pp.alpha_res_l + pp.delta_alpha_res * rf * lm
    dalpha = dbeta + pp.delta_alpha_res * (drf * lm + rf * dlm)

    g3 = 3.0 * G * shear_on
    p = p_tr - K * beta * dl
    dp = -K * (dbeta * dl + beta)
    F = q_tr - g3 * dl + alpha * p - pp.c
    dF = -g3 + dalpha * p + alpha * dp
    return F, dF


def _solve_plastic_multiplier(f, tol_f, rtol, max_iter, hi):
    """Safeguarded Newton for the root of a decreasing ``f`` on ``(0, hi]``."""
    lo = 0.0
    f_hi, _ = f(hi)
    if f_hi > 0:
        # Expand the bracket; the shear-free branch has no natural upper bound.
        for _ in range(60):
            lo, hi = hi, 2.0 * hi
            f_hi, _ = f(hi)
            if f_hi <= 0:
                break
        else:
            raise ReturnMapDivergence("no plastic multiplier brackets the yield surface")
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx, dfx = f(x)
        if fx > 0:
            lo = x
        else:
            hi = x
        if dfx < 0:
            x_new = x - fx / dfx
        else:
            x_new = 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        step = abs(x_new - x)
        x = x_new
        if step <= rtol * x and abs(fx) <= tol_f:
            return x
    fx, _ = f(x)
    if abs(fx) <= tol_f:
        return x
    raise ReturnMapDivergence(f"return mapping did not converge, F = {fx:.3e} Pa")


def _integrate(state, d_eps, dt, stiff, pp, tol_yield, rtol, max_iter, rate_time):
    K, G = stiff.bulk, stiff.shear
    sigma_tr = state.sigma + stiff.apply(d_eps)
    s_tr = dev(sigma_tr)
    p_tr = trace(sigma_tr) / 3.0
    s_norm = norm(s_tr)
    q_tr = SQRT_3_2 * s_norm

    alpha0, _, _ = evolve_hardening(state.lambda_acc, 0.0, pp)
    if yield_value(p_tr, q_tr, alpha0, pp.c) <= 0.0:
        return MaterialState(sigma_tr, state.eps_p.copy(), state.lambda_acc, 0.0)

    if s_norm < 1e-12 * max(1.0, abs(p_tr)):
        shear_on, n = 0.0, np.zeros(6)
        hi = max(q_tr, pp.c) / (3.0 * G)
    else:
        shear_on, n = 1.0, s_tr / s_norm
        hi = q_tr / (3.0 * G)

    per_step = rate_time / dt
    rate_scale = pp.lambda_dot_star / per_step

    def f(dl):
        return _plastic_residual(dl, state.lambda_acc, rate_scale, p_tr, q_tr, shear_on, K, G, pp)

    dl = _solve_plastic_multiplier(f, tol_yield, rtol, max_iter, hi)
    lam = state.lambda_acc + dl
    beta = dilatancy(lam, pp)
    flow = SQRT_3_2 * n + beta / 3.0 * IDENTITY
    d_eps_p = dl * flow
    sigma = sigma_tr - stiff.apply(d_eps_p)
    return MaterialState(sigma, state.eps_p + d_eps_p, lam, dl * per_step)


def integrate_step(
    state: MaterialState,
    d_eps,
    dt: float,
    ep: ElasticParams,
    pp: PlasticParams,
    *,
    tol_yield: float | None = None,
    rtol: float = 1e-10,
    max_iter: int = 50,
    max_depth: int = 10,
    stiffness: ElasticStiffness | None = None,
    rate_time: float = RATE_TIME,
) -> MaterialState:
    """Advance the material point by one strain increment.

    Implicit (backward Euler) return mapping: an elastic trial state is
    projected back onto the yield surface with all derivatives and
    hardening variables evaluated at the final point. On failure the
    increment is halved and integrated recursively, up to ``max_depth``
    levels.

    Parameters
    ----------
    state : MaterialState
        Converged state at the start of the step.
    d_eps : array_like, shape (6,)
        Total strain increment.
    dt : float
        Time increment in seconds; sets the plastic strain rate.
    rate_time : float
        Duration (s) of the reference step defining the rate unit 1/step.
    ep, pp : ElasticParams, PlasticParams
        Material constants.
    tol_yield : float, optional
        Absolute tolerance on ``F`` in Pa. Defaults to ``1e-6 * c``.
    stiffness : ElasticStiffness, optional
        Precomputed stiffness for ``ep``; saves work in tight loops.

    Raises
    ------
    ReturnMapDivergence
        If the local iteration fails with substepping exhausted.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    d_eps = np.asarray(d_eps, dtype=float)
    if tol_yield is None:
        tol_yield = default_tol_yield(pp)
    if stiffness is None:
        stiffness = elastic_stiffness(youngs_modulus(ep), ep.nu)
    args = (stiffness, pp, tol_yield, rtol, max_iter, rate_time)
    return _integrate_substepped(state, d_eps, dt, args, max_depth)


def _integrate_substepped(state, d_eps, dt, args, depth):
    try:
        return _integrate(state, d_eps, dt, *args)
    except ReturnMapDivergence:
        if depth <= 0:
            raise
    half = 0.5 * d_eps
    mid = _integrate_substepped(state, half, 0.5 * dt, args, depth - 1)
    end = _integrate_substepped(mid, half, 0.5 * dt, args, depth - 1)
    # Report the rate over the full step so lambda_dot keeps its meaning.
    rate_time = args[-1]
    return replace(end, lambda_dot=(end.lambda_acc - state.lambda_acc) * rate_time / dt)


def flow_direction(sigma, beta: float) -> np.ndarray:
    """Plastic potential gradient ``dG/dsigma`` at ``sigma``."""
    s = dev(sigma)
    s_norm = norm(s)
    if s_norm < 1e-12 * max(1.0, abs(trace(sigma) / 3.0)):
        return beta / 3.0 * IDENTITY
    return SQRT_3_2 * s / s_norm + beta / 3.0 * IDENTITY
