"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.py``) before asserting, so
the terminal summary lists every criterion even when one of them fails.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from hydrate_inversion.active_subspace import (
    ActiveSubspace,
    estimate_C,
    heuristic_sample_count,
    subspace_distance,
)
from hydrate_inversion.artifacts import read_json
from hydrate_inversion.config import PipelineConfig
from hydrate_inversion.constitutive import (
    ElasticParams,
    MaterialState,
    default_tol_yield,
    diag,
    evolve_hardening,
    integrate_step,
    norm,
    strain_rate_invariants,
    stress_invariants,
    youngs_modulus,
    yield_value,
)
from hydrate_inversion.inverse import Dataset, NoiseModel, PlantedRidgeForward, misfit, misfit_gradient
from hydrate_inversion.mcmc import ChainConfig, combine, ess, mh_active, sample_inactive
from hydrate_inversion.pipeline import STAGES, Pipeline, build_forward
from hydrate_inversion.prior import PriorBox, sample_prior
from hydrate_inversion.surrogate import QuadraticSurface
from hydrate_inversion.triax import LoadingSchedule, default_stations, qoi_map, simulate

BOX = PriorBox.default()
EP = ElasticParams()


def ridge_problem(seed=7):
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((8, 8)))
    fwd = PlantedRidgeForward(Q[:, 0], Q[:, 1])
    n = fwd.n_eps
    return fwd, Dataset(fwd.stations, np.zeros(n), np.zeros(n)), NoiseModel(np.ones(2 * n)), Q[:, :2]


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_1_constitutive_kkt_and_flow(record):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_f, worst_ratio, worst_sup, min_dl = 0.0, 0.0, 0.0, math.inf
    for x in sample_prior(rng, 200):
        pp = BOX.to_physical(x)
        lam0 = rng.uniform(0.0, 2.0) * pp.lambda_star
        alpha0, _, _ = evolve_hardening(lam0, 0.0, pp)
        p = -rng.uniform(0.5e6, 2e6)
        q = rng.uniform(0.9, 0.99) * (pp.c - alpha0 * p)
        s0 = replace(MaterialState.initial(diag(p + q / 3, p + q / 3, p - 2 * q / 3)), lambda_acc=lam0)
        e = rng.uniform(3e-3, 2e-2)
        d = diag(0.3 * e, 0.3 * e, -e) + rng.standard_normal(6) * 1e-5
        s1 = integrate_step(s0, d, 10.0, EP, pp)
        dl = s1.lambda_acc - s0.lambda_acc
        min_dl = min(min_dl, dl)
        alpha, beta, c = evolve_hardening(s1.lambda_acc, s1.lambda_dot, pp)
        P, Q = stress_invariants(s1.sigma)
        worst_f = max(worst_f, abs(yield_value(P, Q, alpha, c)) / default_tol_yield(pp))
        ev, es = strain_rate_invariants(s1.eps_p - s0.eps_p)
        worst_ratio = max(worst_ratio, abs(ev / es - beta) / beta)

        # Elastic superposition from an isotropic state well inside the surface.
        se = MaterialState.initial(diag(p, p, p))
        a, b = rng.standard_normal(6) * 1e-5, rng.standard_normal(6) * 1e-5
        da = integrate_step(se, a, 10.0, EP, pp).sigma - se.sigma
        db = integrate_step(se, b, 10.0, EP, pp).sigma - se.sigma
        dab = integrate_step(se, a + b, 10.0, EP, pp).sigma - se.sigma
        worst_sup = max(worst_sup, norm(dab - da - db) / norm(dab))
    elapsed = time.perf_counter() - t0
    ok = worst_f <= 1.0 and min_dl > 0 and worst_ratio <= 1e-8 and worst_sup <= 1e-10 and elapsed < 60
    record(1, ok, f"max|F|/tol={worst_f:.2e}, min dlambda={min_dl:.2e}, "
                  f"dilatancy rel err={worst_ratio:.1e}, superposition rel err={worst_sup:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_elastic_oracle(record):
    pp = replace(BOX.to_physical(np.zeros(8)), c=1e12)
    traj = simulate(pp, EP, LoadingSchedule())
    E = youngs_modulus(EP)
    dq = np.diff(traj.q) / np.diff(np.abs(traj.axial_strain))
    dev_ = np.diff(traj.vol_strain) / np.diff(traj.axial_strain)
    err_q = np.max(np.abs(dq / E - 1))
    err_v = np.max(np.abs(dev_ / (1 - 2 * EP.nu) - 1))
    ok = err_q <= 1e-6 and err_v <= 1e-6 and np.all(traj.lambda_acc == 0)
    record(2, ok, f"dq/d|eps_a| rel err={err_q:.1e}, deps_v/deps_a rel err={err_v:.1e}")
    assert ok


def test_criterion_3_step_halving(record):
    sched = LoadingSchedule()
    st = default_stations(sched)
    pp = BOX.to_physical(np.zeros(8))
    a = qoi_map(pp, EP, sched, st).vector()
    b = qoi_map(pp, EP, sched.refined(2), st).vector()
    rel = np.abs(a - b) / np.abs(b)
    ok = np.all(rel < 0.01)
    record(3, ok, f"max station rel diff={rel.max():.2e} over {len(rel)} QoIs")
    assert ok


def test_criterion_4_gradient_consistency(record):
    cfg = PipelineConfig.load()
    fwd = build_forward(cfg)
    g = fwd(np.zeros(8))
    n = fwd.n_eps
    noise = NoiseModel.relative(g, n)
    rng = np.random.default_rng(44)
    d = g + noise.sigma * rng.standard_normal(2 * n)
    ds = Dataset(fwd.stations, d[:n], d[n:])
    worst = 0.0
    # Interior points, kept clear of the faces so neither stencil is clamped.
    for x in 0.9 * sample_prior(rng, 20):
        v = rng.standard_normal(8)
        v /= np.linalg.norm(v)
        s = misfit_gradient(x, ds, noise, fwd)
        delta = 1e-3
        fd = (misfit(x + delta * v, ds, noise, fwd) - misfit(x - delta * v, ds, noise, fwd)) / (2 * delta)
        worst = max(worst, abs(s.grad @ v - fd) / abs(fd))
    ok = worst <= 0.01
    record(4, ok, f"max directional rel err={worst:.2e} at 20 points")
    assert ok


def test_criterion_5_planted_ridge_subspace(record):
    fwd, ds, noise, W_true = ridge_problem()
    X = sample_prior(np.random.default_rng(55), 500)
    G = np.array([misfit_gradient(x, ds, noise, fwd).grad for x in X])
    spectrum = estimate_C(G)
    lam = spectrum.eigenvalues
    ratio = lam[0] / lam[2] if lam[2] > 0 else math.inf
    dist = subspace_distance(spectrum.eigenvectors[:, :2], W_true)
    ok = ratio > 100 and dist < 0.05 and spectrum.suggested_dim() == 2
    record(5, ok, f"lambda1/lambda3={ratio:.3g}, 2D distance={dist:.2e}, suggested k={spectrum.suggested_dim()}")
    assert ok


def test_criterion_6_heuristic_count(record):
    value = heuristic_sample_count(10, 8, 8)
    record(6, value == 167, f"heuristic_sample_count(10, 8, 8)={value}")
    assert value == 167


def test_criterion_7_ridge_surrogate(record, tmp_path):
    p = tmp_path / "ridge.yaml"
    p.write_text("model: planted_ridge\nworkers: 1\n"
                 "noise: {level: 0.0, floor_eps: 1.0, floor_sigma: 1.0, perturb: false}\n"
                 "gradients: {n_samples: 500}\nsubspace: {k: 2, n_boot: 50}\n")
    pipe = Pipeline(PipelineConfig.load(p), tmp_path / "out")
    for stage in STAGES[:4]:
        pipe.run(stage)
    r2 = read_json(tmp_path / "out" / "k2" / "surrogate.json")["r2"]
    record(7, r2 >= 0.95, f"2D quadratic r2={r2:.4f}")
    assert r2 >= 0.95


@pytest.mark.filterwarnings("ignore:inactive chain reached max_length")
def test_criterion_8_mcmc_oracles(record):
    # 1D Gaussian target through the active sampler.
    var_true = 0.64
    surf = QuadraticSurface(0.0, np.zeros(1), np.eye(1) / (2 * var_true))
    res = mh_active(surf, lambda y: 1.0, ChainConfig(200_000, 2000, proposal_cov=2.0),
                    rng=np.random.default_rng(81))
    var_err = abs(res.samples[:, 0].var() / var_true - 1)

    # AR(1) effective sample size.
    phi, N = 0.9, 100_000
    rng = np.random.default_rng(82)
    e = rng.standard_normal(N)
    x = np.empty(N)
    x[0] = e[0] / math.sqrt(1 - phi**2)
    for i in range(1, N):
        x[i] = phi * x[i - 1] + e[i]
    expected = (1 - phi) / (1 + phi) * N
    ess_err = abs(ess(x) / expected - 1)

    # Inactive sampler with a badly oversized proposal: every reconstruction in the box.
    Q, _ = np.linalg.qr(np.random.default_rng(83).standard_normal((8, 8)))
    sub = ActiveSubspace(Q[:, :2], Q[:, 2:])
    Y = sample_prior(np.random.default_rng(84), 300) @ sub.W1
    batch = sample_inactive(Y, sub, 4.0, n_z_ess=10, rng=np.random.default_rng(85))
    keep = np.setdiff1d(np.arange(len(Y)), batch.skipped)
    xr = combine(Y[keep, None, :], batch.z, sub)
    outside = int(np.sum(np.any(np.abs(xr) > 1.0, axis=-1)))

    ok = var_err <= 0.05 and ess_err <= 0.25 and outside == 0
    record(8, ok, f"variance rel err={var_err:.3f}, AR(1) ESS rel err={ess_err:.3f}, "
                  f"out-of-box={outside} of {xr.shape[0] * xr.shape[1]}")
    assert ok


def test_criterion_9_synthetic_recovery(record, tmp_path):
    p = tmp_path / "recovery.yaml"
    p.write_text("gradients: {n_samples: 120}\nsubspace: {k: 2}\n"
                 "mcmc:\n  presets:\n    2: {n_steps: 200000, burn_in: 20000}\n")
    t0 = time.perf_counter()
    Pipeline(PipelineConfig.load(p), tmp_path / "out").run_all()
    summary = read_json(tmp_path / "out" / "k2" / "posterior_summary.json")
    frac = summary["fraction_within_3sigma"]
    chain = read_json(tmp_path / "out" / "k2" / "mcmc.json")
    ok = frac >= 0.9
    record(9, ok, f"{frac:.1%} of 46 stations within 3 sigma (acceptance "
                  f"{chain['acceptance_rate']:.3f}, {time.perf_counter() - t0:.0f}s)")
    assert ok


def test_criterion_10_bitwise_reproducible(record, tmp_path):
    p = tmp_path / "smoke.yaml"
    p.write_text("loading: {n_steps: 270, dt: 50.0}\ngradients: {n_samples: 12}\n"
                 "subspace: {k: 2, n_boot: 50}\nkde: {n_samples: 5000}\n"
                 "mcmc:\n  presets:\n    2: {n_steps: 5000, burn_in: 500}\n")
    cfg = PipelineConfig.load(p)
    for name in ("first", "second"):
        Pipeline(cfg, tmp_path / name).run_all()
    a, b = snapshot(tmp_path / "first"), snapshot(tmp_path / "second")
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differing and len(a) > 20
    record(10, ok, f"{len(a)} files compared, {len(differing)} differ")
    assert ok
