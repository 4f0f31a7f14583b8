"""Restartable stages of the calibration workflow.

Each stage reads the artifacts of its prerequisite, writes its own files
under the output directory and records a completion marker in the run
manifest. A marker is only honoured while the stage hash (its own config
sections chained with the prerequisite's hash) is unchanged, so editing a
config section invalidates that stage and everything downstream.
"""
from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from .active_subspace import ActiveSubspace, estimate_spectrum
from .artifacts import RunManifest, read_csv, read_header, read_json, write_csv, write_json
from .config import PipelineConfig
from .constitutive import PARAM_NAMES, PlasticParams, ReturnMapDivergence
from .inverse import (
    Dataset,
    MisfitEvaluationError,
    NoiseModel,
    PlantedRidgeForward,
    TriaxialForward,
    misfit_gradient,
)
from .mcmc import ChainConfig, mh_active, reconstruct, sample_inactive, thin_effective
from .prior import kde_fit, sample_prior
from .surrogate import QuadraticSurface, fit
from .triax import LateralControlFailure, simulate

log = logging.getLogger(__name__)

STAGES = ("synth-data", "gradients", "subspace", "surrogate", "mcmc", "reconstruct", "report")
PREREQUISITE = {
    "gradients": "synth-data",
    "subspace": "gradients",
    "surrogate": "subspace",
    "mcmc": "surrogate",
    "reconstruct": "mcmc",
    "report": "reconstruct",
}
# Config sections each stage reads directly.
SECTIONS = {
    "synth-data": ("seed", "model", "prior", "elastic", "loading", "stations", "ridge", "truth", "noise"),
    "gradients": ("gradients",),
    "subspace": ("subspace.n_boot",),
    "surrogate": (),
    "mcmc": ("kde", "mcmc"),
    "reconstruct": ("mcmc",),
    "report": (),
}
PER_K = {"surrogate", "mcmc", "reconstruct", "report"}
INACTIVE_CHUNK = 4096


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class Pipeline:
    """Stage runner bound to one config and output directory."""

    def __init__(self, cfg: PipelineConfig, out_dir=None, k: int | None = None, force: bool = False):
        self.cfg = cfg
        self.root = Path(out_dir or cfg.data["output_dir"])
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(self.root)
        self.seed = int(cfg.data["seed"])
        self._k = k if k is not None else cfg.data["subspace"]["k"]
        self.force = force

    # -- bookkeeping ------------------------------------------------------
    def stage_hash(self, stage: str, k: int | None = None) -> str:
        parts = []
        for section in SECTIONS[stage]:
            parts.append(repr(self.cfg.get(tuple(section.split(".")))) if "." in section
                         else self.cfg.section_hash(section))
        if stage in PER_K:
            parts.append(f"k={k}")
        prereq = PREREQUISITE.get(stage)
        if prereq is not None:
            parts.append(self.stage_hash(prereq, k if prereq in PER_K else None))
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]

    @staticmethod
    def key(stage: str, k: int | None) -> str:
        return f"{stage}[k={k}]" if stage in PER_K else stage

    def kdir(self, k: int) -> Path:
        d = self.root / f"k{k}"
        d.mkdir(exist_ok=True)
        return d

    def rng(self, stage: str, *extra) -> np.random.Generator:
        return np.random.default_rng([self.seed, STAGES.index(stage), *extra])

    @property
    def k(self) -> int:
        if self._k is not None:
            return int(self._k)
        spectrum_path = self.root / "spectrum.json"
        if not spectrum_path.exists():
            raise StageError("surrogate", "subspace dimension unknown: run 'subspace' first or pass --subspace-dim")
        return int(read_json(spectrum_path)["suggested_dim"])

    def _require(self, stage: str, k: int | None):
        prereq = PREREQUISITE.get(stage)
        if prereq is None:
            return
        pk = k if prereq in PER_K else None
        if not self.manifest.is_complete(self.key(prereq, pk), self.stage_hash(prereq, pk)):
            raise StageError(stage, f"prerequisite '{prereq}' is missing or stale; run it first")

    def run(self, stage: str) -> bool:
        """Run one stage unless it is already complete. Returns True if work was done."""
        k = self.k if stage in PER_K else None
        h = self.stage_hash(stage, k)
        key = self.key(stage, k)
        if not self.force and self.manifest.is_complete(key, h):
            log.info("%s: up to date (hash %s)", key, h)
            return False
        self._require(stage, k)
        t0 = time.perf_counter()
        log.info("%s: running", key)
        try:
            files = getattr(self, "_stage_" + stage.replace("-", "_"))(h, k)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        self.manifest.mark(key, h, files)
        log.info("%s: done in %.1f s", key, time.perf_counter() - t0)
        return True

    def run_all(self):
        for stage in STAGES:
            self.run(stage)

    # -- shared builders ----------------------------------------------------
    def forward(self):
        return build_forward(self.cfg)

    def load_dataset(self):
        cols, data = read_csv(self.root / "dataset.csv")
        c = {name: i for i, name in enumerate(cols)}
        ds = Dataset(data[:, c["axial_strain"]], data[:, c["d_eps"]], data[:, c["d_sigma"]])
        noise = NoiseModel(np.concatenate([data[:, c["sigma_eps"]], data[:, c["sigma_sigma"]]]))
        return ds, noise

    def load_gradients(self):
        cols, data = read_csv(self.root / "gradients.csv")
        n = self.cfg.box.dim
        if len(cols) != 3 + 2 * n:
            raise StageError("subspace", f"gradient file has {len(cols)} columns, expected {3 + 2 * n}")
        return data[:, 0].astype(int), data[:, 2 : 2 + n], data[:, 1], data[:, 2 + n : 2 + 2 * n]

    def load_subspace(self, k: int) -> ActiveSubspace:
        spectrum = read_json(self.root / "spectrum.json")
        W = np.asarray(spectrum["eigenvectors"], dtype=float)
        if not 1 <= k <= W.shape[1]:
            raise StageError("surrogate", f"subspace dimension {k} outside [1, {W.shape[1]}]")
        return ActiveSubspace(W[:, :k].copy(), W[:, k:].copy())

    def _csv(self, path, columns, rows, stage, h):
        write_csv(path, columns, rows, stage, h, self.seed)
        return path

    def _json(self, path, payload, stage, h):
        write_json(path, payload, stage, h, self.seed)
        return path

    # -- stages -------------------------------------------------------------
    def _stage_synth_data(self, h, k):
        cfg = self.cfg
        x_true = np.asarray(cfg.data["truth"]["x_norm"], dtype=float)
        fwd = self.forward()
        try:
            g = fwd(x_true)
        except (ReturnMapDivergence, LateralControlFailure, ValueError) as exc:
            raise StageError("synth-data", f"forward model failed at the true parameters: {exc}") from exc
        nz = cfg.data["noise"]
        noise = NoiseModel.relative(g, fwd.n_eps, nz["level"], nz["floor_eps"], nz["floor_sigma"])
        eta = noise.sigma * self.rng("synth-data").standard_normal(len(g)) if nz["perturb"] else 0.0
        d = g + eta
        n = fwd.n_eps
        rows = np.column_stack([np.arange(n), fwd.stations, d[:n], d[n:], noise.sigma[:n], noise.sigma[n:],
                                g[:n], g[n:]])
        cols = ["station", "axial_strain", "d_eps", "d_sigma", "sigma_eps", "sigma_sigma", "g_eps_true", "g_sigma_true"]
        files = [self._csv(self.root / "dataset.csv", cols, rows, "synth-data", h)]
        truth = {"x_norm": x_true, "model": cfg.data["model"]}
        if cfg.data["model"] == "triaxial":
            truth["x_physical"] = dict(zip(PARAM_NAMES, cfg.box.to_physical_array(x_true).tolist()))
        files.append(self._json(self.root / "truth.json", truth, "synth-data", h))
        return files

    def _stage_gradients(self, h, k):
        gcfg = self.cfg.data["gradients"]
        N = gcfg["n_samples"]
        X = sample_prior(self.rng("gradients"), N, self.cfg.box.dim)
        partial = self.root / "gradients.partial.csv"
        done = _read_partial(partial, h)
        todo = [i for i in range(N) if i not in done]
        log.info("gradients: %d of %d samples already done, %d to go", len(done), N, len(todo))
        failures = {}
        ds, noise = self.load_dataset()
        context = (self.cfg.data, ds, noise, gcfg["fd_step"])
        with _PartialWriter(partial, h, self.seed, self.cfg.box.dim) as writer:
            for i, result in _map_gradients(context, X, todo, self.cfg.workers):
                if isinstance(result, str):
                    failures[i] = result
                    log.warning("gradients: sample %d failed: %s", i, result)
                    continue
                done[i] = result
                writer.append(i, result)
                log.info("gradients: sample %d done (%d/%d), f=%.4g", i, len(done), N, result[0])
        fail_rows = sorted(failures)
        fail_path = self.root / "gradients.failures.csv"
        self._csv(fail_path, ["index"] + [f"x_{j + 1}" for j in range(X.shape[1])],
                  [[i, *X[i]] for i in fail_rows] if fail_rows else np.zeros((0, 1 + X.shape[1])), "gradients", h)
        if len(failures) > gcfg["max_failure_fraction"] * N:
            raise StageError("gradients", f"{len(failures)} of {N} samples failed "
                             f"(limit {gcfg['max_failure_fraction']:.0%}); see {fail_path.name}")
        order = sorted(done)
        rows = [[i, done[i][0], *X[i], *done[i][1], done[i][2]] for i in order]
        n = X.shape[1]
        cols = ["index", "f"] + [f"x_{j + 1}" for j in range(n)] + [f"g_{j + 1}" for j in range(n)] + ["n_clamped"]
        path = self._csv(self.root / "gradients.csv", cols, rows, "gradients", h)
        partial.unlink(missing_ok=True)
        return [path, fail_path]

    def _stage_subspace(self, h, k):
        _, X, f, G = self.load_gradients()
        spectrum = estimate_spectrum(G, self.cfg.data["subspace"]["n_boot"], self.rng("subspace"))
        files = [self._json(self.root / "spectrum.json", {
            "eigenvalues": spectrum.eigenvalues,
            "eigenvalue_intervals": spectrum.eigenvalue_intervals,
            "eigenvectors": spectrum.eigenvectors,
            "subspace_errors": spectrum.subspace_errors,
            "gap_ratios": spectrum.gap_ratios(),
            "suggested_dim": spectrum.suggested_dim(),
            "n_samples": len(G),
        }, "subspace", h)]
        n = spectrum.n
        files.append(self._csv(self.root / "eigenvalues.csv", ["index", "eigenvalue", "lower", "upper"],
                               np.column_stack([np.arange(1, n + 1), spectrum.eigenvalues, spectrum.eigenvalue_intervals]),
                               "subspace", h))
        files.append(self._csv(self.root / "eigenvectors.csv", ["parameter"] + [f"w_{j + 1}" for j in range(n)],
                               np.column_stack([np.arange(1, n + 1), spectrum.eigenvectors]), "subspace", h))
        files.append(self._csv(self.root / "subspace_errors.csv", ["k", "error"],
                               np.column_stack([np.arange(1, n), spectrum.subspace_errors]), "subspace", h))
        files.append(self._csv(self.root / "summary_plot.csv", ["index", "w1_x", "w2_x", "f"],
                               np.column_stack([np.arange(len(f)), X @ spectrum.eigenvectors[:, :2], f]), "subspace", h))
        return files

    def _stage_surrogate(self, h, k):
        _, X, f, _ = self.load_gradients()
        sub = self.load_subspace(k)
        if X.shape[1] != sub.W1.shape[0]:
            raise StageError("surrogate", "gradient file and eigenvectors disagree on the parameter dimension")
        surface, r2 = fit(X @ sub.W1, f)
        d = self.kdir(k)
        payload = {"surface": surface.to_dict(), "r2": r2}
        files = []
        # Summary-plot surfaces: 1D and 2D fits on a grid spanning the data.
        for dim in (1, 2):
            if dim > X.shape[1]:
                continue
            lower = self.load_subspace(dim).W1
            y = X @ lower
            s_dim, r2_dim = fit(y, f)
            payload[f"r2_{dim}d"] = r2_dim
            axes = [np.linspace(y[:, j].min(), y[:, j].max(), 41 if dim == 2 else 201) for j in range(dim)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
            cols = [f"y_{j + 1}" for j in range(dim)] + ["g"]
            files.append(self._csv(d / f"surface_{dim}d.csv", cols, np.column_stack([grid, s_dim(grid)]),
                                   "surrogate", h))
        files.append(self._json(d / "surrogate.json", payload, "surrogate", h))
        return files

    def _stage_mcmc(self, h, k):
        d = self.kdir(k)
        sub = self.load_subspace(k)
        surface = QuadraticSurface.from_dict(read_json(d / "surrogate.json")["surface"])
        if surface.k != k:
            raise StageError("mcmc", f"surrogate has dimension {surface.k}, expected {k}")
        kcfg = self.cfg.data["kde"]
        rng = self.rng("mcmc", k)
        prior_y = sample_prior(rng, kcfg["n_samples"], sub.W1.shape[0]) @ sub.W1
        density = kde_fit(prior_y, kcfg["bandwidth"])
        _, X, f, _ = self.load_gradients()
        y0 = X[int(np.argmin(f))] @ sub.W1
        preset = self.cfg.preset(k)
        chain_cfg = ChainConfig(preset["n_steps"], preset["burn_in"], preset["proposal_cov"])
        res = mh_active(surface, density, chain_cfg, y0=y0, rng=rng)
        n_y = max(1, int(math.floor(res.min_ess)))
        effective = thin_effective(res.samples, n_y)
        ycols = [f"y_{j + 1}" for j in range(k)]
        files = [self._csv(d / "active_samples.csv", ycols, effective, "mcmc", h)]
        stride = max(1, math.ceil(len(res.samples) / self.cfg.data["mcmc"]["trace_max_rows"]))
        steps = np.arange(res.burn_in, res.burn_in + len(res.samples))
        files.append(self._csv(d / "trace.csv", ["step"] + ycols,
                               np.column_stack([steps, res.samples])[::stride], "mcmc", h))
        files.append(self._csv(d / "autocorrelation.csv", ["lag"] + [f"r_{c}" for c in ycols],
                               np.column_stack([np.arange(res.autocorrelation.shape[1]), res.autocorrelation.T]),
                               "mcmc", h))
        files.append(self._csv(d / "active_marginals.csv",
                               ["component", "bin_lower", "bin_upper", "posterior_density", "prior_density"],
                               _marginal_rows(res.samples, prior_y), "mcmc", h))
        files.append(self._json(d / "mcmc.json", {
            "acceptance_rate": res.acceptance_rate,
            "ess": res.ess,
            "min_ess": res.min_ess,
            "n_effective": n_y,
            "n_steps": preset["n_steps"],
            "burn_in": preset["burn_in"],
            "proposal_cov": preset["proposal_cov"],
            "y0": y0,
            "kde_bandwidth": density.bandwidth,
        }, "mcmc", h))
        return files

    def _stage_reconstruct(self, h, k):
        d = self.kdir(k)
        sub = self.load_subspace(k)
        cols, Y = read_csv(d / "active_samples.csv")
        if Y.shape[1] != k:
            raise StageError("reconstruct", f"active samples have dimension {Y.shape[1]}, expected {k}")
        cap = self.cfg.data["mcmc"]["max_active_samples"]
        if cap is not None and len(Y) > cap:
            Y = thin_effective(Y, cap)
        mcfg = self.cfg.data["mcmc"]
        preset = self.cfg.preset(k)
        z, skipped, rates = _sample_inactive_chunks(Y, sub, preset["inactive_proposal_cov"], mcfg["n_z_ess"],
                                                    [self.seed, STAGES.index("reconstruct"), k], self.cfg.workers)
        keep = np.setdiff1d(np.arange(len(Y)), skipped)
        post = reconstruct(Y[keep], z, sub, self.cfg.box)
        post.skipped = [int(i) for i in skipped]
        n = sub.W1.shape[0]
        names = list(self.cfg.box.names)
        idx = np.repeat(keep, z.shape[1])
        files = [self._csv(d / "posterior_samples.csv",
                           ["active_index"] + [f"x_{j + 1}" for j in range(n)] + names,
                           np.column_stack([idx, post.x_normalized, post.x_physical]), "reconstruct", h)]
        files.append(self._csv(d / "posterior_histograms.csv", ["parameter", "bin_lower", "bin_upper", "density"],
                               _histogram_rows(post.x_physical, self.cfg.box), "reconstruct", h))
        mean_norm = post.x_normalized.mean(axis=0)
        ds, noise = self.load_dataset()
        g = self.forward()(mean_norm)
        m = len(ds.stations)
        resid = (ds.vector() - g) / noise.sigma
        rows = np.column_stack([np.arange(m), ds.stations, ds.d_eps, g[:m], noise.sigma[:m],
                                ds.d_sigma, g[m:], noise.sigma[m:]])
        files.append(self._csv(d / "posterior_response.csv",
                               ["station", "axial_strain", "d_eps", "g_eps", "sigma_eps", "d_sigma", "g_sigma",
                                "sigma_sigma"], rows, "reconstruct", h))
        within = float(np.mean(np.abs(resid) <= 3.0))
        files.append(self._json(d / "posterior_summary.json", {
            "mean": dict(zip(names, post.mean.tolist())),
            "std": dict(zip(names, post.std.tolist())),
            "mean_normalized": mean_norm,
            "n_active": int(len(keep)),
            "n_inactive": int(z.shape[1]),
            "n_samples": int(len(post.x_normalized)),
            "skipped_active": post.skipped,
            "inactive_acceptance_mean": float(np.mean(rates)) if len(rates) else None,
            "fraction_within_3sigma": within,
        }, "reconstruct", h))
        return files

    def _stage_report(self, h, k):
        d = self.kdir(k)
        spectrum = read_json(self.root / "spectrum.json")
        surr = read_json(d / "surrogate.json")
        chain = read_json(d / "mcmc.json")
        post = read_json(d / "posterior_summary.json")
        report = {
            "k": k,
            "eigenvalues": spectrum["eigenvalues"],
            "suggested_dim": spectrum["suggested_dim"],
            "r2": surr["r2"],
            "acceptance_rate": chain["acceptance_rate"],
            "min_ess": chain["min_ess"],
            "n_posterior_samples": post["n_samples"],
            "posterior_mean": post["mean"],
            "posterior_std": post["std"],
            "fraction_within_3sigma": post["fraction_within_3sigma"],
        }
        box = self.cfg.box
        rows = [[j + 1, box.lower[j], box.upper[j], post["mean"][n], post["std"][n]] for j, n in enumerate(box.names)]
        return [self._json(d / "report.json", report, "report", h),
                self._csv(d / "posterior_table.csv", ["parameter", "prior_min", "prior_max", "mean", "std"],
                          rows, "report", h)]


# ---------------------------------------------------------------------------
# Forward model construction and parallel gradient evaluation
# ---------------------------------------------------------------------------
def build_forward(data: dict | PipelineConfig):
    cfg = data if isinstance(data, PipelineConfig) else PipelineConfig(data)
    if cfg.data["model"] == "planted_ridge":
        r = cfg.data["ridge"]
        n = cfg.box.dim
        Q, _ = np.linalg.qr(np.random.default_rng(r["seed"]).standard_normal((n, n)))
        return PlantedRidgeForward(Q[:, 0], Q[:, 1], r["weight"], len(cfg.stations), r["shift"])
    return TriaxialForward(cfg.box, cfg.elastic, cfg.schedule, cfg.stations)


def planted_directions(data: dict) -> np.ndarray:
    """The two planted ridge directions of a ``planted_ridge`` config, as columns."""
    fwd = build_forward(data)
    return np.column_stack([fwd.w1, fwd.w2])


_WORKER = {}


def _init_worker(context):
    data, ds, noise, fd_step = context
    _WORKER.update(forward=build_forward(data), dataset=ds, noise=noise, h=fd_step)


def _gradient_task(args):
    i, x = args
    try:
        s = misfit_gradient(x, _WORKER["dataset"], _WORKER["noise"], _WORKER["forward"], _WORKER["h"])
    except MisfitEvaluationError as exc:
        return i, str(exc)
    return i, (s.f, s.grad, int(np.sum(s.clamped)))


def _map_gradients(context, X, todo, workers):
    tasks = [(i, X[i]) for i in todo]
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(context)
        for task in tasks:
            yield _gradient_task(task)
        return
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(context,)) as pool:
        futures = [pool.submit(_gradient_task, t) for t in tasks]
        for fut in as_completed(futures):
            yield fut.result()


def _read_partial(path: Path, config_hash: str) -> dict:
    """Completed rows of an interrupted gradient run, keyed by sample index."""
    if not path.exists():
        return {}
    if read_header(path).get("config_hash") != config_hash:
        log.info("gradients: discarding partial results from a different configuration")
        path.unlink()
        return {}
    done = {}
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")][1:]
    for ln in lines:
        if not ln.endswith("\n"):
            break  # torn final write
        vals = np.array(ln.split(","), dtype=float)
        done[int(vals[0])] = (vals[1], vals[2:-1], int(vals[-1]))
    return done


class _PartialWriter:
    def __init__(self, path: Path, config_hash: str, seed: int, n: int):
        self.path = path
        self.header = (config_hash, seed, n)

    def __enter__(self):
        fresh = not self.path.exists()
        self.fh = open(self.path, "a")
        if fresh:
            h, seed, n = self.header
            write_cols = ["index", "f"] + [f"g_{j + 1}" for j in range(n)] + ["n_clamped"]
            self.fh.write(f"# hydrate_inversion stage=gradients config_hash={h} seed={seed}\n")
            self.fh.write(",".join(write_cols) + "\n")
            self.fh.flush()
        return self

    def append(self, i, result):
        f, grad, clamped = result
        vals = [i, f, *grad, clamped]
        self.fh.write(",".join("%.17g" % v for v in vals) + "\n")
        self.fh.flush()

    def __exit__(self, *exc):
        self.fh.close()


# ---------------------------------------------------------------------------
# Inactive sampling fan-out
# ---------------------------------------------------------------------------
def _inactive_task(args):
    Y, W1, W2, cov, n_z, seed = args
    batch = sample_inactive(Y, ActiveSubspace(W1, W2), cov, n_z, np.random.default_rng(seed))
    return batch.z, batch.skipped, batch.acceptance_rates


def _sample_inactive_chunks(Y, sub, cov, n_z, seed_key, workers):
    """Inactive samples in fixed-size chunks with per-chunk seeds.

    Chunking and seeding do not depend on ``workers``, so results are
    identical for any pool size.
    """
    starts = list(range(0, len(Y), INACTIVE_CHUNK))
    seeds = np.random.SeedSequence(seed_key).spawn(len(starts))
    tasks = [(Y[s : s + INACTIVE_CHUNK], sub.W1, sub.W2, cov, n_z, sd) for s, sd in zip(starts, seeds)]
    if workers <= 1 or len(tasks) <= 1:
        results = [_inactive_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_inactive_task, tasks))
    z = np.concatenate([r[0] for r in results], axis=0)
    skipped = [s + j for s, r in zip(starts, results) for j in r[1]]
    rates = np.concatenate([r[2] for r in results])
    return z, skipped, rates


# ---------------------------------------------------------------------------
# Plot data helpers
# ---------------------------------------------------------------------------
def _marginal_rows(samples, prior_y, bins: int = 50):
    rows = []
    for j in range(samples.shape[1]):
        lo = min(samples[:, j].min(), prior_y[:, j].min())
        hi = max(samples[:, j].max(), prior_y[:, j].max())
        edges = np.linspace(lo, hi, bins + 1)
        post, _ = np.histogram(samples[:, j], edges, density=True)
        prior, _ = np.histogram(prior_y[:, j], edges, density=True)
        rows.extend([j + 1, edges[b], edges[b + 1], post[b], prior[b]] for b in range(bins))
    return rows


def _histogram_rows(x_phys, box, bins: int = 40):
    rows = []
    for j in range(x_phys.shape[1]):
        edges = np.linspace(box.lower[j], box.upper[j], bins + 1)
        dens, _ = np.histogram(x_phys[:, j], edges, density=True)
        rows.extend([j + 1, edges[b], edges[b + 1], dens[b]] for b in range(bins))
    return rows


# ---------------------------------------------------------------------------
# Single forward run
# ---------------------------------------------------------------------------
TRAJECTORY_COLUMNS = ["step", "axial_strain", "vol_strain", "p", "q", "lambda_acc", "alpha", "beta"]


def load_params(path, cfg: PipelineConfig) -> PlasticParams:
    """Plastic parameters from a YAML/JSON file: physical names or ``x_norm``."""
    import yaml

    raw = yaml.safe_load(Path(path).read_text()) or {}
    if "x_norm" in raw:
        return cfg.box.to_physical(np.asarray(raw["x_norm"], dtype=float))
    missing = [n for n in PARAM_NAMES if n not in raw]
    if missing:
        raise ValueError(f"{path}: missing parameter(s) {missing}")
    extra = set(raw) - set(PARAM_NAMES)
    if extra:
        raise ValueError(f"{path}: unknown parameter(s) {sorted(extra)}")
    return PlasticParams(**{n: float(raw[n]) for n in PARAM_NAMES})


def simulate_to_csv(cfg: PipelineConfig, pp: PlasticParams, path):
    """Run one triaxial test and write the per-step trajectory."""
    try:
        traj = simulate(pp, cfg.elastic, cfg.schedule)
    except (ReturnMapDivergence, LateralControlFailure) as exc:
        step = getattr(exc, "step", None)
        raise StageError("simulate", f"forward run failed at step {step}: {exc}") from exc
    table = np.column_stack([np.arange(len(traj)), traj.as_table()])
    h = hashlib.sha256((cfg.section_hash("elastic", "loading") + repr(pp.to_vector().tolist())).encode()).hexdigest()[:16]
    write_csv(path, TRAJECTORY_COLUMNS, table, "simulate", h, int(cfg.data["seed"]))
    return traj
