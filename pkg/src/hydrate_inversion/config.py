"""Pipeline configuration: YAML file merged over defaults, validated with line numbers."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import numpy as np
import yaml

from .constitutive import PARAM_NAMES, RATE_TIME, ElasticParams
from .prior import TABLE1_BOUNDS, PriorBox
from .triax import LoadingSchedule, default_stations


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model": "triaxial",
    "output_dir": "run",
    "workers": 0,
    "seed": 20190812,
    "prior": {name: [lo, hi] for name, (lo, hi, _) in zip(PARAM_NAMES, TABLE1_BOUNDS)},
    "elastic": {"E_s": 100e6, "E_h": 800e6, "m": 3.0, "nu": 0.25, "S_h": 0.5},
    "loading": {
        "sigma_c": 1e6,
        "eps_a_rate": -1.04167e-5,
        "n_steps": 1350,
        "dt": 10.0,
        "tol_lat": 1.0,
        "rate_time": RATE_TIME,
    },
    "stations": {"count": 23, "values": None},
    "ridge": {"weight": 0.01, "seed": 7, "shift": 0.0},
    "truth": {"x_norm": [0.0] * 8},
    "noise": {"level": 0.02, "floor_eps": 1e-5, "floor_sigma": 1e3, "perturb": True},
    "gradients": {"n_samples": 250, "fd_step": 1e-4, "max_failure_fraction": 0.05},
    "subspace": {"k": None, "n_boot": 200},
    "kde": {"n_samples": 100_000, "bandwidth": None},
    "mcmc": {
        "n_z_ess": 10,
        "max_active_samples": None,
        "trace_max_rows": 100_000,
        "presets": {
            2: {"n_steps": 1_000_000, "burn_in": 100_000, "proposal_cov": 0.02, "inactive_proposal_cov": 0.4},
            5: {"n_steps": 10_000_000, "burn_in": 1_000_000, "proposal_cov": 0.0017, "inactive_proposal_cov": 0.8},
        },
        "default_preset": {"n_steps": 200_000, "burn_in": 20_000, "proposal_cov": 0.02, "inactive_proposal_cov": 0.5},
    },
}

# Keys whose children are user-defined rather than fixed by DEFAULTS.
_FREE_MAPPINGS = {("mcmc", "presets")}
_PRESET_KEYS = {"n_steps", "burn_in", "proposal_cov", "inactive_proposal_cov"}


def _line_index(node, path=(), out=None):
    """Map key paths to 1-based line numbers from a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = key_node.value
            try:
                key = int(key)
            except (TypeError, ValueError):
                pass
            sub = path + (key,)
            out[sub] = key_node.start_mark.line + 1
            _line_index(value_node, sub, out)
    return out


def _merge(base, override, path, lines, source):
    for key, value in override.items():
        sub = path + (key,)
        if path in _FREE_MAPPINGS:
            if not isinstance(value, dict):
                raise ConfigError(_where(source, lines, sub) + f"{_dotted(sub)} must be a mapping")
            unknown = set(value) - _PRESET_KEYS
            if unknown:
                raise ConfigError(_where(source, lines, sub) + f"unknown preset key(s) {sorted(unknown)}")
            entry = dict(base.get(key, DEFAULTS["mcmc"]["default_preset"]))
            entry.update(value)
            base[key] = entry
            continue
        if key not in base:
            raise ConfigError(_where(source, lines, sub) + f"unknown key '{_dotted(sub)}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(_where(source, lines, sub) + f"'{_dotted(sub)}' must be a mapping")
            _merge(base[key], value, sub, lines, source)
        else:
            base[key] = value


def _dotted(path):
    return ".".join(str(p) for p in path)


def _where(source, lines, path):
    line = lines.get(tuple(path))
    if source is None:
        return ""
    return f"{source}:{line}: " if line else f"{source}: "


class PipelineConfig:
    """Validated pipeline configuration.

    ``data`` holds the merged settings as plain Python values; typed views
    (``box``, ``elastic``, ``schedule``...) are built from it on demand.
    """

    def __init__(self, data: dict, source: str | None = None, lines: dict | None = None):
        self.data = data
        self.source = source
        self._lines = lines or {}
        self._validate()

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "PipelineConfig":
        data = copy.deepcopy(DEFAULTS)
        lines = {}
        source = None
        if path is not None:
            source = str(path)
            text = Path(path).read_text()
            try:
                node = yaml.compose(text)
                user = yaml.safe_load(text) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
            if not isinstance(user, dict):
                raise ConfigError(f"{source}:1: top level must be a mapping")
            lines = _line_index(node) if node is not None else {}
            _merge(data, user, (), lines, source)
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            target = data
            keys = dotted.split(".")
            for key in keys[:-1]:
                target = target[key]
            target[keys[-1]] = value
        return cls(data, source, lines)

    # -- validation -----------------------------------------------------
    def _fail(self, path, message):
        raise ConfigError(_where(self.source or "<config>", self._lines, path) + message)

    def _numeric(self, path):
        # YAML 1.1 reads exponent forms without a sign ("1e6") as strings.
        value = self.get(path)
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                return value
            self._set(path, value)
        return value

    def _positive(self, path, allow_zero=False):
        value = self._numeric(path)
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        ok = ok and (value >= 0 if allow_zero else value > 0)
        if not ok:
            self._fail(path, f"{_dotted(path)} must be a {'nonnegative' if allow_zero else 'positive'} number, got {value!r}")

    def _integer(self, path, minimum=1):
        value = self._numeric(path)
        if isinstance(value, float) and value.is_integer():
            value = int(value)
            self._set(path, value)
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            self._fail(path, f"{_dotted(path)} must be an integer >= {minimum}, got {value!r}")

    def get(self, path):
        node = self.data
        for key in path:
            node = node[key]
        return node

    def _set(self, path, value):
        node = self.data
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value

    def _validate(self):
        d = self.data
        if d["model"] not in ("triaxial", "planted_ridge"):
            self._fail(("model",), f"model must be 'triaxial' or 'planted_ridge', got {d['model']!r}")
        self._integer(("workers",), minimum=0)
        self._integer(("seed",), minimum=0)
        for name in PARAM_NAMES:
            bounds = d["prior"][name]
            if not (isinstance(bounds, (list, tuple)) and len(bounds) == 2 and bounds[0] < bounds[1]):
                self._fail(("prior", name), f"prior.{name} must be [min, max] with min < max, got {bounds!r}")
        for key in ("E_s", "m", "nu"):
            self._positive(("elastic", key))
        self._positive(("elastic", "E_h"), allow_zero=True)
        try:
            self.elastic
        except ValueError as exc:
            self._fail(("elastic",), str(exc))
        for key in ("sigma_c", "dt", "tol_lat", "rate_time"):
            self._positive(("loading", key))
        self._integer(("loading", "n_steps"))
        rate = self._numeric(("loading", "eps_a_rate"))
        if not isinstance(rate, (int, float)) or isinstance(rate, bool) or rate == 0:
            self._fail(("loading", "eps_a_rate"), f"loading.eps_a_rate must be a nonzero number, got {rate!r}")
        self._integer(("stations", "count"))
        if d["stations"]["values"] is not None:
            vals = np.asarray(d["stations"]["values"], dtype=float)
            if vals.ndim != 1 or np.any(np.diff(np.abs(vals)) <= 0):
                self._fail(("stations", "values"), "stations.values must be strictly increasing in magnitude")
        truth = d["truth"]["x_norm"]
        if len(truth) != 8 or any(abs(v) > 1 for v in truth):
            self._fail(("truth", "x_norm"), "truth.x_norm must be 8 values in [-1, 1]")
        self._positive(("noise", "level"), allow_zero=True)
        self._positive(("noise", "floor_eps"))
        self._positive(("noise", "floor_sigma"))
        self._integer(("gradients", "n_samples"))
        self._positive(("gradients", "fd_step"))
        self._positive(("gradients", "max_failure_fraction"), allow_zero=True)
        if d["subspace"]["k"] is not None:
            self._integer(("subspace", "k"))
            if d["subspace"]["k"] > 8:
                self._fail(("subspace", "k"), "subspace.k must not exceed the parameter dimension 8")
        self._integer(("subspace", "n_boot"), minimum=30)
        self._integer(("kde", "n_samples"))
        self._integer(("mcmc", "n_z_ess"))
        self._integer(("mcmc", "trace_max_rows"))
        if d["mcmc"]["max_active_samples"] is not None:
            self._integer(("mcmc", "max_active_samples"))
        presets = {**{"default_preset": d["mcmc"]["default_preset"]}, **d["mcmc"]["presets"]}
        for name, preset in presets.items():
            base = ("mcmc", "default_preset") if name == "default_preset" else ("mcmc", "presets", name)
            self._integer(base + ("n_steps",))
            self._integer(base + ("burn_in",), minimum=0)
            self._positive(base + ("proposal_cov",))
            self._positive(base + ("inactive_proposal_cov",))
            if preset["burn_in"] >= preset["n_steps"]:
                self._fail(base + ("burn_in",), f"{_dotted(base)}.burn_in must be smaller than n_steps")

    # -- typed views ----------------------------------------------------
    @property
    def box(self) -> PriorBox:
        prior = self.data["prior"]
        return PriorBox(np.array([prior[n][0] for n in PARAM_NAMES], dtype=float),
                        np.array([prior[n][1] for n in PARAM_NAMES], dtype=float))

    @property
    def elastic(self) -> ElasticParams:
        return ElasticParams(**{k: float(v) for k, v in self.data["elastic"].items()})

    @property
    def schedule(self) -> LoadingSchedule:
        ld = self.data["loading"]
        return LoadingSchedule(float(ld["sigma_c"]), float(ld["eps_a_rate"]), int(ld["n_steps"]),
                               float(ld["dt"]), float(ld["tol_lat"]), float(ld["rate_time"]))

    @property
    def stations(self) -> np.ndarray:
        values = self.data["stations"]["values"]
        if values is not None:
            return np.asarray(values, dtype=float)
        return default_stations(self.schedule, self.data["stations"]["count"])

    @property
    def workers(self) -> int:
        return self.data["workers"] or os.cpu_count() or 1

    def preset(self, k: int) -> dict:
        presets = self.data["mcmc"]["presets"]
        return dict(presets.get(k, presets.get(str(k), self.data["mcmc"]["default_preset"])))

    def section_hash(self, *sections) -> str:
        payload = {s: self.data[s] for s in sections}
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
