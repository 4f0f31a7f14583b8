"""On-disk formats: headed CSV tables, JSON reports and the run manifest."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def header_line(stage: str, config_hash: str, seed: int) -> str:
    return f"# hydrate_inversion stage={stage} config_hash={config_hash} seed={seed}"


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(path, columns, rows, stage: str, config_hash: str, seed: int):
    """Write a numeric table with a provenance comment line and named columns.

    Floats are written with 17 significant digits so values round-trip exactly.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.size and rows.shape[1] != len(columns):
        raise ValueError(f"{len(columns)} column names for {rows.shape[1]} columns")
    lines = [header_line(stage, config_hash, seed), ",".join(columns)]
    lines.extend(",".join(FLOAT_FMT % v for v in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def read_header(path) -> dict:
    """Key/value pairs of the leading ``#`` line."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)


def read_csv(path):
    """Return ``(columns, data)`` with ``data`` shaped ``(rows, columns)``."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    if not lines:
        raise ValueError(f"{path}: no column header")
    columns = lines[0].strip().split(",")
    if len(lines) == 1:
        return columns, np.zeros((0, len(columns)))
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return columns, data


def write_json(path, payload: dict, stage: str, config_hash: str, seed: int):
    body = {"stage": stage, "config_hash": config_hash, "seed": seed, **payload}
    _atomic_write(path, json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class RunManifest:
    """Stage completion markers with their config hashes and output files."""

    def __init__(self, root):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        self.stages = {}
        if self.path.exists():
            self.stages = read_json(self.path).get("stages", {})

    def is_complete(self, key: str, config_hash: str) -> bool:
        entry = self.stages.get(key)
        if entry is None or entry.get("config_hash") != config_hash:
            return False
        return all((self.root / f).exists() for f in entry.get("files", []))

    def mark(self, key: str, config_hash: str, files):
        rel = sorted(str(Path(f).resolve().relative_to(self.root.resolve())) for f in files)
        self.stages[key] = {"config_hash": config_hash, "files": rel}
        self.save()

    def invalidate(self, key: str):
        if self.stages.pop(key, None) is not None:
            self.save()

    def save(self):
        _atomic_write(self.path, json.dumps({"stages": self.stages}, indent=2, sort_keys=True) + "\n")
