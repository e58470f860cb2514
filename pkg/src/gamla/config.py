"""Run configuration: flat dotted keys, parseable from key=value text or JSON.

Unknown keys are rejected so typos fail loudly; every artifact a run writes
embeds the fully resolved configuration and the tool version, and the run
directory is named by a hash of that resolved configuration.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .errors import ConfigError

_INT = "int"
_FLOAT = "float"
_STR = "str"
_BOOL = "bool"
_INT_LIST = "int_list"
_FLOAT_LIST = "float_list"

# key -> (type, default)
SCHEMA: dict[str, tuple[str, object]] = {
    "seed": (_INT, 0),
    "out_dir": (_STR, "runs"),
    "dataset.kind": (_STR, "quadric"),
    "dataset.count": (_INT, 10000),
    "dataset.seed": (_INT, 1),
    "dataset.path": (_STR, ""),
    "dataset.headerless": (_BOOL, False),
    "dataset.noise_sigma": (_FLOAT, 0.0),
    "dataset.noise_seed": (_INT, 2),
    "dataset.hole_cx": (_FLOAT, 0.25),
    "dataset.hole_cy": (_FLOAT, 0.25),
    "dataset.hole_radius": (_FLOAT, 0.4),
    "arch.hidden": (_INT_LIST, [3]),
    "arch.m": (_INT, 2),
    "round1.epochs": (_INT, 2000),
    "round1.lr": (_FLOAT, 2e-3),
    "round1.batch_size": (_INT, 256),
    "round1.seed": (_INT, 101),
    "round2.epochs": (_INT, 1000),
    "round2.lr": (_FLOAT, 2e-3),
    "round2.batch_size": (_INT, 256),
    "round2.seed": (_INT, 202),
    "round2.ambient_count": (_INT, 0),  # 0 = twice the manifold size
    "round2.manifold_mix": (_FLOAT, 0.1),
    "ambient.margin": (_FLOAT, 0.25),
    "thresholds.xi": (_FLOAT, 1e-4),
    "geometry.eps": (_FLOAT, 0.001),
    "taylor.tau": (_FLOAT, 0.03),
    "taylor.half_width": (_FLOAT, 0.3),
    "taylor.grid": (_INT, 21),
    "level_set.count": (_INT, 100000),
    "dimscan.candidates": (_INT_LIST, [1, 2, 3]),
    "dimscan.repeats": (_INT, 10),
    "dimscan.rho": (_FLOAT, 0.9),
    "sweep.depths": (_INT_LIST, [3]),
    "sweep.widths": (_INT_LIST, [4, 18, 64]),
    "sweep.sigmas": (_FLOAT_LIST, [0.0, 0.005, 0.01, 0.015]),
    "sweep.repeats": (_INT, 10),
    "sweep.m": (_INT, 2),
    "interpolate.steps": (_INT, 10),
    "anomaly.error_threshold": (_FLOAT, 0.0),  # 0 = derive from normal data
    "anomaly.percentile": (_FLOAT, 99.0),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_value(key: str, raw) -> object:
    kind = SCHEMA[key][0]
    try:
        if kind == _INT:
            if isinstance(raw, bool):
                raise ValueError("expected integer")
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _STR:
            return str(raw)
        if kind == _BOOL:
            if isinstance(raw, bool):
                return raw
            token = str(raw).strip().lower()
            if token in _TRUE:
                return True
            if token in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
        items = [s for s in items if str(s).strip() != ""]
        if kind == _INT_LIST:
            return [int(v) for v in items]
        return [float(v) for v in items]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


class RunConfig:
    """Resolved configuration with defaults applied."""

    def __init__(self, overrides: dict | None = None):
        self._values = {key: default for key, (_, default) in SCHEMA.items()}
        for key, raw in (overrides or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            self._values[key] = _parse_value(key, raw)

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self._values[key] = _parse_value(key, value)

    def to_flat_dict(self) -> dict:
        return dict(sorted(self._values.items()))

    def canonical_text(self) -> str:
        lines = []
        for key, value in sorted(self._values.items()):
            if isinstance(value, list):
                rendered = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                rendered = repr(value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]

    def meta(self) -> dict:
        return {"version": __version__, "config_hash": self.hash, "config": self.to_flat_dict()}


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in doc.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{full}."))
        else:
            flat[full] = value
    return flat


def parse_config(path) -> RunConfig:
    """Load a key=value file (with '#' comments) or a JSON document."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top-level JSON must be an object")
        return RunConfig(_flatten(doc))
    overrides = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        overrides[key.strip()] = value.strip()
    return RunConfig(overrides)
