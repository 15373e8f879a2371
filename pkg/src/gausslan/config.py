"""Experiment configuration files (TOML) and run manifests.

A config describes one experiment::

    [model]
    id = "ar1_mild"
    theta = [1.0, 1.0]
    params = { alpha = 0.15 }

    [run]
    n = [1024, 4096]
    replications = 400
    seed = 7
    sampler = "cholesky"
    workers = 1

    [audit]            # read by ``gausslan audit``
    n_grid = [512, 1024, 2048, 4096]

    [audit.settings]   # overrides of AuditSettings thresholds
    lan_residual = 0.1

    [estimate]         # read by ``gausslan estimate``
    data = ["paths/n1024_r0"]   # optional; otherwise paths are simulated
    curvature = "hessian"

    [fisher]
    n = [256, 1024, 4096]
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import GaussLANError
from .verification import AuditSettings

DEFAULT_MAX_N = 4096


class ConfigError(GaussLANError, ValueError):
    """The configuration file is missing, malformed or inconsistent."""


def _int_list(value, key):
    if isinstance(value, int):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, int) and v > 0 for v in value):
        raise ConfigError(f"{key} must be a positive integer or a list of them")
    return value


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of the parsed config."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class ExperimentConfig:
    model_id: str
    theta: list
    model_params: dict = field(default_factory=dict)
    n_list: list = field(default_factory=lambda: [256])
    replications: int = 1
    seed: int = 0
    sampler: str = "cholesky"
    workers: int = 1
    max_n: int = DEFAULT_MAX_N
    audit: dict = field(default_factory=dict)
    estimate: dict = field(default_factory=dict)
    fisher: dict = field(default_factory=dict)
    base_dir: str = "."
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def audit_settings(self) -> AuditSettings:
        overrides = dict(self.audit.get("settings", {}))
        known = {f.name for f in dataclasses.fields(AuditSettings)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown audit settings: {sorted(unknown)}")
        if "envelope_epsilons" in overrides:
            overrides["envelope_epsilons"] = tuple(overrides["envelope_epsilons"])
        settings = AuditSettings(**overrides)
        settings.dense_cap = min(settings.dense_cap, self.max_n)
        return settings

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def parse_config(raw: dict, base_dir: str = ".", seed: Optional[int] = None,
                 workers: Optional[int] = None, max_n: Optional[int] = None) -> ExperimentConfig:
    """Validate a parsed TOML document; command-line overrides win over file values."""
    if not isinstance(raw.get("model"), dict):
        raise ConfigError("missing [model] section")
    model = raw["model"]
    if not isinstance(model.get("id"), str):
        raise ConfigError("model.id must be a string")
    theta = model.get("theta")
    if not isinstance(theta, list) or not all(isinstance(t, (int, float)) for t in theta):
        raise ConfigError("model.theta must be a list of numbers")
    params = model.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("model.params must be a table")
    run = raw.get("run", {})
    cfg = ExperimentConfig(
        model_id=model["id"], theta=[float(t) for t in theta], model_params=dict(params),
        n_list=_int_list(run.get("n", [256]), "run.n"),
        replications=int(run.get("replications", 1)),
        seed=int(run.get("seed", 0)) if seed is None else int(seed),
        sampler=str(run.get("sampler", "cholesky")),
        workers=int(run.get("workers", 1)) if workers is None else int(workers),
        max_n=int(run.get("max_n", DEFAULT_MAX_N)) if max_n is None else int(max_n),
        audit=dict(raw.get("audit", {})), estimate=dict(raw.get("estimate", {})),
        fisher=dict(raw.get("fisher", {})), base_dir=base_dir, raw=raw)
    if cfg.replications < 1:
        raise ConfigError("run.replications must be at least 1")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    if cfg.sampler not in ("cholesky", "circulant"):
        raise ConfigError(f"unknown sampler {cfg.sampler!r}")
    # command-line overrides are part of the experiment identity
    cfg.raw = {**raw, "_overrides": {"seed": cfg.seed, "workers": cfg.workers, "max_n": cfg.max_n}}
    return cfg


def load_config(path: str, **overrides) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw, os.path.dirname(os.path.abspath(path)), **overrides)
