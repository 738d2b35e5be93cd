"""Experiment configuration: TOML with one flat table per module.

Every field is checked, and the model objects built, before any computation
starts. ``threads`` and ``backend`` only affect how results are computed,
not what they are, so they are left out of the provenance hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .demand import DemandModel, Family, ProblemSpec
from .errors import ValidationError
from .hjb import SimilarityGrid, Tolerances
from .simulate import SimulationConfig

OUTPUT_DIR_ENV = "DYNPRICE_OUTPUT_DIR"

# None marks "optional, derived when absent"
DEFAULTS: dict[str, dict] = {
    "problem": {"family": "linear", "q1": 1.5, "C": 0.5, "sigma": 0.1, "a_max": None},
    "solver": {"n_xi": 2001, "xi_max": None, "n_tau": 101, "rtol": 1e-12, "atol": 1e-14,
               "h0": 1e-6, "h_min": 1e-12, "max_steps": 50_000_000, "far_field": "dirichlet",
               "backend": "auto"},
    "simulation": {"n_paths": 10_000, "dt": 0.01, "substeps": 1, "seed": 0, "estimator": "estimated",
                   "initial_stock": 1.0, "threads": 1, "block_size": 4096, "policy": "deterministic",
                   "record_paths": 20, "thin": 1},
    "compare": {"sigmas": [0.1], "histogram_bins": 60, "price_quantiles": False},
    "asymptotics": {"betas": [0.5, 0.75, 1.0, 1.25], "L": 10.0, "n_nodes": 2001,
                    "taus": [0.3, 0.5, 0.7], "sigmas": [0.1, 0.2], "window": 6.0, "n_points": 121},
    "brownian": {"q_tilde": 1.0, "sigma_tilde": 0.05, "dts": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 1e-5, 1e-6],
                 "n_intervals": 100_000, "seed": 0, "substeps": 1},
    "outputs": {"dir": None},
}

EXECUTION_ONLY = {("simulation", "threads"), ("solver", "backend"), ("outputs", "dir")}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _check_type(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if default is None:
        if value is None or isinstance(value, (int, float)) and not isinstance(value, bool) or isinstance(value, str):
            return value
        raise ConfigError(f"{where}: expected a number or string, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of numbers, got {value!r}")
        if not value:
            raise ConfigError(f"{where}: list must not be empty")
        return [float(v) for v in value]
    raise ConfigError(f"{where}: unsupported value {value!r}")


def merge(raw: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for section, table in raw.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(DEFAULTS)}")
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in table.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{section}.{key}: unknown key; expected one of {sorted(DEFAULTS[section])}")
            cfg[section][key] = _check_type(section, key, value, DEFAULTS[section][key])
    return cfg


def parse_override(text: str) -> tuple[str, str, object]:
    """'section.key=value' with value in TOML syntax; bare words are taken as strings."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    lhs, rhs = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {rhs.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = rhs.strip()
    return section, key, value


def load_raw(path: str | os.PathLike | None, overrides=()) -> dict:
    raw: dict = {}
    if path is not None:
        try:
            raw = tomllib.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    for item in overrides:
        section, key, value = parse_override(item)
        raw.setdefault(section, {})[key] = value
    return raw


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    # built objects

    def problem(self, sigma: float | None = None) -> ProblemSpec:
        p = self.data["problem"]
        try:
            model = DemandModel(Family(p["family"]), p["q1"], p["a_max"])
            return ProblemSpec(model, p["C"], p["sigma"] if sigma is None else sigma)
        except ValueError as e:
            raise ConfigError(f"[problem]: {e}") from None

    def grid(self, spec: ProblemSpec) -> SimilarityGrid:
        s = self.data["solver"]
        try:
            return SimilarityGrid.default(spec, n_xi=s["n_xi"], n_tau=s["n_tau"], xi_max=s["xi_max"])
        except ValueError as e:
            raise ConfigError(f"[solver]: {e}") from None

    def tolerances(self) -> Tolerances:
        s = self.data["solver"]
        try:
            return Tolerances(s["rtol"], s["atol"], s["h0"], s["h_min"], s["max_steps"], s["far_field"])
        except ValueError as e:
            raise ConfigError(f"[solver]: {e}") from None

    @property
    def backend(self) -> str | None:
        b = self.data["solver"]["backend"]
        return None if b == "auto" else b

    def simulation(self) -> SimulationConfig:
        s = self.data["simulation"]
        try:
            return SimulationConfig(s["n_paths"], s["dt"], s["substeps"], s["seed"], s["estimator"],
                                    s["initial_stock"], s["threads"], s["block_size"])
        except ValueError as e:
            raise ConfigError(f"[simulation]: {e}") from None

    def section(self, name: str) -> dict:
        return self.data[name]

    def output_dir(self, override: str | None = None) -> Path:
        d = override or self.data["outputs"]["dir"] or os.environ.get(OUTPUT_DIR_ENV) or "out"
        return Path(d)

    # provenance

    def canonical(self) -> dict:
        return {sec: {k: v for k, v in table.items() if (sec, k) not in EXECUTION_ONLY}
                for sec, table in self.data.items()}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self) -> str:
        meta = {"version": __version__, "seed": self.data["simulation"]["seed"],
                "config_hash": self.hash(), "config": self.canonical()}
        return "# provenance " + json.dumps(meta, sort_keys=True, separators=(",", ":"))


def validate(cfg: ExperimentConfig) -> None:
    """Build every model object once so bad fields fail before any work."""
    spec = cfg.problem()
    cfg.tolerances()
    cfg.simulation()
    if cfg.backend not in (None, "python", "cython"):
        raise ConfigError(f"solver.backend: expected auto, python or cython, got {cfg.backend!r}")
    if cfg.data["simulation"]["policy"] not in ("deterministic", "hjb"):
        raise ConfigError("simulation.policy: expected 'deterministic' or 'hjb'")
    sigmas = [spec.sigma] + cfg.data["compare"]["sigmas"] + cfg.data["asymptotics"]["sigmas"]
    if any(s < 0 for s in sigmas):
        raise ConfigError("sigma values must be >= 0")
    if spec.demand.family is Family.LINEAR:
        cfg.grid(spec)
    a = cfg.data["asymptotics"]
    if any(b <= 0 for b in a["betas"]) or a["L"] <= 0 or a["n_nodes"] < 5:
        raise ConfigError("[asymptotics]: betas and L must be positive, n_nodes >= 5")
    if any(not 0 < t < 1 for t in a["taus"]):
        raise ConfigError("asymptotics.taus: values must lie in (0, 1)")
    b = cfg.data["brownian"]
    if b["q_tilde"] <= 0 or b["sigma_tilde"] < 0 or any(d < 0 for d in b["dts"]) or b["n_intervals"] < 1:
        raise ConfigError("[brownian]: need q_tilde > 0, sigma_tilde >= 0, dts >= 0, n_intervals >= 1")
    if cfg.data["compare"]["histogram_bins"] < 1:
        raise ConfigError("compare.histogram_bins: must be >= 1")
    s = cfg.data["simulation"]
    if s["record_paths"] < 0 or s["thin"] < 1:
        raise ConfigError("[simulation]: record_paths must be >= 0 and thin >= 1")


def load_config(path=None, overrides=()) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig(merge(load_raw(path, overrides)))
        validate(cfg)
    except ValidationError as e:
        raise ConfigError(str(e)) from None
    return cfg


def config_from_provenance(line: str) -> ExperimentConfig:
    """Rebuild the configuration recorded in an artifact's provenance line."""
    prefix = "# provenance "
    if not line.startswith(prefix):
        raise ConfigError("not a provenance line")
    meta = json.loads(line[len(prefix):])
    return ExperimentConfig(merge(meta["config"]))
