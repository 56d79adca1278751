"""Sectioned key=value experiment configuration with CLI overrides."""

import math
from dataclasses import dataclass, field, fields


class ConfigError(Exception):
    """Bad configuration file, key, or value."""


@dataclass
class ExperimentConfig:
    """Knobs shared by all experiments; defaults match the standard runs."""
    # domain
    domain_tag: str = "unit_square"
    # coefficients
    coefficient: str = "lipschitz_kink"
    # discretization
    degree: int = 1
    theta: float = 0.5
    dt_factor: float = 0.25          # dt ~ dt_factor * h^2, snapped to T
    dense_limit: int = 3000
    rho_ref: int = 4
    snapshot_cap: int = 1024
    # experiment
    h_levels: tuple = (8, 16, 32, 64)
    T: float = 1.0
    p_list: tuple = (2.0, 4.0)
    q_list: tuple = (2.0, 4.0)
    n_probes: int = 20
    n_sources: int = 3
    seed: int = 42
    C_star: float = 16.0
    t_points: int = 25
    time_pieces: int = 8
    t_end: float = 3.0
    source_strategy: str = "canonical"
    jobs: int = 1
    output: str = ""

    def __post_init__(self):
        if self.domain_tag not in ("unit_square", "disk_polygon"):
            raise ConfigError(f"unknown domain tag {self.domain_tag!r}")
        if self.degree not in (1, 2):
            raise ConfigError("degree must be 1 or 2")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0.5, 1]")
        if self.dt_factor <= 0:
            raise ConfigError("dt_factor must be positive")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if len(self.h_levels) < 1 or any(n < 1 for n in self.h_levels):
            raise ConfigError("h_levels must be positive integers")
        if self.rho_ref < 1 or 2 ** int(round(math.log2(self.rho_ref))) != self.rho_ref:
            raise ConfigError("rho_ref must be a power of 2")
        if self.n_probes < 1:
            raise ConfigError("n_probes must be >= 1")
        if self.C_star <= 0:
            raise ConfigError("C_star must be positive")
        for p in tuple(self.p_list) + tuple(self.q_list):
            if p != math.inf and not 1 <= p < math.inf:
                raise ConfigError("exponents must lie in [1, inf]")

    def levels_requirement(self, minimum=2):
        if len(self.h_levels) < minimum:
            raise ConfigError(
                f"this experiment needs at least {minimum} h-levels")


_SECTIONS = {
    "domain": {"tag": "domain_tag"},
    "coefficients": {"name": "coefficient"},
    "discretization": {
        "degree": "degree", "theta": "theta", "dt_factor": "dt_factor",
        "dense_limit": "dense_limit", "rho_ref": "rho_ref",
        "snapshot_cap": "snapshot_cap",
    },
    "experiment": {
        "h_levels": "h_levels", "T": "T", "p_list": "p_list",
        "q_list": "q_list", "n_probes": "n_probes", "n_sources": "n_sources",
        "seed": "seed", "C_star": "C_star", "t_points": "t_points",
        "time_pieces": "time_pieces", "t_end": "t_end",
        "source_strategy": "source_strategy", "jobs": "jobs",
        "output": "output",
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(fieldname, raw, where):
    raw = raw.strip()
    try:
        if fieldname in ("h_levels",):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if fieldname in ("p_list", "q_list"):
            return tuple(math.inf if x.strip() in ("inf", "Inf") else float(x)
                         for x in raw.split(",") if x.strip())
        if fieldname in ("degree", "dense_limit", "rho_ref", "snapshot_cap",
                         "n_probes", "n_sources", "seed", "t_points",
                         "time_pieces", "jobs"):
            return int(raw)
        if fieldname in ("theta", "dt_factor", "T", "C_star", "t_end"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value {raw!r} for {fieldname}") from exc


def read_config_file(path):
    """Parse the sectioned key=value format into a {field: value} dict."""
    values = {}
    section = None
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"{path}:{lineno}: unknown section "
                                  f"[{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"{path}:{lineno}: key outside any section")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigError(f"{path}:{lineno}: unknown key "
                              f"{section}.{key}")
        fieldname = _SECTIONS[section][key]
        values[fieldname] = _parse_value(fieldname, raw, f"{path}:{lineno}")
    return values


def apply_overrides(values, overrides):
    """Apply `section.key=value` strings on top of file values."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        section, key = dotted.strip().split(".", 1)
        if section not in _SECTIONS or key not in _SECTIONS[section]:
            raise ConfigError(f"unknown override key {dotted!r}")
        fieldname = _SECTIONS[section][key]
        values[fieldname] = _parse_value(fieldname, raw, f"override {dotted}")
    return values


def parse_config(path=None, overrides=()):
    """Config from an optional file plus overrides, with defaults filled."""
    values = read_config_file(path) if path else {}
    apply_overrides(values, overrides)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_dict(cfg):
    out = {}
    for section, keys in _SECTIONS.items():
        out[section] = {}
        for key, fieldname in keys.items():
            v = getattr(cfg, fieldname)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out[section][key] = v
    return out
