"""Line-oriented experiment configuration.

Files hold `key = value` lines with `#` comments.  Unknown keys are
rejected; values are validated eagerly so failures name the offending key.
Defaults reproduce the desk-scale experiment family (T = 1, kappa = 0,
r_ref = 10, n_samples = 20, ten-by-ten base mesh).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

EXPERIMENTS = ("verify-law", "explicit", "converge", "sample-noise", "selftest")
COUPLINGS = ("tau~h", "tau~h2")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    p: float = 2.0
    kappa: float = 0.0
    noise_kind: str = "linear"
    noise_lam: float = 1.0
    T: float = 1.0
    mesh_n0: int = 10
    levels: int = 2
    m_list: tuple = (16, 32, 64, 128, 256)
    m_fine: int = 256
    m_coarse: tuple = (8, 16, 32, 64)
    coupling: str = "tau~h"
    r_ref: int = 10
    n_samples: int = 20
    master_seed: int = 0
    newton_abs_tol: float = 1e-10
    newton_rel_tol: float = 1e-10
    newton_max_iter: int = 50
    out: str | None = None


def _parse_int_list(text):
    items = text.replace(",", " ").split()
    return tuple(int(v) for v in items)


def _positive(name, value):
    if value <= 0:
        raise ConfigError(f"key {name!r} must be positive, got {value}")
    return value


_PARSERS = {
    "experiment": str,
    "p": float,
    "kappa": float,
    "T": float,
    "mesh_n0": int,
    "levels": int,
    "M_list": _parse_int_list,
    "M_f": int,
    "M_c": _parse_int_list,
    "coupling": str,
    "r_ref": int,
    "n_samples": int,
    "master_seed": int,
    "newton_abs_tol": float,
    "newton_rel_tol": float,
    "newton_max_iter": int,
    "out": str,
}

_FIELD_OF = {
    "experiment": "experiment", "p": "p", "kappa": "kappa", "T": "T",
    "mesh_n0": "mesh_n0", "levels": "levels", "M_list": "m_list",
    "M_f": "m_fine", "M_c": "m_coarse", "coupling": "coupling",
    "r_ref": "r_ref", "n_samples": "n_samples", "master_seed": "master_seed",
    "newton_abs_tol": "newton_abs_tol", "newton_rel_tol": "newton_rel_tol",
    "newton_max_iter": "newton_max_iter", "out": "out",
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config file body."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "noise":
            parts = val.split()
            if not parts or parts[0] not in ("linear", "trace"):
                raise ConfigError(f"line {lineno}: noise must be 'linear [lam]' or 'trace'")
            values["noise_kind"] = parts[0]
            if len(parts) > 1:
                values["noise_lam"] = float(parts[1])
            continue
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[_FIELD_OF[key]] = _PARSERS[key](val)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    if not cfg.p > 1.0:
        raise ConfigError(f"key 'p' must exceed 1, got {cfg.p}")
    if cfg.kappa < 0.0:
        raise ConfigError(f"key 'kappa' must be nonnegative, got {cfg.kappa}")
    if cfg.noise_kind not in ("linear", "trace"):
        raise ConfigError(f"unknown noise kind {cfg.noise_kind!r}")
    if cfg.coupling not in COUPLINGS:
        raise ConfigError(f"key 'coupling' must be one of {COUPLINGS}")
    for name in ("T", "mesh_n0", "m_fine", "r_ref", "n_samples", "newton_max_iter"):
        _positive(name, getattr(cfg, name))
    if cfg.levels < 0:
        raise ConfigError("key 'levels' must be nonnegative")
    if min(cfg.newton_abs_tol, cfg.newton_rel_tol) <= 0.0:
        raise ConfigError("newton tolerances must be positive")
    for name, seq in (("M_list", cfg.m_list), ("M_c", cfg.m_coarse)):
        if not seq:
            raise ConfigError(f"key {name!r} must not be empty")
        if any(v <= 0 for v in seq):
            raise ConfigError(f"key {name!r} must hold positive integers")
        if list(seq) != sorted(seq):
            raise ConfigError(f"key {name!r} must be sorted ascending")
    if any(max(cfg.m_list) % v for v in cfg.m_list):
        raise ConfigError("every M_list entry must divide the largest one")
    bad = [v for v in cfg.m_coarse if cfg.m_fine % v]
    if bad:
        raise ConfigError(f"M_c entries {bad} do not divide M_f = {cfg.m_fine}")
    if cfg.experiment == "explicit":
        if cfg.p != 2.0:
            raise ConfigError("the explicit-solution experiment requires p = 2")
        if cfg.noise_kind != "linear":
            raise ConfigError("the explicit-solution experiment requires linear noise")


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(kwargs) - known
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    out = replace(cfg, **kwargs)
    validate(out)
    return out
