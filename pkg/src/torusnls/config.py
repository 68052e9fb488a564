"""Flat key-value run configuration.

One `key=value` pair per line, dotted section prefixes (`grid.K=16`),
`#` comments.  Every command validates its full key set before any
computation; unknown keys are rejected (typo safety).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import GridSpec

_COMMON = {"seed", "output_dir", "threads"}

SCHEMAS: dict[str, set[str]] = {
    "verify-calculus": _COMMON | {
        "grid.d", "grid.K", "grid.G", "grid.m", "grid.eps_q",
        "debug.corrupt_eta",
    },
    "scan-mass": _COMMON | {
        "grid.d",
        "scan.gamma", "scan.tau_star", "scan.ell_cutoff",
        "scan.mass_lo", "scan.mass_hi", "scan.mass_count", "scan.omega",
    },
    "normal-form": _COMMON | {
        "grid.d", "grid.K", "grid.G", "grid.m", "grid.eps_q",
        "nf.delta", "nf.tau", "nf.eps_nf",
        "nf.steps_diag", "nf.steps_nf", "nf.eps_data", "nf.band", "nf.s",
    },
    "lifespan": _COMMON | {
        "grid.d", "grid.K", "grid.G", "grid.m", "grid.eps_q",
        "sim.dt", "sim.t_max", "sim.rho", "sim.s_high",
        "sim.blowup_factor", "sim.record_stride",
        "lifespan.eps_list", "lifespan.seeds", "lifespan.horizon_factor",
    },
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        key, val = key.strip(), val.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def load_config(path, command: str) -> dict[str, str]:
    cfg = parse_config_text(Path(path).read_text())
    allowed = SCHEMAS.get(command)
    if allowed is None:
        raise ConfigError(f"unknown command {command!r}")
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
    return cfg


def get_float(cfg: dict, key: str, default: float | None = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key}")
        return default
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number: {cfg[key]!r}") from exc


def get_int(cfg: dict, key: str, default: int | None = None) -> int:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key}")
        return default
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: not an integer: {cfg[key]!r}") from exc


def get_bool(cfg: dict, key: str, default: bool = False) -> bool:
    if key not in cfg:
        return default
    val = cfg[key].lower()
    if val in ("1", "true", "yes"):
        return True
    if val in ("0", "false", "no"):
        return False
    raise ConfigError(f"{key}: not a boolean: {cfg[key]!r}")


def get_float_list(cfg: dict, key: str, default: list[float] | None = None) -> list[float]:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key}")
        return default
    try:
        return [float(v) for v in cfg[key].split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number list: {cfg[key]!r}") from exc


def grid_from_config(cfg: dict) -> GridSpec:
    d = get_int(cfg, "grid.d")
    K = get_int(cfg, "grid.K")
    m = get_float(cfg, "grid.m")
    eps_q = get_float(cfg, "grid.eps_q", 0.25)
    raw = cfg.get("grid.G", "identity")
    if raw == "identity":
        G = np.eye(d)
    elif raw.startswith("generic:"):
        from .small_divisors import generic_metric
        jitter = float(raw.split(":", 1)[1])
        G = generic_metric(d, seed=get_int(cfg, "seed", 0), jitter=jitter)
    else:
        vals = [float(v) for v in raw.split(",")]
        if len(vals) != d * d:
            raise ConfigError(f"grid.G needs {d * d} entries, got {len(vals)}")
        G = np.array(vals).reshape(d, d)
    try:
        return GridSpec(d=d, K=K, G=G, m=m, eps_q=eps_q)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
