"""Run configuration: YAML (or JSON) document -> validated objects."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .env import ConfigError, ExogenousEnvironment, build_environment
from .solver import WealthGrid

ENV_KEYS = ("bar_states", "tilde_states", "bar_P", "tilde_P", "gamma", "innovations")


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 5000


@dataclass(frozen=True)
class SimulateSettings:
    seed: int = 0
    n_paths: int = 10
    horizon: int = 1000
    w0: float = 1.0
    z0: int = 0


@dataclass(frozen=True)
class RunConfig:
    env: ExogenousEnvironment
    grid: WealthGrid
    solver: SolverSettings
    simulate: SimulateSettings
    out_dir: str | None
    raw: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: Mapping) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _block(raw: Mapping, name: str) -> Mapping:
    block = raw.get(name) or {}
    if not isinstance(block, Mapping):
        raise ConfigError(f"{name} must be a mapping", name)
    return block


def _number(block: Mapping, key: str, default, kind, where: str):
    val = block.get(key, default)
    try:
        if kind is int:
            if isinstance(val, float) and not val.is_integer():
                raise ValueError
            return int(val)
        return float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} must be a number", f"{where}.{key}")


def parse_run_config(raw: Mapping) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("configuration must be a mapping", "")
    if "environment" in raw:
        env_raw = raw["environment"]
    else:
        env_raw = {k: raw[k] for k in ENV_KEYS if k in raw}
    env = build_environment(env_raw)

    g = _block(raw, "grid")
    spacing = g.get("spacing", "geometric")
    if spacing not in ("geometric", "linear"):
        raise ConfigError("grid.spacing must be 'geometric' or 'linear'", "grid.spacing")
    size = _number(g, "size", 400, int, "grid")
    w_min = _number(g, "w_min", 1e-2 * env.min_atom("Y"), float, "grid")
    w_max = _number(g, "w_max", 1e4 * env.max_atom("Y"), float, "grid")
    if size < 16:
        raise ConfigError("grid.size must be at least 16", "grid.size")
    if not 0 < w_min < w_max:
        raise ConfigError("grid needs 0 < w_min < w_max", "grid")
    grid = WealthGrid.make(w_min, w_max, size, spacing)

    s = _block(raw, "solver")
    solver = SolverSettings(_number(s, "tol", 1e-10, float, "solver"),
                            _number(s, "max_iter", 5000, int, "solver"))
    if not solver.tol > 0:
        raise ConfigError("solver.tol must be positive", "solver.tol")
    if solver.max_iter < 1:
        raise ConfigError("solver.max_iter must be at least 1", "solver.max_iter")

    m = _block(raw, "simulate")
    z0 = m.get("z0", 0)
    if isinstance(z0, (list, tuple)) and len(z0) == 2:
        z0 = env.flat_index(int(z0[0]), int(z0[1]))
    sim = SimulateSettings(
        seed=_number(m, "seed", 0, int, "simulate"),
        n_paths=_number(m, "n_paths", 10, int, "simulate"),
        horizon=_number(m, "horizon", 1000, int, "simulate"),
        w0=_number(m, "w0", 1.0, float, "simulate"),
        z0=_number({"z0": z0}, "z0", 0, int, "simulate"),
    )
    if sim.n_paths < 1 or sim.horizon < 1:
        raise ConfigError("simulate.n_paths and simulate.horizon must be >= 1", "simulate")
    if sim.w0 <= 0:
        raise ConfigError("simulate.w0 must be positive", "simulate.w0")
    if not 0 <= sim.z0 < env.n_states:
        raise ConfigError(f"simulate.z0 must be a flat state index below {env.n_states}",
                          "simulate.z0")
    if not 0 <= sim.seed < 2 ** 64:
        raise ConfigError("simulate.seed must fit in an unsigned 64-bit integer", "simulate.seed")

    out = raw.get("output")
    if isinstance(out, Mapping):
        out = out.get("dir")
    return RunConfig(env, grid, solver, sim, out, dict(raw))


def load_run_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path))
    try:
        raw: Any = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}", str(path))
    return parse_run_config(raw)
