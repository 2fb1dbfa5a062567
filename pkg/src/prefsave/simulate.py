"""Monte Carlo wealth paths under a solved policy.

Randomness is counter-based: path ``p`` draws from a Philox generator keyed
by ``(seed, p)``, and the two uniforms used at step t sit at a fixed
counter offset, so each (seed, path, t) triple maps to the same draw
regardless of how paths are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ExogenousEnvironment
from .solver import ConsumptionPolicy, _interp

UNDERFLOW = 1e-300
FD_STEP = 1e-3


@dataclass(frozen=True)
class SimulationRun:
    seed: int
    horizon: int
    n_paths: int
    initial_wealth: float
    initial_state: int
    wealth: np.ndarray        # (n_paths, T + 1)
    consumption: np.ndarray   # (n_paths, T + 1)
    state: np.ndarray         # (n_paths, T + 1) flat composite index
    saving_rate: np.ndarray   # (n_paths, T + 1), NaN at t = 0
    R_drawn: np.ndarray       # (n_paths, T + 1), NaN at t = 0
    Y_drawn: np.ndarray       # (n_paths, T + 1), NaN at t = 0
    truncated: np.ndarray     # (n_paths,) bool


def path_uniforms(seed: int, path: int, horizon: int) -> np.ndarray:
    """Uniform draws (horizon, 2) for one path; row t-1 drives step t."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).random((horizon, 2))


def _atom_tables(env: ExogenousEnvironment):
    S = env.n_states
    A = max(len(env.innovations.pair(z, zh)) for z, zh, _ in env.support_pairs())
    cum = np.ones((S, S, A))
    count = np.ones((S, S), dtype=int)
    R = np.ones((S, S, A))
    Y = np.ones((S, S, A))
    for z, zh, a in env.support_pairs():
        n = len(a)
        count[z, zh] = n
        cum[z, zh, :n] = np.cumsum(a[:, 0])
        R[z, zh, :n] = a[:, 2]
        Y[z, zh, :n] = a[:, 3]
    return cum, count, R, Y


def simulate_paths(policy: ConsumptionPolicy, env: ExogenousEnvironment, seed: int,
                   n_paths: int, horizon: int, w0: float, z0: int) -> SimulationRun:
    if w0 <= 0:
        raise ValueError("initial wealth must be positive")
    if n_paths < 1 or horizon < 1:
        raise ValueError("need n_paths >= 1 and horizon >= 1")
    if not 0 <= z0 < env.n_states:
        raise ValueError(f"initial state {z0} out of range")

    U = np.stack([path_uniforms(seed, p, horizon) for p in range(n_paths)])
    cumP = np.cumsum(env.P, axis=1)
    cumA, count, Rtab, Ytab = _atom_tables(env)
    S = env.n_states

    shape = (n_paths, horizon + 1)
    w = np.full(shape, np.nan)
    c = np.full(shape, np.nan)
    s = np.full(shape, np.nan)
    Rd = np.full(shape, np.nan)
    Yd = np.full(shape, np.nan)
    z = np.zeros(shape, dtype=int)
    alive = np.ones(n_paths, dtype=bool)
    truncated = np.zeros(n_paths, dtype=bool)

    w[:, 0] = w0
    z[:, 0] = z0
    for t in range(horizon):
        if not alive.any():
            break
        zt = z[:, t]
        c[alive, t] = _interp(policy, w[alive, t], zt[alive])
        zn = np.minimum((cumP[zt] < U[:, t, 0, None]).sum(axis=1), S - 1)
        k = (cumA[zt, zn] < U[:, t, 1, None]).sum(axis=1)
        k = np.minimum(k, count[zt, zn] - 1)
        R = Rtab[zt, zn, k]
        Y = Ytab[zt, zn, k]
        sav = w[:, t] - c[:, t]
        w_next = R * sav + Y
        ok = alive & (w_next >= UNDERFLOW)
        truncated |= alive & ~ok
        alive = ok
        z[:, t + 1] = np.where(alive, zn, z[:, t])
        w[alive, t + 1] = w_next[alive]
        Rd[alive, t + 1] = R[alive]
        Yd[alive, t + 1] = Y[alive]
        denom = np.maximum((R - 1.0) * sav, 0.0) + Y
        s[alive, t + 1] = ((w_next - w[:, t]) / denom)[alive]
    last = horizon
    c[alive, last] = _interp(policy, w[alive, last], z[alive, last])

    return SimulationRun(int(seed), int(horizon), int(n_paths), float(w0), int(z0),
                         w, c, z, s, Rd, Yd, truncated)


def saving_rate_identity(w, c, R, Y):
    """Saving rate written through c/w and Y/w; equals the primitive definition."""
    a = c / w
    up = np.maximum(R - 1.0, 0.0)
    down = np.maximum(1.0 - R, 0.0)
    return 1.0 - (down * (1.0 - a) + a) / (up * (1.0 - a) + Y / w)


def identity_gap(run: SimulationRun) -> np.ndarray:
    """Relative gap between the two saving-rate codings, per simulated period."""
    w, c = run.wealth[:, :-1], run.consumption[:, :-1]
    R, Y = run.R_drawn[:, 1:], run.Y_drawn[:, 1:]
    s = run.saving_rate[:, 1:]
    ok = np.isfinite(s)
    alt = saving_rate_identity(w[ok], c[ok], R[ok], Y[ok])
    return np.abs(s[ok] - alt) / np.maximum(1.0, np.abs(s[ok]))


def empirical_mpc(policy: ConsumptionPolicy, z: int, wealth_levels, h: float = FD_STEP):
    """Average propensity c/w and centered local slope at each wealth level."""
    levels = np.asarray(wealth_levels, dtype=float)
    if np.any(levels <= 0) or np.any(levels > 10 * policy.grid.w_max):
        raise ValueError("wealth levels must lie in (0, 10 * w_max]")
    zz = np.full(levels.shape, z)
    c = _interp(policy, levels, zz)
    hi = _interp(policy, levels * (1 + h), zz)
    lo = _interp(policy, levels * (1 - h), zz)
    slope = (hi - lo) / (2 * levels * h)
    return [(float(w), float(cw), float(sl)) for w, cw, sl in zip(levels, c / levels, slope)]
