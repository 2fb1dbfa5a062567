"""Time iteration on the Euler equation with state-dependent CRRA utility.

The operator maps a consumption policy c to Tc, where Tc(w, z) is the
xi in (0, w] solving

    u'(xi, z) = max{ E_z[beta' R' u'(c(R'(w - xi) + Y', z'), z')], u'(w, z) }

with u'(c, z) = c**(-gamma(z)).  Policies live on a wealth grid and are
extended off-grid by piecewise-linear interpolation with a slope-capped
linear tail above the top grid point.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .env import ExogenousEnvironment, SpectralReport, check_assumptions, k_matrix

log = logging.getLogger(__name__)

BRACKET_EPS = 1e-12
MAX_BISECTIONS = 200


class BracketError(RuntimeError):
    """The Euler equation did not change sign on (eps*w, w)."""


# ---------------------------------------------------------------------------
# utility
# ---------------------------------------------------------------------------

def marginal_utility(c, z, env: ExogenousEnvironment):
    """u'(c, z) = c**(-gamma_i), i the bar component of composite state z."""
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("consumption must be positive")
    out = c ** (-env.state_gamma[z])
    return float(out) if out.ndim == 0 else out


def inverse_marginal_utility(m, z, env: ExogenousEnvironment):
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise ValueError("marginal utility must be positive")
    out = m ** (-1.0 / env.state_gamma[z])
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# grid and policy containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WealthGrid:
    points: np.ndarray
    spacing: str
    w_min: float
    w_max: float

    @property
    def size(self) -> int:
        return self.points.size

    @classmethod
    def make(cls, w_min: float, w_max: float, size: int = 400,
             spacing: str = "geometric") -> "WealthGrid":
        if not 0 < w_min < w_max:
            raise ValueError("need 0 < w_min < w_max")
        if size < 16:
            raise ValueError("grid needs at least 16 points")
        if spacing == "geometric":
            pts = np.geomspace(w_min, w_max, size)
        elif spacing == "linear":
            pts = np.linspace(w_min, w_max, size)
        else:
            raise ValueError(f"unknown spacing {spacing!r}")
        pts[0], pts[-1] = w_min, w_max
        pts.setflags(write=False)
        return cls(pts, spacing, float(w_min), float(w_max))

    @classmethod
    def default_for(cls, env: ExogenousEnvironment, size: int = 400) -> "WealthGrid":
        return cls.make(1e-2 * env.min_atom("Y"), 1e4 * env.max_atom("Y"), size)


@dataclass(frozen=True)
class ConsumptionPolicy:
    """Consumption on a grid; ``values[g, z]`` is c(grid[g], z)."""

    grid: WealthGrid
    values: np.ndarray
    extrapolation_slope: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.extrapolation_slope is None:
            g = self.grid.points
            s = (v[-1] - v[-2]) / (g[-1] - g[-2])
            s = np.clip(s, 0.0, 1.0)
            s.setflags(write=False)
            object.__setattr__(self, "extrapolation_slope", s)

    @classmethod
    def identity(cls, grid: WealthGrid, n_states: int) -> "ConsumptionPolicy":
        return cls(grid, np.repeat(grid.points[:, None], n_states, axis=1))

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def __call__(self, w, z):
        return evaluate_policy(self, w, z)


def _interp(policy: ConsumptionPolicy, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorized policy evaluation; ``w`` and ``z`` broadcast together."""
    g = policy.grid.points
    v = policy.values
    w, z = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(z))
    idx = np.clip(np.searchsorted(g, w, side="right") - 1, 0, g.size - 2)
    w0, w1 = g[idx], g[idx + 1]
    v0, v1 = v[idx, z], v[idx + 1, z]
    c = v0 + (w - w0) * ((v1 - v0) / (w1 - w0))
    # exact at the knots; the formula reaches v1 only up to rounding
    c = np.where(w == w0, v0, c)
    top = w >= g[-1]
    if top.any():
        c = np.where(top, v[-1, z] + policy.extrapolation_slope[z] * (w - g[-1]), c)
    low = w < g[0]
    if low.any():
        # linear extension of the first segment, kept inside (0, w]
        fallback = w * (v[0, z] / g[0])
        c = np.where(low & (c <= 0), fallback, c)
    return np.minimum(c, w)


def evaluate_policy(policy: ConsumptionPolicy, w, z):
    """Consumption at wealth ``w`` > 0 and composite state ``z``."""
    w_arr = np.asarray(w, dtype=float)
    if np.any(w_arr <= 0):
        raise ValueError("wealth must be positive")
    out = _interp(policy, w_arr, np.asarray(z))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# transition tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Transitions:
    """Next-period atoms of every state, padded to a common length.

    Arrays have shape (S, A); ``coef`` = P(z, zh) * prob * beta * R and is 0
    on padding.
    """

    next_state: np.ndarray
    coef: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    gamma_next: np.ndarray


def _transitions(env: ExogenousEnvironment) -> _Transitions:
    S = env.n_states
    rows: list[list[tuple]] = [[] for _ in range(S)]
    for z, zh, a in env.support_pairs():
        for p, b, R, Y in a:
            coef = env.P[z, zh] * p * b * R
            if coef > 0:
                rows[z].append((zh, coef, R, Y))
    A = max(1, max(len(r) for r in rows))
    nxt = np.zeros((S, A), dtype=int)
    coef = np.zeros((S, A))
    R = np.ones((S, A))
    Y = np.ones((S, A))
    for z, r in enumerate(rows):
        for k, (zh, c, rr, yy) in enumerate(r):
            nxt[z, k], coef[z, k], R[z, k], Y[z, k] = zh, c, rr, yy
    return _Transitions(nxt, coef, R, Y, env.state_gamma[nxt])


def _expected_mu(policy: ConsumptionPolicy, tr: _Transitions, states: np.ndarray,
                 savings: np.ndarray) -> np.ndarray:
    """E_z[beta' R' u'(c(R' s + Y', z'), z')] for each (state, savings) entry.

    ``states`` and ``savings`` have shape (K,); the result has shape (K,).
    """
    nxt = tr.next_state[states]                       # (K, A)
    w_next = tr.R[states] * savings[:, None] + tr.Y[states]
    c_next = _interp(policy, w_next, nxt)
    return np.sum(tr.coef[states] * c_next ** (-tr.gamma_next[states]), axis=1)


def _thresholds(policy: ConsumptionPolicy, tr: _Transitions,
                env: ExogenousEnvironment) -> np.ndarray:
    S = env.n_states
    m = _expected_mu(policy, tr, np.arange(S), np.zeros(S))
    with np.errstate(divide="ignore"):
        return np.where(m > 0, m ** (-1.0 / env.state_gamma), np.inf)


def saving_threshold(policy: ConsumptionPolicy, z: int, env: ExogenousEnvironment) -> float:
    """Wealth level at or below which the policy's image consumes everything.

    Returns ``inf`` when no atom carries positive beta * R, in which case
    the agent always consumes all wealth.
    """
    return float(_thresholds(policy, _transitions(env), env)[z])


# ---------------------------------------------------------------------------
# the operator
# ---------------------------------------------------------------------------

def _step(policy: ConsumptionPolicy, env: ExogenousEnvironment,
          tr: _Transitions) -> ConsumptionPolicy:
    grid = policy.grid
    g = grid.points
    S = env.n_states
    wbar = _thresholds(policy, tr, env)
    new = np.repeat(g[:, None], S, axis=1)

    zz, gg = np.nonzero((g[None, :] > wbar[:, None]))
    if zz.size:
        w = g[gg]
        gam = env.state_gamma[zz]
        lo = BRACKET_EPS * w
        hi = w.copy()

        def f(xi):
            return xi ** (-gam) - _expected_mu(policy, tr, zz, w - xi)

        if np.any(f(lo) <= 0) or np.any(f(hi) >= 0):
            bad = np.flatnonzero((f(lo) <= 0) | (f(hi) >= 0))[0]
            raise BracketError(f"Euler equation has no sign change at w={w[bad]:.6g}, "
                               f"state {zz[bad]}")
        for _ in range(MAX_BISECTIONS):
            mid = 0.5 * (lo + hi)
            pos = f(mid) > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
            if np.all(hi - lo <= 2.0 * np.finfo(float).eps * hi):
                break
        new[gg, zz] = 0.5 * (lo + hi)
    return ConsumptionPolicy(grid, new)


def time_iteration_step(policy: ConsumptionPolicy, env: ExogenousEnvironment,
                        grid: WealthGrid | None = None) -> ConsumptionPolicy:
    """One application of the time-iteration operator on the policy's grid."""
    if grid is not None and not np.array_equal(grid.points, policy.grid.points):
        raise ValueError("policy is not defined on the requested grid")
    return _step(policy, env, _transitions(env))


def rho_distance(p1: ConsumptionPolicy, p2: ConsumptionPolicy,
                 env: ExogenousEnvironment) -> float:
    """Sup over grid points and states of |u'(c1) - u'(c2)|."""
    return float(state_distances(p1, p2, env).max())


def state_distances(p1: ConsumptionPolicy, p2: ConsumptionPolicy,
                    env: ExogenousEnvironment) -> np.ndarray:
    """Per-state sup distance in marginal-utility units (vector metric d)."""
    if not np.array_equal(p1.grid.points, p2.grid.points):
        raise ValueError("policies live on different grids")
    gam = env.state_gamma[None, :]
    return np.abs(p1.values ** (-gam) - p2.values ** (-gam)).max(axis=0)


def euler_residuals(policy: ConsumptionPolicy, env: ExogenousEnvironment) -> np.ndarray:
    """|u'(c) - E[beta' R' u'(c')]| on the grid; NaN at corner points."""
    tr = _transitions(env)
    g = policy.grid.points
    S = env.n_states
    zz, gg = np.meshgrid(np.arange(S), np.arange(g.size))
    zz, gg = zz.ravel(), gg.ravel()
    c = policy.values[gg, zz]
    rhs = _expected_mu(policy, tr, zz, g[gg] - c)
    res = np.abs(c ** (-env.state_gamma[zz]) - rhs)
    res[c >= g[gg]] = np.nan
    return res.reshape(g.size, S)


def monotonicity_violations(policy: ConsumptionPolicy) -> tuple[int, int]:
    """Counts of grid steps where c, respectively w - c, strictly decreases."""
    v = policy.values
    sav = policy.grid.points[:, None] - v
    return int(np.sum(np.diff(v, axis=0) < 0)), int(np.sum(np.diff(sav, axis=0) < 0))


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------

@dataclass
class SolveDiagnostics:
    iterations: int
    rho_history: list[float]
    converged: bool
    threshold_wealth: np.ndarray
    euler_residual_max: float
    r_K1: float
    monotonicity_violations: int = 0

    def format(self) -> str:
        lines = [f"converged: {self.converged}",
                 f"iterations: {self.iterations}",
                 f"r(K(1)): {self.r_K1:.6f}",
                 f"final rho: {self.rho_history[-1]:.6e}" if self.rho_history else "final rho: -",
                 f"max Euler residual (interior): {self.euler_residual_max:.6e}",
                 f"monotonicity violations: {self.monotonicity_violations}"]
        for z, wb in enumerate(self.threshold_wealth):
            lines.append(f"threshold wealth state {z}: {wb:.10g}")
        return "\n".join(lines)


def solve(env: ExogenousEnvironment, grid: WealthGrid | None = None, tol: float = 1e-10,
          max_iter: int = 5000, spectral: SpectralReport | None = None
          ) -> tuple[ConsumptionPolicy, SolveDiagnostics]:
    """Iterate the operator from c0(w, z) = w until rho(c_k, c_{k+1}) < tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if grid is None:
        grid = WealthGrid.default_for(env)
    if spectral is None:
        spectral = check_assumptions(env)
    if not spectral.assumptions_hold:
        warnings.warn(f"r(K(1)) = {spectral.r_K1:.6f} >= 1; time iteration may not converge",
                      RuntimeWarning, stacklevel=2)

    tr = _transitions(env)
    policy = ConsumptionPolicy.identity(grid, env.n_states)
    history: list[float] = []
    violations = 0
    converged = False
    for k in range(max_iter):
        new = _step(policy, env, tr)
        violations += sum(monotonicity_violations(new))
        history.append(rho_distance(policy, new, env))
        policy = new
        if history[-1] < tol:
            converged = True
            break
        if k % 100 == 0:
            log.debug("sweep %d: rho = %.3e", k + 1, history[-1])

    res = euler_residuals(policy, env)
    diag = SolveDiagnostics(
        iterations=len(history),
        rho_history=history,
        converged=converged,
        threshold_wealth=_thresholds(policy, tr, env),
        euler_residual_max=float(np.nanmax(res)) if np.any(np.isfinite(res)) else 0.0,
        r_K1=spectral.r_K1,
        monotonicity_violations=violations,
    )
    return policy, diag


def perov_bound(p1: ConsumptionPolicy, p2: ConsumptionPolicy,
                env: ExogenousEnvironment) -> tuple[np.ndarray, np.ndarray]:
    """Return (d(Tp1, Tp2), K(1) d(p1, p2)) as per-state vectors."""
    tr = _transitions(env)
    lhs = state_distances(_step(p1, env, tr), _step(p2, env, tr), env)
    rhs = k_matrix(env, 1.0) @ state_distances(p1, p2, env)
    return lhs, rhs
