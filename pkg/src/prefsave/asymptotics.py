"""Asymptotic MPCs and saving rates from the spectral data of the environment.

For each bar state i the map

    (F_i x)_j = (1 + (G_i x)_j ** (1/gamma_i)) ** gamma_i

has a finite fixed point on [1, inf)^M iff r(G_i) < 1; when it does, the
asymptotic MPC at z_ij is x*_j ** (-1/gamma_i).  Which formula applies at a
state is decided by which set of sufficient conditions holds there (see
``classify_state``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .env import ExogenousEnvironment, SpectralReport, check_assumptions, g_matrix, spectral_radius

BOUNDARY_BAND = 1e-8
DIVERGENCE_CAP = 1e12


class CaseLabel(str, enum.Enum):
    DOWNWARD_REACHABLE = "DownwardReachable"
    PERSISTENT_EXPLOSIVE = "PersistentExplosive"
    ABSORBING_CONTRACTIVE = "AbsorbingContractive"
    STRICTLY_UPWARD = "StrictlyUpward"
    PART_PERSISTENT_CONTRACTIVE = "PartPersistentContractive"
    UNCLASSIFIED = "Unclassified"

    def __str__(self) -> str:
        return self.value


ZERO_MPC_CASES = (CaseLabel.DOWNWARD_REACHABLE, CaseLabel.PERSISTENT_EXPLOSIVE)
FIXED_POINT_CASES = (CaseLabel.ABSORBING_CONTRACTIVE, CaseLabel.PART_PERSISTENT_CONTRACTIVE)
POSITIVE_MPC_CASES = FIXED_POINT_CASES + (CaseLabel.STRICTLY_UPWARD,)


class NonConvergenceError(RuntimeError):
    """F_i iteration hit max_iter although r(G_i) < 1."""


class _Tag(str, enum.Enum):
    DIVERGED = "DIVERGED"
    UNDETERMINED = "UNDETERMINED"

    def __str__(self) -> str:
        return self.value


DIVERGED = _Tag.DIVERGED
UNDETERMINED = _Tag.UNDETERMINED


@dataclass(frozen=True)
class AsymptoticCase:
    label: CaseLabel
    hypotheses_checked: tuple[tuple[str, bool], ...]


@dataclass(frozen=True)
class FixedPointResult:
    x_star: np.ndarray | _Tag
    iterations: int
    r_G: float
    boundary: bool = False


# ---------------------------------------------------------------------------
# F_i
# ---------------------------------------------------------------------------

def _F(G: np.ndarray, gamma: float, x: np.ndarray) -> np.ndarray:
    return (1.0 + (G @ x) ** (1.0 / gamma)) ** gamma


def f_operator(env: ExogenousEnvironment, i: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 1):
        raise ValueError("F_i is defined on [1, inf)^M")
    return _F(g_matrix(env, i), float(env.gamma[i]), x)


def fixed_point_of(G: np.ndarray, gamma: float, tol: float = 1e-13,
                   max_iter: int = 10_000_000, confirm_divergence: bool = False
                   ) -> FixedPointResult:
    """Fixed point of x -> (1 + (G x)^(1/gamma))^gamma started from x = 1.

    The finite/infinite dichotomy is read off r(G).  In the finite case the
    monotone iteration stops once the a-posteriori error bound
    q/(1-q) * step, with q the observed step ratio, falls below
    ``tol * (1 + |x|)``.
    """
    G = np.asarray(G, dtype=float)
    r = spectral_radius(G)
    boundary = abs(r - 1.0) < BOUNDARY_BAND
    x = np.ones(G.shape[0])
    if r >= 1.0:
        n = 0
        if confirm_divergence:
            while x.max() <= DIVERGENCE_CAP and n < max_iter:
                x = _F(G, gamma, x)
                n += 1
            if x.max() <= DIVERGENCE_CAP:
                raise NonConvergenceError(
                    f"r(G) = {r:.12g} >= 1 but iterates stayed below {DIVERGENCE_CAP:g}")
        return FixedPointResult(DIVERGED, n, r, boundary)

    prev_step = None
    for n in range(1, max_iter + 1):
        x_new = _F(G, gamma, x)
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        scale = tol * (1.0 + float(np.max(np.abs(x))))
        if step == 0.0:
            return FixedPointResult(x, n, r, boundary)
        if prev_step is not None and prev_step > 0:
            q = step / prev_step
            if q < 1 and step * q / (1.0 - q) <= scale:
                return FixedPointResult(x, n, r, boundary)
        prev_step = step
    raise NonConvergenceError(f"F iteration did not converge in {max_iter} steps (r(G) = {r:.6g})")


def f_fixed_point(env: ExogenousEnvironment, i: int, tol: float = 1e-13,
                  max_iter: int = 10_000_000) -> FixedPointResult:
    return fixed_point_of(g_matrix(env, i), float(env.gamma[i]), tol, max_iter)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def classify_state(env: ExogenousEnvironment, spectral: SpectralReport, i: int,
                   upper_labels: dict[int, CaseLabel] | None = None) -> AsymptoticCase:
    """Label bar state ``i`` with the first case whose sufficient conditions hold.

    ``upper_labels`` maps bar states k > i to their labels.  The positive-MPC
    results at i (strictly upward, partly persistent) hold only when every
    higher state reachable from i is itself asymptotically linear, so those
    cases additionally require each such k to carry a positive-MPC label.
    When omitted, the labels of higher states are computed recursively.
    """
    pbar = env.bar_P
    down = float(pbar[i, :i].sum())
    stay = float(pbar[i, i])
    r_G = float(spectral.r_G[i])
    irreducible = bool(spectral.G_irreducible[i])
    reachable = env.P > 0
    positivity = bool(spectral.betaR_positive_prob[reachable].all())
    R_floor = env.min_atom("R") > 0
    Y_floor = env.min_atom("Y") > 0

    if upper_labels is None:
        upper_labels = {}
        for k in range(env.N - 1, i, -1):
            upper_labels[k] = classify_state(env, spectral, k, upper_labels).label
    upward_linear = all(upper_labels[k] in POSITIVE_MPC_CASES
                        for k in range(i + 1, env.N) if pbar[i, k] > 0)

    hyp = [
        ("downward_prob_positive", down > 0),
        ("betaR_positive_all_pairs", positivity),
        ("persistence_positive", stay > 0),
        ("persistence_one", stay == 1.0),
        ("G_irreducible", irreducible),
        ("r_G_below_one", r_G < 1),
        ("R_bounded_below", R_floor),
        ("Y_bounded_below", Y_floor),
        ("upward_states_linear", upward_linear),
    ]

    if down > 0 and positivity:
        label = CaseLabel.DOWNWARD_REACHABLE
    elif stay > 0 and irreducible and r_G >= 1:
        label = CaseLabel.PERSISTENT_EXPLOSIVE
    elif down == 0 and stay == 1.0 and r_G < 1:
        label = CaseLabel.ABSORBING_CONTRACTIVE
    elif down == 0 and stay == 0 and R_floor and upward_linear:
        label = CaseLabel.STRICTLY_UPWARD
    elif down == 0 and 0 < stay < 1 and r_G < 1 and R_floor and Y_floor and upward_linear:
        label = CaseLabel.PART_PERSISTENT_CONTRACTIVE
    else:
        label = CaseLabel.UNCLASSIFIED
    return AsymptoticCase(label, tuple(hyp))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateAsymptotics:
    state: int
    bar_index: int
    tilde_index: int
    case: AsymptoticCase
    mpc: float | _Tag
    x_star: float | None
    saving_rates: tuple[tuple[float, float | _Tag], ...]


@dataclass(frozen=True)
class AsymptoticReport:
    states: tuple[StateAsymptotics, ...]
    fixed_points: dict = field(default_factory=dict)

    def mpc_vector(self) -> np.ndarray:
        """MPCs as floats, NaN where undetermined."""
        return np.array([s.mpc if isinstance(s.mpc, float) else np.nan for s in self.states])

    def labels(self) -> list[CaseLabel]:
        return [s.case.label for s in self.states]


def asymptotic_saving_rate(mpc: float, R_value: float) -> float:
    """Saving rate of an infinitely wealthy agent at a deterministic return.

    Returns ``-inf`` whenever (R - 1)^+ (1 - mpc) vanishes, including the
    0/0 case R = 1, mpc = 0.
    """
    if not 0.0 <= mpc <= 1.0:
        raise ValueError(f"mpc {mpc} outside [0, 1]")
    if R_value > 1.0 and mpc < 1.0:
        return 1.0 - mpc / ((R_value - 1.0) * (1.0 - mpc))
    return -math.inf


def _returns_from(env: ExogenousEnvironment, z: int) -> list[float]:
    Rs = set()
    for zh in range(env.n_states):
        if env.P[z, zh] > 0:
            Rs.update(float(R) for R in env.innovations.pair(z, zh)[:, 2])
    return sorted(Rs)


def asymptotic_mpc(env: ExogenousEnvironment,
                   spectral: SpectralReport | None = None) -> AsymptoticReport:
    if spectral is None:
        spectral = check_assumptions(env)
    cases: dict[int, AsymptoticCase] = {}
    labels: dict[int, CaseLabel] = {}
    for i in range(env.N - 1, -1, -1):
        cases[i] = classify_state(env, spectral, i, labels)
        labels[i] = cases[i].label

    fixed: dict[int, FixedPointResult] = {}
    rows = []
    for z in range(env.n_states):
        i, j = env.split_index(z)
        case = cases[i]
        x_j = None
        if case.label in ZERO_MPC_CASES:
            mpc: float | _Tag = 0.0
        elif case.label is CaseLabel.STRICTLY_UPWARD:
            mpc = 1.0
        elif case.label in FIXED_POINT_CASES:
            if i not in fixed:
                fixed[i] = f_fixed_point(env, i)
            xs = fixed[i].x_star
            x_j = float(xs[j])
            mpc = x_j ** (-1.0 / env.gamma[i])
        else:
            mpc = UNDETERMINED
        rates = tuple(
            (R, asymptotic_saving_rate(mpc, R) if isinstance(mpc, float) else UNDETERMINED)
            for R in _returns_from(env, z))
        rows.append(StateAsymptotics(z, i, j, case, mpc, x_j, rates))
    return AsymptoticReport(tuple(rows), fixed)
