"""Exogenous Markov environment and the spectral objects built from it.

The composite state z_ij = (bar state i, tilde state j) is always enumerated
by the flat index ``i * M + j`` (0-based).  Every matrix indexed by
composite states in this package uses that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.sparse.csgraph import connected_components

PROB_TOL = 1e-12

ATOM_COLUMNS = ("prob", "beta", "R", "Y")


class ConfigError(ValueError):
    """Invalid environment description.  ``path`` names the offending entry."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path


class DivergenceError(ArithmeticError):
    """An expectation of the form E[beta R^theta] is infinite."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class InnovationTable:
    """Finite innovation law per ordered composite-state pair.

    ``atoms[(z, zh)]`` is an ``(n, 4)`` array with columns prob, beta, R, Y.
    Pairs with zero transition probability may be absent.
    """

    atoms: Mapping[tuple[int, int], np.ndarray]

    def pair(self, z: int, zh: int) -> np.ndarray:
        try:
            return self.atoms[(z, zh)]
        except KeyError:
            return np.empty((0, 4))

    def all_atoms(self) -> np.ndarray:
        if not self.atoms:
            return np.empty((0, 4))
        return np.vstack(list(self.atoms.values()))


@dataclass(frozen=True)
class ExogenousEnvironment:
    bar_states: tuple[str, ...]
    tilde_states: tuple[str, ...]
    bar_P: np.ndarray
    tilde_P: np.ndarray
    gamma: np.ndarray
    innovations: InnovationTable
    P: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(np.kron(self.bar_P, self.tilde_P)))

    @property
    def N(self) -> int:
        return len(self.bar_states)

    @property
    def M(self) -> int:
        return len(self.tilde_states)

    @property
    def n_states(self) -> int:
        return self.N * self.M

    @property
    def state_gamma(self) -> np.ndarray:
        """Risk aversion of each composite state, in flat order."""
        return np.repeat(self.gamma, self.M)

    def flat_index(self, i: int, j: int) -> int:
        return i * self.M + j

    def split_index(self, z: int) -> tuple[int, int]:
        return divmod(z, self.M)

    def state_label(self, z: int) -> tuple[str, str]:
        i, j = self.split_index(z)
        return self.bar_states[i], self.tilde_states[j]

    def support_pairs(self):
        """Yield ``(z, zh, atoms)`` for every pair with P(z, zh) > 0."""
        S = self.n_states
        for z in range(S):
            for zh in range(S):
                if self.P[z, zh] > 0:
                    yield z, zh, self.innovations.pair(z, zh)

    def min_atom(self, column: str) -> float:
        """Smallest value of an atom column over pairs reachable in one step."""
        k = ATOM_COLUMNS.index(column)
        vals = [a[:, k].min() for _, _, a in self.support_pairs() if len(a)]
        return float(min(vals))

    def max_atom(self, column: str) -> float:
        k = ATOM_COLUMNS.index(column)
        vals = [a[:, k].max() for _, _, a in self.support_pairs() if len(a)]
        return float(max(vals))

    def scale_income(self, factor: float) -> "ExogenousEnvironment":
        """Copy of the environment with every Y atom multiplied by ``factor``."""
        scaled = {}
        for key, a in self.innovations.atoms.items():
            b = np.array(a)
            b[:, 3] *= factor
            scaled[key] = _frozen(b)
        return ExogenousEnvironment(self.bar_states, self.tilde_states, self.bar_P,
                                    self.tilde_P, self.gamma, InnovationTable(scaled))


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------

def _check_stochastic(P: np.ndarray, name: str) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ConfigError(f"{name} must be a non-empty square matrix", name)
    if not np.all(np.isfinite(P)):
        raise ConfigError(f"{name} has non-finite entries", name)
    for r, row in enumerate(P):
        neg = np.flatnonzero(row < 0)
        if neg.size:
            raise ConfigError(f"entry ({r}, {neg[0]}) of {name} is negative", f"{name}[{r}]")
        s = row.sum()
        if abs(s - 1.0) > PROB_TOL:
            raise ConfigError(f"row {r} of {name} sums to {s:.12g}", f"{name}[{r}]")


def _check_atoms(a: np.ndarray, where: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0 or a.shape[1] != 4:
        raise ConfigError(f"{where}: atoms must be a non-empty list of (prob, beta, R, Y)", where)
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{where}: non-finite atom value", where)
    for k, (p, b, R, Y) in enumerate(a):
        if not 0 < p <= 1:
            raise ConfigError(f"{where}: atom {k} probability {p} not in (0, 1]", f"{where}[{k}]")
        if b < 0:
            raise ConfigError(f"{where}: atom {k} has negative beta", f"{where}[{k}]")
        if R < 0:
            raise ConfigError(f"{where}: atom {k} has negative R", f"{where}[{k}]")
        if Y <= 0:
            raise ConfigError(f"{where}: atom {k} has nonpositive income {Y}", f"{where}[{k}]")
    s = a[:, 0].sum()
    if abs(s - 1.0) > PROB_TOL:
        raise ConfigError(f"{where}: atom probabilities sum to {s:.12g}", where)
    return _frozen(a)


def _atoms_from_records(records, where: str) -> np.ndarray:
    if isinstance(records, Mapping):
        records = [records]
    rows = []
    for k, rec in enumerate(records):
        if not isinstance(rec, Mapping):
            raise ConfigError(f"{where}[{k}]: atom must be a mapping with prob, beta, R, Y",
                              f"{where}[{k}]")
        try:
            rows.append([float(rec.get("prob", 1.0)), float(rec["beta"]),
                         float(rec["R"]), float(rec["Y"])])
        except KeyError as exc:
            raise ConfigError(f"{where}[{k}]: missing key {exc.args[0]!r}", f"{where}[{k}]")
        except (TypeError, ValueError):
            raise ConfigError(f"{where}[{k}]: atom values must be numbers", f"{where}[{k}]")
    return _check_atoms(np.array(rows), where)


def _parse_pair_key(key, S: int) -> tuple[int, int]:
    if isinstance(key, (tuple, list)) and len(key) == 2:
        parts = key
    else:
        parts = str(key).strip().strip("()[]").split(",")
    try:
        z, zh = (int(str(p).strip()) for p in parts)
    except ValueError:
        raise ConfigError(f"pair key {key!r} must look like '(z,zh)' with flat indices",
                          f"innovations.pairs.{key}")
    if not (0 <= z < S and 0 <= zh < S):
        raise ConfigError(f"pair key {key!r} out of range for {S} composite states",
                          f"innovations.pairs.{key}")
    return z, zh


def build_environment(config: Mapping) -> ExogenousEnvironment:
    """Validate an environment description and expand it to a full table.

    ``config`` holds ``bar_P``, ``tilde_P``, ``gamma`` and ``innovations``;
    ``bar_states``/``tilde_states`` default to index labels and ``tilde_P``
    defaults to ``[[1]]``.  ``innovations`` is one of ``{"constant": {beta,
    R, Y}}``, ``{"atoms": [...]}`` (shared by all pairs) or ``{"pairs":
    {"(z,zh)": [...]}}``.
    """
    if not isinstance(config, Mapping):
        raise ConfigError("environment must be a mapping", "environment")
    for key in ("bar_P", "gamma", "innovations"):
        if key not in config:
            raise ConfigError(f"missing required key {key!r}", key)

    def matrix(name, default=None):
        raw = config.get(name, default)
        try:
            A = np.array(raw, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} is not a numeric matrix", name)
        if A.ndim != 2:
            raise ConfigError(f"{name} must be a list of rows", name)
        _check_stochastic(A, name)
        return _frozen(A)

    bar_P = matrix("bar_P")
    tilde_P = matrix("tilde_P", [[1.0]])
    N, M = bar_P.shape[0], tilde_P.shape[0]

    try:
        gamma = np.array(config["gamma"], dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError("gamma must be a list of numbers", "gamma")
    if gamma.size != N:
        raise ConfigError(f"gamma has {gamma.size} entries but bar_P has {N} states", "gamma")
    if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
        raise ConfigError("gamma entries must be positive and finite", "gamma")
    if np.any(np.diff(gamma) <= 0):
        raise ConfigError("gamma must be strictly increasing", "gamma")

    bar_states = tuple(str(s) for s in config.get("bar_states", range(N)))
    tilde_states = tuple(str(s) for s in config.get("tilde_states", range(M)))
    if len(bar_states) != N:
        raise ConfigError(f"bar_states has {len(bar_states)} labels, expected {N}", "bar_states")
    if len(tilde_states) != M:
        raise ConfigError(f"tilde_states has {len(tilde_states)} labels, expected {M}",
                          "tilde_states")

    S = N * M
    P = np.kron(bar_P, tilde_P)
    spec = config["innovations"]
    if not isinstance(spec, Mapping) or len(spec) != 1:
        raise ConfigError("innovations must have exactly one of constant, atoms, pairs",
                          "innovations")
    (kind, body), = spec.items()
    table: dict[tuple[int, int], np.ndarray] = {}
    if kind in ("constant", "atoms"):
        where = f"innovations.{kind}"
        if kind == "constant":
            if not isinstance(body, Mapping):
                raise ConfigError(f"{where} must be a mapping with beta, R, Y", where)
            body = [dict(body, prob=1.0)]
        shared = _atoms_from_records(body, where)
        for z in range(S):
            for zh in range(S):
                table[(z, zh)] = shared
    elif kind == "pairs":
        if not isinstance(body, Mapping):
            raise ConfigError("innovations.pairs must map '(z,zh)' to atom lists",
                              "innovations.pairs")
        for key, recs in body.items():
            pair = _parse_pair_key(key, S)
            if pair in table:
                raise ConfigError(f"pair {pair} given twice", f"innovations.pairs.{key}")
            table[pair] = _atoms_from_records(recs, f"innovations.pairs.{key}")
        for z in range(S):
            for zh in range(S):
                if P[z, zh] > 0 and (z, zh) not in table:
                    raise ConfigError(f"no atoms for reachable pair ({z},{zh})",
                                      "innovations.pairs")
    else:
        raise ConfigError(f"unknown innovations kind {kind!r}", "innovations")

    return ExogenousEnvironment(bar_states, tilde_states, bar_P, tilde_P,
                                _frozen(gamma), InnovationTable(table))


# ---------------------------------------------------------------------------
# spectral objects
# ---------------------------------------------------------------------------

def l_matrix(env: ExogenousEnvironment,
             phi: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Matrix L(z, zh) = P(z, zh) * E[phi(beta, R, Y) | z, zh]."""
    S = env.n_states
    L = np.zeros((S, S))
    for z, zh, a in env.support_pairs():
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = phi(a[:, 1], a[:, 2], a[:, 3])
        e = float(np.dot(a[:, 0], vals))
        if not np.isfinite(e):
            raise DivergenceError(f"K(theta) entry diverges at pair ({z},{zh})")
        L[z, zh] = env.P[z, zh] * e
    return L


def _beta_R_power(beta, R, theta):
    # beta = 0 kills the atom even where R**theta is infinite
    with np.errstate(divide="ignore", invalid="ignore"):
        powed = np.power(R, theta)
    return np.where(beta > 0, beta * powed, 0.0)


def k_matrix(env: ExogenousEnvironment, theta: float) -> np.ndarray:
    """K(theta)(z, zh) = P(z, zh) * E[beta R^theta | z, zh]."""
    return l_matrix(env, lambda b, R, Y: _beta_R_power(b, R, theta))


def _as_nonneg_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if np.any(A < 0):
        raise ValueError("matrix has negative entries")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def spectral_radius(A, shift: float = 1e-12, tol: float = 1e-10,
                    max_iter: int = 100_000) -> float:
    """Perron root of a nonnegative matrix by shifted power iteration.

    Convergence is declared when the Collatz-Wielandt bounds
    min_i (Bx)_i/x_i <= r(B) <= max_i (Bx)_i/x_i close to within ``tol``.
    Periodic or defective matrices where the iteration stalls fall back to a
    dense eigenvalue computation.
    """
    A = _as_nonneg_square(A)
    if not A.any():
        return 0.0
    # r(A) is the largest Perron root over the irreducible diagonal blocks
    n_comp, labels = connected_components(A > 0, directed=True, connection="strong")
    if n_comp == 1:
        return _perron_root(A, shift, tol, max_iter)
    r = 0.0
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        r = max(r, _perron_root(A[np.ix_(idx, idx)], shift, tol, max_iter))
    return r


def _perron_root(A: np.ndarray, shift: float, tol: float, max_iter: int) -> float:
    n = A.shape[0]
    if n == 1:
        return float(A[0, 0])
    if not A.any():
        return 0.0
    B = A + shift * np.eye(n)
    x = np.ones(n)
    for _ in range(max_iter):
        y = B @ x
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= tol * max(1.0, hi):
            return max(0.5 * (lo + hi) - shift, 0.0)
        x = y / y.max()
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def is_irreducible(A) -> bool:
    """True iff the positivity graph of ``A`` is strongly connected.

    A 1x1 zero matrix counts as reducible.
    """
    A = _as_nonneg_square(A)
    if A.shape[0] == 1:
        return bool(A[0, 0] > 0)
    n_comp, _ = connected_components(A > 0, directed=True, connection="strong")
    return n_comp == 1


def q_matrix(env: ExogenousEnvironment, i: int) -> np.ndarray:
    """Q_i(j, k) = E[beta R^(1 - gamma_i) | z_ij -> z_ik] over tilde states."""
    if not 0 <= i < env.N:
        raise IndexError(f"bar-state index {i} out of range")
    M = env.M
    theta = 1.0 - env.gamma[i]
    Q = np.zeros((M, M))
    for j in range(M):
        for k in range(M):
            a = env.innovations.pair(env.flat_index(i, j), env.flat_index(i, k))
            if not len(a):
                continue
            e = float(np.dot(a[:, 0], _beta_R_power(a[:, 1], a[:, 2], theta)))
            if not np.isfinite(e):
                raise DivergenceError(f"Q_{i} entry diverges at tilde pair ({j},{k})")
            Q[j, k] = e
    return Q


def g_matrix(env: ExogenousEnvironment, i: int) -> np.ndarray:
    """G_i = bar_P[i, i] * (tilde_P o Q_i), o the entrywise product."""
    return env.bar_P[i, i] * (env.tilde_P * q_matrix(env, i))


@dataclass(frozen=True)
class SpectralReport:
    K1: np.ndarray
    r_K1: float
    G: tuple[np.ndarray, ...]
    r_G: np.ndarray
    G_irreducible: np.ndarray
    betaR_positive_prob: np.ndarray
    assumptions_hold: bool
    finite_expectations: str = "satisfied by construction (finite support, Y > 0)"

    def format(self, env: ExogenousEnvironment) -> str:
        verdict = "<" if self.assumptions_hold else ">="
        status = "PASS" if self.assumptions_hold else "FAIL"
        lines = [f"r(K(1)) = {self.r_K1:.6f} {verdict} 1: {status}",
                 f"finite expectations: {self.finite_expectations}",
                 "K(1) =", _fmt_matrix(self.K1)]
        for i, G in enumerate(self.G):
            lines.append(f"G_{i + 1} (gamma = {env.gamma[i]:g}): r = {self.r_G[i]:.6f}, "
                         f"irreducible = {bool(self.G_irreducible[i])}")
            lines.append(_fmt_matrix(G))
        all_pos = bool(self.betaR_positive_prob[env.P > 0].all())
        lines.append(f"P(beta R > 0) > 0 on every reachable pair: {all_pos}")
        return "\n".join(lines)


def _fmt_matrix(A: np.ndarray) -> str:
    return "\n".join("  [" + ", ".join(f"{x:.6f}" for x in row) + "]" for row in A)


def betaR_positive(env: ExogenousEnvironment) -> np.ndarray:
    """Boolean matrix: some atom of the pair has beta * R > 0.

    Pairs with P(z, zh) = 0 are reported True (the condition is vacuous).
    """
    S = env.n_states
    pos = np.ones((S, S), dtype=bool)
    for z, zh, a in env.support_pairs():
        pos[z, zh] = bool(np.any(a[:, 1] * a[:, 2] > 0))
    return pos


def check_assumptions(env: ExogenousEnvironment) -> SpectralReport:
    K1 = k_matrix(env, 1.0)
    r = spectral_radius(K1)
    Gs = tuple(g_matrix(env, i) for i in range(env.N))
    return SpectralReport(
        K1=K1,
        r_K1=r,
        G=Gs,
        r_G=np.array([spectral_radius(G) for G in Gs]),
        G_irreducible=np.array([is_irreducible(G) for G in Gs]),
        betaR_positive_prob=betaR_positive(env),
        assumptions_hold=bool(r < 1),
    )


def growth_bound_horizon(L, n_max: int = 200, sigma: float | None = None) -> int | None:
    """Smallest N0 such that max_z (L^n 1)(z) < sigma^n for all N0 <= n <= n_max.

    ``sigma`` defaults to (1 + r(L)) / 2.  Returns None if the bound still
    fails at ``n_max``.
    """
    L = _as_nonneg_square(L)
    if sigma is None:
        sigma = 0.5 * (1.0 + spectral_radius(L))
    h = np.ones(L.shape[0])
    first_ok = None
    for n in range(1, n_max + 1):
        h = L @ h
        if h.max() < sigma ** n:
            if first_ok is None:
                first_ok = n
        else:
            first_ok = None
    return first_ok
