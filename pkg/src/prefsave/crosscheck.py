"""Numerical-vs-analytic comparison of asymptotic MPCs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asymptotics import (FIXED_POINT_CASES, ZERO_MPC_CASES, AsymptoticReport, CaseLabel)
from .env import ExogenousEnvironment
from .solver import ConsumptionPolicy, _interp

GAP_TOL = 5e-3
TREND_DECADES = (1e2, 1e3, 1e4)


@dataclass(frozen=True)
class CheckRow:
    state: int
    label: CaseLabel
    analytic: float | None
    numeric: float
    gap: float | None
    check: str
    passed: bool | None     # None: no case applies, nothing to check
    detail: str = ""

    @property
    def verdict(self) -> str:
        return "SKIP" if self.passed is None else ("PASS" if self.passed else "FAIL")


def average_propensity(policy: ConsumptionPolicy, z: int, levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    return _interp(policy, levels, np.full(levels.shape, z)) / levels


def nonconcavity_witness(policy: ConsumptionPolicy, z: int):
    """Grid pair w < w' with c(w)/w < c(w')/w', or None.

    A concave c with c(0+) >= 0 has c(w)/w nonincreasing, so any such pair
    shows that c(., z) is not concave.
    """
    g = policy.grid.points
    ratio = policy.values[:, z] / g
    up = np.flatnonzero(ratio[1:] > ratio[:-1] * (1 + 1e-12))
    if up.size == 0:
        return None
    k = up[0]
    return float(g[k]), float(g[k + 1])


def cross_validate(env: ExogenousEnvironment, policy: ConsumptionPolicy,
                   report: AsymptoticReport, gap_tol: float = GAP_TOL) -> list[CheckRow]:
    w_top = policy.grid.w_max
    levels = [d * env.max_atom("Y") for d in TREND_DECADES]
    rows = []
    for st in report.states:
        z = st.state
        label = st.case.label
        numeric = float(policy.values[-1, z] / w_top)
        if label in ZERO_MPC_CASES:
            cw = average_propensity(policy, z, levels)
            ok = bool(np.all(np.diff(cw) < 0))
            detail = "c/w at " + ", ".join(f"{w:g}: {v:.6g}" for w, v in zip(levels, cw))
            rows.append(CheckRow(z, label, 0.0, numeric, None, "decreasing c/w", ok, detail))
        elif label is CaseLabel.STRICTLY_UPWARD:
            wit = nonconcavity_witness(policy, z)
            ok = wit is not None
            detail = (f"c/w rises between w={wit[0]:.6g} and w={wit[1]:.6g}" if ok
                      else "no pair with rising c/w")
            rows.append(CheckRow(z, label, 1.0, numeric, abs(numeric - 1.0),
                                 "nonconcavity witness", ok, detail))
        elif label in FIXED_POINT_CASES:
            gap = abs(numeric - st.mpc)
            rows.append(CheckRow(z, label, float(st.mpc), numeric, gap,
                                 f"|gap| < {gap_tol:g}", bool(gap < gap_tol)))
        else:
            rows.append(CheckRow(z, label, None, numeric, None, "none", None,
                                 "no case applies"))
    return rows
