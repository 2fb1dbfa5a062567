"""Text and CSV writers.  Every file starts with a ``#`` comment header."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import AsymptoticReport
from .crosscheck import CheckRow
from .env import ExogenousEnvironment
from .simulate import FD_STEP, SimulationRun
from .solver import ConsumptionPolicy, SolveDiagnostics, WealthGrid


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return ""
        if math.isinf(x):
            return "-inf" if x < 0 else "inf"
        return repr(x)
    return str(x)


def header(config_hash: str, grid: WealthGrid | None = None, **extra) -> list[str]:
    lines = [f"# prefsave {__version__}", f"# config_sha256: {config_hash}"]
    if grid is not None:
        lines.append(f"# grid: {grid.spacing} {grid.size} points on [{fmt(grid.w_min)}, "
                     f"{fmt(grid.w_max)}]")
    lines += [f"# {k}: {fmt(v)}" for k, v in extra.items()]
    return lines


def _write(path: Path, head: list[str], body: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(head) + "\n" + body)


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_policy(path, policy: ConsumptionPolicy, env: ExogenousEnvironment, chash: str):
    rows = []
    for z in range(env.n_states):
        b, t = env.state_label(z)
        for w, c in zip(policy.grid.points, policy.values[:, z]):
            rows.append((b, t, w, c))
    head = header(chash, policy.grid,
                  extrapolation_slope=" ".join(fmt(s) for s in policy.extrapolation_slope))
    _write(Path(path), head, _csv(rows, ["state_bar", "state_tilde", "wealth", "consumption"]))


def read_policy(path, env: ExogenousEnvironment, grid: WealthGrid) -> ConsumptionPolicy:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    values = np.zeros((grid.size, env.n_states))
    index = {env.state_label(z): z for z in range(env.n_states)}
    counts = np.zeros(env.n_states, dtype=int)
    for row in reader:
        z = index[(row["state_bar"], row["state_tilde"])]
        values[counts[z], z] = float(row["consumption"])
        counts[z] += 1
    if np.any(counts != grid.size):
        raise ValueError(f"{path} does not match the configured grid")
    return ConsumptionPolicy(grid, values)


def file_hash(path) -> str | None:
    try:
        with open(path) as fh:
            for ln in fh:
                if ln.startswith("# config_sha256:"):
                    return ln.split(":", 1)[1].strip()
                if not ln.startswith("#"):
                    break
    except OSError:
        return None
    return None


def write_diagnostics(out: Path, diag: SolveDiagnostics, grid: WealthGrid, chash: str):
    _write(out / "diagnostics.txt", header(chash, grid), diag.format() + "\n")
    rows = [(k + 1, r) for k, r in enumerate(diag.rho_history)]
    _write(out / "rho_history.csv", header(chash, grid), _csv(rows, ["iteration", "rho"]))


def asymptotics_table(report: AsymptoticReport, env: ExogenousEnvironment) -> str:
    out = []
    for st in report.states:
        b, t = env.state_label(st.state)
        mpc = fmt(st.mpc) if isinstance(st.mpc, float) else str(st.mpc)
        if st.x_star is not None:
            mpc += f" (x* = {st.x_star:.10g})"
        elif st.bar_index in report.fixed_points:
            mpc += " (F_i fixed point DIVERGED)"
        out.append(f"state {st.state} (bar={b}, tilde={t}, gamma={env.gamma[st.bar_index]:g}): "
                   f"{st.case.label}")
        out.append(f"  asymptotic MPC: {mpc}")
        marks = ", ".join(f"{n}={'Y' if v else 'N'}" for n, v in st.case.hypotheses_checked)
        out.append(f"  hypotheses: {marks}")
        for R, s in st.saving_rates:
            out.append(f"  saving rate at R={R:g}: {fmt(s) if isinstance(s, float) else s}")
    return "\n".join(out) + "\n"


def write_asymptotics(out: Path, report: AsymptoticReport, env: ExogenousEnvironment,
                      chash: str):
    _write(out / "asymptotics.txt", header(chash), asymptotics_table(report, env))
    hyp_names = [n for n, _ in report.states[0].case.hypotheses_checked]
    rows = []
    for st in report.states:
        b, t = env.state_label(st.state)
        hyps = [v for _, v in st.case.hypotheses_checked]
        rates = ";".join(f"R={fmt(R)}:{fmt(s) if isinstance(s, float) else s}"
                         for R, s in st.saving_rates)
        mpc = fmt(st.mpc) if isinstance(st.mpc, float) else str(st.mpc)
        rows.append([st.state, b, t, st.case.label.value, *hyps, mpc,
                     st.x_star, rates])
    cols = ["state", "state_bar", "state_tilde", "case", *hyp_names, "mpc", "x_star",
            "saving_rate_by_R"]
    _write(out / "asymptotics.csv", header(chash), _csv(rows, cols))


def write_paths(path, run: SimulationRun, env: ExogenousEnvironment, grid: WealthGrid,
                chash: str):
    rows = []
    for p in range(run.n_paths):
        for t in range(run.horizon + 1):
            if not np.isfinite(run.wealth[p, t]):
                break
            b, tl = env.state_label(int(run.state[p, t]))
            rows.append((p, t, b, tl, run.wealth[p, t], run.consumption[p, t],
                         run.saving_rate[p, t], run.R_drawn[p, t], run.Y_drawn[p, t]))
    head = header(chash, grid, seed=run.seed, n_paths=run.n_paths, horizon=run.horizon,
                  w0=run.initial_wealth, z0=run.initial_state, fd_step=FD_STEP,
                  truncated_paths=int(run.truncated.sum()))
    cols = ["path", "t", "state_bar", "state_tilde", "wealth", "consumption", "saving_rate",
            "R_drawn", "Y_drawn"]
    _write(Path(path), head, _csv(rows, cols))


def validation_table(rows: list[CheckRow]) -> str:
    out = ["state  case                       analytic      numeric       gap         "
           "check                  verdict"]
    for r in rows:
        out.append(f"{r.state:<6d} {r.label.value:<26s} {fmt(r.analytic)[:12]:<13s} "
                   f"{r.numeric:<13.6g} {'' if r.gap is None else f'{r.gap:.3e}':<11s} "
                   f"{r.check:<22s} {r.verdict}")
        if r.detail:
            out.append(f"       {r.detail}")
    return "\n".join(out) + "\n"


def write_validation(out: Path, rows: list[CheckRow], grid: WealthGrid, chash: str):
    _write(out / "validation.txt", header(chash, grid), validation_table(rows))
