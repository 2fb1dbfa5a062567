"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 assumption failure,
4 solver non-convergence, 5 validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

from . import __version__, report
from .asymptotics import NonConvergenceError, asymptotic_mpc
from .config import RunConfig, load_run_config
from .crosscheck import cross_validate
from .env import ConfigError, DivergenceError, check_assumptions
from .simulate import simulate_paths
from .solver import BracketError, solve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_NONCONVERGED = 4
EXIT_VALIDATION = 5

log = logging.getLogger("prefsave")


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, text: str = "") -> None:
        if not self.quiet:
            print(text)


def cmd_check(cfg: RunConfig, out_dir: Path, say: _Out) -> int:
    spectral = check_assumptions(cfg.env)
    say(spectral.format(cfg.env))
    return EXIT_OK if spectral.assumptions_hold else EXIT_ASSUMPTION


def _solve(cfg: RunConfig, out_dir: Path, say: _Out):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        policy, diag = solve(cfg.env, cfg.grid, cfg.solver.tol, cfg.solver.max_iter)
    report.write_policy(out_dir / "policy.csv", policy, cfg.env, cfg.config_hash)
    report.write_diagnostics(out_dir, diag, cfg.grid, cfg.config_hash)
    if diag.converged:
        say(f"converged after {diag.iterations} iterations "
            f"(rho = {diag.rho_history[-1]:.3e}, r(K(1)) = {diag.r_K1:.6f})")
    else:
        say(f"NOT converged after {diag.iterations} iterations "
            f"(rho = {diag.rho_history[-1]:.3e}, r(K(1)) = {diag.r_K1:.6f})")
    return policy, diag


def cmd_solve(cfg: RunConfig, out_dir: Path, say: _Out) -> int:
    _, diag = _solve(cfg, out_dir, say)
    return EXIT_OK if diag.converged else EXIT_NONCONVERGED


def cmd_asymptotics(cfg: RunConfig, out_dir: Path, say: _Out) -> int:
    rep = asymptotic_mpc(cfg.env)
    report.write_asymptotics(out_dir, rep, cfg.env, cfg.config_hash)
    say(report.asymptotics_table(rep, cfg.env).rstrip())
    return EXIT_OK


def _policy_for(cfg: RunConfig, out_dir: Path, say: _Out):
    path = out_dir / "policy.csv"
    if report.file_hash(path) == cfg.config_hash:
        try:
            return report.read_policy(path, cfg.env, cfg.grid), True
        except (ValueError, KeyError):
            pass
    policy, diag = _solve(cfg, out_dir, say)
    return policy, diag.converged


def cmd_simulate(cfg: RunConfig, out_dir: Path, say: _Out) -> int:
    policy, converged = _policy_for(cfg, out_dir, say)
    sim = cfg.simulate
    run = simulate_paths(policy, cfg.env, sim.seed, sim.n_paths, sim.horizon, sim.w0, sim.z0)
    report.write_paths(out_dir / "paths.csv", run, cfg.env, cfg.grid, cfg.config_hash)
    say(f"wrote {run.n_paths} paths x {run.horizon} periods to {out_dir / 'paths.csv'}"
        + (f" ({int(run.truncated.sum())} truncated)" if run.truncated.any() else ""))
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out_dir: Path, say: _Out) -> int:
    policy, diag = _solve(cfg, out_dir, say)
    rep = asymptotic_mpc(cfg.env)
    rows = cross_validate(cfg.env, policy, rep)
    report.write_validation(out_dir, rows, cfg.grid, cfg.config_hash)
    say(report.validation_table(rows).rstrip())
    if not diag.converged:
        return EXIT_NONCONVERGED
    return EXIT_VALIDATION if any(r.passed is False for r in rows) else EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "asymptotics": cmd_asymptotics,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML or JSON run configuration")
    common.add_argument("--out", default=None, help="output directory (default ./out)")
    common.add_argument("--seed", type=int, default=None, help="override simulate.seed")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    parser = argparse.ArgumentParser(
        prog="prefsave",
        description="Optimal savings with Markov-modulated risk aversion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "check": "spectral assumption checks",
        "solve": "solve for the optimal consumption policy",
        "asymptotics": "classify states and compute asymptotic MPCs",
        "simulate": "simulate wealth paths under the solved policy",
        "validate": "compare numerical and analytic asymptotic MPCs",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    say = _Out(args.quiet)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must fit in an unsigned 64-bit integer", "--seed")
            cfg = dataclasses.replace(
                cfg, simulate=dataclasses.replace(cfg.simulate, seed=args.seed),
                raw={**cfg.raw, "simulate": {**(cfg.raw.get("simulate") or {}),
                                             "seed": args.seed}})
    except ConfigError as exc:
        print(f"config error at {exc.path or '<root>'}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or cfg.out_dir or "out")
    try:
        return COMMANDS[args.command](cfg, out_dir, say)
    except DivergenceError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BracketError, NonConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
