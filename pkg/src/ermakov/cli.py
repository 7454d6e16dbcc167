"""Config-driven command line front end.

Subcommands::

    simulate     direct integration -> trajectory CSV + drift summary
    linearize    sampled linear-ODE coefficients and psi(theta) -> CSV
    reconstruct  linearized route -> reconstructed trajectory CSV
    validate     simulate + reconstruct + compatibility residuals -> report

Each takes ``--config <path>`` (or ``--preset <name>``) and ``--out <dir>``.
Exit status: 0 success/pass, 1 validation failure, 2 runtime or domain
error.  Set ``ERMAKOV_LOG`` to adjust verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    PRESETS,
    RunConfig,
    linearizable_view,
    load_config,
    polar_view,
    preset_config,
)
from .expressions import EvaluationError, evaluate
from .integration import IntegratorConfig, integrate_polar
from .invariant import (
    ForbiddenRegionError,
    TurningPointError,
    lewis_ray_reid_polar,
)
from .linearize import (
    LinearizationError,
    OutsideWindowError,
    auto_theta_domain,
    build_pipeline,
    verify_compatibility,
)
from .numerics import BracketError, QuadratureError

__all__ = ["main"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

DRIFT_THRESHOLD = 1e-6
ROUND_TRIP_THRESHOLD = 1e-5
COMPATIBILITY_THRESHOLD = 1e-9

_RUNTIME_ERRORS = (
    EvaluationError,
    ForbiddenRegionError,
    TurningPointError,
    LinearizationError,
    OutsideWindowError,
    QuadratureError,
    BracketError,
    ValueError,
)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _integrator_config(cfg: RunConfig) -> IntegratorConfig:
    return IntegratorConfig(
        t_span=cfg.t_span,
        rel_tol=cfg.rel_tol,
        abs_tol=cfg.abs_tol,
        max_step=cfg.max_step,
    )


def _simulate(cfg: RunConfig):
    spec = polar_view(cfg)
    traj = integrate_polar(spec, cfg.polar_state, _integrator_config(cfg))
    return spec, traj


def _sample_times(cfg: RunConfig, t_end: float) -> np.ndarray:
    t0 = cfg.t_span[0]
    return np.linspace(t0, t_end, cfg.samples)


def cmd_simulate(cfg: RunConfig, out_dir: Path) -> int:
    spec, traj = _simulate(cfg)
    times = _sample_times(cfg, traj.t_end)
    rows = []
    for t in times:
        r, theta, rdot, thetadot = traj.at(t)
        inv = 0.5 * (r * r * thetadot) ** 2 + evaluate(spec.V, {"theta": theta})
        rows.append((t, r, theta, rdot, thetadot, inv))
    _write_csv(out_dir / "trajectory.csv", ["t", "r", "theta", "rdot", "thetadot", "I"], rows)
    summary = {
        "termination": traj.termination,
        "t_final": traj.t_end,
        "steps": {"accepted": traj.n_accepted, "rejected": traj.n_rejected},
        "events": [{"name": e.name, "t": e.t} for e in traj.events],
        "invariant": {
            "initial": traj.drift.reference,
            "drift_max_rel": traj.drift.max_rel,
            "drift_rms_rel": traj.drift.rms_rel,
        },
    }
    _write_json(out_dir / "summary.json", summary)
    if traj.termination != "completed":
        print(f"simulate: stopped early ({traj.termination}); partial output written")
        return EXIT_ERROR
    print(
        f"simulate: ok, {traj.n_accepted} steps, "
        f"invariant drift {traj.drift.max_rel:.3e}"
    )
    return EXIT_OK


def _pipeline(cfg: RunConfig, theta_domain=None):
    lin = linearizable_view(cfg)
    return build_pipeline(
        lin,
        cfg.polar_state,
        theta_domain=theta_domain,
        t_window=cfg.t_span,
    )


def _theta_grid(cfg: RunConfig, invariant, V) -> np.ndarray:
    if cfg.theta_span is not None:
        lo, hi = min(cfg.theta_span), max(cfg.theta_span)
    else:
        lo, hi = auto_theta_domain(V, invariant, cfg.polar_state.theta)
    return np.linspace(lo, hi, cfg.samples)


def cmd_linearize(cfg: RunConfig, out_dir: Path) -> int:
    from .linearize import build_linear_ode, solve_linear
    from .expressions import differentiate, simplify

    lin = linearizable_view(cfg)
    state = cfg.polar_state
    if state.thetadot == 0.0:
        raise LinearizationError("initial state sits at a turning point (thetadot = 0)")
    inv = lewis_ray_reid_polar(state, lin.V)
    grid = _theta_grid(cfg, inv, lin.V)
    branch = 1 if state.thetadot > 0.0 else -1
    ode = build_linear_ode(lin, inv, (float(grid[0]), float(grid[-1])), branch)
    tenv = {"t": state.t}
    rho_v = evaluate(lin.rho, tenv)
    rho_dv = evaluate(simplify(differentiate(lin.rho, "t")), tenv)
    psi0 = rho_v / state.r
    dpsi0 = -(rho_v * state.rdot - rho_dv * state.r) / (state.r**2 * state.thetadot)
    sol = solve_linear(ode, state.theta, psi0, dpsi0, [float(grid[0]), float(grid[-1])])
    rows = []
    for th in grid:
        p2, p1, p0, rhs = ode.coefficients(float(th))
        rows.append((th, p2, p1, p0, rhs, sol.psi(float(th))))
    _write_csv(out_dir / "linear_ode.csv", ["theta", "p2", "p1", "p0", "rhs", "psi"], rows)
    print(f"linearize: ok, {len(grid)} samples on [{grid[0]:.6g}, {grid[-1]:.6g}]")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, out_dir: Path) -> int:
    pipe = _pipeline(cfg)
    times = _sample_times(cfg, cfg.t_span[1])
    rows = []
    for t in times:
        theta = pipe.theta_of_t(float(t))
        rows.append((t, theta, pipe.r_of_theta(theta)))
    _write_csv(out_dir / "reconstructed.csv", ["t", "theta", "r"], rows)
    print(f"reconstruct: ok, {len(rows)} samples over t in {list(cfg.t_span)}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out_dir: Path) -> int:
    checks: dict[str, dict] = {}

    spec, traj = _simulate(cfg)
    drift_ok = traj.termination == "completed" and traj.drift.max_rel <= DRIFT_THRESHOLD
    checks["invariant_drift"] = {
        "max_rel": traj.drift.max_rel,
        "rms_rel": traj.drift.rms_rel,
        "termination": traj.termination,
        "threshold": DRIFT_THRESHOLD,
        "pass": bool(drift_ok),
    }

    lin = linearizable_view(cfg)
    times = _sample_times(cfg, traj.t_end)
    try:
        visited = traj.sample(times)[:, 1]
        pad = 0.05 * (np.max(visited) - np.min(visited)) + 0.05
        lo_cap = cfg.polar_state.theta - (float(np.min(visited)) - pad)
        hi_cap = (float(np.max(visited)) + pad) - cfg.polar_state.theta
        domain = auto_theta_domain(
            lin.V,
            lewis_ray_reid_polar(cfg.polar_state, lin.V),
            cfg.polar_state.theta,
            span_cap=max(lo_cap, hi_cap, 0.2),
        )
        pipe = build_pipeline(lin, cfg.polar_state, theta_domain=domain, t_window=cfg.t_span)
        r_err = 0.0
        th_err = 0.0
        for t, row in zip(times, traj.sample(times)):
            theta = pipe.theta_of_t(float(t))
            r = pipe.r_of_t(float(t))
            th_err = max(th_err, abs(theta - row[1]))
            r_err = max(r_err, abs(r - row[0]))
        checks["round_trip"] = {
            "r_sup": r_err,
            "theta_sup": th_err,
            "window": list(map(float, (times[0], times[-1]))),
            "threshold": ROUND_TRIP_THRESHOLD,
            "pass": bool(max(r_err, th_err) <= ROUND_TRIP_THRESHOLD),
        }
    except _RUNTIME_ERRORS as exc:
        checks["round_trip"] = {"error": str(exc), "pass": False}

    try:
        residuals = []
        for t, row in zip(times, traj.sample(times)):
            if abs(row[3]) < 1e-6 or row[0] <= 0.0:
                continue
            from .systems import PolarState

            state = PolarState(r=row[0], theta=row[1], rdot=row[2], thetadot=row[3], t=float(t))
            residuals.append(verify_compatibility(lin, state))
            if len(residuals) >= 100:
                break
        max_res = max(residuals) if residuals else math.inf
        checks["compatibility"] = {
            "max_residual": max_res,
            "n_states": len(residuals),
            "threshold": COMPATIBILITY_THRESHOLD,
            "pass": bool(residuals and max_res <= COMPATIBILITY_THRESHOLD),
        }
    except _RUNTIME_ERRORS as exc:
        checks["compatibility"] = {"error": str(exc), "pass": False}

    ok = all(c.get("pass", False) for c in checks.values())
    _write_json(out_dir / "report.json", {"checks": checks, "pass": bool(ok)})
    for name, c in checks.items():
        print(f"validate: {name}: {'pass' if c.get('pass') else 'FAIL'}")
    print(f"validate: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


_COMMANDS = {
    "simulate": cmd_simulate,
    "linearize": cmd_linearize,
    "reconstruct": cmd_reconstruct,
    "validate": cmd_validate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ermakov",
        description="Define, integrate, linearize, and reconstruct generalized Ermakov systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--config", type=Path, help="path to a JSON run config")
        group.add_argument(
            "--preset", choices=sorted(PRESETS), help="use a built-in named configuration"
        )
        p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("ERMAKOV_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = _build_parser().parse_args(argv)
    try:
        cfg = preset_config(args.preset) if args.preset else load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.command](cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
