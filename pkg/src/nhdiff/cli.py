"""Command-line driver: ``nhdiff {simulate,drift,measure-test,plan,reconstruct}``.

Exit codes: 0 success, 2 configuration error, 3 every path failed,
4 no numerical verdict (grid too coarse).
"""
from __future__ import annotations

import argparse
import importlib
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .chaplygin import beta_at, drift_b, measure_test, _reduced_metric_at
from .constraints import cbm_fields
from .errors import ConfigError, GridTooCoarse, SingularShape
from .sde import (Calculus, SDEProblem, TimeGrid, ensemble_run, ensemble_stats, paths_csv,
                  table_csv)
from .systems import robot, snakeboard

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED, EXIT_NO_VERDICT = 0, 2, 3, 4
COORDS = {"robot": ["psi1", "psi2", "x", "y", "theta"],
          "snakeboard": ["phi", "psi", "x", "y", "theta"]}


def metadata(cfg: cfgmod.RunConfig, command: str) -> list:
    g = cfg.grid
    return [f"nhdiff {command}",
            f"config_sha256 = {cfg.digest()}",
            f"system = {cfg.system}",
            f"seed = {cfg.ensemble.seed}",
            f"grid = t0 {g.t0!r}, t_final {g.t_final!r}, steps {g.steps}",
            "config = " + json.dumps(cfg.canonical(), sort_keys=True)]


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _plot_script(title: str, series: list) -> str:
    """Plain-text line-plot script: one ``plot`` command per column pair."""
    lines = ["# line-plot script", f'title "{title}"']
    for file, xcol, ycol, where, label, color in series:
        cond = f" where {where}" if where else ""
        lines.append(f'plot {file} {xcol} {ycol}{cond} label "{label}" color {color}')
    return "\n".join(lines) + "\n"


def _custom_case(cfg):
    spec = cfg.custom.factory
    mod, _, attr = spec.partition(":")
    try:
        return getattr(importlib.import_module(mod), attr)()
    except (ImportError, AttributeError, ValueError) as exc:
        raise ConfigError(f"custom.factory {spec!r} cannot be loaded: {exc}") from exc


def _chaplygin(cfg):
    if cfg.system == "robot":
        return robot.robot_system(cfg.system_params()).split, None, None
    if cfg.system == "custom":
        case = _custom_case(cfg)
        return case.split, case.beta_fn, case.bounds
    raise ConfigError("this command needs a Chaplygin system (robot or custom)")


# -- commands -----------------------------------------------------------------

def _simulation_problem(cfg):
    p = cfg.system_params()
    sim = cfg.simulate
    if cfg.system == "robot":
        if sim.mode == "controlled":
            ctrl = robot.RobotControl(cfg.plan.rho)
            prob = SDEProblem(5, lambda t, Q: robot.controlled_drift(p, ctrl, t, Q),
                              lambda t, Q: robot.controlled_diffusion(p, Q), 2)
        elif sim.drift == "generic":
            f = cbm_fields(robot.robot_system(p), sim.sigma)
            prob = SDEProblem(5, lambda t, Q: f.drift_field(Q), lambda t, Q: f.diffusion(Q), 2)
        else:
            prob = SDEProblem(5, lambda t, Q: robot.cbm_drift(p, Q, sim.sigma),
                              lambda t, Q: sim.sigma * robot.frame(p, Q), 2)
        q0 = np.zeros(5) if sim.initial is None else np.asarray(sim.initial, float)
        return prob, q0
    if cfg.system == "snakeboard":
        if sim.mode == "controlled":
            prob = snakeboard.controlled_problem(p)
        else:
            prob = SDEProblem(5, lambda t, Q: np.zeros(np.shape(Q)),
                              lambda t, Q: p.sigma * snakeboard.frame(p, Q), 3,
                              Calculus.STRATONOVICH, valid=lambda Q: snakeboard.regular(p, Q))
        q0 = np.asarray(cfg.reconstruct.initial if sim.initial is None else sim.initial, float)
        snakeboard.check_regular(p, q0)
        return prob, q0
    raise ConfigError("simulate supports the robot and snakeboard systems")


def cmd_simulate(cfg, out: Path) -> int:
    prob, q0 = _simulation_problem(cfg)
    g = cfg.grid
    grid = TimeGrid(g.t0, g.t_final, g.steps)
    e = cfg.ensemble
    ens = ensemble_run(prob, grid, q0, e.seed, e.paths, record_stride=e.record_stride,
                       workers=e.workers)
    head = metadata(cfg, "simulate")
    names = COORDS[cfg.system]
    _write(out, "paths.csv", paths_csv(ens, head, names))
    mean, se, count = ensemble_stats(ens)
    cols = {"t": ens.times}
    for i, n in enumerate(names):
        cols[f"mean_{n}"] = mean[:, i]
    for i, n in enumerate(names):
        cols[f"stderr_{n}"] = se[:, i]
    cols["count"] = count
    _write(out, "mean.csv", table_csv(cols, head + [f"exploded_paths = {int(ens.exploded.sum())}"]))
    if ens.exploded.all():
        print("all paths failed (singular or non-finite state)", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


def _shape_axes(split, k):
    return [np.arange(k) * (2 * np.pi / k) for _ in range(split.m)]


def cmd_drift(cfg, out: Path) -> int:
    split, beta_fn, _ = _chaplygin(cfg)
    axes = _shape_axes(split, cfg.drift.grid)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, split.m)
    beta = beta_at(split, pts) if beta_fn is None else np.asarray(beta_fn(pts), float)
    G0 = _reduced_metric_at(split, split.lift(pts))
    b = np.linalg.solve(G0, beta[..., None])[..., 0]
    head = metadata(cfg, "drift")
    if cfg.system == "robot":
        cf = robot.robot_drift_closed_form(cfg.system_params())
        head.append(f"closed_form_b = {cf[0]:.17g}, {cf[1]:.17g}")
    cols = {}
    for i in range(split.m):
        cols[f"x{i + 1}"] = pts[:, i]
    for i in range(split.m):
        cols[f"beta_{i + 1}"] = beta[:, i]
    for i in range(split.m):
        cols[f"b_{i + 1}"] = b[:, i]
    _write(out, "drift.csv", table_csv(cols, head))
    return EXIT_OK


def cmd_measure_test(cfg, out: Path) -> int:
    split, beta_fn, bounds = _chaplygin(cfg)
    try:
        rep = measure_test(split, cfg.measure.grid, beta_fn=beta_fn, bounds=bounds)
    except GridTooCoarse as exc:
        print(f"no verdict: {exc}", file=sys.stderr)
        return EXIT_NO_VERDICT
    head = metadata(cfg, "measure-test")
    print(rep.summary())
    _write(out, "measure.csv", rep.to_csv(head))
    if rep.potential is not None:
        pts = rep.points()
        cols = {f"x{i + 1}": pts[:, i] for i in range(pts.shape[1])}
        cols["F"] = rep.potential.reshape(-1)
        cols["N"] = rep.density.reshape(-1)
        _write(out, "potential.csv", table_csv(cols, head))
    return EXIT_OK


def cmd_plan(cfg, out: Path) -> int:
    if cfg.system != "robot":
        raise ConfigError("plan is defined for the robot")
    p = cfg.system_params()
    ctrl = robot.RobotControl(cfg.plan.rho)
    if cfg.plan.t_final is not None and cfg.plan.t_final < ctrl.t1:
        raise ConfigError(f"plan.t_final must be >= t1 = {ctrl.t1:.17g}")
    res = robot.robot_plan_mean(p, ctrl, cfg.plan.steps, cfg.plan.variant, cfg.plan.t_final)
    head = metadata(cfg, "plan") + [f"kappa = {robot.kappa(p):.17g}",
                                    f"variant = {cfg.plan.variant}"]
    braking = (~res.accelerating).astype(int)
    for name, xy in (("mean.csv", res.mean), ("nominal.csv", res.nominal)):
        _write(out, name, table_csv({"t": res.t, "x": xy[:, 0], "y": xy[:, 1],
                                     "braking": braking}, head))
    script = _plot_script("robot mean path under wheel noise", [
        ("mean.csv", "x", "y", "braking=0", "mean, accelerating", "blue"),
        ("mean.csv", "x", "y", "braking=1", "mean, braking", "red"),
        ("nominal.csv", "x", "y", "braking=0", "nominal, accelerating", "green"),
        ("nominal.csv", "x", "y", "braking=1", "nominal, braking", "magenta"),
    ])
    _write(out, "plan.plot", script)
    return EXIT_OK


def cmd_reconstruct(cfg, out: Path) -> int:
    if cfg.system != "snakeboard":
        raise ConfigError("reconstruct is defined for the snakeboard")
    p = cfg.system_params()
    g, e = cfg.grid, cfg.ensemble
    grid = TimeGrid(g.t0, g.t_final, g.steps)
    run = snakeboard.snakeboard_experiment(p, grid, e.seed, e.paths, cfg.reconstruct.initial,
                                           cfg.reconstruct.samples, e.workers)
    head = metadata(cfg, "reconstruct") + [f"exploded_paths = {int(run.exploded.sum())}"]
    names = COORDS["snakeboard"]
    cols = {"t": run.times}
    cols.update({n: run.z_mean[:, i] for i, n in enumerate(names)})
    cols["survivors"] = run.survivors
    _write(out, "zmean.csv", table_csv(cols, head))
    rows = {"t": [], **{n: [] for n in names}, "sample_id": []}
    for s, path in enumerate(run.z_samples):
        ok = np.all(np.isfinite(path), axis=-1)
        rows["t"].extend(run.times[ok])
        for i, n in enumerate(names):
            rows[n].extend(path[ok, i])
        rows["sample_id"].extend([s] * int(ok.sum()))
    rows["sample_id"] = np.asarray(rows["sample_id"], dtype=int)
    _write(out, "samples.csv", table_csv(rows, head))
    det = {"t": run.times, **{n: run.deterministic[:, i] for i, n in enumerate(names)}}
    _write(out, "deterministic.csv", table_csv(det, head))
    series = [("deterministic.csv", "x", "y", "", "unperturbed", "blue"),
              ("zmean.csv", "x", "y", "", "mean of Z", "magenta")]
    series += [("samples.csv", "x", "y", f"sample_id={s}", f"sample {s}", "gray")
               for s in range(len(run.z_samples))]
    _write(out, "reconstruct.plot", _plot_script("snakeboard mean motion", series))
    if run.exploded.all():
        print("all paths failed (singular or non-finite state)", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "drift": cmd_drift, "measure-test": cmd_measure_test,
            "plan": cmd_plan, "reconstruct": cmd_reconstruct}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nhdiff", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="FILE", help="TOML run configuration")
    ap.add_argument("--out", metavar="DIR", default=".", help="output directory")
    ap.add_argument("--seed", type=int, metavar="U64")
    ap.add_argument("--paths", type=int, metavar="N")
    ap.add_argument("--dt", type=float, metavar="REAL")
    ap.add_argument("--t-final", type=float, metavar="REAL", dest="t_final")
    ap.add_argument("--paper-literal", action="store_true",
                    help="planning: exp(kappa t) outside the integrals")
    ap.add_argument("--grid", type=int, metavar="N", help="shape grid resolution per axis")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        cfgmod.apply_overrides(cfg, args.seed, args.paths, args.dt, args.t_final, args.grid,
                               args.paper_literal)
        cfgmod.validate(cfg, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularShape as exc:
        print(f"singular configuration: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())
