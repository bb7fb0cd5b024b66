"""Command-line front end.

Commands: ``solve``, ``equilibrium``, ``simulate``, ``compare``,
``converge``.  Every run writes a manifest echoing the resolved
configuration; failures emit a machine-readable error document on stdout
(and ``error.json`` in the output directory) with exit code 2 for
validation problems and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import equilibrium as eqm
from . import scenario_io as io
from .errors import FluidModelError
from .fluid import solve_full
from .simulate import SimConfig, discrepancy, simulate

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluidq",
                                description="Fluid model of many-server queues with abandonment")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "solve the fluid model and export the trajectory"),
        ("equilibrium", "compute the equilibrium state"),
        ("simulate", "run the discrete-event simulator"),
        ("compare", "compare simulator output against the fluid solution across n"),
        ("converge", "solve and report distances to the equilibrium state"),
    ):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--config", required=True, help="scenario JSON file")
        q.add_argument("--out", required=True, help="output directory")
        q.add_argument("--step", type=float, default=None, help="time grid step")
        q.add_argument("--horizon", type=float, default=None, help="time horizon")
        if name in ("simulate", "compare"):
            q.add_argument("--seed", type=int, default=None, help="master seed")
            q.add_argument("--reps", type=int, default=None, help="replications")
            q.add_argument("--n", type=int, action="append", default=None,
                           help="server count (repeatable for compare)")
    return p


def _resolve(args):
    cfg = io.load_config(args.config)
    scenario = io.scenario_from_config(cfg)
    grid = cfg.get("grid", {})
    step = args.step if args.step is not None else float(grid.get("step", 1e-3))
    horizon = args.horizon if args.horizon is not None else float(grid.get("horizon", 10.0))
    if step <= 0 or horizon <= 0:
        raise io.InvalidConfigError("step and horizon must be positive")
    snapshots = [float(t) for t in cfg.get("snapshots", [])]
    return cfg, scenario, step, horizon, snapshots


def _sim_settings(args, cfg, lam_positive=True):
    sim = cfg.get("sim", {})
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    reps = args.reps if args.reps is not None else int(sim.get("replications", 1))
    ns = args.n if args.n else ([int(sim["n"])] if "n" in sim else [])
    record_step = float(sim.get("record_step", 0.1))
    arrival = None
    if "arrival" in cfg:
        arrival = io.distribution_from_config(cfg["arrival"])
    return seed, reps, ns, record_step, arrival


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _manifest(out_dir, command, args, resolved, outputs):
    doc = {
        "command": command,
        "config_path": str(args.config),
        "resolved": resolved,
        "outputs": [str(o) for o in outputs],
    }
    _write_json(out_dir / "manifest.json", doc)


def _tail_table(tail):
    return np.column_stack([tail.x, tail.values]).tolist()


def _eq_document(eq):
    return {
        "wait_interval": [eq.wait_lo, eq.wait_hi],
        "wait": eq.wait,
        "Q_inf": eq.queue,
        "R_inf": eq.buffer,
        "Z_inf": eq.in_service,
        "X_inf": eq.total,
        "abandonment_fraction": eq.abandonment_fraction,
        "buffer_tail": _tail_table(eq.buffer_tail),
        "pool_tail": _tail_table(eq.pool_tail),
    }


def _cmd_solve(args, out_dir):
    cfg, scenario, step, horizon, snapshots = _resolve(args)
    traj = solve_full(scenario, horizon, step, snapshot_times=snapshots)
    outputs = [out_dir / "trajectory.csv"]
    io.write_trajectory_csv(outputs[0], traj)
    for t in snapshots:
        path = out_dir / f"snapshot_t{t:g}.csv"
        io.write_snapshot_csv(path, traj.snapshots[t])
        outputs.append(path)
    resolved = io.scenario_to_config(scenario, {"step": step, "horizon": horizon}, snapshots)
    _manifest(out_dir, "solve", args, resolved, outputs)
    return 0


def _cmd_equilibrium(args, out_dir):
    cfg, scenario, step, horizon, snapshots = _resolve(args)
    eq = eqm.equilibrium_state(scenario)
    path = out_dir / "equilibrium.json"
    _write_json(path, _eq_document(eq))
    resolved = io.scenario_to_config(scenario)
    _manifest(out_dir, "equilibrium", args, resolved, [path])
    return 0


def _cmd_converge(args, out_dir):
    cfg, scenario, step, horizon, snapshots = _resolve(args)
    if not snapshots:
        snapshots = [horizon / 2.0, horizon]
    traj = solve_full(scenario, horizon, step, snapshot_times=snapshots)
    eq = eqm.equilibrium_state(scenario)
    report = eqm.convergence_report(traj, eq, snapshots)
    outputs = [out_dir / "convergence.json", out_dir / "trajectory.csv"]
    _write_json(outputs[0], report)
    io.write_trajectory_csv(outputs[1], traj)
    resolved = io.scenario_to_config(scenario, {"step": step, "horizon": horizon}, snapshots)
    _manifest(out_dir, "converge", args, resolved, outputs)
    return 0


def _cmd_simulate(args, out_dir):
    cfg, scenario, step, horizon, snapshots = _resolve(args)
    seed, reps, ns, record_step, arrival = _sim_settings(args, cfg)
    if len(ns) != 1:
        raise io.InvalidConfigError("simulate needs exactly one --n (or sim.n in the config)")
    sim_cfg = SimConfig(servers=ns[0], scenario=scenario, horizon=horizon, seed=seed,
                        replications=reps, snapshot_times=tuple(snapshots),
                        record_step=record_step, arrival_interarrival=arrival)
    result = simulate(sim_cfg)
    outputs = [out_dir / "sim_trajectory.csv"]
    io.write_sim_trajectory_csv(outputs[0], result)
    for t in snapshots:
        path = out_dir / f"sim_snapshot_t{t:g}.csv"
        io.write_sim_snapshot_csv(path, float(t), result)
        outputs.append(path)
    resolved = io.scenario_to_config(
        scenario, {"step": step, "horizon": horizon}, snapshots,
        extra={"sim": {"n": ns[0], "seed": seed, "replications": reps,
                       "record_step": record_step}})
    _manifest(out_dir, "simulate", args, resolved, outputs)
    return 0


def _cmd_compare(args, out_dir):
    cfg, scenario, step, horizon, snapshots = _resolve(args)
    seed, reps, ns, record_step, arrival = _sim_settings(args, cfg)
    if not ns:
        raise io.InvalidConfigError("compare needs at least one --n")
    traj = solve_full(scenario, horizon, step, snapshot_times=snapshots)
    rows = []
    for n in ns:
        sim_cfg = SimConfig(servers=n, scenario=scenario, horizon=horizon, seed=seed,
                            replications=reps, snapshot_times=tuple(snapshots),
                            record_step=record_step, arrival_interarrival=arrival)
        result = simulate(sim_cfg)
        gaps = discrepancy(result, traj)
        stride = int(round(record_step / step))
        per_rep = np.max(np.abs(
            result.total - traj.total[::stride][: len(result.times)]), axis=1)
        rows.append({
            "n": n,
            "replications": reps,
            "sup_gaps": gaps["sup_gaps"],
            "snapshot_gaps": gaps["snapshot_gaps"],
            "per_rep_total_gap_mean": float(np.mean(per_rep)),
            "per_rep_total_gap_std": float(np.std(per_rep, ddof=1)) if reps > 1 else 0.0,
        })
    path = out_dir / "compare.json"
    _write_json(path, {"rows": rows})
    resolved = io.scenario_to_config(
        scenario, {"step": step, "horizon": horizon}, snapshots,
        extra={"sim": {"n_list": ns, "seed": seed, "replications": reps,
                       "record_step": record_step}})
    _manifest(out_dir, "compare", args, resolved, [path])
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "equilibrium": _cmd_equilibrium,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "converge": _cmd_converge,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.command](args, out_dir)
    except FluidModelError as exc:
        doc = {"error": {"kind": exc.kind, "message": str(exc)}}
        print(json.dumps(doc))
        try:
            _write_json(out_dir / "error.json", doc)
        except OSError:
            pass
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
