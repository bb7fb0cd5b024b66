"""Scenario configuration files and CSV exports.

Scenario format (JSON):

    {
      "lambda": 2.0,
      "service":  {"family": "exponential", "params": {"rate": 1.0}},
      "patience": {"family": "exponential", "params": {"rate": 1.0},
                   "lipschitz_bound": 1.0},
      "initial":  {"R0": 0.0, "Z0_tail": [[0.0, 0.0]]},
      "grid":     {"step": 0.001, "horizon": 30.0},
      "snapshots": [15.0, 30.0],
      "sim": {"n": 100, "seed": 1, "replications": 5, "record_step": 0.1},
      "arrival": {"family": "uniform", "params": {"lo": 0.0, "hi": 1.0}}
    }

``sim`` and ``arrival`` are optional (``arrival`` selects a renewal
arrival stream by its interarrival law; default is Poisson).  Numbers in
CSV exports carry 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .distributions import (Distribution, Erlang, Exponential, HyperExponential,
                            LogNormal, PiecewiseLinearCdf, Uniform, Weibull)
from .errors import InvalidConfigError
from .fluid import FluidTrajectory, MeasureTail, Scenario
from .simulate import SimResult

__all__ = [
    "distribution_from_config",
    "distribution_to_config",
    "scenario_from_config",
    "scenario_to_config",
    "load_config",
    "write_trajectory_csv",
    "write_snapshot_csv",
    "write_sim_trajectory_csv",
    "write_sim_snapshot_csv",
]

_FAMILIES = {
    "exponential": Exponential,
    "erlang": Erlang,
    "hyperexponential": HyperExponential,
    "uniform": Uniform,
    "lognormal": LogNormal,
    "weibull": Weibull,
    "piecewise": PiecewiseLinearCdf,
    "piecewise-linear-cdf": PiecewiseLinearCdf,
}

_FMT = "%.17g"

TRAJECTORY_COLUMNS = (
    ("t", "times"),
    ("X", "total"),
    ("Q", "queue"),
    ("Z", "in_service"),
    ("R", "buffer"),
    ("A", "entered"),
    ("B", "scheduled"),
    ("S", "completed"),
    ("L1", "abandoned_in_buffer"),
    ("L2", "abandoned_passed"),
    ("L", "abandoned"),
)


def distribution_from_config(spec: dict) -> Distribution:
    if not isinstance(spec, dict) or "family" not in spec:
        raise InvalidConfigError("distribution spec must be a mapping with a 'family' key")
    family = str(spec["family"]).lower()
    cls = _FAMILIES.get(family)
    if cls is None:
        raise InvalidConfigError(
            f"unknown distribution family {spec['family']!r}; "
            f"known: {sorted(set(_FAMILIES) - {'piecewise-linear-cdf'})}")
    params = dict(spec.get("params", {}))
    if "lipschitz_bound" in spec:
        params["lipschitz_bound"] = spec["lipschitz_bound"]
    try:
        return cls(**params)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"bad parameters for {family}: {exc}") from exc


def distribution_to_config(d: Distribution) -> dict:
    out = {"family": d.family, "params": d.params()}
    if d.lipschitz_bound is not None:
        out["lipschitz_bound"] = d.lipschitz_bound
    return out


def scenario_from_config(cfg: dict) -> Scenario:
    try:
        lam = float(cfg["lambda"])
        service = distribution_from_config(cfg["service"])
        patience = distribution_from_config(cfg["patience"])
        initial = cfg.get("initial", {})
        r0 = float(initial.get("R0", 0.0))
        pairs = initial.get("Z0_tail", [[0.0, 0.0]])
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidConfigError("Z0_tail must be a list of [x, value] pairs")
        pool = MeasureTail(x=arr[:, 0], values=arr[:, 1], decay_beyond_end=True)
    except InvalidConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfigError(f"bad scenario config: {exc}") from exc
    kwargs = {}
    if "quad_step" in cfg:
        kwargs["quad_step"] = float(cfg["quad_step"])
    return Scenario(arrival_rate=lam, service=service, patience=patience,
                    initial_buffer=r0, initial_pool=pool, **kwargs)


def scenario_to_config(s: Scenario, grid: dict | None = None,
                       snapshots=(), extra: dict | None = None) -> dict:
    out = {
        "lambda": s.arrival_rate,
        "service": distribution_to_config(s.service),
        "patience": distribution_to_config(s.patience),
        "initial": {
            "R0": s.initial_buffer,
            "Z0_tail": np.column_stack([s.initial_pool.x, s.initial_pool.values]).tolist(),
        },
        "quad_step": s.quad_step,
    }
    if grid:
        out["grid"] = dict(grid)
    if len(snapshots):
        out["snapshots"] = list(snapshots)
    if extra:
        out.update(extra)
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InvalidConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InvalidConfigError("config root must be a JSON object")
    return cfg


def _fmt(v: float) -> str:
    return _FMT % v


def write_trajectory_csv(path, traj: FluidTrajectory) -> None:
    """Header ``t,X,Q,Z,R,A,B,S,L1,L2,L``; requires a fully derived trajectory."""
    cols = []
    for header, attr in TRAJECTORY_COLUMNS:
        arr = getattr(traj, attr)
        if arr is None:
            raise ValueError(f"trajectory is missing {attr}; use solve_full")
        cols.append(arr)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([h for h, _ in TRAJECTORY_COLUMNS])
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def write_snapshot_csv(path, snap) -> None:
    """Header ``x,R_tail,Z_tail`` on the buffer grid.

    For x < 0 the pool tail equals the whole pool content (remaining
    service is non-negative), which is the left clamp of the pool tail.
    """
    xs = snap.buffer.x
    z_vals = snap.pool.at(xs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "R_tail", "Z_tail"])
        for x, rv, zv in zip(xs, snap.buffer.values, z_vals):
            w.writerow([_fmt(x), _fmt(rv), _fmt(zv)])


def write_sim_trajectory_csv(path, result: SimResult) -> None:
    """Fluid trajectory schema plus a leading replication index column."""
    names = [attr for _, attr in TRAJECTORY_COLUMNS if attr != "times"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep"] + [h for h, _ in TRAJECTORY_COLUMNS])
        for rep in range(result.config.replications):
            arrays = [getattr(result, n)[rep] for n in names]
            for t, row in zip(result.times, zip(*arrays)):
                w.writerow([rep] + [_fmt(t)] + [_fmt(v) for v in row])


def write_sim_snapshot_csv(path, t: float, result: SimResult) -> None:
    snap = result.snapshots[t]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "x", "R_tail", "Z_tail"])
        for rep in range(result.config.replications):
            pool = MeasureTail(x=snap.pool_x, values=snap.pool[rep])
            z_vals = pool.at(snap.buffer_x)
            for x, rv, zv in zip(snap.buffer_x, snap.buffer[rep], z_vals):
                w.writerow([rep, _fmt(x), _fmt(rv), _fmt(zv)])
