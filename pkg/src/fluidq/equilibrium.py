"""Equilibrium states of the fluid model and convergence diagnostics.

An equilibrium is parameterized by the virtual waiting time ``w`` solving
``F(w) = max((rho - 1)/rho, 0)`` with ``rho = lam / mu``.  Flat stretches
of the patience CDF at the target level yield an interval of equilibria;
the full interval is reported and the smallest solution is used for all
derived quantities (a documented selection, not a canonical one).

Convergence is measured as the sup over an x grid of tail-function
differences, the pointwise surrogate for weak convergence of the content
measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import Distribution
from .errors import NoEquilibriumError
from .fluid import FluidTrajectory, MeasureTail, Scenario, validate_initial

__all__ = [
    "EquilibriumState",
    "solve_w",
    "equilibrium_state",
    "limit_total",
    "equilibrium_scenario",
    "convergence_report",
]

W_ATOL = 1e-10


@dataclass(frozen=True)
class EquilibriumState:
    wait_lo: float
    wait_hi: float
    wait: float                    # selected: the smallest solution
    queue: float                   # Q_inf
    buffer: float                  # R_inf = lam * wait
    in_service: float              # Z_inf = min(rho, 1)
    total: float                   # X_inf = Z_inf + Q_inf
    abandonment_fraction: float
    buffer_tail: MeasureTail
    pool_tail: MeasureTail


def solve_w(f: Distribution, rho: float):
    """Solution interval of the stationary waiting-time equation.

    Returns ``((w_lo, w_hi), w_selected)`` with ``w_selected = w_lo``.
    Raises :class:`NoEquilibriumError` when the abandonment target is not
    reachable by the patience CDF (defective patience under heavy load).
    """
    if rho <= 0 or not math.isfinite(rho):
        raise ValueError("rho must be positive and finite")
    target = max((rho - 1.0) / rho, 0.0)
    if target == 0.0:
        return (0.0, 0.0), 0.0
    if target >= f.cdf_sup:
        raise NoEquilibriumError(
            f"abandonment target {target:.6g} is not below the patience CDF "
            f"supremum {f.cdf_sup:.6g}; no finite waiting time exists")

    def smallest_with(pred):
        hi = 1.0
        while not pred(float(f.cdf(hi))):
            hi *= 2.0
            if hi > 1e15:
                raise NoEquilibriumError("waiting-time search did not bracket a solution")
        lo = 0.0
        while hi - lo > W_ATOL:
            mid = 0.5 * (lo + hi)
            if pred(float(f.cdf(mid))):
                hi = mid
            else:
                lo = mid
        return hi

    w_lo = smallest_with(lambda c: c >= target)
    w_hi = smallest_with(lambda c: c > target)
    return (w_lo, w_hi), w_lo


def _scalars(s: Scenario):
    rho = s.offered_load
    (w_lo, w_hi), w = solve_w(s.patience, rho)
    lam = s.arrival_rate
    q_inf = lam * s.patience.tail_area(s.quad_step).value(w) if lam > 0 else 0.0
    z_inf = min(rho, 1.0)
    return rho, (w_lo, w_hi), w, q_inf, z_inf


def limit_total(s: Scenario) -> float:
    """Long-run total mass: ``min(rho, 1) + lam * area(w)``."""
    _, _, _, q_inf, z_inf = _scalars(s)
    return z_inf + q_inf


def equilibrium_state(s: Scenario, xgrid=None) -> EquilibriumState:
    """Full equilibrium state with tail functions on ``xgrid``.

    The buffer tail is evaluated on the whole grid (which may extend below
    zero, where it saturates at the buffer mass); the pool tail on its
    non-negative part.
    """
    rho, (w_lo, w_hi), w, q_inf, z_inf = _scalars(s)
    lam = s.arrival_rate
    if xgrid is None:
        xgrid = _default_xgrid(s, w)
    xgrid = np.asarray(xgrid, dtype=float)

    f_area = s.patience.tail_area(s.quad_step)
    buf_vals = lam * (f_area.values(xgrid + w) - f_area.values(xgrid)) if lam > 0 \
        else np.zeros_like(xgrid)
    pool_x = xgrid[xgrid >= 0.0]
    g_area = s.service.tail_area(s.quad_step)
    ge = np.minimum(g_area.values(pool_x) / s.service.mean, 1.0)
    pool_vals = z_inf * (1.0 - ge)
    return EquilibriumState(
        wait_lo=w_lo,
        wait_hi=w_hi,
        wait=w,
        queue=q_inf,
        buffer=lam * w,
        in_service=z_inf,
        total=z_inf + q_inf,
        abandonment_fraction=max((rho - 1.0) / rho, 0.0),
        buffer_tail=MeasureTail(x=xgrid, values=np.maximum(buf_vals, 0.0)),
        pool_tail=MeasureTail(x=pool_x, values=np.maximum(pool_vals, 0.0)),
    )


def _default_xgrid(s: Scenario, w: float, xstep: float = 0.01, tail_eps: float = 1e-9):
    x_hi = _excess_tail_end(s.service, tail_eps)
    x_lo = -math.ceil(max(w, 0.0) / xstep) * xstep - xstep
    return np.arange(x_lo, x_hi + xstep, xstep)


def _excess_tail_end(g: Distribution, eps: float, step: float = 0.01) -> float:
    """x beyond which the stationary-excess tail of g stays below eps."""
    area = g.tail_area(step)
    mean = g.mean
    x = max(4.0 * mean, 1.0)
    while mean - area.value(x) > eps * mean and x < 1e6:
        x *= 2.0
    return x


def equilibrium_scenario(s: Scenario, xstep: float | None = None,
                         tail_eps: float = 1e-10) -> Scenario:
    """Scenario whose initial state is the computed equilibrium."""
    _, _, w, _, z_inf = _scalars(s)
    if xstep is None:
        xstep = s.quad_step
    x_end = _excess_tail_end(s.service, tail_eps)
    xs = np.arange(0.0, x_end + xstep, xstep)
    g_area = s.service.tail_area(s.quad_step)
    vals = z_inf * np.maximum(1.0 - g_area.values(xs) / s.service.mean, 0.0)
    eq = Scenario(
        arrival_rate=s.arrival_rate,
        service=s.service,
        patience=s.patience,
        initial_buffer=s.arrival_rate * w,
        initial_pool=MeasureTail(x=xs, values=vals, decay_beyond_end=True),
        quad_step=s.quad_step,
    )
    return validate_initial(eq, tol=1e-6)


def convergence_report(traj: FluidTrajectory, eq: EquilibriumState, times) -> dict:
    """Tail-function and scalar distances to equilibrium at the given times.

    Requires measure snapshots at each time.  Flags metrics whose distance
    fails to decrease monotonically across the requested times.
    """
    if traj.buffer is None:
        raise ValueError("buffer_content must be computed first")
    metrics = ("d_buffer_tail", "d_pool_tail", "total_gap", "queue_gap", "buffer_gap")
    rows = []
    for t in times:
        t = float(t)
        snap = traj.snapshots.get(t)
        if snap is None:
            raise ValueError(f"no measure snapshot recorded at t = {t}")
        i = traj.index_of(t)
        rows.append({
            "t": t,
            "d_buffer_tail": float(np.max(np.abs(
                snap.buffer.values - eq.buffer_tail.at(snap.buffer.x)))),
            "d_pool_tail": float(np.max(np.abs(
                snap.pool.values - eq.pool_tail.at(snap.pool.x)))),
            "total_gap": abs(float(traj.total[i]) - eq.total),
            "queue_gap": abs(float(traj.queue[i]) - eq.queue),
            "buffer_gap": abs(float(traj.buffer[i]) - eq.buffer),
        })
    violations = {m: [] for m in metrics}
    for prev, cur in zip(rows, rows[1:]):
        for m in metrics:
            if cur[m] > prev[m] * (1.0 + 1e-9) + 1e-12:
                violations[m].append(cur["t"])
    return {
        "equilibrium": {
            "wait_interval": [eq.wait_lo, eq.wait_hi],
            "wait": eq.wait,
            "queue": eq.queue,
            "buffer": eq.buffer,
            "in_service": eq.in_service,
            "total": eq.total,
            "abandonment_fraction": eq.abandonment_fraction,
        },
        "rows": rows,
        "monotone": {m: not violations[m] for m in metrics},
        "violations": violations,
    }
