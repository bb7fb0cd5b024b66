"""Measure-valued fluid model of a many-server queue with abandonment.

State is a pair of tail functions: the virtual-buffer content by remaining
patience (testing argument may be negative, since fluid that already
abandoned stays in the buffer until scheduled) and the server-pool content
by remaining service.  Both are reconstructed from two scalars driven by a
single convolution equation for the total mass ``x(t)``:

    x(t) = z0(t) + q(0) Gc(t)
           + (lam/mu) integral_0^t h((x(t-s)-1)^+) dGe(s)
           + integral_0^t (x(t-s)-1)^+ dG(s)

with the non-idling identities ``q = (x-1)^+`` and ``z = min(x, 1)``.
Here ``Gc`` is the service survival, ``Ge`` its stationary-excess CDF and
``h`` the surviving fraction of scheduled fluid.

Discretization: uniform grid, CDF-increment Stieltjes sums with integrands
interpolated linearly to cell midpoints.  Because the service law is
continuous the first cell carries vanishing mass and the march is
effectively explicit; a per-step fixed-point refinement (absolute
tolerance 1e-10, at most 50 iterations) removes the O(step) bias of the
half-open current cell.

Internal consistency checks (dual computation of the service inflow, the
mass balance) are bounded by ``consistency_tol(step) = 10 (1 + lam + mu)
step``, a conservative first-order truncation constant.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.signal import fftconvolve

from .distributions import DEFAULT_QUAD_STEP, Distribution
from .errors import ConsistencyError, FixedPointError, InvalidScenarioError
from .renewal import GridFunction, renewal_function, stieltjes_convolve

__all__ = [
    "MeasureTail",
    "Scenario",
    "FluidTrajectory",
    "MeasureSnapshot",
    "consistency_tol",
    "validate_initial",
    "solve",
    "solve_full",
    "buffer_content",
    "entered_service",
    "entered_service_renewal",
    "flows",
    "pool_measure",
    "buffer_measure",
    "time_shift",
]

FP_TOL = 1e-10
FP_MAXITER = 50


def consistency_tol(step: float, lam: float, mu: float) -> float:
    """Accuracy budget for internal cross-checks at a given grid step."""
    return 10.0 * (1.0 + lam + mu) * step


@dataclass(frozen=True)
class MeasureTail:
    """A tail function ``x -> mass above x`` sampled on an increasing grid.

    Values are linearly interpolated inside the grid and held constant
    before it.  Past the last point the tail either stays at its final
    value or, with ``decay_beyond_end`` (used for initial pool contents of
    possibly unbounded workload), decays linearly to zero at twice the
    grid end.
    """

    x: np.ndarray
    values: np.ndarray
    decay_beyond_end: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or len(x) == 0:
            raise ValueError("x and values must be equal-length 1-d arrays")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x grid must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", v)

    def at(self, q):
        """Tail value(s) at q, scalar or array."""
        q = np.asarray(q, dtype=float)
        out = np.interp(q, self.x, self.values)
        x_end = self.x[-1]
        v_end = self.values[-1]
        if self.decay_beyond_end and v_end != 0.0:
            if x_end <= 0.0:
                out = np.where(q > x_end, 0.0, out)
            else:
                ramp = v_end * np.clip((2.0 * x_end - q) / x_end, 0.0, 1.0)
                out = np.where(q > x_end, ramp, out)
        return out if out.ndim else float(out)

    def crossing(self, mass: float) -> float:
        """Smallest x at which the tail has dropped to ``mass``."""
        v = self.values
        if mass >= v[0]:
            return float(self.x[0])
        if mass < v[-1]:
            if self.decay_beyond_end and self.x[-1] > 0 and v[-1] > 0:
                return float(self.x[-1] * (2.0 - mass / v[-1]))
            return float(self.x[-1])
        j = int(np.searchsorted(-v, -mass, side="left"))
        # v[j-1] > mass >= v[j]
        x0, x1 = self.x[j - 1], self.x[j]
        v0, v1 = v[j - 1], v[j]
        if v0 == v1:
            return float(x0)
        return float(x0 + (v0 - mass) * (x1 - x0) / (v0 - v1))


def _empty_tail() -> MeasureTail:
    return MeasureTail(x=np.array([0.0]), values=np.array([0.0]), decay_beyond_end=True)


@dataclass
class Scenario:
    """Arrival rate, service and patience laws, and a valid initial state.

    The initial buffer is parameterized by its total mass ``initial_buffer``
    (the buffer profile is forced by the dynamics given its mass) and the
    initial pool by its remaining-service tail.  ``quad_step`` is the grid
    step used for all tail-integral quadratures tied to this scenario.
    Treat instances as immutable once validated.
    """

    arrival_rate: float
    service: Distribution
    patience: Distribution
    initial_buffer: float = 0.0
    initial_pool: MeasureTail = field(default_factory=_empty_tail)
    quad_step: float = DEFAULT_QUAD_STEP
    initial_queue: float | None = None
    initial_total: float | None = None

    def __post_init__(self):
        if not self.initial_pool.decay_beyond_end:
            self.initial_pool = replace(self.initial_pool, decay_beyond_end=True)

    @property
    def service_rate(self) -> float:
        return 1.0 / self.service.mean

    @property
    def offered_load(self) -> float:
        return self.arrival_rate * self.service.mean


def validate_initial(s: Scenario, tol: float = 1e-8) -> Scenario:
    """Check model preconditions and fill the derived initial masses.

    Rejects: increasing pool tails, pool mass above capacity, and states
    with queued fluid while servers idle (non-idling at time zero).
    A patience Lipschitz bound is measured from the discretized CDF when
    the law does not carry one.
    """
    if not (s.arrival_rate >= 0 and math.isfinite(s.arrival_rate)):
        raise InvalidScenarioError("arrival rate must be finite and non-negative")
    if not math.isfinite(s.service.mean):
        raise InvalidScenarioError("service law must have a finite mean")
    if s.initial_buffer < 0:
        raise InvalidScenarioError("initial buffer mass must be non-negative")
    if s.arrival_rate == 0 and s.initial_buffer > 0:
        raise InvalidScenarioError("initial buffer must be empty when the arrival rate is 0")
    if s.quad_step <= 0:
        raise InvalidScenarioError("quad_step must be positive")

    z0 = s.initial_pool
    if z0.x[0] != 0.0:
        raise InvalidScenarioError("initial pool tail must start at x = 0")
    if np.any(np.diff(z0.values) > 1e-12):
        raise InvalidScenarioError("initial pool tail must be non-increasing")
    if np.any(z0.values < -1e-15):
        raise InvalidScenarioError("initial pool tail must be non-negative")
    z00 = float(z0.values[0])
    if z00 > 1.0 + tol:
        raise InvalidScenarioError(f"initial pool content {z00} exceeds capacity 1")
    v_end = float(z0.values[-1])
    extrap_mass = 0.5 * v_end * float(z0.x[-1])
    if (v_end > 1e-6 and extrap_mass > 1e-4) or (v_end > 1e-9 and z0.x[-1] <= 0):
        warnings.warn(
            "initial pool tail does not vanish on its grid; mass "
            f"~{extrap_mass:.3g} beyond the grid end is extrapolated by linear decay",
            stacklevel=2)

    if s.patience.lipschitz_bound is not None:
        span = s.patience.quantile(min(0.999, 0.999 * s.patience.cdf_sup))
        span = min(max(span, 1.0), 1e4)
        slope = _max_slope(s.patience, span, s.quad_step)
        if slope > s.patience.lipschitz_bound * (1.0 + 1e-6):
            raise InvalidScenarioError(
                f"patience CDF slope {slope:.6g} exceeds the declared "
                f"Lipschitz bound {s.patience.lipschitz_bound:.6g}")
    else:
        span = s.patience.quantile(min(0.999, 0.999 * s.patience.cdf_sup))
        span = min(max(span, 1.0), 1e4)
        s.patience.lipschitz_bound = 1.05 * _max_slope(s.patience, span, s.quad_step)

    if s.arrival_rate > 0:
        q0 = s.arrival_rate * s.patience.tail_area(s.quad_step).value(
            s.initial_buffer / s.arrival_rate)
    else:
        q0 = 0.0
    x0 = q0 + z00
    if abs(q0 - max(x0 - 1.0, 0.0)) > tol * max(1.0, x0):
        raise InvalidScenarioError(
            f"non-idling violated at t=0: queue {q0:.6g} vs (total-1)+ = "
            f"{max(x0 - 1.0, 0.0):.6g} (pool content {z00:.6g})")
    s.initial_queue = q0
    s.initial_total = x0
    return s


def _max_slope(d: Distribution, span: float, step: float) -> float:
    xs = np.arange(0.0, span + step, step)
    return float(np.max(np.diff(np.asarray(d.cdf(xs), dtype=float))) / step)


class MeasureSnapshot(NamedTuple):
    buffer: MeasureTail
    pool: MeasureTail


@dataclass
class FluidTrajectory:
    """Time-gridded fluid trajectory.

    ``total/queue/in_service`` are filled by :func:`solve`; the remaining
    arrays by :func:`buffer_content`, :func:`entered_service` and
    :func:`flows` (or :func:`solve_full` for everything).  All arrays share
    the grid ``times``.
    """

    times: np.ndarray
    step: float
    total: np.ndarray              # X
    queue: np.ndarray              # Q = (X-1)^+
    in_service: np.ndarray         # Z = min(X, 1)
    buffer: np.ndarray | None = None           # R
    entered: np.ndarray | None = None          # A
    scheduled: np.ndarray | None = None        # B
    completed: np.ndarray | None = None        # S
    abandoned_in_buffer: np.ndarray | None = None   # L1 = R - Q
    abandoned_passed: np.ndarray | None = None      # L2 = B - B(0) - A
    abandoned: np.ndarray | None = None              # L = L1 + L2
    entered_dual_gap: float | None = None
    balance_residual: float | None = None
    snapshots: dict[float, MeasureSnapshot] = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float) -> int:
        i = int(round(t / self.step))
        if i < 0 or i >= len(self.times) or abs(t - i * self.step) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the trajectory grid")
        return i


class _SurvivingFraction:
    """Scalar and vector evaluation of the scheduled-fluid survival curve."""

    def __init__(self, patience: Distribution, lam: float, step: float):
        self.f = patience
        self.lam = lam
        self.area = patience.tail_area(step)
        mean = patience.mean
        self.cutoff = lam * mean * (1.0 - 1e-12) if math.isfinite(mean) else math.inf

    def __call__(self, x: float) -> float:
        if x >= self.cutoff:
            return 0.0
        return float(self.f.tail(self.area.inverse(x / self.lam)))

    def many(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        live = x < self.cutoff
        if np.any(live):
            y = self.area.inverse_many(x[live] / self.lam)
            out[live] = self.f.tail(y)
        return out


def solve(s: Scenario, horizon: float, step: float) -> FluidTrajectory:
    """March the total-mass equation on a uniform grid.

    Returns a trajectory with ``total``, ``queue`` and ``in_service``
    filled; the non-idling identities hold exactly by construction.
    Raises :class:`FixedPointError` if a per-step refinement fails to
    converge, which signals a step too coarse for the scenario.
    """
    if s.initial_queue is None:
        s = validate_initial(s)
    if step <= 0 or horizon <= 0:
        raise ValueError("horizon and step must be positive")
    n = int(round(horizon / step))
    if n < 1:
        raise ValueError("horizon must cover at least one step")
    times = np.arange(n + 1) * step
    lam = s.arrival_rate
    mu = s.service_rate

    gc = np.asarray(s.service.tail(times), dtype=float)
    dg = gc[:-1] - gc[1:]                      # CDF increments per cell
    dge = mu * step * 0.5 * (gc[:-1] + gc[1:])  # trapezoid increments of Ge
    dg_r = dg[::-1].copy()
    dge_r = dge[::-1].copy()
    z0t = np.asarray(s.initial_pool.at(times), dtype=float)
    q0 = s.initial_queue

    x = np.empty(n + 1)
    q = np.empty(n + 1)
    hv = np.empty(n + 1)
    qmid = np.empty(n)
    hmid = np.empty(n)

    hfun = _SurvivingFraction(s.patience, lam, s.quad_step) if lam > 0 else None
    coef = lam / mu

    x[0] = q0 + z0t[0]
    q[0] = max(x[0] - 1.0, 0.0)
    hv[0] = hfun(q[0]) if hfun else 1.0

    g1 = float(dg[0])
    ge1 = coef * float(dge[0])
    for k in range(1, n + 1):
        frozen = float(z0t[k]) + q0 * float(gc[k])
        if k > 1:
            frozen += float(np.dot(qmid[: k - 1], dg_r[n - k: n - 1]))
            if hfun:
                frozen += coef * float(np.dot(hmid[: k - 1], dge_r[n - k: n - 1]))
        q_prev = float(q[k - 1])
        h_prev = float(hv[k - 1])
        q_cur = q_prev
        h_cur = h_prev
        x_last = math.inf
        for _ in range(FP_MAXITER):
            x_val = frozen + 0.5 * (q_prev + q_cur) * g1
            if hfun:
                x_val += 0.5 * (h_prev + h_cur) * ge1
            if abs(x_val - x_last) <= FP_TOL:
                break
            x_last = x_val
            q_cur = max(x_val - 1.0, 0.0)
            if hfun:
                h_cur = hfun(q_cur)
        else:
            raise FixedPointError(
                f"fixed-point refinement did not converge at t = {k * step:.6g}; "
                "reduce the step")
        x[k] = x_val
        q[k] = max(x_val - 1.0, 0.0)  # non-idling holds exactly on output
        hv[k] = h_cur
        qmid[k - 1] = 0.5 * (q_prev + q[k])
        hmid[k - 1] = 0.5 * (h_prev + h_cur)

    z = np.minimum(x, 1.0)
    return FluidTrajectory(times=times, step=step, total=x, queue=q, in_service=z)


def buffer_content(s: Scenario, traj: FluidTrajectory) -> np.ndarray:
    """Virtual-buffer mass recovered from the queue by inverting the
    queue-length identity ``q = lam * area(r / lam)``."""
    lam = s.arrival_rate
    if lam == 0:
        return np.zeros_like(traj.queue)
    area = s.patience.tail_area(s.quad_step)
    mean = s.patience.mean
    qn = traj.queue / lam
    if math.isfinite(mean):
        qn = np.minimum(qn, mean * (1.0 - 1e-12))
    return lam * area.inverse_many(qn)


def entered_service(s: Scenario, traj: FluidTrajectory, cross_check: bool = True) -> np.ndarray:
    """Cumulative fluid inflow into the server pool.

    Primary form: ``a(t) = lam integral_0^t h(q(s)) ds - q(t) + q(0)``.
    With ``cross_check`` the renewal form (tail-adjusted pool content
    convolved with the renewal function) is computed as well and a
    discrepancy beyond the consistency tolerance raises
    :class:`ConsistencyError`, signalling discretization failure.
    """
    lam = s.arrival_rate
    q = traj.queue
    if lam > 0:
        hq = _SurvivingFraction(s.patience, lam, s.quad_step).many(q)
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (hq[:-1] + hq[1:]) * traj.step)])
        a = lam * integral - q + q[0]
    else:
        a = q[0] - q
    if cross_check:
        a_ren = entered_service_renewal(s, traj)
        gap = float(np.max(np.abs(a - a_ren)))
        traj.entered_dual_gap = gap
        tol = consistency_tol(traj.step, lam, s.service_rate)
        if gap > tol:
            raise ConsistencyError(
                f"service-inflow computations disagree: sup gap {gap:.3e} > tol {tol:.3e}")
    return a


def entered_service_renewal(s: Scenario, traj: FluidTrajectory) -> np.ndarray:
    """Service inflow via the renewal-equation route (cross-check form)."""
    z0t = np.asarray(s.initial_pool.at(traj.times), dtype=float)
    f = GridFunction(step=traj.step, values=traj.in_service - z0t)
    u = renewal_function(s.service, traj.horizon, traj.step)
    return stieltjes_convolve(f, u).values


def flows(s: Scenario, traj: FluidTrajectory):
    """Scheduled, completed and abandonment flows.

    Returns ``(b, s_comp, l1, l2, l)`` and records the mass-balance
    residual ``sup_t |z - z(0) - a + s_comp|`` on the trajectory.
    Requires ``buffer`` and ``entered``.
    """
    if traj.buffer is None or traj.entered is None:
        raise ValueError("buffer_content and entered_service must be computed first")
    lam = s.arrival_rate
    b = lam * traj.times - traj.buffer
    z0t = np.asarray(s.initial_pool.at(traj.times), dtype=float)
    n = len(traj.times) - 1
    da = np.diff(traj.entered)
    g_half = 1.0 - np.asarray(s.service.tail((np.arange(n) + 0.5) * traj.step), dtype=float)
    s_comp = z0t[0] - z0t
    if n >= 1:
        s_comp[1:] += fftconvolve(g_half, da)[:n]
    l1 = traj.buffer - traj.queue
    l2 = b - b[0] - traj.entered
    l = l1 + l2
    traj.balance_residual = float(np.max(np.abs(
        traj.in_service - traj.in_service[0] - traj.entered + s_comp)))
    return b, s_comp, l1, l2, l


def pool_measure(s: Scenario, traj: FluidTrajectory, t: float, xgrid) -> MeasureTail:
    """Remaining-service tail of the pool at time t on the given x grid."""
    if traj.entered is None:
        raise ValueError("entered_service must be computed first")
    m = traj.index_of(t)
    xgrid = np.asarray(xgrid, dtype=float)
    vals = np.asarray(s.initial_pool.at(xgrid + t), dtype=float).copy()
    if m >= 1:
        da_rev = np.diff(traj.entered[: m + 1])[::-1].copy()
        offs = (np.arange(m) + 0.5) * traj.step
        chunk = max(1, int(4e6 // max(m, 1)))
        for i in range(0, len(xgrid), chunk):
            xs = xgrid[i: i + chunk]
            vals[i: i + chunk] += np.asarray(
                s.service.tail(xs[:, None] + offs[None, :]), dtype=float) @ da_rev
    return MeasureTail(x=xgrid, values=np.maximum(vals, 0.0))


def buffer_measure(s: Scenario, traj: FluidTrajectory, t: float, xgrid) -> MeasureTail:
    """Remaining-patience tail of the virtual buffer at time t.

    The x grid may extend below zero; the tail saturates at the buffer
    mass once x drops below ``-r(t)/lam``.
    """
    if traj.buffer is None:
        raise ValueError("buffer_content must be computed first")
    m = traj.index_of(t)
    xgrid = np.asarray(xgrid, dtype=float)
    lam = s.arrival_rate
    if lam == 0:
        return MeasureTail(x=xgrid, values=np.zeros_like(xgrid))
    area = s.patience.tail_area(s.quad_step)
    age_span = traj.buffer[m] / lam
    vals = lam * (area.values(xgrid + age_span) - area.values(xgrid))
    return MeasureTail(x=xgrid, values=np.maximum(vals, 0.0))


def time_shift(s: Scenario, traj: FluidTrajectory, tau: float,
               x_end: float | None = None) -> Scenario:
    """Scenario that restarts the model from time ``tau``.

    Solving the result reproduces the original trajectory shifted by tau,
    up to the consistency tolerance.
    """
    if traj.buffer is None or traj.entered is None:
        raise ValueError("buffer_content and entered_service must be computed first")
    m = traj.index_of(tau)
    if x_end is None:
        x_end = traj.horizon
    xgrid = np.arange(0.0, x_end + traj.step, traj.step)
    pool = pool_measure(s, traj, tau, xgrid)
    pool_vals = np.minimum(np.minimum.accumulate(pool.values), 1.0)
    shifted = Scenario(
        arrival_rate=s.arrival_rate,
        service=s.service,
        patience=s.patience,
        initial_buffer=float(traj.buffer[m]),
        initial_pool=MeasureTail(x=xgrid, values=pool_vals, decay_beyond_end=True),
        quad_step=s.quad_step,
    )
    tol = consistency_tol(traj.step, s.arrival_rate, s.service_rate)
    return validate_initial(shifted, tol=max(tol, 1e-8))


def solve_full(s: Scenario, horizon: float, step: float,
               snapshot_times=(), snapshot_xstep: float = 0.01,
               snapshot_xmax: float = 40.0, cross_check: bool = True) -> FluidTrajectory:
    """Solve and fill every derived process plus measure snapshots."""
    s = validate_initial(s) if s.initial_queue is None else s
    traj = solve(s, horizon, step)
    traj.buffer = buffer_content(s, traj)
    traj.entered = entered_service(s, traj, cross_check=cross_check)
    b, s_comp, l1, l2, l = flows(s, traj)
    traj.scheduled = b
    traj.completed = s_comp
    traj.abandoned_in_buffer = l1
    traj.abandoned_passed = l2
    traj.abandoned = l
    if len(snapshot_times):
        lam = s.arrival_rate
        r_max = float(np.max(traj.buffer))
        x_lo = 0.0
        if lam > 0 and r_max > 0:
            x_lo = -math.ceil(r_max / lam / snapshot_xstep) * snapshot_xstep
        buf_grid = np.arange(x_lo, snapshot_xmax + snapshot_xstep / 2, snapshot_xstep)
        pool_grid = np.arange(0.0, snapshot_xmax + snapshot_xstep / 2, snapshot_xstep)
        for t in snapshot_times:
            traj.snapshots[float(t)] = MeasureSnapshot(
                buffer=buffer_measure(s, traj, t, buf_grid),
                pool=pool_measure(s, traj, t, pool_grid),
            )
    return traj
