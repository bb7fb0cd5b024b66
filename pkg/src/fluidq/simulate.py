"""Discrete-event simulation of the n-server queue with reneging.

Event-driven FCFS simulator with virtual-buffer bookkeeping: a customer
whose patience expires leaves the physical queue immediately but stays in
the waiting line (the virtual buffer) until the head-of-line pointer
passes them at a scheduling opportunity.  Scaled by 1/n, the recorded
trajectories and tail snapshots are the empirical counterparts of the
fluid processes and serve as a fluid-limit oracle.

Randomness: one independent stream per replication.  Stream seeds derive
from the master seed by ``splitmix64(master XOR splitmix64(rep_index))``;
all draws are inverse-transform through each law's quantile function, so
output is bit-identical given the seed.

Initial states realize a scenario's fluid initial condition:

* pool: ``round(n * z0)`` customers in service, remaining service sampled
  i.i.d. from the initial pool tail shape;
* virtual buffer: ``round(n * r0)`` customers with deterministically
  stratified ages on ``(0, r0/lam]``, marked waiting/already-abandoned so
  that cumulative waiting counts track the buffer profile (the waiting
  count matches ``n * q0`` within one), each with a patience draw
  conditioned on its age and mark.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .distributions import Distribution, Exponential
from .errors import InvalidConfigError
from .fluid import FluidTrajectory, MeasureTail, Scenario, validate_initial

__all__ = ["SimConfig", "SimSnapshot", "SimResult", "simulate", "discrepancy", "stream_seed"]

_MASK = (1 << 64) - 1

# customer states
_WAITING, _ABANDONED, _IN_SERVICE, _DEPARTED, _PASSED = range(5)

# event kinds (arrival last so ties resolve departures/abandonments first)
_EV_DEPART, _EV_ABANDON, _EV_ARRIVAL = range(3)


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def stream_seed(master: int, rep: int) -> int:
    """Per-replication stream seed: splitmix64(master XOR splitmix64(rep))."""
    return _splitmix64((master & _MASK) ^ _splitmix64(rep))


@dataclass
class SimConfig:
    servers: int
    scenario: Scenario
    horizon: float
    seed: int = 0
    replications: int = 1
    snapshot_times: tuple = ()
    record_step: float = 0.1
    arrival_interarrival: Distribution | None = None  # mean 1/lam; exponential if None
    snapshot_xstep: float = 0.05
    snapshot_xmax: float = 20.0
    check_invariants: bool = False

    def __post_init__(self):
        if self.servers < 1:
            raise InvalidConfigError("servers must be >= 1")
        if self.horizon <= 0:
            raise InvalidConfigError("horizon must be positive")
        if self.replications < 1:
            raise InvalidConfigError("replications must be >= 1")
        if self.record_step <= 0:
            raise InvalidConfigError("record_step must be positive")
        lam = self.scenario.arrival_rate
        if self.arrival_interarrival is not None:
            if lam <= 0:
                raise InvalidConfigError("renewal arrivals require a positive arrival rate")
            if abs(self.arrival_interarrival.mean * lam - 1.0) > 1e-6:
                raise InvalidConfigError(
                    "interarrival mean must equal 1/lam "
                    f"(got {self.arrival_interarrival.mean}, need {1.0 / lam})")


@dataclass
class SimSnapshot:
    buffer_x: np.ndarray
    buffer: np.ndarray   # (reps, len(buffer_x)) scaled tails
    pool_x: np.ndarray
    pool: np.ndarray


_FIELDS = ("total", "queue", "in_service", "buffer", "entered", "scheduled",
           "completed", "abandoned_in_buffer", "abandoned_passed", "abandoned")


@dataclass
class SimResult:
    config: SimConfig
    times: np.ndarray
    total: np.ndarray            # (reps, T), fluid-scaled
    queue: np.ndarray
    in_service: np.ndarray
    buffer: np.ndarray
    entered: np.ndarray
    scheduled: np.ndarray
    completed: np.ndarray
    abandoned_in_buffer: np.ndarray
    abandoned_passed: np.ndarray
    abandoned: np.ndarray
    snapshots: dict[float, SimSnapshot] = field(default_factory=dict)

    def mean(self, name: str) -> np.ndarray:
        """Trajectory of ``name`` averaged across replications."""
        return np.asarray(getattr(self, name)).mean(axis=0)


def _empirical_tail(values, xgrid, n):
    vals = np.sort(np.asarray(values, dtype=float))
    return (len(vals) - np.searchsorted(vals, xgrid, side="right")) / n


class _Replication:
    def __init__(self, cfg: SimConfig, rep: int):
        self.cfg = cfg
        self.s = cfg.scenario
        self.n = cfg.servers
        self.rng = np.random.Generator(np.random.PCG64(stream_seed(cfg.seed, rep)))
        self.heap: list = []
        self.seq = 0
        self.line: deque[int] = deque()
        # per-customer records
        self.deadline: list[float] = []   # absolute abandonment time (may be <= 0)
        self.svc: list[float] = []
        self.dep: list[float] = []
        self.state: list[int] = []
        self.entry_order: list[int] = []
        # counters
        self.busy = 0
        self.waiting = 0
        self.abandoned_in_line = 0
        self.arrivals = 0
        self.entered = 0
        self.completed = 0
        self.passed = 0

    def _push(self, t, kind, cid):
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, cid))

    def _new_customer(self) -> int:
        cid = len(self.state)
        self.deadline.append(math.inf)
        self.svc.append(0.0)
        self.dep.append(math.inf)
        self.state.append(_WAITING)
        return cid

    def _enter_service(self, t, cid, service_time):
        self.state[cid] = _IN_SERVICE
        self.busy += 1
        self.entered += 1
        self.dep[cid] = t + service_time
        self.entry_order.append(cid)
        self._push(self.dep[cid], _EV_DEPART, cid)

    def _try_schedule(self, t):
        while self.busy < self.n and self.line:
            cid = self.line.popleft()
            if self.state[cid] == _WAITING:
                self.waiting -= 1
                self._enter_service(t, cid, self.svc[cid])
            else:
                self.state[cid] = _PASSED
                self.abandoned_in_line -= 1
                self.passed += 1

    def _init_pool(self):
        z0 = self.s.initial_pool
        z00 = float(z0.values[0])
        m_z = round(self.n * z00)
        for _ in range(m_z):
            cid = self._new_customer()
            residual = z0.crossing(self.rng.random() * z00)
            self.svc[cid] = residual
            self._enter_service(0.0, cid, residual)
        self.entered = 0  # initial pool does not count as inflow

    def _init_buffer(self):
        s = self.s
        lam = s.arrival_rate
        r0 = s.initial_buffer
        if r0 <= 0 or lam <= 0:
            return
        m = round(self.n * r0)
        if m == 0:
            return
        f = s.patience
        span = r0 / lam
        ages = (np.arange(m) + 0.5) * span / m
        f_at_age = 1.0 - np.asarray(f.tail(ages), dtype=float)
        marks = np.floor(np.cumsum(1.0 - f_at_age))
        alive = np.diff(np.concatenate([[0.0], marks])) > 0.0
        order = range(m - 1, -1, -1)  # oldest first
        for i in order:
            cid = self._new_customer()
            age = float(ages[i])
            u = self.rng.random()
            if alive[i]:
                tau = f.quantile(f_at_age[i] + u * (1.0 - f_at_age[i]))
                residual = tau - age
                if residual <= 0:
                    residual = 1e-12  # conditioning guarantees > 0, guard fl rounding
                self.deadline[cid] = residual
                self.waiting += 1
                self.svc[cid] = s.service.quantile(self.rng.random())
                if math.isfinite(residual):
                    self._push(residual, _EV_ABANDON, cid)
            else:
                tau = f.quantile(u * f_at_age[i])
                self.deadline[cid] = tau - age
                self.state[cid] = _ABANDONED
                self.abandoned_in_line += 1
                self.svc[cid] = s.service.quantile(self.rng.random())
            self.line.append(cid)

    def _check(self, t):
        assert not (self.busy < self.n and self.waiting > 0), f"idling at t={t}"
        assert len(self.line) == self.waiting + self.abandoned_in_line
        created = len(self.state)
        in_line = self.waiting + self.abandoned_in_line
        assert created == in_line + self.busy + self.completed + self.passed
        assert all(a <= b for a, b in zip(self.entry_order, self.entry_order[1:])), "FCFS broken"

    def run(self):
        cfg = self.cfg
        s = self.s
        n = self.n
        lam = s.arrival_rate
        horizon = cfg.horizon
        times = np.arange(int(round(horizon / cfg.record_step)) + 1) * cfg.record_step
        rows = {name: np.zeros(len(times)) for name in _FIELDS}
        snaps = {}
        snap_times = sorted(float(t) for t in cfg.snapshot_times)

        self._init_pool()
        self._init_buffer()

        arr_dist = cfg.arrival_interarrival or (Exponential(lam) if lam > 0 else None)
        if lam > 0:
            t_next = arr_dist.quantile(self.rng.random()) / n
            if t_next <= horizon:
                self._push(t_next, _EV_ARRIVAL, -1)

        gi = 0          # next grid index to record
        si = 0          # next snapshot index
        t_now = 0.0

        def record_until(t_to):
            nonlocal gi, si
            while si < len(snap_times) and snap_times[si] < t_to:
                snaps[snap_times[si]] = self._snapshot(snap_times[si])
                si += 1
            while gi < len(times) and times[gi] < t_to:
                self._record_row(rows, gi, times[gi])
                gi += 1

        while self.heap:
            t, kind, _, cid = heapq.heappop(self.heap)
            if t > horizon:
                break
            record_until(t)
            t_now = t
            if kind == _EV_ARRIVAL:
                self.arrivals += 1
                new = self._new_customer()
                self.svc[new] = s.service.quantile(self.rng.random())
                pat = s.patience.quantile(self.rng.random())
                self.deadline[new] = t + pat
                if self.busy < n and not self.line:
                    self._enter_service(t, new, self.svc[new])
                else:
                    self.line.append(new)
                    self.waiting += 1
                    if math.isfinite(pat):
                        self._push(t + pat, _EV_ABANDON, new)
                t_next = t + arr_dist.quantile(self.rng.random()) / n
                if t_next <= horizon:
                    self._push(t_next, _EV_ARRIVAL, -1)
            elif kind == _EV_DEPART:
                self.busy -= 1
                self.completed += 1
                self.state[cid] = _DEPARTED
                self._try_schedule(t)
            else:  # abandonment
                if self.state[cid] == _WAITING:
                    self.state[cid] = _ABANDONED
                    self.waiting -= 1
                    self.abandoned_in_line += 1
            if cfg.check_invariants:
                self._check(t)
        record_until(math.inf)
        return times, rows, snaps

    def _record_row(self, rows, gi, t):
        n = self.n
        lam = self.s.arrival_rate
        q = self.waiting / n
        z = self.busy / n
        r = len(self.line) / n
        rows["queue"][gi] = q
        rows["in_service"][gi] = z
        rows["total"][gi] = q + z
        rows["buffer"][gi] = r
        rows["entered"][gi] = self.entered / n
        rows["scheduled"][gi] = self.arrivals / n - r if lam > 0 else -r
        rows["completed"][gi] = self.completed / n
        rows["abandoned_in_buffer"][gi] = self.abandoned_in_line / n
        rows["abandoned_passed"][gi] = self.passed / n
        rows["abandoned"][gi] = (self.abandoned_in_line + self.passed) / n

    def _snapshot(self, t):
        cfg = self.cfg
        xs = cfg.snapshot_xstep
        pool_x = np.arange(0.0, cfg.snapshot_xmax + xs / 2, xs)
        x_lo = -math.ceil(cfg.snapshot_xmax / xs) * xs
        buf_x = np.arange(x_lo, cfg.snapshot_xmax + xs / 2, xs)
        pool_rem = [self.dep[c] - t for c in range(len(self.state))
                    if self.state[c] == _IN_SERVICE]
        buf_rem = [self.deadline[c] - t if math.isfinite(self.deadline[c]) else math.inf
                   for c in self.line]
        return (buf_x, _empirical_tail(buf_rem, buf_x, self.n),
                pool_x, _empirical_tail(pool_rem, pool_x, self.n))


def simulate(cfg: SimConfig) -> SimResult:
    """Run all replications and collect fluid-scaled trajectories."""
    if cfg.scenario.initial_queue is None:
        validate_initial(cfg.scenario)
    all_rows = None
    times = None
    snap_acc: dict[float, list] = {float(t): [] for t in cfg.snapshot_times}
    for rep in range(cfg.replications):
        r_times, rows, snaps = _Replication(cfg, rep).run()
        if all_rows is None:
            times = r_times
            all_rows = {name: [] for name in _FIELDS}
        for name in _FIELDS:
            all_rows[name].append(rows[name])
        for t, snap in snaps.items():
            snap_acc[t].append(snap)

    stacked = {name: np.vstack(all_rows[name]) for name in _FIELDS}
    snapshots = {}
    for t, lst in snap_acc.items():
        if not lst:
            continue
        buf_x, _, pool_x, _ = lst[0]
        snapshots[t] = SimSnapshot(
            buffer_x=buf_x,
            buffer=np.vstack([s[1] for s in lst]),
            pool_x=pool_x,
            pool=np.vstack([s[3] for s in lst]),
        )
    return SimResult(config=cfg, times=times, snapshots=snapshots, **stacked)


def discrepancy(result: SimResult, traj: FluidTrajectory) -> dict:
    """Sup-norm gaps between replication-averaged scaled processes and the
    fluid trajectory, plus snapshot tail gaps at common times."""
    stride = result.config.record_step / traj.step
    if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
        raise ValueError("simulation record step is not a multiple of the fluid step")
    stride = int(round(stride))
    sub = traj.times[::stride]
    m = len(result.times)
    if m > len(sub) or not np.allclose(result.times, sub[:m], atol=1e-9):
        raise ValueError("time grids do not align")

    out = {"sup_gaps": {}, "snapshot_gaps": {}}
    for name, arr in (("total", traj.total), ("queue", traj.queue),
                      ("in_service", traj.in_service), ("buffer", traj.buffer)):
        if arr is None:
            continue
        gap = np.max(np.abs(result.mean(name) - arr[::stride][:m]))
        out["sup_gaps"][name] = float(gap)
    for t, snap in sorted(result.snapshots.items()):
        fl = traj.snapshots.get(t)
        if fl is None:
            continue
        buf_gap = float(np.max(np.abs(snap.buffer.mean(axis=0) - fl.buffer.at(snap.buffer_x))))
        pool_gap = float(np.max(np.abs(snap.pool.mean(axis=0) - fl.pool.at(snap.pool_x))))
        out["snapshot_gaps"][t] = {"buffer": buf_gap, "pool": pool_gap}
    return out
