"""Adaptive Lie-Trotter splitting over a Monte Carlo ensemble.

Given the current post-noise states u~_n of all samples, the next partition
time is the first search-grid point t > t_n where the ensemble mean of
||S(t - t_n) u~_n - u~_n||_1 exceeds epsilon, capped by t_n + epsilon and T.
Then u_n = S(t_{n+1} - t_n) u~_n and u~_{n+1} = R(t_{n+1}, t_n) u_n.

All times are integer indices on a fine grid of step h = T / n_fine.  The
Brownian paths live on that grid and are shared by every run with the same
seed and h, which couples runs at different epsilon.  The deterministic
substep ladder restarts at every fine node, so S(t - s) on [s, t] is the same
bit pattern whatever partition [s, t] belongs to.

Interpolants (per sample, t in [t_n, t_{n+1})):
    v(t)       = R(t, t_n) u_n          (Euler-Maruyama path from u_n)
    vtilde(t)  = S(t - t_n) u~_n
    v(t^eps)   = u_n
At t = T the left limits v(T-0) = u~_M and vtilde(T-0) = u_{M-1} are used.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .det_solver import DetLedger, DetOperator, DetScheme
from .errors import HorizonNotReached, NonFiniteState
from .grid import TorusGrid, _sum, lp_power_values
from .model import ProblemSpec
from .sde_solver import BrownianStore, noise_increment

LEDGER_POWERS = (0.0, 2.0)


@dataclass(frozen=True)
class SplitConfig:
    N: int = 64
    search_fraction: float = 1.0 / 16.0
    sde_fraction: float = 1.0 / 8.0
    fine_step: float | None = None
    det: DetScheme = field(default_factory=DetScheme)
    workers: int = 1
    xi_bins: int = 128
    record_nodes: bool = False


def fine_units(tau: float, n_fine: int, horizon: float, tol: float = 1e-14) -> int:
    """Largest k with k * horizon / n_fine <= tau + tol."""
    k = int(np.floor(tau * n_fine / horizon))
    while (k + 1) * horizon / n_fine <= tau + tol:
        k += 1
    while k > 0 and k * horizon / n_fine > tau + tol:
        k -= 1
    return k


def fine_grid(horizon: float, step: float) -> int:
    return max(1, int(np.ceil(horizon / step - 1e-9)))


def default_fine_grid(epsilon: float, horizon: float, per_cell: int = 32) -> int:
    """Fine node count with about ``per_cell`` steps per epsilon.

    When horizon / epsilon is a simple fraction p/q the count is a multiple of
    p, so both epsilon and the horizon fall on fine nodes.
    """
    ratio = horizon / epsilon
    frac = Fraction(ratio).limit_denominator(64)
    if frac.numerator > 0 and abs(float(frac) - ratio) <= 1e-12 * ratio:
        return frac.numerator * int(np.ceil(per_cell / frac.denominator))
    return fine_grid(horizon, min(epsilon, horizon) / per_cell)


@dataclass
class Partition:
    epsilon: float
    horizon: float
    n_fine: int
    search_step: int
    indices: list[int] = field(default_factory=lambda: [0])
    traces: list[list[tuple[int, float]]] = field(default_factory=list)
    ended_by: list[str] = field(default_factory=list)

    def time_of(self, i: int) -> float:
        return self.horizon if i == self.n_fine else self.horizon * i / self.n_fine

    @property
    def times(self) -> np.ndarray:
        return np.array([self.time_of(i) for i in self.indices])

    @property
    def n_cells(self) -> int:
        return len(self.indices) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def search_resolution(self) -> float:
        return self.search_step * self.horizon / self.n_fine

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "horizon": self.horizon, "n_fine": self.n_fine,
            "search_step": self.search_step, "indices": list(map(int, self.indices)),
            "times": [float(t) for t in self.times], "ended_by": list(self.ended_by),
            "traces": [[[int(i), float(d)] for i, d in tr] for tr in self.traces],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls(epsilon=d["epsilon"], horizon=d["horizon"], n_fine=d["n_fine"],
                   search_step=d["search_step"], indices=list(d["indices"]),
                   traces=[[(int(i), float(v)) for i, v in tr] for tr in d.get("traces", [])],
                   ended_by=list(d.get("ended_by", [])))


@dataclass
class SplitTrajectory:
    """Ensemble snapshots at the output times; arrays are (times, samples, N)."""

    grid: TorusGrid
    times: np.ndarray
    indices: np.ndarray
    v: np.ndarray
    vtilde: np.ndarray
    v_left: np.ndarray
    cell_of: np.ndarray
    nodes_u: list = field(default_factory=list)
    nodes_utilde: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.v.shape[1]


@dataclass
class CellRecord:
    width: float
    ended_by: str
    d_end: float
    vtilde_pair_max: float
    v_pair_max: float
    n1: float
    m_scheme: float
    det_drop: float


@dataclass
class RunAccumulators:
    """Per-sample totals needed by the kinetic diagnostics."""

    u0: np.ndarray
    v_final: np.ndarray
    dx: float
    n1: np.ndarray
    m_scheme: np.ndarray
    time_defect: np.ndarray
    det_drop: dict
    stoch: dict
    compensator: dict
    realized: dict
    n1_xi: np.ndarray
    xi_edges: np.ndarray
    clamp_count: int
    linear_growth_const: float
    horizon: float


@dataclass
class DiagnosticsBundle:
    accumulators: RunAccumulators
    cells: list[CellRecord]
    output_indices: np.ndarray

    @property
    def vtilde_pair_max(self) -> float:
        return max(c.vtilde_pair_max for c in self.cells)

    @property
    def v_pair_max(self) -> float:
        return max(c.v_pair_max for c in self.cells)


def _entropy_power(values, p, dx):
    """sum |u|^{p+2} / ((p+1)(p+2)) dx per row."""
    return lp_power_values(values, p + 2.0, dx) / ((p + 1.0) * (p + 2.0))


def _mean_l1(a, b, dx) -> float:
    rows = _sum(np.abs(a - b)) * dx
    return float(_sum(rows) / rows.shape[0])


def _pair_max(states, dx) -> float:
    best = 0.0
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            best = max(best, _mean_l1(states[i], states[j], dx))
    return best


class Ensemble:
    """M sample trajectories advanced cell by cell on a shared partition."""

    def __init__(self, spec: ProblemSpec, epsilon: float, n_samples: int, seed: int,
                 config: SplitConfig | None = None, output_times=(), samples=None):
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        if n_samples < 1:
            raise ValueError("need at least one sample")
        self.spec = spec
        self.config = config = config or SplitConfig()
        self.epsilon = float(epsilon)
        self.seed = int(seed)
        self.samples = np.arange(n_samples) if samples is None else np.asarray(samples, int)
        self.M = len(self.samples)
        self.grid = TorusGrid(config.N)
        self.dx = self.grid.dx
        self.x = self.grid.centers
        T = spec.horizon
        self.n_fine = (fine_grid(T, config.fine_step) if config.fine_step is not None
                       else default_fine_grid(self.epsilon, T))
        self.h = T / self.n_fine
        self.cap = fine_units(self.epsilon, self.n_fine, T)
        if self.cap < 1:
            raise ValueError("fine_step must not exceed epsilon")
        self.search_step = max(1, int(round(self.cap * config.search_fraction)))
        self.sde_step = max(1, int(round(self.cap * config.sde_fraction)))
        self.op = DetOperator(config.det, spec, self.grid)
        self.has_det = self.op.has_flux or self.op.has_diffusion
        self.has_noise = not spec.noise.is_zero
        self.store = (BrownianStore(self.seed, self.samples, spec.noise.n_modes,
                                    self.n_fine, self.h) if self.has_noise else None)

        self.u0 = self.grid.cell_average(spec.initial).values
        self.utilde = np.tile(self.u0, (self.M, 1))
        self.partition = Partition(self.epsilon, T, self.n_fine, self.search_step)

        out = sorted({min(max(int(round(t * self.n_fine / T)), 0), self.n_fine)
                      for t in output_times})
        self.output_indices = np.array(out, int)
        K = len(out)
        shape = (K, self.M, self.grid.N)
        self.snap_v = np.zeros(shape)
        self.snap_vtilde = np.zeros(shape)
        self.snap_vleft = np.zeros(shape)
        self.cell_of = np.zeros(K, int)

        span = max(1.0, float(np.max(np.abs(self.u0))))
        self.xi_edges = np.linspace(-2.0 * span, 2.0 * span, config.xi_bins + 1)
        self.ledger = DetLedger(self.M, self.grid.N, xi_edges=self.xi_edges)
        zeros = lambda: {p: np.zeros(self.M) for p in LEDGER_POWERS}  # noqa: E731
        self.det_drop, self.stoch, self.compensator, self.realized = (
            zeros(), zeros(), zeros(), zeros())
        self.cells: list[CellRecord] = []
        self.nodes_u: list = []
        self.nodes_utilde: list = []
        self._pending = None
        self._pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
        self._chunks = [slice(int(a[0]), int(a[-1]) + 1)
                        for a in np.array_split(np.arange(self.M), max(1, config.workers))
                        if len(a)]

    # ---------------------------------------------------------------- S part

    def _evolve(self, u, n_units, ledger):
        """Apply S over n_units fine steps, restarting the ladder at each node."""
        if not self.has_det or n_units == 0:
            return u
        for _ in range(n_units):
            if self._pool is None:
                u = self.op.evolve(u, self.h, ledger)
                continue
            subs = [ledger.rows_view(sl) for sl in self._chunks]
            futs = [self._pool.submit(self.op.evolve, u[sl], self.h, sub)
                    for sl, sub in zip(self._chunks, subs)]
            u = np.concatenate([f.result() for f in futs], axis=0)
            for sub in subs:
                ledger.absorb_counters(sub)
        return u

    def _out_hits(self, lo, hi):
        """Positions k of output indices with lo <= idx <= hi."""
        idx = self.output_indices
        return [k for k in range(len(idx)) if lo <= idx[k] <= hi]

    def next_partition_time(self, i_n: int) -> int:
        """First search-grid index with D > epsilon, else the cap (fine units)."""
        if i_n >= self.n_fine:
            raise ValueError("t_n must lie before the horizon")
        cap = min(i_n + self.cap, self.n_fine)
        ut = self.utilde
        ledger = DetLedger(self.M, self.grid.N, xi_edges=self.xi_edges)
        u = ut
        i = i_n
        trace: list[tuple[int, float]] = []
        tilde_snaps = {i_n: ut}
        search_states = [ut]
        ended = "horizon" if i_n + self.cap > self.n_fine else "cap"
        outs = set(int(self.output_indices[k]) for k in self._out_hits(i_n, cap))
        while i < cap:
            u = self._evolve(u, 1, ledger)
            i += 1
            if i in outs:
                tilde_snaps[i] = u
            if (i - i_n) % self.search_step == 0 and i < cap:
                d = _mean_l1(u, ut, self.dx)
                trace.append((i, d))
                if d > self.epsilon:
                    ended = "crossing"
                    break
                search_states.append(u)
        if ended != "crossing":
            trace.append((i, _mean_l1(u, ut, self.dx)))
        self._pending = dict(i_n=i_n, i_next=i, u=u, ledger=ledger, trace=trace,
                             tilde_snaps=tilde_snaps, search_states=search_states + [u],
                             ended=ended)
        return i

    # ---------------------------------------------------------------- cell

    def advance_cell(self, i_n: int, i_next: int) -> None:
        """u_n = S(.) u~_n and u~_{n+1} = R(.) u_n, with snapshots and ledgers."""
        if not i_n < i_next <= self.n_fine:
            raise ValueError("need t_n < t_{n+1} <= T")
        pend = self._pending
        if pend is None or pend["i_n"] != i_n or pend["i_next"] != i_next:
            pend = self._replay_det(i_n, i_next)
        self._pending = None
        ut, u_n, cl = self.utilde, pend["u"], pend["ledger"]
        cell = len(self.partition.indices) - 1

        for p in LEDGER_POWERS:
            self.det_drop[p] += _entropy_power(ut, p, self.dx) - _entropy_power(u_n, p, self.dx)
        self.ledger.entropy_dissipation += cl.entropy_dissipation
        self.ledger.n1 += cl.n1
        self.ledger.time_defect += cl.time_defect
        self.ledger.n1_xi += cl.n1_xi
        self.ledger.absorb_counters(cl)

        if self.config.record_nodes:
            self.nodes_utilde.append(ut.copy())
            self.nodes_u.append(u_n.copy())

        at_end = i_next == self.n_fine
        for k in self._out_hits(i_n, i_next):
            idx = int(self.output_indices[k])
            if idx < i_next or at_end:
                self.snap_vtilde[k] = pend["tilde_snaps"][idx]
                self.snap_vleft[k] = u_n
                self.cell_of[k] = cell

        v_nodes = [u_n]
        v = u_n
        i = i_n
        pending_out = {int(self.output_indices[k]): k for k in self._out_hits(i_n, i_next)
                       if self.output_indices[k] < i_next or at_end}
        if i_n in pending_out:
            self.snap_v[pending_out[i_n]] = u_n
        if self.has_noise:
            while i < i_next:
                j = min(i + self.sde_step, i_next)
                for o, k in pending_out.items():
                    if i < o < j:
                        incr_o = noise_increment(self.spec.noise, self.x, v,
                                                 self.store.increment(i, o))
                        self.snap_v[k] = v + incr_o
                dt = (j - i) * self.h
                incr = noise_increment(self.spec.noise, self.x, v, self.store.increment(i, j))
                g2 = self.spec.noise.G2(self.x, v)
                for p in LEDGER_POWERS:
                    w = np.abs(v) ** p if p else np.ones_like(v)
                    self.stoch[p] += _sum(w * v * incr) * self.dx
                    self.compensator[p] += _sum(w * g2) * self.dx * dt
                    self.realized[p] += _sum(w * incr * incr) * self.dx
                v = v + incr
                if not np.all(np.isfinite(v)):
                    raise NonFiniteState("stochastic step produced non-finite values")
                i = j
                v_nodes.append(v)
                if j in pending_out and (j < i_next or at_end):
                    self.snap_v[pending_out[j]] = v
        else:
            for o, k in pending_out.items():
                self.snap_v[k] = u_n

        self.cells.append(CellRecord(
            width=self.partition.time_of(i_next) - self.partition.time_of(i_n),
            ended_by=pend["ended"],
            d_end=pend["trace"][-1][1] if pend["trace"] else 0.0,
            vtilde_pair_max=_pair_max(pend["search_states"], self.dx),
            v_pair_max=_pair_max(v_nodes, self.dx),
            n1=float(np.mean(cl.n1)),
            m_scheme=float(np.mean(cl.entropy_dissipation)),
            det_drop=float(np.mean(_entropy_power(ut, 0.0, self.dx)
                                   - _entropy_power(u_n, 0.0, self.dx))),
        ))
        self.partition.indices.append(i_next)
        self.partition.traces.append(pend["trace"])
        self.partition.ended_by.append(pend["ended"])
        self.utilde = v

    def _replay_det(self, i_n, i_next):
        """S over a prescribed cell (used when the partition is given)."""
        ledger = DetLedger(self.M, self.grid.N, xi_edges=self.xi_edges)
        ut = self.utilde
        u = ut
        snaps = {i_n: ut}
        states = [ut]
        outs = set(int(self.output_indices[k]) for k in self._out_hits(i_n, i_next))
        trace = []
        for i in range(i_n + 1, i_next + 1):
            u = self._evolve(u, 1, ledger)
            if i in outs:
                snaps[i] = u
            if (i - i_n) % self.search_step == 0 or i == i_next:
                trace.append((i, _mean_l1(u, ut, self.dx)))
                states.append(u)
        return dict(i_n=i_n, i_next=i_next, u=u, ledger=ledger, trace=trace,
                    tilde_snaps=snaps, search_states=states, ended="given")

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def results(self):
        traj = SplitTrajectory(
            grid=self.grid,
            times=np.array([self.partition.time_of(int(i)) for i in self.output_indices]),
            indices=self.output_indices.copy(), v=self.snap_v, vtilde=self.snap_vtilde,
            v_left=self.snap_vleft, cell_of=self.cell_of,
            nodes_u=self.nodes_u, nodes_utilde=self.nodes_utilde)
        acc = RunAccumulators(
            u0=self.u0, v_final=self.utilde, dx=self.dx, n1=self.ledger.n1,
            m_scheme=self.ledger.entropy_dissipation, time_defect=self.ledger.time_defect,
            det_drop=self.det_drop, stoch=self.stoch, compensator=self.compensator,
            realized=self.realized, n1_xi=self.ledger.n1_xi, xi_edges=self.xi_edges,
            clamp_count=self.ledger.clamp_count,
            linear_growth_const=self.spec.noise.linear_growth_const,
            horizon=self.spec.horizon)
        return self.partition, traj, DiagnosticsBundle(acc, self.cells, self.output_indices)


def next_partition_time(ens: Ensemble, t_n: float) -> float:
    """Time-valued wrapper of :meth:`Ensemble.next_partition_time`."""
    i_n = int(round(t_n * ens.n_fine / ens.spec.horizon))
    return ens.partition.time_of(ens.next_partition_time(i_n))


def advance_cell(ens: Ensemble, t_n: float, t_next: float) -> Ensemble:
    T = ens.spec.horizon
    ens.advance_cell(int(round(t_n * ens.n_fine / T)), int(round(t_next * ens.n_fine / T)))
    return ens


def run_splitting(spec: ProblemSpec, epsilon: float, n_samples: int, seed: int,
                  output_times=None, config: SplitConfig | None = None,
                  partition: Partition | None = None, samples=None):
    """Build the partition (or replay a given one) and run the splitting to T.

    Returns (Partition, SplitTrajectory, DiagnosticsBundle).
    """
    if output_times is None:
        output_times = np.linspace(0.0, spec.horizon, 11)
    ens = Ensemble(spec, epsilon, n_samples, seed, config, output_times, samples)
    try:
        if partition is not None:
            idx = list(partition.indices)
            if partition.n_fine != ens.n_fine or idx[0] != 0 or idx[-1] != ens.n_fine:
                raise ValueError("given partition does not match the fine grid")
            for a, b in zip(idx[:-1], idx[1:]):
                ens.advance_cell(a, b)
        else:
            i = 0
            limit = ens.n_fine + 1
            while i < ens.n_fine:
                j = ens.next_partition_time(i)
                ens.advance_cell(i, j)
                i = j
                limit -= 1
                if limit < 0:
                    raise HorizonNotReached("partition failed to reach T")
        if ens.partition.indices[-1] != ens.n_fine:
            raise HorizonNotReached("partition did not end at T")
        return ens.results()
    finally:
        ens.close()
