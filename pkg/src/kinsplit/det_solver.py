"""Explicit monotone finite-volume solver for du/dt + (B(u))_x = (beta(u))_xx.

The scheme is

    u_i <- u_i - dt/dx (F(u_i, u_{i+1}) - F(u_{i-1}, u_i))
               + dt/dx^2 (beta(u_{i+1}) - 2 beta(u_i) + beta(u_{i-1}))

on the periodic grid, with F the Engquist-Osher flux (or Lax-Friedrichs).
Under the CFL restriction of :func:`max_stable_dt` the update is monotone, so
it contracts in L^1 and does not increase any L^p norm.

Array routines operate on the last axis, so an ensemble of shape (M, N) is
advanced row by row with per-row time steps; a row never sees another row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CflViolation, QuadratureRangeExceeded
from .grid import Field, TorusGrid
from .model import ProblemSpec

_GL8_NODES, _GL8_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL4_NODES, _GL4_WEIGHTS = np.polynomial.legendre.leggauss(4)

CLAMP_TOL = 1e-12


def gauss_sum(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum over the last axis in a fixed order (no BLAS dispatch)."""
    out = weights[0] * values[..., 0]
    for k in range(1, len(weights)):
        out = out + weights[k] * values[..., k]
    return out


@dataclass(frozen=True)
class DetScheme:
    flux: str = "engquist-osher"
    cfl_adv: float = 0.9
    cfl_diff: float = 0.45
    lf_viscosity: float | None = None
    xi_quadrature: float | None = None
    track_dissipation: bool = True

    def __post_init__(self):
        if self.flux not in ("engquist-osher", "lax-friedrichs"):
            raise ValueError(f"unknown numerical flux {self.flux!r}")
        if not 0 < self.cfl_adv <= 1:
            raise ValueError("cfl_adv must lie in (0, 1]")
        if not 0 < self.cfl_diff <= 0.5:
            raise ValueError("cfl_diff must lie in (0, 0.5]")


@dataclass
class DetStepReport:
    dt_taken: float
    advective_cfl_used: float
    dissipation_cells: np.ndarray
    parabolic_cells: np.ndarray
    time_defect: float = 0.0
    clamp_count: int = 0
    n_steps: int = 1

    @property
    def dissipation(self) -> float:
        return float(np.sum(self.dissipation_cells))

    @property
    def n1_mass(self) -> float:
        return float(np.sum(self.parabolic_cells))


# --------------------------------------------------------------------------
# numerical fluxes


def _sign_intervals(flux, n_probe=7):
    """Intervals between sonic points with the sign of b on each."""
    pts = sorted(flux.sonic_points)
    edges = [-np.inf] + pts + [np.inf]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if np.isfinite(lo) and np.isfinite(hi):
            probe = np.linspace(lo, hi, n_probe + 2)[1:-1]
        elif np.isfinite(lo):
            probe = lo + np.geomspace(1e-3, 10.0, n_probe)
        elif np.isfinite(hi):
            probe = hi - np.geomspace(1e-3, 10.0, n_probe)
        else:
            probe = np.concatenate([-np.geomspace(1e-3, 10.0, n_probe),
                                    np.geomspace(1e-3, 10.0, n_probe)])
        s = np.sign(np.sum(flux.b(probe)))
        out.append((lo, hi, s))
    return out


class NumericalFlux:
    """Two-point monotone flux F(a, b) built from a FluxSpec."""

    def __init__(self, spec: ProblemSpec, kind: str = "engquist-osher",
                 viscosity: float | None = None):
        self.flux = spec.flux
        self.kind = kind
        B = self.flux.B
        self._B0 = float(np.asarray(B(np.array([0.0])))[0])
        ivals = _sign_intervals(self.flux)
        self._pos = [(lo, hi) for lo, hi, s in ivals if s > 0]
        self._neg = [(lo, hi) for lo, hi, s in ivals if s < 0]
        if viscosity is None:
            lo, hi = spec.eval_range
            viscosity = float(np.max(np.abs(self.flux.b(np.linspace(lo, hi, 2001)))))
        self.viscosity = float(viscosity)

    def _part(self, u, ivals):
        B = self.flux.B
        out = np.zeros_like(u)
        for lo, hi in ivals:
            out += B(np.clip(u, lo, hi)) - B(np.clip(0.0, lo, hi))
        return out

    def B_plus(self, u):
        """B(0) + int_0^u max(b, 0)."""
        return self._B0 + self._part(u, self._pos)

    def B_minus(self, u):
        """int_0^u min(b, 0)."""
        return self._part(u, self._neg)

    def __call__(self, a, b):
        if self.kind == "engquist-osher":
            return self.B_plus(a) + self.B_minus(b)
        B = self.flux.B
        return 0.5 * (B(a) + B(b)) - 0.5 * self.viscosity * (b - a)

    def speed_bound(self, u) -> np.ndarray:
        """Per-row bound on the advective wave speed."""
        if self.kind == "lax-friedrichs":
            return np.full(np.shape(u)[:-1], self.viscosity)
        return np.max(np.abs(self.flux.b(u)), axis=-1)


# --------------------------------------------------------------------------
# primitive of sigma for the parabolic dissipation


class SigmaPrimitive:
    """Q(u) = int_0^u sigma(z) dz from a node table plus a 4-point partial cell.

    Nodes are spaced ``step`` apart on [lo, hi] and always include 0.
    """

    def __init__(self, sigma, lo: float, hi: float, step: float):
        if not hi > lo:
            raise ValueError("empty quadrature range")
        self.sigma = sigma
        self.lo, self.hi = float(lo), float(hi)
        n_neg = int(np.ceil(max(-lo, 0.0) / step))
        n_pos = int(np.ceil(max(hi, 0.0) / step))
        nodes = np.arange(-n_neg, n_pos + 1) * step
        self.nodes = nodes
        self.step = float(step)
        self._zero = n_neg
        a, b = nodes[:-1], nodes[1:]
        pts = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * _GL8_NODES[None, :]
        cell = 0.5 * (b - a) * gauss_sum(np.asarray(sigma(pts)), _GL8_WEIGHTS)
        q = np.concatenate([[0.0], np.cumsum(cell)])
        self.table = q - q[self._zero]

    def __call__(self, u):
        u = np.asarray(u, float)
        if u.size and (np.min(u) < self.lo or np.max(u) > self.hi):
            raise QuadratureRangeExceeded(
                f"values in [{np.min(u):.4g}, {np.max(u):.4g}] leave the "
                f"xi-quadrature range [{self.lo}, {self.hi}]")
        j = np.clip(np.floor((u - self.nodes[0]) / self.step).astype(int), 0,
                    len(self.nodes) - 2)
        left = self.nodes[j]
        half = 0.5 * (u - left)
        pts = left[..., None] + half[..., None] * (_GL4_NODES + 1.0)
        return self.table[j] + half * gauss_sum(np.asarray(self.sigma(pts)), _GL4_WEIGHTS)


# --------------------------------------------------------------------------
# the operator


@dataclass
class DetLedger:
    """Per-row running totals of the deterministic step accounting."""

    rows: int
    n_cells: int
    keep_cells: bool = False
    xi_edges: np.ndarray | None = None
    entropy_dissipation: np.ndarray = field(init=False)
    n1: np.ndarray = field(init=False)
    time_defect: np.ndarray = field(init=False)
    clamp_count: int = 0
    steps: int = 0
    max_cfl: float = 0.0

    def __post_init__(self):
        self.entropy_dissipation = np.zeros(self.rows)
        self.n1 = np.zeros(self.rows)
        self.time_defect = np.zeros(self.rows)
        if self.keep_cells:
            self.dissipation_cells = np.zeros((self.rows, self.n_cells))
            self.parabolic_cells = np.zeros((self.rows, self.n_cells))
        if self.xi_edges is not None:
            self.n1_xi = np.zeros((self.rows, len(self.xi_edges) - 1))

    def rows_view(self, sl: slice) -> "DetLedger":
        """Ledger writing through to rows ``sl``; scalar counters start at 0."""
        sub = DetLedger.__new__(DetLedger)
        sub.__dict__.update(self.__dict__)
        for name in ("entropy_dissipation", "n1", "time_defect", "dissipation_cells",
                     "parabolic_cells", "n1_xi"):
            if hasattr(self, name):
                setattr(sub, name, getattr(self, name)[sl])
        sub.rows = len(sub.n1)
        sub.clamp_count, sub.steps, sub.max_cfl = 0, 0, 0.0
        sub._q_last = None
        return sub

    def absorb_counters(self, sub: "DetLedger") -> None:
        self.clamp_count += sub.clamp_count
        self.steps = max(self.steps, sub.steps)
        self.max_cfl = max(self.max_cfl, sub.max_cfl)


def xi_bin_index(values, edges):
    """Nearest-cell assignment of values to xi bins; ties go to the lower bin."""
    n = len(edges) - 1
    d = edges[1] - edges[0]
    j = np.ceil((np.asarray(values) - edges[0]) / d).astype(int) - 1
    return np.clip(j, 0, n - 1)


class DetOperator:
    """Deterministic solution operator S for a problem on a 1-D torus grid."""

    def __init__(self, scheme: DetScheme, spec: ProblemSpec, grid: TorusGrid):
        if grid.d != 1:
            raise NotImplementedError("the deterministic solver is 1-D")
        self.scheme = scheme
        self.spec = spec
        self.grid = grid
        self.dx = grid.dx
        self.flux = NumericalFlux(spec, scheme.flux, scheme.lf_viscosity)
        self.beta = spec.diffusion.beta
        self.a = spec.diffusion.A
        self.has_flux = not spec.flux.is_zero
        self.has_diffusion = not spec.diffusion.is_zero

    @cached_property
    def Q(self) -> SigmaPrimitive:
        lo, hi = self.spec.eval_range
        step = self.scheme.xi_quadrature or (hi - lo) / 128.0
        return SigmaPrimitive(self.spec.diffusion.sigma, lo, hi, step)

    def stable_dt(self, u) -> np.ndarray:
        """Per-row stable step; np.inf where both speed bounds vanish.

        The advective and diffusive limits are combined harmonically so that
        dt |b| / dx + 2 dt a / dx^2 <= max(cfl_adv, 2 cfl_diff) <= 1, which is
        the monotonicity condition of the combined stencil.
        """
        u = np.asarray(u, float)
        inv = np.zeros(u.shape[:-1])
        if self.has_flux:
            inv = inv + self.flux.speed_bound(u) / (self.scheme.cfl_adv * self.dx)
        if self.has_diffusion:
            inv = inv + np.max(self.a(u), axis=-1) / (self.scheme.cfl_diff * self.dx ** 2)
        with np.errstate(divide="ignore"):
            return np.where(inv > 0, 1.0 / np.where(inv > 0, inv, 1.0), np.inf)

    def step(self, u: np.ndarray, dt, ledger: DetLedger | None = None) -> np.ndarray:
        """One explicit step with per-row dt (rows with dt = 0 are unchanged)."""
        dt = np.asarray(dt, float)
        dtc = dt[..., None] if dt.ndim else dt
        dx = self.dx
        up = np.roll(u, -1, axis=-1)
        du = np.zeros_like(u)
        if self.has_flux:
            F = self.flux(u, up)
            du -= (dtc / dx) * (F - np.roll(F, 1, axis=-1))
        if self.has_diffusion:
            bu = self.beta(u)
            dbeta = np.roll(bu, -1, axis=-1) - bu
            du += (dtc / dx ** 2) * (dbeta - np.roll(dbeta, 1, axis=-1))
        new = u + du
        if ledger is not None and self.scheme.track_dissipation:
            self._account(u, up, new, dtc, ledger, F if self.has_flux else None,
                          dbeta if self.has_diffusion else None)
        return new

    def _account(self, u, up, new, dtc, ledger, F, dbeta):
        dx = self.dx
        jump = up - u
        cells = np.zeros_like(u)
        if F is not None:
            mid = 0.5 * (u + up)
            pts = mid[..., None] + 0.5 * jump[..., None] * _GL8_NODES
            intB = 0.5 * jump * gauss_sum(self.spec.flux.B(pts), _GL8_WEIGHTS)
            adv = intB - F * jump
            neg = adv < 0
            if np.any(neg):
                moving = np.broadcast_to(np.asarray(dtc) > 0, adv.shape)
                ledger.clamp_count += int(np.count_nonzero((adv < -CLAMP_TOL) & moving))
                adv = np.where(neg, 0.0, adv)
            cells += adv
        par = None
        if dbeta is not None:
            cells += jump * dbeta / dx
            # |D_x Q|^2 taken as the product of the gradients before and
            # after the step; for linear diffusion this is dominated by the
            # discrete energy drop, including its O(dt^2) time defect
            cached = getattr(ledger, "_q_last", None)
            q0 = cached[1] if cached is not None and cached[0] is u else self.Q(u)
            q1 = self.Q(new)
            ledger._q_last = (new, q1)
            dq0 = np.roll(q0, -1, axis=-1) - q0
            dq1 = np.roll(q1, -1, axis=-1) - q1
            par = dtc * np.maximum(dq0 * dq1, 0.0) / dx
            ledger.n1 += np.sum(par, axis=-1)
        cells = dtc * cells
        ledger.entropy_dissipation += np.sum(cells, axis=-1)
        ledger.time_defect += 0.5 * np.sum((new - u) ** 2, axis=-1) * dx
        if ledger.keep_cells:
            ledger.dissipation_cells += cells
            if par is not None:
                ledger.parabolic_cells += par
        if par is not None and ledger.xi_edges is not None:
            # face mass split between the two adjacent cell values; one
            # histogram per row so the bin sums never mix rows
            half = np.broadcast_to(0.5 * par, u.shape).reshape(-1, u.shape[-1])
            nb = ledger.n1_xi.shape[-1]
            offset = (np.arange(half.shape[0]) * nb)[:, None]
            for vals in (u, up):
                idx = xi_bin_index(vals.reshape(half.shape), ledger.xi_edges) + offset
                ledger.n1_xi += np.bincount(idx.ravel(), weights=half.ravel(),
                                            minlength=half.shape[0] * nb
                                            ).reshape(ledger.n1_xi.shape)

    def evolve(self, u: np.ndarray, tau: float, ledger: DetLedger | None = None,
               shared: bool = False) -> np.ndarray:
        """Advance every row by exactly tau; the last substep is shortened.

        With ``shared`` all rows take the same step sequence (the smallest
        stable step of any row), which is what L1 comparison of two fields
        requires.
        """
        u = np.array(u, dtype=float)
        if tau <= 0:
            return u
        rows = u.shape[:-1]
        remaining = np.full(rows, float(tau))
        active = np.ones(rows, bool)
        while np.any(active):
            sdt = self.stable_dt(u)
            if shared:
                sdt = np.full(rows, np.min(sdt))
            last = active & (sdt >= remaining)
            dt = np.where(active, np.where(last, remaining, sdt), 0.0)
            if ledger is not None:
                cfl = np.max(dt * self.flux.speed_bound(u) / self.dx) if self.has_flux else 0.0
                ledger.max_cfl = max(ledger.max_cfl, float(cfl))
                ledger.steps += 1
            u = self.step(u, dt, ledger)
            remaining = np.where(last, 0.0, remaining - dt)
            active &= ~last
        return u


# --------------------------------------------------------------------------
# public Field-level API


def _operator(scheme, spec, grid):
    return DetOperator(scheme, spec, grid)


def max_stable_dt(scheme: DetScheme, u: Field, spec: ProblemSpec) -> float:
    """Largest monotone step; the horizon T when there are no dynamics."""
    dt = float(_operator(scheme, spec, u.grid).stable_dt(u.values))
    return min(dt, spec.horizon) if np.isfinite(dt) else spec.horizon


def det_step(scheme: DetScheme, u: Field, dt: float, spec: ProblemSpec
             ) -> tuple[Field, DetStepReport]:
    op = _operator(scheme, spec, u.grid)
    limit = float(op.stable_dt(u.values))
    if dt > limit * (1 + 1e-12) + 1e-300 and np.isfinite(limit):
        raise CflViolation(f"dt={dt} exceeds the stable bound {limit}")
    ledger = DetLedger(1, u.grid.N, keep_cells=True)
    new = op.step(u.values[None, :], np.array([dt]), ledger)[0]
    cfl = dt * float(op.flux.speed_bound(u.values[None, :])[0]) / op.dx if op.has_flux else 0.0
    return Field(u.grid, new), DetStepReport(
        dt_taken=float(dt), advective_cfl_used=cfl,
        dissipation_cells=ledger.dissipation_cells[0],
        parabolic_cells=ledger.parabolic_cells[0],
        time_defect=float(ledger.time_defect[0]), clamp_count=ledger.clamp_count)


def det_solve_common(scheme: DetScheme, fields, tau: float, spec: ProblemSpec
                     ) -> list[Field]:
    """Apply S(tau) to several fields with one common substep ladder."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    fields = list(fields)
    op = _operator(scheme, spec, fields[0].grid)
    vals = op.evolve(np.stack([f.values for f in fields]), tau, shared=True)
    return [Field(f.grid, v) for f, v in zip(fields, vals)]


def det_solve(scheme: DetScheme, u: Field, tau: float, spec: ProblemSpec,
              sync: float | None = None) -> tuple[Field, DetStepReport]:
    """Apply S(tau) by a substep ladder that lands exactly on tau.

    With ``sync`` the ladder restarts at every multiple of ``sync`` (tau must
    be a whole number of sync intervals), which makes the result independent
    of how [0, tau] is cut into consecutive calls.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    op = _operator(scheme, spec, u.grid)
    ledger = DetLedger(1, u.grid.N, keep_cells=True)
    vals = u.values[None, :].copy()
    if sync is None:
        vals = op.evolve(vals, tau, ledger)
    else:
        n = int(round(tau / sync))
        if abs(n * sync - tau) > 1e-9 * max(1.0, tau):
            raise ValueError("tau must be a multiple of sync")
        for _ in range(n):
            vals = op.evolve(vals, sync, ledger)
    return Field(u.grid, vals[0]), DetStepReport(
        dt_taken=float(tau), advective_cfl_used=ledger.max_cfl,
        dissipation_cells=ledger.dissipation_cells[0],
        parabolic_cells=ledger.parabolic_cells[0],
        time_defect=float(ledger.time_defect[0]), clamp_count=ledger.clamp_count,
        n_steps=ledger.steps)
