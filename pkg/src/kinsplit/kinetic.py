"""Kinetic functions, dissipation measures and the doubling-of-variables functional.

Two identities make the xi-integrals cheap.  For the value mollifier psi,

    - int int f+(a, xi) f-(b, zeta) psi(xi - zeta) dxi dzeta = Lambda(a - b),
    Lambda(z) = int psi(s) (z - s)^+ ds,

so every doubled integral of kinetic functions reduces to sums of
Lambda(a_i(x) - b_j(y)) weighted by the space mollifier.  With cell-average
fields the (x, y) integral is exact when each offset o (in cells) gets the
weight  int rho(s) hat(s / dx - o) ds,  hat the unit triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .det_solver import SigmaPrimitive
from .errors import MissingAccumulators, ResolutionTooCoarse
from .grid import Mollifier, TorusGrid, _sum, lp_power_values, mollifier_pair
from .model import ProblemSpec, moment_constants, NoiseSpec


# --------------------------------------------------------------------------
# kinetic functions


def kinetic_f(u, xi, sign):
    """f+(u, xi) = 1{xi < u};  f-(u, xi) = -1{xi > u}."""
    u = np.asarray(u, float)
    xi = np.asarray(xi, float)
    if sign in ("+", 1, +1):
        return np.where(xi < u, 1, 0)
    if sign in ("-", -1):
        return np.where(xi > u, -1, 0)
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def chi(w, xi):
    """1 on 0 < xi < w, -1 on w < xi < 0, else 0."""
    w = np.asarray(w, float)
    xi = np.asarray(xi, float)
    return np.where((0 < xi) & (xi < w), 1, 0) - np.where((w < xi) & (xi < 0), 1, 0)


@dataclass(frozen=True)
class XiGrid:
    lo: float
    hi: float
    n: int = 128

    def __post_init__(self):
        if not self.hi > self.lo or self.n < 1:
            raise ValueError("XiGrid needs hi > lo and n >= 1")

    @property
    def dxi(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.dxi

    @classmethod
    def covering(cls, *arrays, margin: float = 0.25, n: int = 128) -> "XiGrid":
        lo = min(float(np.min(a)) for a in arrays)
        hi = max(float(np.max(a)) for a in arrays)
        pad = margin * max(hi - lo, 1.0)
        return cls(lo - pad, hi + pad, n)

    def contains(self, values) -> bool:
        v = np.asarray(values)
        return bool(np.min(v) >= self.lo and np.max(v) <= self.hi)

    def bin_index(self, values) -> np.ndarray:
        """Cell containing each value; a value on an edge goes to the lower cell."""
        j = np.ceil((np.asarray(values, float) - self.lo) / self.dxi).astype(int) - 1
        return np.clip(j, 0, self.n - 1)


# --------------------------------------------------------------------------
# parabolic dissipation n_1


@dataclass
class ParabolicDissipation:
    n1_mass: np.ndarray
    per_cell: np.ndarray
    xi_mass: np.ndarray | None

    @property
    def mean(self) -> float:
        return float(np.mean(self.n1_mass))


def parabolic_dissipation(snapshots, times, spec: ProblemSpec,
                          xi_grid: XiGrid | None = None,
                          xi_step: float | None = None) -> ParabolicDissipation:
    """Left-endpoint sum over snapshots of |D_x Q(u)|^2 dx dt, Q = int_0^u sigma.

    ``snapshots`` has shape (K, N) or (K, M, N); the k-th snapshot holds on
    [times[k], times[k+1]).  Face masses are split between the two adjacent
    cell values when binned into ``xi_grid``.
    """
    snaps = np.asarray(snapshots, float)
    times = np.asarray(times, float)
    if snaps.shape[0] != len(times):
        raise ValueError("one time per snapshot")
    single = snaps.ndim == 2
    if single:
        snaps = snaps[:, None, :]
    K, M, N = snaps.shape
    dx = 1.0 / N
    per_cell = np.zeros((M, N))
    xi_mass = np.zeros(xi_grid.n) if xi_grid is not None else None
    if not spec.diffusion.is_zero:
        lo, hi = spec.eval_range
        Q = SigmaPrimitive(spec.diffusion.sigma, lo, hi, xi_step or (hi - lo) / 128.0)
        for k in range(K - 1):
            dt = times[k + 1] - times[k]
            q = Q(snaps[k])
            dq = np.roll(q, -1, axis=-1) - q
            face = dt * dq * dq / dx
            per_cell += face
            if xi_grid is not None:
                u = snaps[k]
                for vals in (u, np.roll(u, -1, axis=-1)):
                    xi_mass += np.bincount(xi_grid.bin_index(vals).ravel(),
                                           weights=0.5 * face.ravel(), minlength=xi_grid.n)
    mass = _sum(per_cell)
    if single:
        return ParabolicDissipation(mass[:1], per_cell[0], xi_mass)
    return ParabolicDissipation(mass, per_cell, xi_mass)


# --------------------------------------------------------------------------
# kinetic measure mass


@dataclass
class MassReport:
    p: float
    per_sample: np.ndarray
    bound: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_sample))

    @property
    def se(self) -> float:
        n = len(self.per_sample)
        return float(np.std(self.per_sample, ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    @property
    def second_moment(self) -> float:
        return float(np.mean(self.per_sample ** 2))


def _moment_envelope(u0, dx, c_g, q, T) -> float:
    """e^{K T}(|u0|_q^q + K_T T) with the moment constants; 1 for q = 0."""
    if q == 0:
        return 1.0
    K, KT = moment_constants(NoiseSpec((), c_g, lambda d: d, 0.0), q)
    return float(np.exp(K * T) * (lp_power_values(u0, q, dx) + KT * T))


def mass_bound(u0, dx: float, c_g: float, p: float, T: float) -> float:
    """Upper bound for E int |xi|^p dm from the energy balance.

    The balance gives E m_p <= |u0|_{p+2}^{p+2}/((p+1)(p+2))
    + (1/2) E int int G^2 |v|^p, and G^2 <= C_g (1 + xi^2) together with the
    moment bound for |v|_p^p and |v|_{p+2}^{p+2} closes it.
    """
    head = lp_power_values(np.asarray(u0), p + 2.0, dx) / ((p + 1.0) * (p + 2.0))
    if 0 < p < 2:
        low = _moment_envelope(u0, dx, c_g, 0, T) + _moment_envelope(u0, dx, c_g, 2, T)
    else:
        low = _moment_envelope(u0, dx, c_g, p, T)
    high = _moment_envelope(u0, dx, c_g, p + 2.0, T)
    return float(head + 0.5 * c_g * T * (low + high))


def kinetic_measure_mass(diagnostics, p: float = 0.0, pathwise: bool = False) -> MassReport:
    """Weighted mass int |xi|^p dm per sample from the discrete energy balance.

    m_p = (|u0|^{p+2} - |v(T)|^{p+2}) / ((p+1)(p+2))
          + (p+1)^{-1} sum_k int g_k |v|^p v dbeta_k + (1/2) int G^2 |v|^p dt.

    With ``pathwise`` the last term uses the realised squares
    (sum_k g_k dbeta_k)^2 instead of G^2 dt; for p = 0 the balance then equals
    the summed deterministic energy drop sample by sample.
    """
    acc = getattr(diagnostics, "accumulators", diagnostics)
    if acc is None or not hasattr(acc, "stoch"):
        raise MissingAccumulators("run carries no stochastic accumulators")
    if p not in acc.stoch:
        raise MissingAccumulators(f"no accumulators recorded for p={p}")
    dx = acc.dx
    scale = (p + 1.0) * (p + 2.0)
    head = (lp_power_values(acc.u0, p + 2.0, dx) - lp_power_values(acc.v_final, p + 2.0, dx)) / scale
    quad = acc.realized[p] if pathwise else acc.compensator[p]
    per = head + acc.stoch[p] / (p + 1.0) + 0.5 * quad
    bound = mass_bound(acc.u0, dx, acc.linear_growth_const, p, acc.horizon)
    return MassReport(p, per, bound)


@dataclass
class DissipationLedger:
    n1_mass: float
    m_mass: float
    m_pathwise: float
    m_scheme: float
    time_defect: float
    weighted: dict
    m_mass_se: float
    gap_se: float
    cells: list = field(default_factory=list)
    n1_xi: np.ndarray | None = None
    clamp_count: int = 0

    def inequality_slack(self) -> float:
        """min of the pathwise slack m - n1 and the 3-sigma ensemble slack."""
        return min(self.m_pathwise - self.n1_mass,
                   self.m_mass - self.n1_mass + 3.0 * self.gap_se)

    def holds(self, tol: float = 1e-10) -> bool:
        return self.inequality_slack() >= -tol

    def to_dict(self) -> dict:
        return {
            "n1_mass": self.n1_mass, "m_mass": self.m_mass, "m_pathwise": self.m_pathwise,
            "m_scheme": self.m_scheme, "time_defect": self.time_defect,
            "weighted": {str(k): v for k, v in self.weighted.items()},
            "m_mass_se": self.m_mass_se, "clamp_count": self.clamp_count,
        }


def dissipation_ledger(diagnostics) -> DissipationLedger:
    acc = diagnostics.accumulators
    m0 = kinetic_measure_mass(diagnostics, 0.0)
    path0 = kinetic_measure_mass(diagnostics, 0.0, pathwise=True)
    gap = m0.per_sample - acc.n1
    n = len(gap)
    gap_se = float(np.std(gap, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    weighted = {p: kinetic_measure_mass(diagnostics, p).mean for p in acc.stoch}
    return DissipationLedger(
        n1_mass=float(np.mean(acc.n1)), m_mass=m0.mean, m_pathwise=path0.mean,
        m_scheme=float(np.mean(acc.m_scheme)), time_defect=float(np.mean(acc.time_defect)),
        weighted=weighted, m_mass_se=m0.se, gap_se=gap_se,
        cells=list(getattr(diagnostics, "cells", [])),
        n1_xi=np.mean(acc.n1_xi, axis=0), clamp_count=acc.clamp_count)


# --------------------------------------------------------------------------
# doubling of variables


def pair_weights(rho: Mollifier, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets o and weights int rho(s) hat(s/dx - o) ds for cell-average fields.

    Computed for o >= 0 and mirrored, so the weights are exactly even.
    """
    dx = 1.0 / N
    kmax = int(np.ceil(rho.width / dx)) + 1
    o = np.arange(0, kmax + 1)
    left, mid, right = (o - 1) * dx, o * dx, (o + 1) * dx
    C, M1 = rho.cdf, rho.first_moment
    rise = (M1(mid) - M1(left)) / dx - (o - 1) * (C(mid) - C(left))
    fall = (o + 1) * (C(right) - C(mid)) - (M1(right) - M1(mid)) / dx
    half = np.maximum(rise + fall, 0.0)
    keep = half > 0
    o, half = o[keep], half[keep]
    offsets = np.concatenate([-o[::-1], o[1:] if o[0] == 0 else o])
    weights = np.concatenate([half[::-1], half[1:] if o[0] == 0 else half])
    return offsets, weights


def _as_rows(f):
    a = np.asarray(getattr(f, "values", f), float)
    return a[None, :] if a.ndim == 1 else a


def _pair_integral(a, b, offsets, weights, kernel) -> float:
    """E int int rho(x - y) kernel(a(x) - b(y)) over cell averages."""
    N = a.shape[-1]
    total = np.zeros(a.shape[0])
    for o, w in zip(offsets, weights):
        total = total + w * _sum(kernel(a - np.roll(b, -o, axis=-1)))
    per_sample = total / N
    return float(_sum(per_sample) / len(per_sample))


SIGNS = (1.0, 1.0, -1.0)


@dataclass
class DoublingReport:
    eta: float
    delta: float
    epsilon: float | None
    epsilon_prime: float | None
    value: float
    pair_value: float
    components: dict
    envelope: float
    method: str = "exact"

    @property
    def nonnegative_value(self) -> float:
        """The f+ f- product form; nonnegative by construction of Lambda."""
        return self.pair_value

    def row(self) -> dict:
        return {"eta": self.eta, "delta": self.delta, "epsilon": self.epsilon,
                "epsilon_prime": self.epsilon_prime, "value": self.value,
                "pair_value": self.pair_value, "envelope": self.envelope,
                **{k: v for k, v in self.components.items()}}


def doubling_envelope(eta: float, delta: float, gamma: float, modulus=lambda d: d) -> float:
    """eta^-1 delta + eta^-2 delta^{2 gamma} + eta^2 delta^-1 + r(delta)."""
    return float(delta / eta + delta ** (2 * gamma) / eta ** 2 + eta ** 2 / delta
                 + float(modulus(delta)))


def doubling_functional(first, second, eta: float, delta: float,
                        xi_grid: XiGrid | None = None, method: str = "exact",
                        epsilon: float | None = None, epsilon_prime: float | None = None,
                        gamma: float = 1.0, modulus=lambda d: d) -> DoublingReport:
    """Doubled integral of the kinetic triples of two runs at a common time.

    ``first`` and ``second`` are triples (v, vtilde, v(t^eps)) of Fields or
    (M, N) sample arrays (paired by row).  The reported ``value`` is

        - E int f+-triple(x, xi) f--triple(y, zeta) rho(x-y) psi(xi-zeta),

    the triples combined with signs (+, +, -).  Components F1, F2, F3 split the
    distance between the value and E int (v - v')^+.
    """
    A = [_as_rows(f) for f in first]
    B = [_as_rows(f) for f in second]
    N = A[0].shape[-1]
    dx = 1.0 / N
    if eta < 2 * dx:
        raise ResolutionTooCoarse(f"eta={eta} below two cells ({2 * dx})")
    if xi_grid is not None and delta < 2 * xi_grid.dxi:
        raise ResolutionTooCoarse(f"delta={delta} below two xi cells ({2 * xi_grid.dxi})")
    rho, psi = mollifier_pair(eta, delta)
    offs, wts = pair_weights(rho, N)
    lam = psi.mollified_positive_part
    if method == "exact":
        value = sum(si * sj * _pair_integral(a, b, offs, wts, lam)
                    for si, a in zip(SIGNS, A) for sj, b in zip(SIGNS, B))
        pair = _pair_integral(A[0], B[0], offs, wts, lam)
    elif method == "grid":
        if xi_grid is None:
            raise ValueError("grid method needs an XiGrid")
        value = _grid_doubling(A, B, offs, wts, psi, xi_grid, SIGNS)
        pair = _grid_doubling(A[:1], B[:1], offs, wts, psi, xi_grid, (1.0,))
    else:
        raise ValueError(f"unknown method {method!r}")
    sharp = _pair_integral(A[0], B[0], offs, wts, lambda z: np.maximum(z, 0.0))
    local = float(np.mean(_sum(np.maximum(A[0] - B[0], 0.0)) * dx))

    def gap(rows_a, rows_b):
        return float(np.mean(_sum(np.abs(rows_a - rows_b)) * dx))

    comps = {
        "F1": abs(value - pair), "F2": abs(pair - sharp), "F3": abs(sharp - local),
        "F1_bound": (2 * epsilon + 2 * epsilon_prime
                     if epsilon is not None and epsilon_prime is not None else None),
        "F2_bound": delta,
        "positive_part": local,
        "vtilde_to_left": gap(A[1], A[2]),
        "vtilde_to_left_prime": gap(B[1], B[2]),
        "v_to_left": gap(A[0], A[2]),
        "v_to_left_prime": gap(B[0], B[2]),
    }
    return DoublingReport(eta, delta, epsilon, epsilon_prime, float(value), float(pair),
                          comps, doubling_envelope(eta, delta, gamma, modulus), method)


def _grid_doubling(A, B, offs, wts, psi, xg: XiGrid, signs) -> float:
    """Tensor quadrature over (xi, zeta) cell centres, restricted to the psi band."""
    c = xg.centers
    d = c[:, None] - c[None, :]
    kern = np.where(np.abs(d) < psi.width, psi(d), 0.0) * xg.dxi ** 2
    M, N = A[0].shape
    total = np.zeros(M)
    Fp = sum(s * kinetic_f(a[..., None], c, "+") for s, a in zip(signs, A))
    Fm = sum(s * kinetic_f(b[..., None], c, "-") for s, b in zip(signs, B))
    FmK = Fm @ kern.T          # (M, N, n_xi): sum_zeta psi(xi - zeta) F-(y, zeta)
    for o, w in zip(offs, wts):
        total -= w * np.sum(Fp * np.roll(FmK, -o, axis=1), axis=(1, 2))
    return float(np.mean(total / N))


@dataclass
class RateTable:
    rows: list[dict]
    slope: float
    theory_exponent: float
    theta: float
    gamma: float

    def slope_within(self, tol: float = 0.3) -> bool:
        return abs(self.slope - self.theory_exponent) <= tol


def doubling_rate_table(reports: list[DoublingReport], theta: float, gamma: float,
                        key: str = "pair_value") -> RateTable:
    """Values along an (eta, epsilon) ladder and a log-log slope in eta."""
    if not 1.0 / gamma < theta < 2.0:
        raise ValueError("theta must lie in (1/gamma, 2)")
    rows = []
    for r in reports:
        row = r.row()
        row["theory"] = (r.eta ** (theta - 1) + r.eta ** (2 * gamma * theta - 2)
                         + r.eta ** (2 - theta) + r.delta)
        rows.append(row)
    eta = np.array([r.eta for r in reports])
    val = np.array([max(row[key], 1e-300) for row in rows])
    slope = float(np.polyfit(np.log(eta), np.log(val), 1)[0]) if len(rows) > 1 else float("nan")
    theory = min(theta - 1, 2 * gamma * theta - 2, 2 - theta)
    return RateTable(rows, slope, theory, theta, gamma)
