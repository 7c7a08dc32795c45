"""Problem data for du + div B(u) dt = div(A(u) grad u) dt + Phi(u) dW on the unit torus.

A problem bundles a flux, a (possibly degenerate) diffusion, a finite family of
noise modes g_k(x, xi), an initial condition and a horizon.  Hypotheses on the
data are checked by dense sampling on a bounded range, see
:func:`validate_hypotheses`.

Everything here is one-dimensional in space; the maps are vectorised numpy
callables and must be pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteEvaluation, RangeEmpty

Array = np.ndarray
ScalarMap = Callable[[Array], Array]
NoiseMap = Callable[[Array, Array], Array]

TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class FluxSpec:
    """Flux B and its derivative b.

    ``sonic_points`` lists the zeros of b at which it changes sign; the
    Engquist-Osher flux splits B exactly at these points.
    """

    B: ScalarMap
    b: ScalarMap
    growth_exponent: float
    growth_const: float
    eval_range: tuple[float, float] = (-8.0, 8.0)
    sonic_points: tuple[float, ...] = ()
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


@dataclass(frozen=True)
class DiffusionSpec:
    """Scalar diffusion a = A(u), its square root sigma and primitive beta."""

    A: ScalarMap
    sigma: ScalarMap
    beta: ScalarMap
    sigma_bound: float
    gamma: float
    holder_const: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


@dataclass(frozen=True)
class NoiseMode:
    shape: str
    amplitude: float
    wavenumber: int
    g: NoiseMap


@dataclass(frozen=True)
class NoiseSpec:
    modes: tuple[NoiseMode, ...]
    linear_growth_const: float
    modulus: ScalarMap
    modulus_const: float
    modulus_name: str = "lipschitz"

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def is_zero(self) -> bool:
        return all(m.amplitude == 0.0 for m in self.modes)

    def g(self, k: int, x: Array, xi: Array) -> Array:
        return self.modes[k].g(x, xi)

    def G2(self, x: Array, xi: Array) -> Array:
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        out = np.zeros(x.shape)
        for mode in self.modes:
            out += mode.g(x, xi) ** 2
        return out


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    flux: FluxSpec
    diffusion: DiffusionSpec
    noise: NoiseSpec
    initial: Callable[[Array], Array]
    horizon: float = 1.0
    dimension: int = 1
    eval_range: tuple[float, float] = (-8.0, 8.0)
    initial_name: str = "custom"

    def with_initial(self, initial, name="custom") -> "ProblemSpec":
        return replace(self, initial=initial, initial_name=name)

    def with_horizon(self, horizon: float) -> "ProblemSpec":
        return replace(self, horizon=float(horizon))

    def describe(self) -> dict:
        """JSON-friendly description sufficient to rebuild the problem."""
        return {
            "name": self.name,
            "flux": {"name": self.flux.name, **self.flux.params},
            "diffusion": {"name": self.diffusion.name, **self.diffusion.params},
            "noise": [
                {"shape": m.shape, "amplitude": m.amplitude, "wavenumber": m.wavenumber}
                for m in self.noise.modes
            ],
            "initial": self.initial_name,
            "horizon": self.horizon,
            "eval_range": list(self.eval_range),
        }


# --------------------------------------------------------------------------
# registries


def make_flux(name: str, eval_range=(-8.0, 8.0), **params) -> FluxSpec:
    if name == "zero":
        return FluxSpec(
            B=lambda u: np.zeros_like(np.asarray(u, float)),
            b=lambda u: np.zeros_like(np.asarray(u, float)),
            growth_exponent=0.0, growth_const=0.0,
            eval_range=eval_range, name=name, params={},
        )
    if name == "burgers":
        return FluxSpec(
            B=lambda u: 0.5 * np.asarray(u, float) ** 2,
            b=lambda u: np.asarray(u, float) * 1.0,
            growth_exponent=1.0, growth_const=1.0,
            eval_range=eval_range, sonic_points=(0.0,), name=name, params={},
        )
    if name == "linear":
        c = float(params.get("speed", 1.0))
        return FluxSpec(
            B=lambda u: c * np.asarray(u, float),
            b=lambda u: np.full_like(np.asarray(u, float), c),
            growth_exponent=0.0, growth_const=abs(c),
            eval_range=eval_range, name=name, params={"speed": c},
        )
    if name == "cubic":
        # nonconvex: B = u^3/3, sonic point at 0 without sign change of b
        return FluxSpec(
            B=lambda u: np.asarray(u, float) ** 3 / 3.0,
            b=lambda u: np.asarray(u, float) ** 2,
            growth_exponent=2.0, growth_const=1.0,
            eval_range=eval_range, name=name, params={},
        )
    raise KeyError(f"unknown flux {name!r}")


def _saturate(u, u_max):
    return np.minimum(np.abs(np.asarray(u, float)), u_max)


def make_diffusion(name: str, **params) -> DiffusionSpec:
    if name == "zero":
        gamma = float(params.get("gamma", 1.0))
        zero = lambda u: np.zeros_like(np.asarray(u, float))  # noqa: E731
        return DiffusionSpec(A=zero, sigma=zero, beta=zero, sigma_bound=0.0,
                             gamma=gamma, holder_const=0.0, name=name,
                             params={"gamma": gamma})
    if name == "constant":
        nu = float(params.get("nu", 0.05))
        if nu < 0:
            raise ValueError("nu must be nonnegative")
        s = np.sqrt(nu)
        return DiffusionSpec(
            A=lambda u: np.full_like(np.asarray(u, float), nu),
            sigma=lambda u: np.full_like(np.asarray(u, float), s),
            beta=lambda u: nu * np.asarray(u, float),
            sigma_bound=s, gamma=1.0, holder_const=0.0, name=name,
            params={"nu": nu},
        )
    if name == "power":
        # a(u) = min(|u|, U)^(2 gamma), saturated outside [-U, U]
        gamma = float(params.get("gamma", 0.75))
        u_max = float(params.get("u_max", 1.0))
        q = 2.0 * gamma

        def beta(u):
            u = np.asarray(u, float)
            au = np.abs(u)
            inner = np.minimum(au, u_max)
            val = inner ** (q + 1.0) / (q + 1.0) + u_max ** q * np.maximum(au - u_max, 0.0)
            return np.sign(u) * val

        return DiffusionSpec(
            A=lambda u: _saturate(u, u_max) ** q,
            sigma=lambda u: _saturate(u, u_max) ** gamma,
            beta=beta,
            sigma_bound=u_max ** gamma,
            gamma=min(gamma, 1.0),
            holder_const=1.0 if gamma <= 1.0 else gamma * u_max ** (gamma - 1.0),
            name=name, params={"gamma": gamma, "u_max": u_max},
        )
    raise KeyError(f"unknown diffusion {name!r}")


def _mode_fn(shape: str, lam: float, k: int) -> tuple[NoiseMap, float]:
    """Return g(x, xi) and its contribution to the modulus constant."""
    w = TWO_PI * k
    if shape == "zero":
        return (lambda x, xi: np.zeros(np.broadcast(x, xi).shape)), 0.0
    if shape == "linear":
        return (lambda x, xi: lam * np.broadcast_to(np.asarray(xi, float),
                                                    np.broadcast(x, xi).shape)), lam ** 2
    if shape == "sin-sat":
        return (lambda x, xi: lam * np.sin(w * np.asarray(x, float))
                * np.asarray(xi, float) / np.sqrt(1.0 + np.asarray(xi, float) ** 2)), \
            2.0 * lam ** 2 * max(w ** 2, 1.0)
    if shape == "cos-sat":
        return (lambda x, xi: lam * np.cos(w * np.asarray(x, float))
                * np.asarray(xi, float) / np.sqrt(1.0 + np.asarray(xi, float) ** 2)), \
            2.0 * lam ** 2 * max(w ** 2, 1.0)
    if shape == "sin-add":
        return (lambda x, xi: lam * np.sin(w * np.asarray(x, float))
                + 0.0 * np.asarray(xi, float)), lam ** 2 * w ** 2
    if shape == "cos-add":
        return (lambda x, xi: lam * np.cos(w * np.asarray(x, float))
                + 0.0 * np.asarray(xi, float)), lam ** 2 * w ** 2
    raise KeyError(f"unknown noise shape {shape!r}")


NOISE_SHAPES = ("zero", "linear", "sin-sat", "cos-sat", "sin-add", "cos-add")


def make_noise(triples: Sequence[tuple[str, float, int]]) -> NoiseSpec:
    """Build a noise family from (shape, amplitude, wavenumber) triples.

    All registered shapes are Lipschitz in xi, so the modulus is r(d) = d.
    """
    if not triples:
        triples = [("zero", 0.0, 1)]
    modes = []
    c_mod = 0.0
    c_lin = 0.0
    for shape, lam, k in triples:
        g, c = _mode_fn(shape, float(lam), int(k))
        modes.append(NoiseMode(shape, float(lam), int(k), g))
        c_mod += c
        c_lin += float(lam) ** 2
    return NoiseSpec(modes=tuple(modes), linear_growth_const=c_lin,
                     modulus=lambda d: np.asarray(d, float) * 1.0,
                     modulus_const=c_mod, modulus_name="lipschitz")


INITIAL_CONDITIONS: dict[str, Callable[[Array], Array]] = {
    "sine": lambda x: np.sin(TWO_PI * np.asarray(x, float)),
    "cosine": lambda x: np.cos(TWO_PI * np.asarray(x, float)),
    "shifted-sine": lambda x: 0.5 + 0.5 * np.sin(TWO_PI * np.asarray(x, float)),
    "bump": lambda x: np.exp(-50.0 * (np.asarray(x, float) - 0.5) ** 2),
    "riemann": lambda x: np.where((np.asarray(x, float) > 0.25)
                                  & (np.asarray(x, float) < 0.75), 1.0, 0.0),
    "two-mode": lambda x: 0.6 * np.sin(TWO_PI * np.asarray(x, float))
    + 0.3 * np.cos(2 * TWO_PI * np.asarray(x, float)),
}


def make_problem(name: str, flux: FluxSpec, diffusion: DiffusionSpec, noise: NoiseSpec,
                 initial: str = "sine", horizon: float = 1.0,
                 eval_range=(-8.0, 8.0)) -> ProblemSpec:
    return ProblemSpec(name=name, flux=flux, diffusion=diffusion, noise=noise,
                       initial=INITIAL_CONDITIONS[initial], horizon=float(horizon),
                       eval_range=tuple(eval_range), initial_name=initial)


def builtin_problems() -> list[ProblemSpec]:
    """Reference problems used by tests, studies and the CLI.

    pure-sde              B = 0, A = 0, one linear mode g = 0.5 xi
    burgers               B = u^2/2, A = 0, no noise
    degenerate-transport  B = u^2/2, A = min(|u|,1)^1.5, two saturated sine modes
    heat                  B = 0, A = 0.05, no noise
    burgers-noise         B = u^2/2, A = 0, one linear mode g = 0.5 xi
    """
    return [
        make_problem("pure-sde", make_flux("zero"), make_diffusion("zero"),
                     make_noise([("linear", 0.5, 1)])),
        make_problem("burgers", make_flux("burgers"), make_diffusion("zero"),
                     make_noise([])),
        make_problem("degenerate-transport", make_flux("burgers"),
                     make_diffusion("power", gamma=0.75, u_max=1.0),
                     make_noise([("sin-sat", 0.5, 1), ("sin-sat", 0.25, 2)])),
        make_problem("heat", make_flux("zero"), make_diffusion("constant", nu=0.05),
                     make_noise([])),
        make_problem("burgers-noise", make_flux("burgers"),
                     make_diffusion("zero", gamma=0.75),
                     make_noise([("linear", 0.5, 1)])),
    ]


def problem_from_description(desc: dict) -> ProblemSpec:
    """Inverse of ProblemSpec.describe."""
    eval_range = tuple(desc.get("eval_range", (-8.0, 8.0)))
    flux = dict(desc.get("flux", {"name": "zero"}))
    diffusion = dict(desc.get("diffusion", {"name": "zero"}))
    triples = [(m["shape"], m["amplitude"], m["wavenumber"]) for m in desc.get("noise", [])
               if m["shape"] != "zero"]
    initial = desc.get("initial", "sine")
    if initial not in INITIAL_CONDITIONS:
        raise KeyError(f"unknown initial condition {initial!r}")
    return make_problem(desc.get("name", "custom"),
                        make_flux(flux.pop("name"), eval_range=eval_range, **flux),
                        make_diffusion(diffusion.pop("name"), **diffusion),
                        make_noise(triples), initial=initial,
                        horizon=float(desc.get("horizon", 1.0)), eval_range=eval_range)


def get_problem(name: str) -> ProblemSpec:
    for p in builtin_problems():
        if p.name == name:
            return p
    raise KeyError(f"unknown problem {name!r}; known: "
                   f"{[p.name for p in builtin_problems()]}")


def moment_constants(noise: NoiseSpec, p: float) -> tuple[float, float]:
    """Constants (K, K_T) of the moment bound E|v(t)|_p^p <= e^{K t}(E|v_s|_p^p + K_T t).

    From the Ito formula, d E|v|_p^p = p(p-1)/2 E int |v|^{p-2} G^2 with
    G^2 <= C(1 + xi^2).  Young's inequality |v|^{p-2} <= (p-2)/p |v|^p + 2/p
    on the unit torus gives K = (p-1)^2 C and K_T = (p-1) C; Gronwall then
    yields the bound.
    """
    if p < 2:
        raise ValueError("moment bound needs p >= 2")
    c = noise.linear_growth_const
    return (p - 1.0) ** 2 * c, (p - 1.0) * c


def moment_bound(noise: NoiseSpec, p: float, initial_moment: float, t: float) -> float:
    K, KT = moment_constants(noise, p)
    return float(np.exp(K * t) * (initial_moment + KT * t))


# --------------------------------------------------------------------------
# hypothesis validation


@dataclass(frozen=True)
class ValidationTolerances:
    tol_fd: float = 1e-6
    tol_psd: float = 1e-12
    tol_sqrt: float = 1e-10
    tol_ineq: float = 1e-12


@dataclass
class HypothesisCheck:
    hypothesis: str
    name: str
    worst_slack: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst_slack) and self.worst_slack >= -self.tolerance)


@dataclass
class ValidationReport:
    problem: str
    checks: list[HypothesisCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[HypothesisCheck]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "passed": self.passed,
            "checks": [
                {"hypothesis": c.hypothesis, "name": c.name,
                 "worst_slack": c.worst_slack, "tolerance": c.tolerance,
                 "passed": c.passed}
                for c in self.checks
            ],
        }


def _finite(name, values):
    values = np.asarray(values, float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteEvaluation(f"{name} returned non-finite values on the range")
    return values


def _torus_dist(x, y):
    d = np.abs(np.asarray(x) - np.asarray(y)) % 1.0
    return np.minimum(d, 1.0 - d)


def validate_hypotheses(spec: ProblemSpec, samples: int = 200,
                        tol: ValidationTolerances | None = None) -> ValidationReport:
    """Check the flux, diffusion and noise inequalities on sample grids.

    Each check reports the worst sampled slack ``rhs - lhs``; a check passes
    when that slack is at least ``-tolerance``.  The problem is never mutated.
    """
    tol = tol or ValidationTolerances()
    if samples < 2:
        raise ValueError("samples must be >= 2")
    lo, hi = spec.eval_range
    if not hi > lo:
        raise RangeEmpty(f"degenerate eval_range {spec.eval_range}")
    xi = np.linspace(lo, hi, samples)
    checks: list[HypothesisCheck] = []

    # H1: flux
    fl = spec.flux
    Bv = _finite("B", fl.B(xi))
    bv = _finite("b", fl.b(xi))
    h = 1e-6 * np.maximum(1.0, np.abs(xi))
    fd = (_finite("B", fl.B(xi + h)) - _finite("B", fl.B(xi - h))) / (2 * h)
    weight = 1.0 + np.abs(xi) ** fl.growth_exponent
    checks.append(HypothesisCheck("H1", "flux-derivative-consistency",
                                  float(np.min(tol.tol_fd * weight - np.abs(fd - bv))), 0.0))
    checks.append(HypothesisCheck("H1", "flux-polynomial-growth",
                                  float(np.min(fl.growth_const * weight - np.abs(bv))),
                                  tol.tol_ineq))
    del Bv

    # H2: diffusion
    df = spec.diffusion
    Av = _finite("A", df.A(xi))
    sv = _finite("sigma", df.sigma(xi))
    checks.append(HypothesisCheck("H2", "A-symmetric-psd", float(np.min(Av)), tol.tol_psd))
    checks.append(HypothesisCheck("H2", "sigma-psd", float(np.min(sv)), tol.tol_psd))
    checks.append(HypothesisCheck("H2", "sigma-squared-equals-A",
                                  float(tol.tol_sqrt - np.max(np.abs(sv * sv - Av))), 0.0))
    checks.append(HypothesisCheck("H2", "sigma-bounded",
                                  float(np.min(df.sigma_bound - np.abs(sv))), tol.tol_ineq))
    i, j = np.triu_indices(samples, k=1)
    dist = xi[j] - xi[i]
    ratio_slack = df.holder_const * dist ** df.gamma - np.abs(sv[j] - sv[i])
    checks.append(HypothesisCheck("H2", "sigma-holder", float(np.min(ratio_slack)),
                                  tol.tol_ineq))
    checks.append(HypothesisCheck("H2", "gamma-above-half", float(df.gamma - 0.5 - 1e-15), 0.0))
    beta_v = _finite("beta", df.beta(xi))
    beta0 = float(np.asarray(df.beta(np.array([0.0])))[0])
    checks.append(HypothesisCheck("H2", "beta-zero-at-origin", -abs(beta0), tol.tol_ineq))
    checks.append(HypothesisCheck("H2", "beta-monotone", float(np.min(np.diff(beta_v))),
                                  tol.tol_ineq))
    hb = 1e-6 * np.maximum(1.0, np.abs(xi))
    fdb = (df.beta(xi + hb) - df.beta(xi - hb)) / (2 * hb)
    checks.append(HypothesisCheck("H2", "beta-derivative-is-A",
                                  float(np.min(tol.tol_fd * (1.0 + np.abs(Av))
                                               - np.abs(fdb - Av))), 0.0))

    # H3: noise
    nz = spec.noise
    nx = max(8, min(64, samples))
    xs = (np.arange(nx) + 0.5) / nx
    X, XI = np.meshgrid(xs, xi, indexing="ij")
    G2 = _finite("G2", nz.G2(X, XI))
    checks.append(HypothesisCheck("H3", "G2-linear-growth",
                                  float(np.min(nz.linear_growth_const * (1 + XI ** 2) - G2)),
                                  tol.tol_ineq))
    rng = np.random.default_rng(0)
    n_q = 20000
    x1 = rng.random(n_q)
    x2 = np.where(rng.random(n_q) < 0.5, x1 + 1e-3 * rng.standard_normal(n_q), rng.random(n_q))
    z1 = rng.uniform(lo, hi, n_q)
    scale = 10.0 ** rng.uniform(-6, np.log10(hi - lo), n_q)
    z2 = np.clip(z1 + scale * rng.choice([-1.0, 1.0], n_q), lo, hi)
    lhs = np.zeros(n_q)
    for k in range(nz.n_modes):
        lhs += (_finite("g_k", nz.g(k, x1 % 1.0, z1)) - _finite("g_k", nz.g(k, x2 % 1.0, z2))) ** 2
    dz = np.abs(z1 - z2)
    rhs = nz.modulus_const * (_torus_dist(x1, x2) ** 2 + dz * _finite("r", nz.modulus(dz)))
    checks.append(HypothesisCheck("H3", "noise-modulus", float(np.min(rhs - lhs)), tol.tol_ineq))
    d = np.linspace(0.0, hi - lo, samples)
    rv = _finite("r", nz.modulus(d))
    checks.append(HypothesisCheck("H3", "modulus-zero-at-origin", -abs(float(rv[0])),
                                  tol.tol_ineq))
    checks.append(HypothesisCheck("H3", "modulus-nondecreasing", float(np.min(np.diff(rv))),
                                  tol.tol_ineq))
    return ValidationReport(spec.name, checks)
