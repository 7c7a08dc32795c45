import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kinsplit.det_solver import (DetScheme, NumericalFlux, SigmaPrimitive, det_solve,
                                 det_solve_common, det_step, max_stable_dt)
from kinsplit.errors import CflViolation, QuadratureRangeExceeded
from kinsplit.grid import Field, TorusGrid, l1_distance, lp_norm
from kinsplit.model import get_problem, make_diffusion, make_flux, make_noise, make_problem

BURGERS = get_problem("burgers")
HEAT = get_problem("heat")
DEGEN = get_problem("degenerate-transport")
SCHEMES = [DetScheme(), DetScheme(flux="lax-friedrichs")]

values = arrays(float, 32, elements=st.floats(-2.0, 2.0))


def field(v):
    return Field(TorusGrid(len(v)), np.asarray(v, float))


def test_no_dynamics_gives_horizon():
    spec = get_problem("pure-sde")
    assert max_stable_dt(DetScheme(), field(np.sin(np.arange(64))), spec) == spec.horizon


def test_burgers_stable_dt_formula():
    u = field(np.where(np.arange(64) < 32, 1.0, -1.0))
    assert max_stable_dt(DetScheme(), u, BURGERS) == pytest.approx(0.9 / 64, rel=1e-15)


def test_constant_diffusion_stable_dt_formula():
    spec = make_problem("h", make_flux("zero"), make_diffusion("constant", nu=0.1), make_noise([]))
    u = field(np.zeros(64))
    assert max_stable_dt(DetScheme(), u, spec) == pytest.approx(0.45 / 64 ** 2 / 0.1, rel=1e-14)


def test_step_beyond_stable_dt_raises():
    u = field(np.ones(64))
    with pytest.raises(CflViolation):
        det_step(DetScheme(), u, 2 * max_stable_dt(DetScheme(), u, BURGERS), BURGERS)


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("spec", [BURGERS, HEAT, DEGEN], ids=lambda s: s.name)
def test_constant_field_is_fixed_exactly(scheme, spec):
    u = field(np.full(32, 0.7))
    out, rep = det_step(scheme, u, max_stable_dt(scheme, u, spec), spec)
    assert np.array_equal(out.values, u.values)


def test_riemann_shock_speed():
    spec = make_problem("r", make_flux("burgers"), make_diffusion("zero"), make_noise([]),
                        initial="riemann")
    g = TorusGrid(64)
    out, _ = det_solve(DetScheme(), g.cell_average(spec.initial), 0.25, spec)
    v = out.values
    i = int(np.argmin(np.abs(g.centers - 0.875)))
    # Rankine-Hugoniot: the jump from 1 to 0 moves from 0.75 at speed 1/2
    window = slice(i - 6, i + 6)
    xs = g.centers[window]
    cross = xs[np.argmax(v[window] < 0.5)] - 0.5 * g.dx
    assert abs(cross - 0.875) <= 2 * g.dx


def test_heat_mode_decay():
    g = TorusGrid(64)
    u0 = g.cell_average(HEAT.initial)
    out, rep = det_solve(DetScheme(), u0, 0.2, HEAT)
    s = np.sin(2 * np.pi * g.centers)
    ratio = (out.values @ s) / (u0.values @ s)
    exact = math.exp(-4 * math.pi ** 2 * 0.05 * 0.2)
    dt = 0.2 / rep.n_steps
    assert abs(ratio - exact) / exact <= 5 * (g.dx ** 2 + dt)


def test_zero_time_is_identity():
    u = field(np.sin(np.arange(32)))
    out, _ = det_solve(DetScheme(), u, 0.0, DEGEN)
    assert np.array_equal(out.values, u.values)


def test_pinned_ladder_semigroup_is_bitwise():
    g = TorusGrid(64)
    u = g.cell_average(DEGEN.initial)
    whole, _ = det_solve(DetScheme(), u, 1.0, DEGEN, sync=0.1)
    a, _ = det_solve(DetScheme(), u, 0.3, DEGEN, sync=0.1)
    b, _ = det_solve(DetScheme(), a, 0.7, DEGEN, sync=0.1)
    assert np.array_equal(whole.values, b.values)


@given(a=values, b=values)
def test_l1_contraction(a, b):
    A, B = det_solve_common(DetScheme(), [field(a), field(b)], 0.05, DEGEN)
    assert l1_distance(A, B) <= l1_distance(field(a), field(b)) + 1e-12


@given(a=values, scheme=st.sampled_from(SCHEMES))
def test_conservation_and_max_principle(a, scheme):
    u = field(a)
    out, rep = det_solve(scheme, u, 0.05, DEGEN)
    assert abs(out.values.sum() - u.values.sum()) / 32 <= 1e-12 * (1 + np.abs(a).sum())
    assert out.values.max() <= a.max() + 1e-12 and out.values.min() >= a.min() - 1e-12
    for p in (1, 2, 4, np.inf):
        assert lp_norm(out, p) <= lp_norm(u, p) + 1e-10


@given(a=values)
def test_dissipation_is_nonnegative_without_clamping(a):
    u = field(a)
    out, rep = det_step(DetScheme(), u, max_stable_dt(DetScheme(), u, DEGEN), DEGEN)
    assert rep.clamp_count == 0
    assert np.all(rep.dissipation_cells >= 0) and np.all(rep.parabolic_cells >= 0)


@given(a=values)
def test_burgers_energy_balance(a):
    # sum of cell dissipation + time defect equals the L2 energy drop
    u = field(a)
    out, rep = det_solve(DetScheme(), u, 0.05, BURGERS)
    drop = 0.5 * (np.sum(a ** 2) - np.sum(out.values ** 2)) / 32
    assert rep.dissipation - rep.time_defect == pytest.approx(drop, abs=1e-12)


@given(x=st.floats(-3, 3), y=st.floats(-3, 3), name=st.sampled_from(["burgers", "cubic", "linear"]))
def test_engquist_osher_flux_is_consistent_and_monotone(x, y, name):
    spec = make_problem("f", make_flux(name), make_diffusion("zero"), make_noise([]))
    F = NumericalFlux(spec)
    assert float(F(np.array(x), np.array(x))) == pytest.approx(float(spec.flux.B(x)), abs=1e-12)
    h = 1e-4
    assert float(F(np.array(x + h), np.array(y))) >= float(F(np.array(x), np.array(y))) - 1e-12
    assert float(F(np.array(x), np.array(y + h))) <= float(F(np.array(x), np.array(y))) + 1e-12


def test_sigma_primitive_linear_case_and_range():
    Q = SigmaPrimitive(lambda u: np.full_like(np.asarray(u, float), 2.0), -4.0, 4.0, 0.05)
    u = np.linspace(-3.9, 3.9, 17)
    assert np.allclose(Q(u), 2.0 * u, atol=1e-12)
    with pytest.raises(QuadratureRangeExceeded):
        Q(np.array([5.0]))


def test_parabolic_dissipation_of_frozen_sine():
    # one tiny step: n1 / dt equals nu * int |u_x|^2 = nu * 2 pi^2 up to O(dx^2);
    # cell averaging and the difference quotient each cost (pi dx)^2 / 3
    N, nu = 128, 0.05
    g = TorusGrid(N)
    u = g.cell_average(lambda x: np.sin(2 * np.pi * x))
    dt = 1e-7
    _, rep = det_step(DetScheme(), u, dt, HEAT)
    assert rep.n1_mass / dt == pytest.approx(nu * 2 * np.pi ** 2, rel=10 * g.dx ** 2)


def test_parabolic_dissipation_porous_medium_against_fine_quadrature():
    # a(u) = u^2 on u >= 0: Q(u) = u^2 / 2, so n1 / dt -> int |d/dx (u^2/2)|^2 dx
    spec = make_problem("pm", make_flux("zero"), make_diffusion("power", gamma=1.0, u_max=4.0),
                        make_noise([]))
    N = 256
    g = TorusGrid(N)
    prof = lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x)
    u = g.cell_average(prof)
    dt = 1e-9
    _, rep = det_step(DetScheme(), u, dt, spec)
    xf = (np.arange(200_000) + 0.5) / 200_000
    ref = np.mean((prof(xf) * 0.5 * 2 * np.pi * np.cos(2 * np.pi * xf)) ** 2)
    assert rep.n1_mass / dt == pytest.approx(ref, rel=1e-3)
