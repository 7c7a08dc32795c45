import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from kinsplit.errors import MissingAccumulators, ResolutionTooCoarse
from kinsplit.grid import TorusGrid, mollifier_pair
from kinsplit.harness.studies import ExperimentPlan, doubling_study
from kinsplit.kinetic import (XiGrid, chi, dissipation_ledger, doubling_functional,
                              doubling_rate_table, kinetic_f, kinetic_measure_mass,
                              parabolic_dissipation)
from kinsplit.model import (builtin_problems, get_problem, make_diffusion, make_flux, make_noise,
                            make_problem)
from kinsplit.splitting import SplitConfig, run_splitting

SMALL = SplitConfig(N=32)
NOTHING = make_problem("still", make_flux("zero"), make_diffusion("zero"), make_noise([]))


def test_kinetic_function_examples():
    assert kinetic_f(1.0, 0.0, "+") == 1
    assert kinetic_f(1.0, 0.0, "-") == 0
    assert chi(-1.0, -0.5) == -1
    with pytest.raises(ValueError):
        kinetic_f(1.0, 0.0, "*")


@given(u=st.floats(-5, 5), xi=st.floats(-5, 5))
def test_plus_minus_partition(u, xi):
    if xi != u:
        assert kinetic_f(u, xi, "+") - kinetic_f(u, xi, "-") == 1


@given(u=st.floats(-3, 3))
def test_chi_integrates_to_value(u):
    xg = XiGrid(-4.0, 4.0, 800)
    assert abs(np.sum(chi(u, xg.centers)) * xg.dxi - u) <= xg.dxi


def test_no_diffusion_means_no_parabolic_mass():
    snaps = np.random.default_rng(0).normal(size=(5, 16))
    rep = parabolic_dissipation(snaps, np.linspace(0, 1, 5), get_problem("burgers"))
    assert rep.mean == 0.0


def test_parabolic_mass_is_binned_at_the_field_value():
    heat = get_problem("heat")
    g = TorusGrid(64)
    u = g.cell_average(lambda x: np.sin(2 * np.pi * x)).values
    xg = XiGrid(-2, 2, 64)
    rep = parabolic_dissipation(np.stack([u, u]), [0.0, 0.01], heat, xi_grid=xg)
    assert rep.xi_mass.sum() == pytest.approx(rep.mean, rel=1e-12)
    assert rep.xi_mass[xg.centers > 1.1].sum() == 0 and rep.xi_mass[xg.centers < -1.1].sum() == 0


def test_still_problem_has_no_mass():
    _, _, diag = run_splitting(NOTHING, 0.25, 2, seed=0, config=SMALL)
    for p in (0.0, 2.0):
        assert abs(kinetic_measure_mass(diag, p).mean) <= 1e-12


def test_burgers_mass_matches_energy_drop_and_scheme_dissipation():
    spec = get_problem("burgers")
    _, traj, diag = run_splitting(spec, 0.1, 1, seed=0, config=SMALL)
    acc = diag.accumulators
    g = traj.grid
    drop = 0.5 * (np.sum(acc.u0 ** 2) - np.sum(acc.v_final[0] ** 2)) * g.dx
    m = kinetic_measure_mass(diag, 0.0)
    assert m.mean == pytest.approx(drop, abs=1e-10)
    assert m.mean == pytest.approx(float(np.mean(acc.m_scheme - acc.time_defect)), abs=1e-10)


def test_missing_accumulators():
    with pytest.raises(MissingAccumulators):
        kinetic_measure_mass(object())
    _, _, diag = run_splitting(NOTHING, 0.5, 1, seed=0, config=SMALL)
    with pytest.raises(MissingAccumulators):
        kinetic_measure_mass(diag, 3.0)


@pytest.mark.parametrize("spec", builtin_problems(), ids=lambda s: s.name)
def test_ledger_and_mass_bound_on_builtins(spec):
    _, _, diag = run_splitting(spec, 0.1, 8, seed=1, config=SMALL)
    led = dissipation_ledger(diag)
    assert led.holds(1e-10)
    for p in (0.0, 2.0):
        m = kinetic_measure_mass(diag, p)
        assert np.isfinite(m.mean) and m.mean <= m.bound


def _constant_triple(c, N=32):
    f = np.full(N, c)
    return (f, f, f)


def test_constant_fields_give_the_mollifier_overlap():
    eta, delta = 0.1, 0.05
    rep = doubling_functional(_constant_triple(0.4), _constant_triple(0.4), eta, delta)
    _, psi = mollifier_pair(eta, delta)
    # int int_{xi < c < zeta} psi(xi - zeta)
    overlap, _ = integrate.dblquad(lambda z, x: psi(x - z), 0.4 - delta, 0.4,
                                   lambda x: 0.4, lambda x: x + delta, epsabs=1e-13)
    assert rep.value == pytest.approx(overlap, rel=1e-8)
    assert 0 < rep.value <= delta / 2


def test_grid_quadrature_converges_to_exact():
    g = TorusGrid(32)
    a = g.cell_average(lambda x: np.sin(2 * np.pi * x)).values
    b = g.cell_average(lambda x: 0.8 * np.sin(2 * np.pi * x + 0.3)).values
    exact = doubling_functional((a, a, a), (b, b, b), 0.1, 0.1).value
    errs = []
    for n in (64, 256):
        xg = XiGrid(-1.5, 1.5, n)
        errs.append(abs(doubling_functional((a, a, a), (b, b, b), 0.1, 0.1, xi_grid=xg,
                                            method="grid").value - exact))
    assert errs[1] < errs[0] and errs[1] <= 1e-3


def test_sharp_limit_approaches_positive_part():
    g = TorusGrid(64)
    a = g.cell_average(lambda x: np.sin(2 * np.pi * x)).values
    b = g.cell_average(lambda x: np.cos(2 * np.pi * x)).values
    local = np.sum(np.maximum(a - b, 0)) * g.dx
    gaps = [abs(doubling_functional((a, a, a), (b, b, b), eta, eta).pair_value - local)
            for eta in (0.2, 0.1, 0.04)]
    assert gaps[0] > gaps[1] > gaps[2]


rows = arrays(float, (3, 32), elements=st.floats(-2, 2))


@given(a=rows, b=rows, eta=st.sampled_from([0.07, 0.1, 0.2]), delta=st.floats(0.01, 0.5))
def test_pair_value_nonnegative_and_f2_below_delta(a, b, eta, delta):
    rep = doubling_functional((a, a, a), (b, b, b), eta, delta, epsilon=0.1, epsilon_prime=0.05)
    assert rep.pair_value >= -1e-10
    assert rep.components["F2"] <= delta + 1e-12
    assert rep.components["F1_bound"] == pytest.approx(0.3)


def test_resolution_floor():
    f = _constant_triple(0.0, 32)
    with pytest.raises(ResolutionTooCoarse):
        doubling_functional(f, f, 0.05, 0.1)
    with pytest.raises(ResolutionTooCoarse):
        doubling_functional(f, f, 0.1, 0.01, xi_grid=XiGrid(-1, 1, 64), method="grid")


def test_identity_run_values_stay_below_overlap_bound():
    flat = NOTHING.with_initial(lambda x: np.full_like(np.asarray(x, float), 0.3), "flat")
    _, traj, _ = run_splitting(flat, 0.25, 2, seed=0, output_times=[0.5], config=SMALL)
    first = (traj.v[0], traj.vtilde[0], traj.v_left[0])
    for eta in (0.2, 0.1):
        rep = doubling_functional(first, first, eta, eta ** 1.5)
        assert 0 < rep.value <= eta ** 1.5 / 2 + 1e-12


def test_self_pairing_of_varying_data_exceeds_overlap():
    # Lambda is convex with Lambda(z) + Lambda(-z) >= 2 Lambda(0)
    _, traj, _ = run_splitting(NOTHING, 0.25, 2, seed=0, output_times=[0.5], config=SMALL)
    first = (traj.v[0], traj.vtilde[0], traj.v_left[0])
    _, psi = mollifier_pair(0.1, 0.1 ** 1.5)
    rep = doubling_functional(first, first, 0.1, 0.1 ** 1.5)
    assert rep.value >= float(psi.mollified_positive_part(0.0)) - 1e-12


def test_theta_range_is_enforced():
    with pytest.raises(ValueError):
        doubling_rate_table([], theta=1.2, gamma=0.75)


@pytest.fixture(scope="module")
def burgers_noise_ladder():
    plan = ExperimentPlan(problem="burgers-noise", ladder=(0.2, 0.1, 0.05), samples=32,
                          grids=(64,))
    return doubling_study(plan, etas=(0.2, 0.1, 0.05), theta=1.5, gamma=0.75)["table"]


def test_ladder_nonincreasing_within_noise(burgers_noise_ladder):
    rows = burgers_noise_ladder.rows
    for a, b in zip(rows[:-1], rows[1:]):
        assert b["pair_value"] <= a["pair_value"] + 3 * np.hypot(a["pair_value_se"],
                                                                 b["pair_value_se"])
    assert all(r["min_sample_pair_value"] >= -1e-10 for r in rows)


@pytest.mark.xfail(strict=True, reason="values fall roughly linearly in eta, well faster "
                   "than the 0.25 envelope exponent; the envelope is only an upper bound")
def test_ladder_slope_matches_envelope_exponent(burgers_noise_ladder):
    assert burgers_noise_ladder.slope_within(0.3)
