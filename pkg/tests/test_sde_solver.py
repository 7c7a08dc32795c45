import numpy as np
import pytest
from hypothesis import given, strategies as st

from kinsplit.errors import NonFiniteState
from kinsplit.grid import Field, TorusGrid
from kinsplit.model import make_noise, make_problem, make_flux, make_diffusion, moment_bound
from kinsplit.sde_solver import (BrownianStore, RngStream, SdeStepPlan, em_ensemble,
                                 exact_linear_ensemble, philox_normals, sample_increments,
                                 sde_solve, sde_step, stream_key)


def noisy(triples):
    return make_problem("n", make_flux("zero"), make_diffusion("zero"), make_noise(triples))


GBM = noisy([("linear", 0.5, 1)])


@given(seed=st.integers(0, 2 ** 32), start=st.integers(0, 50), count=st.integers(1, 20))
def test_draws_depend_only_on_their_index(seed, start, count):
    key = stream_key(seed, 3, 1)
    whole = philox_normals(key, 0, start + count)
    assert np.array_equal(philox_normals(key, start, count), whole[start:])


def test_streams_differ_between_samples_and_modes():
    a = philox_normals(stream_key(7, 0, 0), 0, 8)
    assert not np.array_equal(a, philox_normals(stream_key(7, 1, 0), 0, 8))
    assert not np.array_equal(a, philox_normals(stream_key(7, 0, 1), 0, 8))


def test_increment_statistics():
    rng = RngStream(seed=11)
    z = rng.normals(0, 0, 1_000_000) * np.sqrt(0.01)
    n = len(z)
    assert abs(z.mean()) <= 3 * 0.1 / np.sqrt(n)
    # Var of the sample variance of N(0, s^2) is 2 s^4 / n
    assert abs(z.var() - 0.01) <= 3 * np.sqrt(2 / n) * 0.01


def test_sample_increments_advances_cursor():
    rng = RngStream(seed=5)
    a = sample_increments(rng, 0, 0.04)
    b = sample_increments(rng, 0, 0.04)
    ref = 0.2 * RngStream(seed=5).normals(0, 0, 2)
    assert (a, b) == (ref[0], ref[1])
    with pytest.raises(ValueError):
        sample_increments(rng, 0, 0.0)


def test_zero_noise_is_identity():
    spec = noisy([])
    v = Field(TorusGrid(16), np.linspace(-1, 1, 16))
    out = sde_solve(v, 0.0, 1.0, SdeStepPlan(0.01), spec, RngStream(1))
    assert np.array_equal(out.values, v.values)


def test_additive_noise_is_exact():
    spec = noisy([("sin-add", 0.3, 1)])
    g = TorusGrid(16)
    v = Field(g, np.cos(2 * np.pi * g.centers))
    out = sde_solve(v, 0.0, 0.5, SdeStepPlan(0.05), spec, RngStream(9))
    beta = np.sqrt(0.05) * RngStream(9).normals(0, 0, 10).sum()
    expect = v.values + 0.3 * np.sin(2 * np.pi * g.centers) * beta
    assert np.allclose(out.values, expect, atol=1e-13)


def test_geometric_second_moment():
    M, n, T = 10_000, 256, 1.0
    store = BrownianStore(3, np.arange(M), 1, n, T / n)
    v = em_ensemble(GBM, np.ones((M, 1)), np.zeros(1), store, 0, n, 1)[:, 0]
    exact = np.exp(0.25 * T)
    se = np.std(v ** 2, ddof=1) / np.sqrt(M)
    assert abs(np.mean(v ** 2) - exact) <= 3 * se + exact * 0.25 ** 2 / n
    assert np.mean(v ** 2) <= moment_bound(GBM.noise, 2.0, 1.0, T)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_ensemble_moments_below_bound(p):
    spec = noisy([("sin-sat", 0.5, 1), ("linear", 0.25, 2)])
    g = TorusGrid(32)
    u0 = np.sin(2 * np.pi * g.centers)
    M, n = 2000, 128
    store = BrownianStore(4, np.arange(M), 2, n, 1.0 / n)
    v = em_ensemble(spec, np.tile(u0, (M, 1)), g.centers, store, 0, n, 1)
    m0 = np.mean(np.abs(u0) ** p)
    assert np.mean(np.abs(v) ** p) <= moment_bound(spec.noise, p, m0, 1.0)


def test_euler_maruyama_strong_order():
    # the asymptotic order is exactly 1/2, so the fitted slope is compared
    # with 1/2 up to three batch-means standard errors
    M, n_fine = 10_000, 1024
    store = BrownianStore(8, np.arange(M), 1, n_fine, 1.0 / n_fine)
    v0 = np.ones((M, 1))
    exact = exact_linear_ensemble(GBM, v0, store, 0, n_fine)
    subs = [128, 64, 32, 16, 8, 4]
    err = np.array([np.abs(em_ensemble(GBM, v0, np.zeros(1), store, 0, n_fine, s) - exact)[:, 0]
                    for s in subs])
    x = np.log(np.array(subs) / n_fine)
    order = np.polyfit(x, np.log(err.mean(axis=1)), 1)[0]
    batches = [np.polyfit(x, np.log(err[:, b].mean(axis=1)), 1)[0]
               for b in np.array_split(np.arange(M), 20)]
    se = np.std(batches, ddof=1) / np.sqrt(len(batches))
    assert order >= 0.5 - 3 * se
    assert se < 0.01


def test_step_rejects_oversized_dt_and_nonfinite():
    v = Field(TorusGrid(4), np.ones(4))
    with pytest.raises(ValueError):
        sde_step(v, 0.2, SdeStepPlan(0.1), GBM, RngStream(0))
    huge = noisy([("linear", 1e150, 1)])
    with pytest.raises(NonFiniteState), np.errstate(over="ignore"):
        sde_solve(Field(TorusGrid(4), np.full(4, 1e200)), 0.0, 1.0, SdeStepPlan(0.5), huge,
                  RngStream(0))


def test_exact_linear_scheme_requires_linear_modes():
    v = Field(TorusGrid(4), np.ones(4))
    with pytest.raises(ValueError):
        sde_step(v, 0.1, SdeStepPlan(0.1, scheme="exact_linear"), noisy([("sin-add", 1, 1)]),
                 RngStream(0))


def test_brownian_store_shares_paths_across_subsets():
    full = BrownianStore(21, np.arange(6), 2, 40, 0.025)
    part = BrownianStore(21, np.array([4, 1]), 2, 40, 0.025)
    assert np.array_equal(part.W[0], full.W[4]) and np.array_equal(part.W[1], full.W[1])
    inc = full.increment(10, 30)
    assert inc.shape == (6, 2)
    assert np.allclose(full.increment(0, 10) + full.increment(10, 40), full.W[:, :, 40])
