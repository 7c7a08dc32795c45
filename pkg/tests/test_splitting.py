import math

import numpy as np
import pytest

from kinsplit.det_solver import DetScheme, det_solve
from kinsplit.grid import Field, TorusGrid
from kinsplit.model import (get_problem,
                            moment_bound)
from kinsplit.splitting import (Ensemble, Partition, SplitConfig, advance_cell,
                                default_fine_grid, fine_units,
                                next_partition_time, run_splitting)

PURE = get_problem("pure-sde")
BURGERS = get_problem("burgers")
NOISY = get_problem("burgers-noise")
SMALL = SplitConfig(N=32)


def _l1(a, b, dx):
    return float(np.mean(np.sum(np.abs(a - b), axis=-1) * dx))


def test_default_fine_grid_lands_on_epsilon():
    assert default_fine_grid(0.1, 1.0) == 320
    assert default_fine_grid(0.3, 1.0) == 110
    assert default_fine_grid(1e6, 1.0) == 32
    assert default_fine_grid(1 / math.pi, 1.0) == math.ceil(32 * math.pi)


def test_fine_units_never_overshoots():
    assert fine_units(0.1, 320, 1.0) == 32
    assert fine_units(0.3, 10, 1.0) == 3
    assert fine_units(0.01, 10, 1.0) == 0


@pytest.mark.parametrize("eps", [0.3, 0.25, 0.1])
def test_identity_transport_gives_uniform_mesh(eps):
    part, _, _ = run_splitting(PURE, eps, 4, seed=1, output_times=[], config=SMALL)
    assert part.n_cells == math.ceil(1.0 / eps - 1e-12)
    assert part.times[-1] == 1.0
    assert np.allclose(part.widths[:-1], eps, atol=1e-14)
    assert set(part.ended_by) <= {"cap", "horizon"}


def test_huge_epsilon_is_one_cell():
    part, _, _ = run_splitting(BURGERS, 1e6, 2, seed=1, output_times=[], config=SMALL)
    assert list(part.times) == [0.0, 1.0]


def test_next_partition_time_under_identity_transport():
    ens = Ensemble(PURE, 0.3, 2, 0, SMALL)
    assert next_partition_time(ens, 0.0) == pytest.approx(0.3, abs=1e-14)
    ens.close()


def test_burgers_crossing_recomputed_independently():
    eps = 0.05
    cfg = SplitConfig(N=32, record_nodes=True)
    part, traj, _ = run_splitting(BURGERS, eps, 1, seed=0, output_times=[], config=cfg)
    g = TorusGrid(32)
    h = part.horizon / part.n_fine
    dstep = part.search_step
    crossings = 0
    for n, (a, b) in enumerate(zip(part.indices[:-1], part.indices[1:])):
        ut = traj.nodes_utilde[n][0]
        f0 = Field(g, ut)

        def D(units):
            out, _ = det_solve(DetScheme(), f0, units * h, BURGERS, sync=h)
            return _l1(out.values, ut, g.dx)

        if part.ended_by[n] == "crossing":
            crossings += 1
            assert D(b - a) > eps
            if b - a > dstep:
                assert D(b - a - dstep) <= eps
        else:
            assert (b - a) == min(fine_units(eps, part.n_fine, 1.0), part.n_fine - a)
    assert crossings > 0


def test_widths_capped_and_horizon_reached():
    part, _, diag = run_splitting(NOISY, 0.1, 8, seed=2, output_times=[], config=SMALL)
    assert np.all(part.widths <= 0.1 + 1e-14)
    assert part.times[-1] == 1.0
    assert diag.vtilde_pair_max <= 2 * 0.1


def test_zero_noise_nodes_and_sequential_oracle():
    cfg = SplitConfig(N=32, record_nodes=True)
    times = np.linspace(0, 1, 11)
    part, traj, _ = run_splitting(BURGERS, 0.1, 1, seed=0, output_times=times, config=cfg)
    for n in range(part.n_cells - 1):
        assert np.array_equal(traj.nodes_utilde[n + 1], traj.nodes_u[n])
    g = TorusGrid(32)
    u0 = g.cell_average(BURGERS.initial)
    h = part.horizon / part.n_fine
    idx = np.array(part.indices)
    for k, i in enumerate(traj.indices):
        # v is R(t, t_n) u_n = u_n on a cell, i.e. S run to the right end
        right = idx[np.searchsorted(idx, i, side="right")] if i < part.n_fine else i
        ref_v, _ = det_solve(DetScheme(), u0, right * h, BURGERS, sync=h)
        ref_vt, _ = det_solve(DetScheme(), u0, i * h, BURGERS, sync=h)
        assert np.max(np.abs(traj.v[k, 0] - ref_v.values)) <= 1e-12
        assert np.max(np.abs(traj.vtilde[k, 0] - ref_vt.values)) <= 1e-12


def test_zero_transport_keeps_nodes():
    cfg = SplitConfig(N=16, record_nodes=True)
    part, traj, _ = run_splitting(PURE, 0.25, 3, seed=4, output_times=[0, 0.25, 0.5, 0.75],
                                  config=cfg)
    for n in range(part.n_cells):
        assert np.array_equal(traj.nodes_u[n], traj.nodes_utilde[n])
    # boundary identities v(t_n) = u_n, vtilde(t_n) = u~_n
    for k in range(4):
        assert np.array_equal(traj.v[k], traj.nodes_u[k])
        assert np.array_equal(traj.vtilde[k], traj.nodes_utilde[k])


def test_partition_determinism_and_worker_independence():
    a = run_splitting(NOISY, 0.1, 6, seed=9, config=SMALL)
    b = run_splitting(NOISY, 0.1, 6, seed=9, config=SMALL)
    c = run_splitting(NOISY, 0.1, 6, seed=9, config=SplitConfig(N=32, workers=3))
    assert a[0].indices == b[0].indices == c[0].indices
    assert np.array_equal(a[1].v, c[1].v) and np.array_equal(a[1].vtilde, c[1].vtilde)


def test_replaying_a_partition_reproduces_the_run():
    part, traj, _ = run_splitting(NOISY, 0.1, 4, seed=3, config=SMALL)
    again = Partition.from_dict(part.to_dict())
    part2, traj2, _ = run_splitting(NOISY, 0.1, 4, seed=3, config=SMALL, partition=again)
    assert part2.indices == part.indices
    assert np.array_equal(traj2.v, traj.v)


def test_sample_subsets_share_paths():
    _, full, _ = run_splitting(get_problem("pure-sde"), 0.2, 5, seed=6, config=SMALL)
    _, sub, _ = run_splitting(get_problem("pure-sde"), 0.2, 2, seed=6, config=SMALL,
                              samples=[3, 1])
    assert np.array_equal(sub.v[:, 0], full.v[:, 3]) and np.array_equal(sub.v[:, 1], full.v[:, 1])


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_ensemble_moments_within_bound(p):
    M = 64
    _, traj, _ = run_splitting(NOISY, 0.1, M, seed=5, config=SMALL)
    g = traj.grid
    m0 = float(np.sum(np.abs(g.cell_average(NOISY.initial).values) ** p) * g.dx)
    for arr in (traj.v, traj.vtilde):
        per = np.sum(np.abs(arr) ** p, axis=-1) * g.dx  # (times, samples)
        se = per.std(axis=1, ddof=1) / np.sqrt(M)
        bound = np.array([moment_bound(NOISY.noise, p, m0, t) for t in traj.times])
        assert np.all(per.mean(axis=1) <= bound * (1 + 1e-12) + 3 * se)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        run_splitting(PURE, 0.0, 1, seed=0)
    with pytest.raises(ValueError):
        run_splitting(PURE, 0.1, 0, seed=0)
    ens = Ensemble(PURE, 0.5, 1, 0, SMALL)
    with pytest.raises(ValueError):
        advance_cell(ens, 0.5, 0.5)
    ens.close()
