import json

import numpy as np
import pytest

from kinsplit.errors import ConfigError
from kinsplit.harness import (ExperimentPlan, RunCache, builtin_config, parse_config)
from kinsplit.harness.cli import main
from kinsplit.harness.config import parse_sections
from kinsplit.harness.output import compare_csvs, read_manifest
from kinsplit.harness.studies import (cauchy_gate, cauchy_study, contraction_study,
                                      no_upward_trend, vtilde_coupling_check)
from kinsplit.model import get_problem
from kinsplit.sde_solver import BrownianStore, exact_linear_ensemble
from kinsplit.splitting import fine_grid

EXAMPLE = """
seed = 7
det.cfl_adv = 0.5

[problem]
base = burgers-noise   # builtin
initial = two-mode

[noise]
modes = linear 0.25 1; sin-sat 0.1 2

[split]
epsilon = 0.2, 0.1
samples = 16
cells = 32
"""


def test_config_parses_flat_and_sectioned_keys():
    cfg = parse_config(EXAMPLE)
    assert cfg.seed == 7 and cfg.det.cfl_adv == 0.5
    assert cfg.ladder == (0.2, 0.1) and cfg.samples == 16 and cfg.cells == 32
    prob = cfg.problem
    assert prob["initial"] == "two-mode"
    assert [m["shape"] for m in prob["noise"]] == ["linear", "sin-sat"]
    assert cfg.plan().spec().noise.n_modes == 2


def test_config_round_trip():
    cfg = parse_config(EXAMPLE)
    assert parse_config(cfg.to_ini()) == cfg
    assert parse_sections(cfg.to_sections()) == cfg
    for p in ("burgers", "heat", "degenerate-transport"):
        b = builtin_config(p, samples=5)
        assert parse_config(b.to_ini()) == b


@pytest.mark.parametrize("text, where", [
    ("[split]\nsamples = many\n", "samples"),
    ("colour = red\n", "colour"),
    ("[det]\ncfl_adv = 1.5\n", "det"),
    ("[problem]\nbase = nonsense\n", "base"),
    ("[split]\nsamples = 3\nsamples = 4\n", "samples"),
    ("[noise]\nmodes = linear half 1\n", "modes"),
    ("[split]\nepsilon = 0.1, 0.2\n", "epsilon"),
    ("[bogus]\nx = 1\n", "bogus"),
])
def test_config_errors_name_the_key(text, where):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert where in str(e.value)


def test_config_error_reports_line_number():
    with pytest.raises(ConfigError) as e:
        parse_config("[split]\ncells = 32\nsamples = lots\n")
    assert "line 3" in str(e.value)


def test_plan_rejects_bad_ladders():
    with pytest.raises(ValueError):
        ExperimentPlan(ladder=(0.1, 0.2))
    with pytest.raises(ValueError):
        ExperimentPlan(ladder=())


def test_no_upward_trend_uses_first_rung():
    rows = [{"x": 1.0, "s": 0.1}, {"x": 1.2, "s": 0.1}]
    ok, slack = no_upward_trend(rows, "x", "s")
    assert ok and slack == pytest.approx(1.0 + 3 * np.hypot(0.1, 0.1) - 1.2)
    assert not no_upward_trend([{"x": 1.0, "s": 0.0}, {"x": 1.1, "s": 0.0}], "x", "s")[0]


def test_cauchy_gate():
    study = {"rows": [{"mean_sup": 1.0, "se": 0.0}, {"mean_sup": 0.5, "se": 0.0}]}
    assert cauchy_gate(study)[0]
    study["rows"][1]["mean_sup"] = 0.9
    assert not cauchy_gate(study)[0]


# ---------------------------------------------------------------- studies

def test_zero_noise_cauchy_table():
    plan = ExperimentPlan(problem="burgers", ladder=(0.2, 0.1, 0.05), samples=1, grids=(32,))
    cache = RunCache()
    study = cauchy_study(plan, cache)
    # vtilde(t) = S(t) u0 does not see the partition at all
    for eps in plan.ladder:
        _, a, _ = cache.get(plan, eps)
        _, b, _ = cache.get(plan, eps / 2)
        assert np.max(np.abs(a.vtilde - b.vtilde)) <= 1e-12
    # v(t) = S(t_{n+1}) u0 on a cell; |u_t|_1 <= TV(u0) max|u| = 4 for Burgers
    for r in study["rows"]:
        assert r["mean_sup"] <= 4 * r["epsilon"]


def test_pure_sde_cauchy_table_is_em_error_only():
    # S is the identity, so v^eps differs from the exact flow only by EM error
    plan = ExperimentPlan(problem="pure-sde", ladder=(0.2, 0.1), samples=64, grids=(16,))
    cache = RunCache()
    study = cauchy_study(plan, cache)
    spec = plan.spec()
    n_fine = fine_grid(spec.horizon, plan.fine_step)
    store = BrownianStore(plan.seed, np.arange(plan.samples), 1, n_fine, spec.horizon / n_fine)

    def sup_error(eps):
        _, tr, diag = cache.get(plan, eps)
        u0 = np.repeat(diag.accumulators.u0[None, :], plan.samples, 0)
        per_time = [np.sum(np.abs(tr.v[k] - exact_linear_ensemble(spec, u0, store, 0, i)),
                           axis=-1) * tr.grid.dx for k, i in enumerate(tr.indices)]
        return np.max(per_time, axis=0)

    for r in study["rows"]:
        bound = np.mean(sup_error(r["epsilon"]) + sup_error(r["epsilon_half"]))
        assert 0 < r["mean_sup"] <= bound + 1e-12
        assert bound < 0.05


@pytest.fixture(scope="module")
def transport_study():
    plan = ExperimentPlan(problem="degenerate-transport", ladder=(0.2, 0.1, 0.05), samples=32)
    cache = RunCache()
    return cauchy_study(plan, cache), vtilde_coupling_check(plan, cache)


def test_transport_cauchy_distances_decrease(transport_study):
    study, _ = transport_study
    rows = study["rows"]
    assert all(r["mean_sup"] > 0 for r in rows)
    for a, b in zip(rows[:-1], rows[1:]):
        assert b["mean_sup"] < a["mean_sup"] + 3 * np.hypot(a["se"], b["se"])
    assert study["order"] >= 0.4


def test_transport_vtilde_coupling_order(transport_study):
    _, coup = transport_study
    assert coup["holds"] and coup["order"] >= 0.45


def test_vtilde_coupling_vanishes_without_dynamics():
    still = json.dumps({**get_problem("burgers").describe(), "flux": {"name": "zero"},
                        "name": "still"}, sort_keys=True)
    plan = ExperimentPlan(problem="still", definition=still, ladder=(2.0,), samples=1,
                          grids=(16,), fine=1 / 64)
    coup = vtilde_coupling_check(plan)
    assert coup["rows"][0]["max_over_t"] == 0.0


def test_single_cell_vtilde_coupling():
    plan = ExperimentPlan(problem="burgers-noise", ladder=(2.0,), samples=8, grids=(16,),
                          fine=1 / 64)
    cache = RunCache()
    coup = vtilde_coupling_check(plan, cache)
    part, tr, diag = cache.get(plan, 2.0)
    assert part.n_cells == 1
    # one cell: the coupling is bounded by the within-cell increments
    assert coup["rows"][0]["max_over_t"] <= diag.v_pair_max + diag.vtilde_pair_max + 1e-12


def test_contraction_identical_data_is_zero():
    plan = ExperimentPlan(problem="burgers-noise", ladder=(0.1,), samples=8, grids=(32,))
    study = contraction_study(plan, "sine")
    assert study["rows"][0]["initial"] == 0.0
    assert max(study["rows"][0]["per_time"]) == 0.0


def test_contraction_exact_without_noise():
    plan = ExperimentPlan(problem="burgers", ladder=(0.1, 0.05), samples=1, grids=(32,))
    study = contraction_study(plan, "cosine")
    for r in study["rows"]:
        assert r["max_excess"] <= 1e-12


def test_contraction_with_lipschitz_noise():
    plan = ExperimentPlan(problem="burgers-noise", ladder=(0.1,), samples=32, grids=(32,))
    r = contraction_study(plan, "cosine")["rows"][0]
    assert r["max_excess_over_se"] <= 3.0


# ---------------------------------------------------------------- CLI

def test_cli_validate(tmp_path):
    out = tmp_path / "v"
    assert main(["validate", "--problem", "burgers-noise", "--out", str(out), "--quiet"]) == 0
    assert (out / "tables" / "validation.csv").exists()
    assert read_manifest(out)["exit_code"] == 0


def test_cli_run_pure_sde_uniform_partition(tmp_path):
    out = tmp_path / "r"
    code = main(["run", "--problem", "pure-sde", "--epsilon", "0.1", "--samples", "1000",
                 "--cells", "8", "--out", str(out), "--quiet"])
    assert code == 0
    part = read_manifest(out)["partitions"]["0.1"]
    assert np.allclose(np.diff(part["times"]), 0.1, atol=1e-14)
    assert part["times"][-1] == 1.0


def test_cli_manifest_replay_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--problem", "burgers-noise", "--epsilon", "0.2", "--samples", "6",
                 "--cells", "16", "--out", str(a), "--quiet"]) == 0
    assert main(["run", "--manifest", str(a / "manifest.json"), "--workers", "2",
                 "--out", str(b), "--quiet"]) == 0
    assert compare_csvs(a, b) == []
    assert read_manifest(b)["replayed_from"].endswith("manifest.json")


@pytest.mark.parametrize("argv, code", [
    (["run", "--problem", "no-such-problem"], 2),
    (["run", "--problem", "burgers", "--epsilon", "-0.1"], 2),
    (["cauchy", "--problem", "burgers", "--ladder", "0.1"], 2),
    (["run", "--problem", "burgers", "--workers", "0"], 2),
    (["run", "--config", "/nonexistent.ini"], 2),
    (["frobnicate"], 2),
])
def test_cli_exit_codes(tmp_path, argv, code):
    assert main(argv + ["--out", str(tmp_path / "x"), "--quiet"]) == code


def test_cli_bad_config_file(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[split]\nsamples = lots\n")
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert "samples" in capsys.readouterr().err


def test_cli_manifest_command_mismatch(tmp_path):
    out = tmp_path / "v"
    main(["validate", "--problem", "heat", "--out", str(out), "--quiet"])
    assert main(["run", "--manifest", str(out / "manifest.json"), "--out",
                 str(tmp_path / "w"), "--quiet"]) == 2
