"""Convergence and consistency studies over epsilon ladders.

Runs in a study share the seed, the sample ids and the fine Brownian grid
(by default h = (smallest epsilon / 2) / 32, since pairs (eps, eps/2) are
compared), so every epsilon sees the same noise paths.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..det_solver import DetScheme
from ..grid import _sum, lp_power_values
from ..kinetic import (DoublingReport, dissipation_ledger, doubling_functional,
                       doubling_rate_table, kinetic_measure_mass)
from ..model import (INITIAL_CONDITIONS, ProblemSpec, get_problem, moment_bound,
                     problem_from_description)
from ..splitting import SplitConfig, run_splitting


@dataclass(frozen=True)
class ExperimentPlan:
    problem: str = "degenerate-transport"
    ladder: tuple[float, ...] = (0.2, 0.1, 0.05)
    grids: tuple[int, ...] = (64,)
    samples: int = 64
    seed: int = 20240601
    output_times: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 1.0, 11), 12))
    diagnostics: tuple[str, ...] = ("cauchy",)
    det: DetScheme = field(default_factory=DetScheme)
    search_fraction: float = 1.0 / 16.0
    sde_fraction: float = 1.0 / 8.0
    workers: int = 1
    horizon: float | None = None
    initial: str | None = None
    fine: float | None = None
    definition: str | None = None

    def __post_init__(self):
        if not self.ladder or not self.grids:
            raise ValueError("ladders must be nonempty")
        if any(b >= a for a, b in zip(self.ladder[:-1], self.ladder[1:])):
            raise ValueError("epsilon ladder must be strictly decreasing")

    @property
    def fine_step(self) -> float:
        """Brownian grid step; by default 1/32 of the smallest epsilon/2."""
        return self.fine if self.fine is not None else min(self.ladder) / 2.0 / 32.0

    def spec(self) -> ProblemSpec:
        spec = (problem_from_description(json.loads(self.definition))
                if self.definition is not None else get_problem(self.problem))
        if self.horizon is not None:
            spec = spec.with_horizon(self.horizon)
        if self.initial is not None:
            spec = spec.with_initial(INITIAL_CONDITIONS[self.initial], self.initial)
        return spec

    def config(self, N: int | None = None) -> SplitConfig:
        return SplitConfig(N=N or self.grids[0], search_fraction=self.search_fraction,
                           sde_fraction=self.sde_fraction, fine_step=self.fine_step,
                           det=self.det, workers=self.workers)

    def scaled(self, factor: int) -> "ExperimentPlan":
        return replace(self, samples=self.samples * factor)


class RunCache:
    """Memoises run_splitting results.

    The key holds everything a run depends on (not the ladder), so studies
    with different ladders but the same fine grid share runs.
    """

    def __init__(self):
        self._runs = {}

    def __iter__(self):
        return iter(self._runs.items())

    def __len__(self):
        return len(self._runs)

    def get(self, plan: ExperimentPlan, epsilon: float, spec: ProblemSpec | None = None,
            partition=None, tag: str = ""):
        spec = spec or plan.spec()
        key = (plan.problem, plan.definition, plan.config(), plan.samples, plan.seed,
               plan.output_times, float(epsilon), spec.name, spec.initial_name, spec.horizon, tag)
        if key not in self._runs:
            self._runs[key] = run_splitting(spec, epsilon, plan.samples, plan.seed,
                                            plan.output_times, plan.config(),
                                            partition=partition)
        return self._runs[key]




def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, float)
    se = float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(np.mean(x)), se


def _l1_rows(a, b, dx):
    return _sum(np.abs(a - b)) * dx


def _fit_order(eps, values) -> float:
    eps, values = np.asarray(eps, float), np.asarray(values, float)
    ok = values > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[ok]), np.log(values[ok]), 1)[0])


# --------------------------------------------------------------------------


def cauchy_study(plan: ExperimentPlan, cache: RunCache | None = None) -> dict:
    """E sup_t |v^eps - v^{eps/2}|_1 for every rung of the ladder."""
    cache = cache if cache is not None else RunCache()
    rows = []
    for eps in plan.ladder:
        _, ta, _ = cache.get(plan, eps)
        _, tb, _ = cache.get(plan, eps / 2.0)
        dx = ta.grid.dx
        per_time = np.stack([_l1_rows(ta.v[k], tb.v[k], dx) for k in range(len(ta.times))])
        sup = np.max(per_time, axis=0)
        mean, se = _mean_se(sup)
        rows.append({"epsilon": eps, "epsilon_half": eps / 2.0, "mean_sup": mean, "se": se,
                     "per_time": [float(np.mean(r)) for r in per_time]})
    order = _fit_order([r["epsilon"] for r in rows], [r["mean_sup"] for r in rows])
    return {"rows": rows, "order": order, "times": [float(t) for t in ta.times]}


def cauchy_gate(study: dict, factor: float = 0.8) -> tuple[bool, list[float]]:
    """Each rung <= factor * previous + 3 combined standard errors, and positive."""
    rows = study["rows"]
    slack = []
    for a, b in zip(rows[:-1], rows[1:]):
        se = np.hypot(a["se"], b["se"])
        slack.append(factor * a["mean_sup"] + 3 * se - b["mean_sup"])
    ok = all(s >= 0 for s in slack) and all(r["mean_sup"] > 0 for r in rows)
    return ok, slack


def vtilde_coupling_check(plan: ExperimentPlan, cache: RunCache | None = None) -> dict:
    """E |v(t) - vtilde(t)|_1 per output time; fit C sqrt(eps) + eps over the ladder."""
    cache = cache if cache is not None else RunCache()
    rows = []
    for eps in plan.ladder:
        _, tr, _ = cache.get(plan, eps)
        dx = tr.grid.dx
        per_time = [float(np.mean(_l1_rows(tr.v[k], tr.vtilde[k], dx)))
                    for k in range(len(tr.times))]
        rows.append({"epsilon": eps, "max_over_t": max(per_time), "per_time": per_time})
    eps = np.array([r["epsilon"] for r in rows])
    vals = np.array([r["max_over_t"] for r in rows])
    C = float(np.max((vals - eps) / np.sqrt(eps))) if len(rows) else 0.0
    return {"rows": rows, "C": max(C, 0.0), "order": _fit_order(eps, vals),
            "holds": bool(np.all(vals <= max(C, 0.0) * np.sqrt(eps) + eps + 1e-12))}


def increment_study(plan: ExperimentPlan, cache: RunCache | None = None) -> dict:
    """Within-cell sup of E|vtilde(t)-vtilde(s)|_1 and E|v(t)-v(s)|_1 per epsilon."""
    cache = cache if cache is not None else RunCache()
    rows = []
    for eps in plan.ladder:
        part, _, diag = cache.get(plan, eps)
        rows.append({"epsilon": eps, "vtilde_pair_max": diag.vtilde_pair_max,
                     "v_pair_max": diag.v_pair_max, "cells": part.n_cells,
                     "max_width": float(np.max(part.widths))})
    eps = [r["epsilon"] for r in rows]
    v = [r["v_pair_max"] for r in rows]
    order = _fit_order(eps, v)
    C = max(val / np.sqrt(e) for e, val in zip(eps, v)) / plan.spec().horizon
    return {"rows": rows, "v_order": order, "C": float(C)}


def bounds_study(plan: ExperimentPlan, cache: RunCache | None = None,
                 powers=(2.0, 4.0)) -> dict:
    """E sup_t |v|_p^p, E sup_t |vtilde|_p^p and kinetic-measure masses per epsilon."""
    cache = cache if cache is not None else RunCache()
    spec = plan.spec()
    rows = []
    for eps in plan.ladder:
        _, tr, diag = cache.get(plan, eps)
        dx = tr.grid.dx
        row = {"epsilon": eps}
        for p in powers:
            for name, arr in (("v", tr.v), ("vtilde", tr.vtilde)):
                sup = np.max(np.stack([lp_power_values(arr[k], p, dx)
                                       for k in range(len(tr.times))]), axis=0)
                row[f"{name}_sup_p{int(p)}"], row[f"{name}_sup_p{int(p)}_se"] = _mean_se(sup)
                means = [float(np.mean(lp_power_values(arr[k], p, dx)))
                         for k in range(len(tr.times))]
                bound = [moment_bound(spec.noise, p, float(lp_power_values(
                    diag.accumulators.u0, p, dx)), t) for t in tr.times]
                row[f"{name}_mean_p{int(p)}_slack"] = float(np.min(np.array(bound) - means))
        for p in (0.0, 2.0):
            rep = kinetic_measure_mass(diag, p)
            row[f"m_p{int(p)}"], row[f"m_p{int(p)}_se"] = rep.mean, rep.se
            row[f"m_p{int(p)}_bound"] = rep.bound
            if p == 0.0:
                sq = rep.per_sample ** 2
                row["m_sq"], row["m_sq_se"] = _mean_se(sq)
        led = dissipation_ledger(diag)
        row["n1"] = led.n1_mass
        row["m_pathwise"] = led.m_pathwise
        row["ledger_slack"] = led.inequality_slack()
        row["clamps"] = led.clamp_count
        rows.append(row)
    return {"rows": rows}


def no_upward_trend(rows, key: str, se_key: str) -> tuple[bool, float]:
    """Every rung stays below the first rung + 3 combined standard errors."""
    base, base_se = rows[0][key], rows[0][se_key]
    slack = min(base + 3 * np.hypot(base_se, r[se_key]) - r[key] for r in rows)
    return bool(slack >= 0), float(slack)


def contraction_study(plan: ExperimentPlan, second_initial: str,
                      cache: RunCache | None = None) -> dict:
    """E |v1(t) - v2(t)|_1 for two initial data on a shared partition and noise."""
    cache = cache if cache is not None else RunCache()
    rows = []
    for eps in plan.ladder:
        spec1 = plan.spec()
        spec2 = spec1.with_initial(INITIAL_CONDITIONS[second_initial], second_initial)
        part, t1, d1 = cache.get(plan, eps, spec1)
        _, t2, d2 = cache.get(plan, eps, spec2, partition=part, tag="shared")
        dx = t1.grid.dx
        init = float(np.sum(np.abs(d1.accumulators.u0 - d2.accumulators.u0)) * dx)
        means, ses = [], []
        for k in range(len(t1.times)):
            m, s = _mean_se(_l1_rows(t1.v[k], t2.v[k], dx))
            means.append(m)
            ses.append(s)
        excess = [m - init for m in means]
        rows.append({"epsilon": eps, "initial": init, "per_time": means, "se": ses,
                     "max_excess": float(max(excess)),
                     "max_excess_over_se": float(max((m - init) / s if s > 0 else
                                                     (np.inf if m - init > 1e-12 else 0.0)
                                                     for m, s in zip(means, ses)))})
    return {"rows": rows, "times": [float(t) for t in t1.times]}


def doubling_study(plan: ExperimentPlan, etas=(0.2, 0.1, 0.05), theta: float = 1.5,
                   gamma: float = 0.75, time: float | None = None,
                   cache: RunCache | None = None) -> dict:
    """Doubling functional of (eps, eps/2) pairs along a joint (eta, eps) ladder."""
    cache = cache if cache is not None else RunCache()
    if len(etas) != len(plan.ladder):
        raise ValueError("eta ladder and epsilon ladder must have equal length")
    spec = plan.spec()
    reports: list[DoublingReport] = []
    per_sample = []
    for eta, eps in zip(etas, plan.ladder):
        _, ta, _ = cache.get(plan, eps)
        _, tb, _ = cache.get(plan, eps / 2.0)
        k = (len(ta.times) // 2 if time is None
             else int(np.argmin(np.abs(ta.times - time))))
        first = (ta.v[k], ta.vtilde[k], ta.v_left[k])
        second = (tb.v[k], tb.vtilde[k], tb.v_left[k])
        delta = eta ** theta
        rep = doubling_functional(first, second, eta, delta, epsilon=eps,
                                  epsilon_prime=eps / 2.0, gamma=gamma,
                                  modulus=spec.noise.modulus)
        reports.append(rep)
        per_sample.append([doubling_functional(tuple(f[i:i + 1] for f in first),
                                               tuple(f[i:i + 1] for f in second),
                                               eta, delta).pair_value
                           for i in range(ta.v.shape[1])])
        # nonnegativity must hold for every run, so check each sample pair too
    table = doubling_rate_table(reports, theta, gamma)
    ses = [float(np.std(ps, ddof=1) / np.sqrt(len(ps))) for ps in per_sample]
    for row, se, ps in zip(table.rows, ses, per_sample):
        row["pair_value_se"] = se
        row["min_sample_pair_value"] = float(np.min(ps))
    return {"table": table, "time": float(ta.times[k])}
