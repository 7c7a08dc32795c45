"""Command line entry point.

    kinsplit validate    --problem NAME | --config FILE
    kinsplit run         --epsilon 0.1 --samples 64
    kinsplit cauchy      --ladder 0.2,0.1,0.05
    kinsplit contraction --ladder 0.2,0.1 --second-initial cosine
    kinsplit doubling    --ladder 0.2,0.1,0.05 [--etas ...] [--theta 1.5] [--gamma 0.75]
    kinsplit report      [--only 1,5,10]

Every command writes ``manifest.json``, ``tables/*.csv`` and ``fields/*.csv``
under ``--out``.  ``--manifest PATH`` replays a previous command from its
manifest (any ``--workers`` value gives the same CSV bytes).

Exit codes: 0 success, 2 invalid input or failed validation, 1 runtime error
or failed acceptance criteria.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from ..errors import ConfigError, KinsplitError
from ..kinetic import dissipation_ledger, kinetic_measure_mass
from ..model import INITIAL_CONDITIONS, validate_hypotheses
from .config import RunConfig, builtin_config, load_config, parse_sections
from .output import RunWriter, eps_key, eps_tag, read_manifest, versions
from .studies import (RunCache, cauchy_study, contraction_study, doubling_study,
                      vtilde_coupling_check)

COMMANDS = ("validate", "run", "cauchy", "contraction", "doubling", "report")


class InputError(Exception):
    """Bad command-line input; maps to exit code 2."""


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinsplit", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--problem", help="builtin problem name")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--manifest", help="replay the command recorded in this manifest")
        p.add_argument("--out", help="output directory (default runs/<command>-<problem>)")
        p.add_argument("--workers", type=int, default=1, help="threads per ensemble")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--cells", type=int)
        p.add_argument("--quiet", action="store_true")
        if name in ("run", "cauchy", "contraction", "doubling"):
            p.add_argument("--epsilon", "--ladder", dest="ladder", type=_floats,
                           help="epsilon value or comma-separated ladder")
        if name == "contraction":
            p.add_argument("--second-initial", default="cosine",
                           choices=sorted(INITIAL_CONDITIONS))
        if name == "doubling":
            p.add_argument("--etas", type=_floats)
            p.add_argument("--theta", type=float, default=1.5)
            p.add_argument("--gamma", type=float, default=0.75)
            p.add_argument("--time", type=float)
        if name == "report":
            p.add_argument("--only", type=lambda s: tuple(int(x) for x in s.split(",")))
    return parser


def _resolve(args) -> tuple[RunConfig, dict]:
    """RunConfig plus command-specific options, from a manifest or the flags."""
    if args.manifest:
        man = read_manifest(args.manifest)
        if man.get("command") != args.command:
            raise InputError(f"manifest records command {man.get('command')!r}, "
                             f"not {args.command!r}")
        return parse_sections(man["config"]), dict(man.get("options", {}))
    if args.config and args.problem:
        raise InputError("give either --problem or --config, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        try:
            cfg = builtin_config(args.problem or "degenerate-transport")
        except KeyError as e:
            raise InputError(e.args[0]) from None
    over = {"seed": args.seed, "samples": args.samples, "cells": args.cells,
            "ladder": getattr(args, "ladder", None)}
    cfg = RunConfig(**{**cfg.__dict__, **{k: v for k, v in over.items() if v is not None}})
    opts = {}
    if args.command == "contraction":
        opts["second_initial"] = args.second_initial
    if args.command == "doubling":
        opts.update(etas=list(args.etas or cfg.ladder), theta=args.theta, gamma=args.gamma,
                    time=args.time)
    if args.command == "report":
        opts["only"] = list(args.only) if args.only else None
    return cfg, opts


def _validate_inputs(cfg: RunConfig, command: str):
    if command in ("cauchy",) and len(cfg.ladder) < 2:
        raise InputError("cauchy needs a ladder with at least two epsilons")
    if any(e <= 0 for e in cfg.ladder):
        raise InputError("epsilon must be positive")
    if any(b >= a for a, b in zip(cfg.ladder[:-1], cfg.ladder[1:])):
        raise InputError("epsilon ladder must be strictly decreasing")


# ---------------------------------------------------------------------------
# commands


def cmd_validate(cfg, opts, writer, workers, log):
    rep = validate_hypotheses(cfg.plan().spec())
    writer.table("validation", ["hypothesis", "check", "worst_slack", "tolerance", "passed"],
                 [[c.hypothesis, c.name, c.worst_slack, c.tolerance, c.passed]
                  for c in rep.checks])
    log(f"{rep.problem}: {'pass' if rep.passed else 'FAIL'} "
        f"({sum(c.passed for c in rep.checks)}/{len(rep.checks)} checks)")
    return {"validation": rep.to_dict()}, (0 if rep.passed else 2)


def _write_run(writer, tag, part, tr, diag):
    writer.table(f"partition_{tag}", ["n", "t_n", "width", "ended_by", "d_end"],
                 [[i, t, w, c.ended_by, c.d_end] for i, (t, w, c) in
                  enumerate(zip(part.times[:-1], part.widths, diag.cells))])
    writer.table(f"cells_{tag}",
                 ["n", "width", "ended_by", "d_end", "vtilde_pair_max", "v_pair_max",
                  "n1", "m_scheme", "det_drop"],
                 [[i, c.width, c.ended_by, c.d_end, c.vtilde_pair_max, c.v_pair_max,
                   c.n1, c.m_scheme, c.det_drop] for i, c in enumerate(diag.cells)])
    dx = tr.grid.dx
    rows = []
    for k, t in enumerate(tr.times):
        def ms(x):
            return float(np.mean(x)), (float(np.std(x, ddof=1) / np.sqrt(len(x)))
                                       if len(x) > 1 else 0.0)
        l1 = np.sum(np.abs(tr.v[k]), axis=-1) * dx
        e2 = np.sum(tr.v[k] ** 2, axis=-1) * dx
        et2 = np.sum(tr.vtilde[k] ** 2, axis=-1) * dx
        gap = np.sum(np.abs(tr.v[k] - tr.vtilde[k]), axis=-1) * dx
        rows.append([t, *ms(l1), *ms(e2), *ms(et2), *ms(gap)])
    writer.table(f"moments_{tag}", ["t", "v_l1", "v_l1_se", "v_l2sq", "v_l2sq_se",
                                    "vtilde_l2sq", "vtilde_l2sq_se", "v_vtilde_l1",
                                    "v_vtilde_l1_se"], rows)
    acc = diag.accumulators
    m0 = kinetic_measure_mass(diag, 0.0)
    m0p = kinetic_measure_mass(diag, 0.0, pathwise=True)
    m2 = kinetic_measure_mass(diag, 2.0)
    writer.table(f"ledger_{tag}", ["sample", "n1", "m_p0", "m_p0_pathwise", "m_p2",
                                   "time_defect", "m_scheme"],
                 [[i, acc.n1[i], m0.per_sample[i], m0p.per_sample[i], m2.per_sample[i],
                   acc.time_defect[i], acc.m_scheme[i]] for i in range(len(acc.n1))])
    for k, t in enumerate(tr.times):
        meta = {"epsilon": part.epsilon, "t": float(t)}
        writer.field(f"{tag}_v_mean_t{k:02d}", tr.grid, np.mean(tr.v[k], axis=0), meta)
        writer.field(f"{tag}_vtilde_mean_t{k:02d}", tr.grid, np.mean(tr.vtilde[k], axis=0), meta)
        writer.field(f"{tag}_v_sample0_t{k:02d}", tr.grid, tr.v[k][0], meta)
    led = dissipation_ledger(diag)
    return {"n_cells": part.n_cells, "ledger": led.to_dict(),
            "ledger_slack": led.inequality_slack(), "m_p0": m0.mean, "m_p0_se": m0.se,
            "m_p2": m2.mean, "m_p0_bound": m0.bound, "m_p2_bound": m2.bound,
            "vtilde_pair_max": diag.vtilde_pair_max, "v_pair_max": diag.v_pair_max}


def cmd_run(cfg, opts, writer, workers, log):
    plan = cfg.plan(workers=workers)
    cache = RunCache()
    results, partitions = {}, {}
    for eps in cfg.ladder:
        part, tr, diag = cache.get(plan, eps)
        tag = eps_tag(eps)
        partitions[eps_key(eps)] = part.to_dict()
        results[eps_key(eps)] = _write_run(writer, tag, part, tr, diag)
        log(f"eps={eps_key(eps)}: {part.n_cells} cells, ledger slack "
            f"{results[eps_key(eps)]['ledger_slack']:.3g}")
    return {"results": results, "partitions": partitions}, 0


def _partitions(cache):
    return {f"{key[-4]}|{key[-3]}|{eps_key(key[-5])}|{key[-1] or 'main'}": part.to_dict()
            for key, (part, _, _) in cache}


def cmd_cauchy(cfg, opts, writer, workers, log):
    plan = cfg.plan(workers=workers)
    cache = RunCache()
    study = cauchy_study(plan, cache)
    times = study["times"]
    writer.table("cauchy", ["epsilon", "epsilon_half", "mean_sup", "se"],
                 [[r["epsilon"], r["epsilon_half"], r["mean_sup"], r["se"]]
                  for r in study["rows"]])
    writer.table("cauchy_per_time", ["t"] + [f"eps{eps_key(r['epsilon'])}" for r in study["rows"]],
                 [[t] + [r["per_time"][k] for r in study["rows"]] for k, t in enumerate(times)])
    coup = vtilde_coupling_check(plan, cache)
    writer.table("vtilde_coupling", ["epsilon", "max_over_t"],
                 [[r["epsilon"], r["max_over_t"]] for r in coup["rows"]])
    for r in study["rows"]:
        log(f"eps={eps_key(r['epsilon'])}: E sup |v - v_half|_1 = {r['mean_sup']:.4g} "
            f"+- {r['se']:.2g}")
    log(f"fitted order {study['order']:.3f}")
    return {"results": {"order": study["order"], "rows": study["rows"],
                        "vtilde_coupling": {k: coup[k] for k in ("C", "order", "holds")}},
            "partitions": _partitions(cache)}, 0


def cmd_contraction(cfg, opts, writer, workers, log):
    plan = cfg.plan(workers=workers)
    cache = RunCache()
    study = contraction_study(plan, opts["second_initial"], cache)
    writer.table("contraction", ["epsilon", "initial", "max_excess", "max_excess_over_se"],
                 [[r["epsilon"], r["initial"], r["max_excess"], r["max_excess_over_se"]]
                  for r in study["rows"]])
    writer.table("contraction_per_time",
                 ["t"] + [h for r in study["rows"] for h in
                          (f"eps{eps_key(r['epsilon'])}", f"eps{eps_key(r['epsilon'])}_se")],
                 [[t] + [x for r in study["rows"] for x in (r["per_time"][k], r["se"][k])]
                  for k, t in enumerate(study["times"])])
    for r in study["rows"]:
        log(f"eps={eps_key(r['epsilon'])}: initial {r['initial']:.4g}, max excess "
            f"{r['max_excess']:.3g}")
    return {"results": study, "partitions": _partitions(cache)}, 0


def cmd_doubling(cfg, opts, writer, workers, log):
    plan = cfg.plan(workers=workers)
    cache = RunCache()
    etas = tuple(opts["etas"])
    res = doubling_study(plan, etas=etas, theta=opts["theta"], gamma=opts["gamma"],
                         time=opts.get("time"), cache=cache)
    table = res["table"]
    writer.dict_table("doubling", table.rows)
    for r in table.rows:
        log(f"eta={eps_key(r['eta'])}: value {r['pair_value']:.4g} +- {r['pair_value_se']:.2g}")
    return {"results": {"time": res["time"], "slope": table.slope,
                        "theory_exponent": table.theory_exponent, "rows": table.rows},
            "partitions": _partitions(cache)}, 0


def cmd_report(cfg, opts, writer, workers, log):
    from .acceptance import AcceptanceSuite
    suite = AcceptanceSuite(workers=workers, log=log, work_dir=writer.root)
    results = suite.run(opts.get("only"))
    writer.table("acceptance", ["criterion", "title", "passed", "summary"],
                 [[r.number, r.title, r.passed, r.summary] for r in results])
    n_pass = sum(r.passed for r in results)
    log(f"{n_pass}/{len(results)} criteria pass")
    return {"results": {str(r.number): {"title": r.title, "passed": r.passed,
                                        "summary": r.summary, "measured": r.measured,
                                        "seconds": r.seconds, "reran": r.reran}
                        for r in results},
            "partitions": _partitions(suite.cache)}, (0 if n_pass == len(results) else 1)


HANDLERS = {"validate": cmd_validate, "run": cmd_run, "cauchy": cmd_cauchy,
            "contraction": cmd_contraction, "doubling": cmd_doubling, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    log = (lambda s: None) if args.quiet else (lambda s: print(s, flush=True))
    try:
        if args.workers < 1:
            raise InputError("--workers must be >= 1")
        cfg, opts = _resolve(args)
        _validate_inputs(cfg, args.command)
        out = Path(args.out or f"runs/{args.command}-{cfg.name}")
        writer = RunWriter(out)
        t0 = time.perf_counter()
        payload, code = HANDLERS[args.command](cfg, opts, writer, args.workers, log)
        manifest = {"command": args.command, "config": cfg.to_sections(), "options": opts,
                    "problem": cfg.problem, "seed": cfg.seed, "workers": args.workers,
                    "wall_clock_s": time.perf_counter() - t0, "versions": versions(),
                    "exit_code": code, **payload}
        if args.manifest:
            manifest["replayed_from"] = str(args.manifest)
        writer.manifest(manifest)
        log(f"wrote {out}")
        return code
    except (ConfigError, InputError) as e:
        print(f"kinsplit: error: {e}", file=sys.stderr)
        return 2
    except (KinsplitError, OSError, ValueError, KeyError) as e:
        print(f"kinsplit: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
