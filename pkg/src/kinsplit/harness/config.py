"""INI run configuration.

A config file has these sections (all optional)::

    [problem]    base = <builtin name>, name, initial, horizon
    [flux]       name = burgers | linear | cubic | zero, plus numeric params
    [diffusion]  name = zero | constant | power, plus numeric params
    [noise]      modes = linear 0.5 1; sin-sat 0.25 2
    [det]        flux, cfl_adv, cfl_diff, xi_quadrature
    [sde]        substep (fraction of epsilon), modes (truncation K)
    [split]      epsilon (value or comma ladder), samples, search_resolution
                 (fraction of epsilon), output_times, cells
    [run]        seed, fine_step

Sections [flux], [diffusion] and [noise] replace the corresponding part of
the base problem.  Keys may also be written flat before the first section
header, e.g. ``det.cfl_adv = 0.5`` or ``seed = 7``.  Comments start with
``#``; ``;`` separates noise modes.
"""
from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..det_solver import DetScheme
from ..errors import ConfigError
from ..model import INITIAL_CONDITIONS, get_problem, problem_from_description
from .studies import ExperimentPlan

DEFAULT_SEED = 20240601

_KEYS = {
    "problem": {"base", "name", "initial", "horizon"},
    "flux": None,
    "diffusion": None,
    "noise": {"modes"},
    "det": {"flux", "cfl_adv", "cfl_diff", "xi_quadrature"},
    "sde": {"substep", "modes"},
    "split": {"epsilon", "samples", "search_resolution", "output_times", "cells"},
    "run": {"seed", "fine_step"},
}


@dataclass(frozen=True)
class RunConfig:
    definition: str
    det: DetScheme = field(default_factory=DetScheme)
    ladder: tuple[float, ...] = (0.1,)
    samples: int = 64
    sde_fraction: float = 1.0 / 8.0
    search_fraction: float = 1.0 / 16.0
    output_times: tuple[float, ...] | None = None
    cells: int = 64
    seed: int = DEFAULT_SEED
    fine_step: float | None = None

    @property
    def problem(self) -> dict:
        return json.loads(self.definition)

    @property
    def name(self) -> str:
        return self.problem["name"]

    def plan(self, **overrides) -> ExperimentPlan:
        horizon = float(self.problem["horizon"])
        times = self.output_times or tuple(
            float(t) for t in np.round(np.linspace(0.0, horizon, 11), 12))
        kw = dict(problem=self.name, definition=self.definition, ladder=self.ladder,
                  grids=(self.cells,), samples=self.samples, seed=self.seed,
                  output_times=times, det=self.det, search_fraction=self.search_fraction,
                  sde_fraction=self.sde_fraction, fine=self.fine_step)
        kw.update(overrides)
        return ExperimentPlan(**kw)

    def to_sections(self) -> dict[str, dict[str, str]]:
        """Every setting as strings; parse_sections inverts this exactly."""
        prob = self.problem
        flux = dict(prob["flux"])
        diff = dict(prob["diffusion"])
        modes = "; ".join(f"{m['shape']} {m['amplitude']!r} {m['wavenumber']}"
                          for m in prob["noise"] if m["shape"] != "zero")
        out = {
            "problem": {"name": prob["name"], "initial": prob["initial"],
                        "horizon": repr(float(prob["horizon"]))},
            "flux": {k: (v if k == "name" else repr(v)) for k, v in flux.items()},
            "diffusion": {k: (v if k == "name" else repr(v)) for k, v in diff.items()},
            "noise": {"modes": modes},
            "det": {"flux": self.det.flux, "cfl_adv": repr(self.det.cfl_adv),
                    "cfl_diff": repr(self.det.cfl_diff)},
            "sde": {"substep": repr(self.sde_fraction)},
            "split": {"epsilon": ", ".join(repr(e) for e in self.ladder),
                      "samples": str(self.samples),
                      "search_resolution": repr(self.search_fraction),
                      "cells": str(self.cells)},
            "run": {"seed": str(self.seed)},
        }
        if self.det.xi_quadrature is not None:
            out["det"]["xi_quadrature"] = repr(self.det.xi_quadrature)
        if self.output_times is not None:
            out["split"]["output_times"] = ", ".join(repr(t) for t in self.output_times)
        if self.fine_step is not None:
            out["run"]["fine_step"] = repr(self.fine_step)
        return out

    def to_ini(self) -> str:
        lines = []
        for sec, kv in self.to_sections().items():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in kv.items())
            lines.append("")
        return "\n".join(lines)


_TOP = "__top__"


def _line_of(text: str | None, section: str, key: str | None) -> int | None:
    """Line of ``key`` in ``[section]``, or of a flat ``section.key`` entry."""
    if not text:
        return None
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is None:
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
        if re.match(rf"{re.escape(section)}\.{re.escape(key)}\s*[=:]", line):
            return no
    return None


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, text: str | None):
        self.p = parser
        self.text = text

    def error(self, msg, section, key=None):
        return ConfigError(msg, key=f"{section}.{key}" if key else section,
                           line=_line_of(self.text, section, key))

    def get(self, section, key, default=None):
        if self.p.has_option(section, key):
            return self.p.get(section, key).strip()
        return default

    def number(self, section, key, default, kind=float):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            value = kind(raw)
        except ValueError:
            raise self.error(f"expected a number, got {raw!r}", section, key) from None
        if kind is float and not np.isfinite(value):
            raise self.error("value must be finite", section, key)
        return value

    def numbers(self, section, key):
        raw = self.get(section, key)
        if raw is None:
            return None
        try:
            vals = tuple(float(x) for x in raw.replace(",", " ").split())
        except ValueError:
            raise self.error(f"expected a list of numbers, got {raw!r}", section, key) from None
        if not vals:
            raise self.error("empty list", section, key)
        return vals

    def params(self, section):
        out = {}
        for key in self.p.options(section):
            if key == "name":
                continue
            out[key] = self.number(section, key, None)
        return out


def _split_dotted(parser: configparser.ConfigParser, text: str | None) -> None:
    """Move flat ``sec.key = v`` entries into ``[sec]``; bare ``seed`` goes to [run]."""
    for sec in list(parser.sections()):
        for key in list(parser.options(sec)):
            if "." in key:
                target, _, sub = key.partition(".")
            elif sec == _TOP and key == "seed":
                target, sub = "run", "seed"
            elif sec == _TOP:
                raise ConfigError("unknown top-level key", key=key,
                                  line=_line_of(text, _TOP, key))
            else:
                continue
            if not parser.has_section(target):
                parser.add_section(target)
            parser.set(target, sub, parser.get(sec, key))
            parser.remove_option(sec, key)
    if parser.has_section(_TOP):
        parser.remove_section(_TOP)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        # keys before the first header belong to a synthetic top section
        parser.read_string(f"[{_TOP}]\n" + text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError("duplicate key", key=f"{e.section}.{e.option}",
                          line=e.lineno - 1) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError("duplicate section", key=e.section, line=e.lineno - 1) from None
    except configparser.ParsingError as e:
        line = e.errors[0][0] - 1 if e.errors else None
        raise ConfigError("malformed line", line=line) from None
    return _build(parser, text)


def parse_sections(sections: dict) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(sections)
    return _build(parser, None)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {str(path)!r}: {e.strerror}") from None
    return parse_config(text)


def _build(parser: configparser.ConfigParser, text: str | None) -> RunConfig:
    _split_dotted(parser, text)
    r = _Reader(parser, text)
    for sec in parser.sections():
        if sec not in _KEYS:
            raise r.error(f"unknown section [{sec}]", sec)
        allowed = _KEYS[sec]
        if allowed is not None:
            for key in parser.options(sec):
                if key not in allowed:
                    raise r.error("unknown key", sec, key)

    base_name = r.get("problem", "base")
    try:
        desc = (get_problem(base_name).describe() if base_name else
                {"name": "custom", "flux": {"name": "zero"},
                 "diffusion": {"name": "zero"}, "noise": [], "initial": "sine",
                 "horizon": 1.0, "eval_range": [-8.0, 8.0]})
    except KeyError as e:
        raise r.error(str(e.args[0]), "problem", "base") from None
    desc["name"] = r.get("problem", "name", desc["name"])
    initial = r.get("problem", "initial", desc["initial"])
    if initial not in INITIAL_CONDITIONS:
        raise r.error(f"unknown initial condition {initial!r}", "problem", "initial")
    desc["initial"] = initial
    desc["horizon"] = r.number("problem", "horizon", float(desc["horizon"]))
    if not desc["horizon"] > 0:
        raise r.error("horizon must be positive", "problem", "horizon")
    for part in ("flux", "diffusion"):
        if parser.has_section(part):
            name = r.get(part, "name")
            if name is None:
                raise r.error("missing name", part, "name")
            desc[part] = {"name": name, **r.params(part)}
    if parser.has_section("noise"):
        desc["noise"] = []
        raw = r.get("noise", "modes", "")
        for chunk in filter(None, (c.strip() for c in raw.split(";"))):
            bits = chunk.split()
            try:
                shape, lam, k = bits[0], float(bits[1]), int(bits[2])
                if len(bits) != 3:
                    raise ValueError
            except (ValueError, IndexError):
                raise r.error(f"bad noise mode {chunk!r}; expected 'shape amplitude "
                              "wavenumber'", "noise", "modes") from None
            desc["noise"].append({"shape": shape, "amplitude": lam, "wavenumber": k})
    n_modes = r.number("sde", "modes", None, int)
    if n_modes is not None:
        if n_modes < 1:
            raise r.error("need at least one mode", "sde", "modes")
        desc["noise"] = desc["noise"][:n_modes]
    try:
        spec = problem_from_description(desc)
    except (KeyError, ValueError, TypeError) as e:
        msg = e.args[0] if e.args else str(e)
        raise r.error(f"invalid problem: {msg}", "problem") from None
    definition = json.dumps(spec.describe(), sort_keys=True)

    try:
        det = DetScheme(flux=r.get("det", "flux", "engquist-osher"),
                        cfl_adv=r.number("det", "cfl_adv", 0.9),
                        cfl_diff=r.number("det", "cfl_diff", 0.45),
                        xi_quadrature=r.number("det", "xi_quadrature", None))
    except ValueError as e:
        raise r.error(str(e), "det") from None

    ladder = r.numbers("split", "epsilon") or (0.1,)
    if any(e <= 0 for e in ladder):
        raise r.error("epsilon must be positive", "split", "epsilon")
    if any(b >= a for a, b in zip(ladder[:-1], ladder[1:])):
        raise r.error("epsilon ladder must be strictly decreasing", "split", "epsilon")
    samples = r.number("split", "samples", 64, int)
    if samples < 1:
        raise r.error("samples must be >= 1", "split", "samples")
    cells = r.number("split", "cells", 64, int)
    if cells < 2:
        raise r.error("cells must be >= 2", "split", "cells")
    search = r.number("split", "search_resolution", 1.0 / 16.0)
    substep = r.number("sde", "substep", 1.0 / 8.0)
    for sec, key, v in (("split", "search_resolution", search), ("sde", "substep", substep)):
        if not 0 < v <= 1:
            raise r.error("must be a fraction of epsilon in (0, 1]", sec, key)
    times = r.numbers("split", "output_times")
    if times is not None and (min(times) < 0 or max(times) > spec.horizon):
        raise r.error("output times must lie in [0, horizon]", "split", "output_times")
    fine = r.number("run", "fine_step", None)
    if fine is not None and not fine > 0:
        raise r.error("fine_step must be positive", "run", "fine_step")
    return RunConfig(definition=definition, det=det, ladder=ladder, samples=samples,
                     sde_fraction=substep, search_fraction=search,
                     output_times=times, cells=cells,
                     seed=r.number("run", "seed", DEFAULT_SEED, int), fine_step=fine)


def builtin_config(problem: str, **overrides) -> RunConfig:
    """RunConfig for a builtin problem with keyword overrides."""
    cfg = RunConfig(definition=json.dumps(get_problem(problem).describe(), sort_keys=True))
    return RunConfig(**{**cfg.__dict__, **{k: v for k, v in overrides.items()
                                           if v is not None}})
