"""Run directory layout: manifest.json, tables/*.csv, fields/*.csv.

Every float goes through ``fmt`` (17 significant digits), rows are written
in a fixed order and nothing time-dependent enters a CSV, so identical
computations give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import platform
from pathlib import Path

import numpy as np

from ..grid import Field, TorusGrid, fmt, write_field_csv


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt(float(x))
    return str(x)


def eps_key(eps: float) -> str:
    """Shortest text that round-trips the float (used in names, not in values)."""
    return repr(float(eps))


def eps_tag(eps: float) -> str:
    return "eps" + eps_key(eps)


class RunWriter:
    """Single collector for everything a command writes."""

    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)
        (self.root / "tables").mkdir(parents=True, exist_ok=True)
        (self.root / "fields").mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def table(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h, "") for h in header]
            w.writerow([_cell(x) for x in row])
        path = self.root / "tables" / f"{name}.csv"
        path.write_text(buf.getvalue())
        self.written.append(f"tables/{name}.csv")
        return path

    def dict_table(self, name: str, rows: list[dict]) -> Path:
        """Scalar columns of a list of dicts; list-valued entries are skipped."""
        header = []
        for row in rows:
            for k, v in row.items():
                if k not in header and not isinstance(v, (list, tuple, dict, np.ndarray)):
                    header.append(k)
        return self.table(name, header, rows)

    def field(self, name: str, grid: TorusGrid, values: np.ndarray, meta: dict) -> Path:
        path = self.root / "fields" / f"{name}.csv"
        write_field_csv(path, Field(grid, np.asarray(values, float)), meta)
        self.written.append(f"fields/{name}.csv")
        return path

    def manifest(self, data: dict) -> Path:
        data = dict(data)
        data["files"] = sorted(self.written)
        path = self.root / "manifest.json"
        path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def versions() -> dict:
    import scipy

    from .. import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kinsplit": __version__}


def read_manifest(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    return json.loads(p.read_text())


def compare_csvs(dir_a: str | Path, dir_b: str | Path) -> list[str]:
    """Relative paths of CSVs that differ or exist on one side only."""
    a, b = Path(dir_a), Path(dir_b)
    names = sorted({str(p.relative_to(a)) for p in a.rglob("*.csv")}
                   | {str(p.relative_to(b)) for p in b.rglob("*.csv")})
    bad = []
    for n in names:
        pa, pb = a / n, b / n
        if not (pa.exists() and pb.exists()) or pa.read_bytes() != pb.read_bytes():
            bad.append(n)
    return bad
