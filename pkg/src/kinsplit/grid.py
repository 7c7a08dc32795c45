"""Periodic unit torus, cell-averaged fields, discrete norms and mollifiers."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GridMismatch, InvalidExponent, NonPositiveWidth

# Gauss-Legendre nodes used for cell averages of initial data
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class TorusGrid:
    N: int
    d: int = 1

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("TorusGrid needs N >= 2")
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or 2 supported")

    @property
    def dx(self) -> float:
        return 1.0 / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dx

    def cell_average(self, fn) -> "Field":
        """Cell averages of fn by 6-point Gauss-Legendre quadrature per cell."""
        if self.d != 1:
            raise NotImplementedError("cell_average is 1-D only")
        left = np.arange(self.N) * self.dx
        pts = left[:, None] + 0.5 * self.dx * (_GL_NODES[None, :] + 1.0)
        vals = np.asarray(fn(pts), float)
        return Field(self, 0.5 * vals @ _GL_WEIGHTS)


@dataclass(frozen=True)
class Field:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("Field values must be finite")
        object.__setattr__(self, "values", vals)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def _sum(a: np.ndarray, axis=-1) -> np.ndarray:
    # np.add.reduce along a contiguous axis is pairwise and does not depend on
    # how many rows are reduced together
    return np.add.reduce(a, axis=axis)


def lp_norm_values(values: np.ndarray, p: float, dx: float) -> np.ndarray:
    """L^p norm along the last axis of an array of cell averages (1-D grids)."""
    if p < 1:
        raise InvalidExponent(f"p must be >= 1, got {p}")
    a = np.abs(values)
    if np.isinf(p):
        return np.max(a, axis=-1)
    if p == 1:
        return _sum(a) * dx
    if p == 2:
        return np.sqrt(_sum(a * a) * dx)
    return (_sum(a ** p) * dx) ** (1.0 / p)


def lp_power_values(values: np.ndarray, p: float, dx: float) -> np.ndarray:
    """sum |u_i|^p dx, i.e. the p-th power of the L^p norm (p >= 0, |u|^0 = 1)."""
    a = np.abs(values)
    if p == 0:
        return _sum(np.ones_like(a)) * dx
    return _sum(a ** p) * dx


def lp_norm(f: Field, p: float) -> float:
    """(sum |f_i|^p dx^d)^(1/p) on the unit torus; max |f_i| for p = inf."""
    if p < 1:
        raise InvalidExponent(f"p must be >= 1, got {p}")
    flat = f.values.reshape(-1)
    return float(lp_norm_values(flat, p, f.grid.cell_volume))


def l1_distance(f: Field, g: Field) -> float:
    if f.grid != g.grid:
        raise GridMismatch(f"{f.grid} vs {g.grid}")
    return float(_sum(np.abs(f.values - g.values).reshape(-1)) * f.grid.cell_volume)


# --------------------------------------------------------------------------
# mollifiers


def _bump(s):
    s = np.asarray(s, float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


# cumulative tables on [-1, 1] for the unit bump: mass and first moment,
# 12-point Gauss-Legendre per table interval
_TABLE_N = 4096
_TABLE_S = np.linspace(-1.0, 1.0, _TABLE_N + 1)


def _cumulative_tables():
    nodes, weights = np.polynomial.legendre.leggauss(12)
    a = _TABLE_S[:-1]
    h = np.diff(_TABLE_S)
    pts = a[:, None] + 0.5 * h[:, None] * (nodes[None, :] + 1.0)
    w = 0.5 * h[:, None] * weights[None, :]
    prof = _bump(pts)
    mass = np.concatenate([[0.0], np.cumsum(np.sum(prof * w, axis=1))])
    mom = np.concatenate([[0.0], np.cumsum(np.sum(pts * prof * w, axis=1))])
    total = mass[-1]
    return total, mass / total, mom / total


_BUMP_MASS, _CDF_TABLE, _MOM_TABLE = _cumulative_tables()


@dataclass(frozen=True)
class Mollifier:
    """Even bump profile supported in [-width, width] with unit integral.

    ``kind`` is "space" for rho_eta (periodic offsets on the torus) or "value"
    for psi_delta on the real line.
    """

    kind: str
    width: float

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, float)
        if self.kind == "space":
            s = (s + 0.5) % 1.0 - 0.5
        return _bump(s / self.width) / (_BUMP_MASS * self.width)

    @cached_property
    def _cdf_spline(self):
        from scipy.interpolate import CubicHermiteSpline

        s = _TABLE_S
        return CubicHermiteSpline(s, _CDF_TABLE, _bump(s) / _BUMP_MASS)

    @cached_property
    def _mom_spline(self):
        from scipy.interpolate import CubicHermiteSpline

        s = _TABLE_S
        return CubicHermiteSpline(s, _MOM_TABLE, s * _bump(s) / _BUMP_MASS)

    def cdf(self, s) -> np.ndarray:
        """int_{-inf}^{s} profile."""
        z = np.clip(np.asarray(s, float) / self.width, -1.0, 1.0)
        return np.clip(self._cdf_spline(z), 0.0, 1.0)

    def first_moment(self, s) -> np.ndarray:
        """int_{-inf}^{s} t profile(t) dt."""
        z = np.clip(np.asarray(s, float) / self.width, -1.0, 1.0)
        return self.width * self._mom_spline(z)

    def mollified_positive_part(self, z) -> np.ndarray:
        """Lambda(z) = int profile(s) (z - s)^+ ds.

        Equals z for z >= width, 0 for z <= -width, and
        int_0^width s profile(s) ds at z = 0.
        """
        z = np.asarray(z, float)
        out = np.where(z >= self.width, z, 0.0)
        band = np.abs(z) < self.width
        if np.any(band):
            zb = z[band]
            out = out.copy()
            out[band] = zb * self.cdf(zb) - self.first_moment(zb)
        return out

    def cell_weights(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        """Exact integrals of a space mollifier over cell-sized offset windows.

        Returns (offsets, weights) with weights[k] = int over
        [(o_k - 1/2) dx, (o_k + 1/2) dx] of the profile; they sum to one.
        """
        dx = 1.0 / N
        kmax = int(np.ceil(self.width / dx + 0.5))
        offsets = np.arange(-kmax, kmax + 1)
        edges = (offsets - 0.5) * dx
        edges = np.append(edges, (offsets[-1] + 0.5) * dx)
        c = self.cdf(edges)
        w = np.diff(c)
        keep = w > 0
        return offsets[keep], w[keep]


def mollifier_pair(eta: float, delta: float, grid: TorusGrid | None = None
                   ) -> tuple[Mollifier, Mollifier]:
    """Space mollifier rho_eta and value mollifier psi_delta."""
    if not eta > 0 or not delta > 0:
        raise NonPositiveWidth(f"widths must be positive (eta={eta}, delta={delta})")
    if eta > 0.5:
        raise NonPositiveWidth("eta must be <= 1/2 on the unit torus")
    if grid is not None and eta < 2 * grid.dx:
        warnings.warn(f"eta={eta} below two cells ({2 * grid.dx})", stacklevel=2)
    return Mollifier("space", float(eta)), Mollifier("value", float(delta))


# --------------------------------------------------------------------------
# snapshot I/O


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field_csv(path: str | Path, f: Field, meta: dict | None = None) -> Path:
    """Write ``# grid N=<N> d=<d>`` + one value per line, and a JSON sidecar."""
    path = Path(path)
    lines = [f"# grid N={f.grid.N} d={f.grid.d}"]
    lines += [fmt(v) for v in f.values.reshape(-1)]
    path.write_text("\n".join(lines) + "\n")
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta or {}, sort_keys=True, indent=1) + "\n")
    return path


def read_field_csv(path: str | Path) -> tuple[Field, dict]:
    path = Path(path)
    text = path.read_text().splitlines()
    header = text[0]
    if not header.startswith("# grid"):
        raise ValueError(f"{path}: missing grid header")
    parts = dict(tok.split("=") for tok in header[len("# grid"):].split())
    grid = TorusGrid(int(parts["N"]), int(parts["d"]))
    vals = np.array([float(v) for v in text[1:] if v.strip()])
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Field(grid, vals.reshape(grid.shape)), meta
