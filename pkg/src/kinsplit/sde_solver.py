"""Pointwise stochastic flow dv = sum_k g_k(x, v) d beta_k.

Randomness comes from a counter-based generator: the variate with draw index
``j`` of mode ``k`` for sample ``s`` under seed ``seed`` is a pure function of
(seed, s, k, j).  The stream key is

    SeedSequence(entropy=seed, spawn_key=(s, k)).generate_state(2, uint64)

and draw ``j`` uses the two 64-bit words ``2j, 2j+1`` of the Philox4x64
stream, turned into one standard normal by the cosine branch of Box-Muller.
Nothing depends on thread scheduling or on how many variates were drawn
before.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState
from .grid import Field
from .model import NoiseSpec, ProblemSpec

_TWO_NEG53 = 2.0 ** -53


def stream_key(seed: int, sample: int, mode: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(sample), int(mode)))
    return ss.generate_state(2, np.uint64)


def philox_normals(key: np.ndarray, start: int, count: int) -> np.ndarray:
    """Standard normals with draw indices start .. start+count-1."""
    if count <= 0:
        return np.zeros(0)
    first_block = start // 2
    n_blocks = (start + count + 1) // 2 - first_block
    bitgen = np.random.Philox(key=key, counter=np.array([first_block, 0, 0, 0], np.uint64))
    raw = bitgen.random_raw(4 * n_blocks).reshape(-1, 2)
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(float) + 0.5) * _TWO_NEG53
    u2 = ((raw[:, 1] >> np.uint64(11)).astype(float) + 0.5) * _TWO_NEG53
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    off = start - 2 * first_block
    return z[off:off + count]


@dataclass
class RngStream:
    """Per-sample stream; one independent sub-stream per noise mode."""

    seed: int
    sample: int = 0
    cursor: dict = field(default_factory=dict)

    def key(self, mode: int) -> np.ndarray:
        return stream_key(self.seed, self.sample, mode)

    def normals(self, mode: int, start: int, count: int) -> np.ndarray:
        return philox_normals(self.key(mode), start, count)

    def next_normal(self, mode: int) -> float:
        j = self.cursor.get(mode, 0)
        self.cursor[mode] = j + 1
        return float(self.normals(mode, j, 1)[0])


def sample_increments(rng: RngStream, k: int, dt: float) -> float:
    """Brownian increment of mode k over a step of length dt (next draw)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return np.sqrt(dt) * rng.next_normal(k)


@dataclass(frozen=True)
class SdeStepPlan:
    dt_sde: float
    K_modes: int = 1
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if not self.dt_sde > 0:
            raise ValueError("dt_sde must be positive")
        if self.K_modes < 1:
            raise ValueError("K_modes must be >= 1")
        if self.scheme not in ("euler_maruyama", "exact_linear"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def noise_increment(noise: NoiseSpec, x: np.ndarray, v: np.ndarray,
                    dbeta: np.ndarray, n_modes: int | None = None) -> np.ndarray:
    """sum_k g_k(x, v) dbeta_k; ``dbeta`` has shape v.shape[:-1] + (K,)."""
    K = noise.n_modes if n_modes is None else min(n_modes, noise.n_modes)
    out = np.zeros_like(v)
    for k in range(K):
        if noise.modes[k].amplitude == 0.0:
            continue
        out = out + noise.g(k, x, v) * dbeta[..., k, None]
    return out


def exact_linear_factor(noise: NoiseSpec, beta: np.ndarray, t: float) -> np.ndarray:
    """exp(sum_k lam_k beta_k - t sum_k lam_k^2 / 2) for all-linear modes."""
    lam = np.array([m.amplitude if m.shape == "linear" else np.nan for m in noise.modes])
    if np.any(np.isnan(lam)):
        raise ValueError("exact_linear needs every mode to be linear")
    return np.exp(beta @ lam - 0.5 * t * np.sum(lam ** 2))


def _check_finite(v):
    if not np.all(np.isfinite(v)):
        raise NonFiniteState("stochastic step produced non-finite values")
    return v


def sde_step(v: Field, dt: float, plan: SdeStepPlan, spec: ProblemSpec, rng: RngStream
             ) -> Field:
    if dt > plan.dt_sde * (1 + 1e-12):
        raise ValueError("dt exceeds the plan substep")
    K = min(plan.K_modes, spec.noise.n_modes)
    dbeta = np.array([sample_increments(rng, k, dt) for k in range(K)])
    x = v.grid.centers
    if plan.scheme == "exact_linear":
        new = v.values * exact_linear_factor(
            NoiseSpec(spec.noise.modes[:K], 0.0, spec.noise.modulus, 0.0), dbeta, dt)
    else:
        new = v.values + noise_increment(spec.noise, x, v.values, dbeta, K)
    return Field(v.grid, _check_finite(new))


def sde_solve(v: Field, s: float, t: float, plan: SdeStepPlan, spec: ProblemSpec,
              rng: RngStream) -> Field:
    """R(t, s) v by ceil((t-s)/dt_sde) equal substeps."""
    if t < s:
        raise ValueError("need s <= t")
    if t == s:
        return v.copy()
    n = int(np.ceil((t - s) / plan.dt_sde - 1e-12))
    dt = (t - s) / n
    for _ in range(n):
        v = sde_step(v, dt, plan, spec, rng)
    return v


# --------------------------------------------------------------------------
# ensemble Brownian paths on a fine time grid


class BrownianStore:
    """Cumulative Brownian paths W[s, k, i] at times i * h, i = 0..n_fine.

    Every run that shares (seed, sample ids, h) sees the same paths, so runs
    at different epsilon are coupled through common increments.
    """

    def __init__(self, seed: int, samples, n_modes: int, n_fine: int, h: float):
        self.seed = int(seed)
        self.samples = np.asarray(samples, int)
        self.n_modes = int(n_modes)
        self.n_fine = int(n_fine)
        self.h = float(h)
        W = np.zeros((len(self.samples), self.n_modes, self.n_fine + 1))
        root_h = np.sqrt(self.h)
        for r, s in enumerate(self.samples):
            for k in range(self.n_modes):
                W[r, k, 1:] = np.cumsum(root_h * philox_normals(
                    stream_key(self.seed, s, k), 0, self.n_fine))
        self.W = W

    def increment(self, i0: int, i1: int, rows=slice(None)) -> np.ndarray:
        """beta_k(t_i1) - beta_k(t_i0) for each row, shape (M, K)."""
        return self.W[rows, :, i1] - self.W[rows, :, i0]


def em_ensemble(spec: ProblemSpec, v0: np.ndarray, x: np.ndarray, store: BrownianStore,
                i0: int, i1: int, substep: int) -> np.ndarray:
    """Euler-Maruyama from fine index i0 to i1 with substeps of ``substep`` units."""
    v = np.array(v0, float)
    i = i0
    while i < i1:
        j = min(i + substep, i1)
        v = v + noise_increment(spec.noise, x, v, store.increment(i, j))
        i = j
    return _check_finite(v)


def exact_linear_ensemble(spec: ProblemSpec, v0: np.ndarray, store: BrownianStore,
                          i0: int, i1: int) -> np.ndarray:
    beta = store.increment(i0, i1)
    t = (i1 - i0) * store.h
    return v0 * exact_linear_factor(spec.noise, beta, t)[:, None]
