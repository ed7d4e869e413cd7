"""Spatial grids, nearest-node projection and the quantized Markov chain."""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .model import ProblemSpec
from .timegrid import TimeGrid, truncation_radius


@dataclass(frozen=True)
class SpatialGrid:
    """Cartesian grid ``x0 + eta * k`` with integer ``|k_c| <= m`` on every axis."""

    center: np.ndarray
    spacing: np.ndarray
    half_count: int

    @property
    def d(self):
        return int(self.center.shape[0])

    @property
    def per_axis(self):
        return 2 * self.half_count + 1

    @property
    def size(self):
        return self.per_axis ** self.d

    def axis_nodes(self, c):
        m = self.half_count
        return self.center[c] + self.spacing[c] * np.arange(-m, m + 1)

    def nodes(self):
        """All nodes, shape ``(size, d)``, last axis varying fastest."""
        axes = [self.axis_nodes(c) for c in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=-1)

    def axis_edges(self, c):
        # interior cell boundaries: midpoints between neighbouring nodes
        m = self.half_count
        return self.center[c] + self.spacing[c] * (np.arange(-m, m) + 0.5)

    def root_index(self):
        """Flat index of the node at the center."""
        m = self.half_count
        return self.flat_index(np.full(self.d, m))

    def flat_index(self, offsets):
        offsets = np.asarray(offsets)
        idx = np.zeros(offsets.shape[:-1], dtype=np.int64)
        for c in range(self.d):
            idx = idx * self.per_axis + offsets[..., c]
        return idx


@dataclass(frozen=True)
class GridPolicy:
    """How wide each spatial grid is and how many nodes it carries.

    ``x_max = drift_bound * t + width_factor * q * diffusion_bound * sqrt(t)``.
    ``schedule`` is ``"index"`` (m_i = i), a positive int (constant m_i for i >= 1)
    or a callable ``(i, t_i) -> m_i``.
    """

    drift_bound: float = 0.5
    width_factor: float = 1.5
    q: float = 3.0
    diffusion_bound: float = 1.0
    schedule: Union[str, int, Callable] = "index"

    def half_count(self, i, t):
        s = self.schedule
        if s == "index":
            return int(i)
        if callable(s):
            return int(s(i, t))
        if isinstance(s, (int, np.integer)) and not isinstance(s, bool):
            return 0 if i == 0 else int(s)
        raise ConfigurationError(f"unknown node schedule {s!r}")

    def x_max(self, t):
        return abs(self.drift_bound) * t + self.width_factor * self.q * self.diffusion_bound * math.sqrt(t)


def build_spatial_grids(forward, grid: TimeGrid, policy: GridPolicy = GridPolicy()):
    x0 = np.asarray(forward.x0, dtype=float)
    d = x0.shape[0]
    out = []
    for i, t in enumerate(grid.times):
        t = float(t)
        if i == 0 or t == 0.0:
            out.append(SpatialGrid(x0.copy(), np.ones(d), 0))
            continue
        m = policy.half_count(i, t)
        if m <= 0:
            raise ConfigurationError(f"grid at t_{i} = {t:g} has no spread (m_i = {m})")
        eta = 2.0 * policy.x_max(t) / (2 * m)
        if not eta > 0:
            raise ConfigurationError(f"zero spatial spacing at t_{i} = {t:g}")
        out.append(SpatialGrid(x0.copy(), np.full(d, eta), m))
    return out


def project(grid: SpatialGrid, x):
    """Flat index of the nearest node (per axis, lower index on ties, clamped)."""
    x = np.asarray(x, dtype=float)
    m = grid.half_count
    if m == 0:
        return np.zeros(x.shape[:-1], dtype=np.int64) if x.ndim > 1 else 0
    u = (x - grid.center) / grid.spacing
    off = np.clip(np.ceil(u - 0.5), -m, m).astype(np.int64) + m
    idx = grid.flat_index(off)
    return idx if x.ndim > 1 else int(idx)


@dataclass(frozen=True)
class MonteCarloOptions:
    samples: int = 100_000
    seed: int = 0


def _frozen_coeffs(forward, t, xk):
    mu = np.asarray(forward.mu(t, xk[None, :]), dtype=float)[0]
    sig = np.asarray(forward.sigma(t, xk[None, :]), dtype=float)[0]
    return mu, sig


def transition_row(mode, source, target: SpatialGrid, forward, t, h, mc_opts=None, step_index=0):
    """Transition probabilities from node ``source = (grid, k)`` at time ``t``."""
    sgrid, k = source
    xk = sgrid.nodes()[k]
    if target.size == 1:
        return np.ones(1)
    mu, sig = _frozen_coeffs(forward, t, xk)
    if mode == "analytic":
        if sgrid.d != 1:
            raise ConfigurationError("analytic transitions need d = 1; use mode 'mc'")
        s = abs(sig[0, 0]) * math.sqrt(h)
        if s == 0.0:
            raise ConfigurationError("degenerate diffusion: analytic transition needs sigma != 0")
        mean = np.array([xk[0] + mu[0] * h])
        return kernels.gauss_cell_probs(mean, np.array([s]), target.axis_edges(0))[0]
    if mode == "mc":
        opts = mc_opts or MonteCarloOptions()
        rng = np.random.default_rng([opts.seed, step_index, k])
        G = rng.standard_normal((opts.samples, sgrid.d))
        X = xk + mu * h + math.sqrt(h) * G @ sig.T
        idx = project(target, X)
        return np.bincount(idx, minlength=target.size) / opts.samples
    raise ConfigurationError(f"unknown transition mode {mode!r}")


def increment_weights(source, target: SpatialGrid, forward, t, h):
    """Clamped normalized increments ``T^R(sigma^-1 (x_l - x_k - mu h)) / h``, shape ``(L, d)``."""
    sgrid, k = source
    xk = sgrid.nodes()[k]
    mu, sig = _frozen_coeffs(forward, t, xk)
    try:
        inv = np.linalg.inv(sig)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("singular diffusion matrix") from exc
    R = truncation_radius(h)
    u = (target.nodes() - xk - mu * h) @ inv.T
    return np.clip(u, -R, R) / h


@dataclass(frozen=True)
class ChainStep:
    P: np.ndarray      # (K, L)
    H: np.ndarray      # (K, L, d)


@dataclass
class QuantizedChain:
    """Transition matrices and weight tables, assembled per step on demand.

    Steps are deterministic functions of (problem, grid, policy, mode, seed),
    so the cache only trades memory for time.
    """

    problem: ProblemSpec
    grid: TimeGrid
    spatial: list
    mode: str = "analytic"
    mc_opts: Optional[MonteCarloOptions] = None
    cache: bool = True
    _store: dict = field(default_factory=dict, repr=False)

    @property
    def N(self):
        return self.grid.N

    def nodes(self, i):
        return self.spatial[i].nodes()

    def step(self, i) -> ChainStep:
        if i in self._store:
            return self._store[i]
        st = self._assemble(i)
        if self.cache:
            self._store[i] = st
        return st

    def _assemble(self, i):
        if not 0 <= i < self.N:
            raise IndexError(f"step index {i} outside 0..{self.N - 1}")
        fwd = self.problem.forward
        src, tgt = self.spatial[i], self.spatial[i + 1]
        t = float(self.grid.times[i])
        h = float(self.grid.steps[i])
        xs = src.nodes()
        mu = np.asarray(fwd.mu(t, xs), dtype=float)
        sig = np.asarray(fwd.sigma(t, xs), dtype=float)
        if self.mode == "analytic" and src.d == 1:
            s = np.abs(sig[:, 0, 0]) * math.sqrt(h)
            if np.any(s == 0.0):
                raise ConfigurationError("degenerate diffusion: analytic transition needs sigma != 0")
            shift = np.ascontiguousarray(xs[:, 0] + mu[:, 0] * h)
            if tgt.size == 1:
                P = np.ones((src.size, 1))
            else:
                P = kernels.gauss_cell_probs(shift, s, np.ascontiguousarray(tgt.axis_edges(0)))
            H = kernels.clamped_weights(shift, np.ascontiguousarray(sig[:, 0, 0]),
                                        np.ascontiguousarray(tgt.axis_nodes(0)),
                                        truncation_radius(h), h)
            return ChainStep(P, H[:, :, None])
        P = np.stack([transition_row(self.mode, (src, k), tgt, fwd, t, h, self.mc_opts, i)
                      for k in range(src.size)])
        H = np.stack([increment_weights((src, k), tgt, fwd, t, h) for k in range(src.size)])
        return ChainStep(P, H)


def build_chain(problem: ProblemSpec, grid: TimeGrid, policy: GridPolicy = GridPolicy(),
                mode="analytic", mc_opts=None, cache=True) -> QuantizedChain:
    if mode not in ("analytic", "mc"):
        raise ConfigurationError(f"unknown transition mode {mode!r}")
    if mode == "analytic" and problem.forward.d != 1:
        raise ConfigurationError("analytic transitions need d = 1; use mode 'mc'")
    spatial = build_spatial_grids(problem.forward, grid, policy)
    return QuantizedChain(problem, grid, spatial, mode, mc_opts, cache)
