"""Backward sweeps on a quantized chain, plus exact one-step kernels on finite spaces."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigurationError, ConvergenceError, DriverEvaluationError, ExplosionError
from .model import DriverSpec, ProblemSpec, eval_driver
from .quantize import ChainStep, QuantizedChain
from .timegrid import GridKind, lambda_factor, truncation_level, truncation_radius

EXPLOSION_CAP = 1e12


class SchemeKind(str, Enum):
    EXPLICIT_ATS = "explicit_ats"
    EXPLICIT_UNIFORM = "explicit_uniform"
    IMPLICIT_UNIFORM = "implicit_uniform"
    EXPLICIT_TRUNC_TERMINAL = "explicit_trunc_terminal"


@dataclass(frozen=True)
class Scheme:
    kind: SchemeKind
    tol: float = 1e-12
    max_iter: int = 200
    cap: float = EXPLOSION_CAP
    L0: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not self.tol > 0 or self.max_iter < 1 or not self.cap > 0:
            raise ConfigurationError("implicit options need tol > 0, max_iter >= 1, cap > 0")
        if self.L0 is not None and not self.L0 > 0:
            raise ConfigurationError("L0 must be > 0")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must lie in (0, 1]")

    @property
    def implicit(self):
        return self.kind is SchemeKind.IMPLICIT_UNIFORM


_COMPATIBLE = {
    SchemeKind.EXPLICIT_UNIFORM: {GridKind.UNIFORM},
    SchemeKind.IMPLICIT_UNIFORM: {GridKind.UNIFORM},
    SchemeKind.EXPLICIT_TRUNC_TERMINAL: {GridKind.ATS_TRUNC_TERMINAL},
}


def _check_scheme(scheme, grid):
    allowed = _COMPATIBLE.get(scheme.kind)
    if allowed is None:
        if grid.kind in (GridKind.UNIFORM, GridKind.ATS_TRUNC_TERMINAL):
            raise ConfigurationError(f"scheme {scheme.kind.value} needs an adapted grid, got {grid.kind.value}")
    elif grid.kind not in allowed:
        raise ConfigurationError(f"scheme {scheme.kind.value} does not run on a {grid.kind.value} grid")


# -- single steps --------------------------------------------------------------

def _z_table(step: ChainStep, y_next):
    # z_k = sum_l p_kl y_l H_kl^T, shape (K, k, d)
    return np.einsum("kl,lj,klc->kjc", step.P, y_next, step.H)


def _check_finite(y, i, cap):
    mag = np.abs(y)
    bad = ~np.isfinite(mag) | (mag > cap)
    if np.any(bad):
        k = int(np.argmax(np.any(bad.reshape(bad.shape[0], -1), axis=1)))
        raise ExplosionError(i, k, float(np.max(mag[k])))


def explicit_step(y_next, step: ChainStep, driver: DriverSpec, h, i=None, cap=EXPLOSION_CAP):
    """One explicit step: ``z`` from the weighted increments, then ``y``.

    ``y_next`` has shape ``(L, k)``; returns ``(y, z)`` with shapes ``(K, k)``
    and ``(K, k, d)``.
    """
    y_next = np.asarray(y_next, dtype=float)
    P = step.P
    k, d = driver.k, driver.d
    try:
        if not driver.depends_on_z or driver.poly is not None:
            # f(y, z) = f(y, 0) + b.z: one driver call per target node
            F0 = eval_driver(driver, y_next)
            v = y_next + F0 * h
            if k == 1 and d == 1:
                ev, ez = kernels.weighted_sums(np.ascontiguousarray(P), np.ascontiguousarray(v[:, 0]),
                                               np.ascontiguousarray(y_next[:, 0]),
                                               np.ascontiguousarray(step.H[:, :, 0]))
                y = ev[:, None]
                z = ez[:, None, None]
            else:
                y = P @ v
                z = _z_table(step, y_next)
            if driver.depends_on_z:
                b = np.asarray(driver.poly[1], dtype=float)
                y = y + h * (z[:, 0, :] @ b)[:, None] * P.sum(axis=1)[:, None]
        else:
            z = _z_table(step, y_next)
            K, L = P.shape
            F = eval_driver(driver, np.broadcast_to(y_next[None], (K, L, k)),
                            np.broadcast_to(z[:, None], (K, L, k, d)))
            y = np.einsum("kl,klj->kj", P, y_next[None] + F * h)
    except DriverEvaluationError as exc:
        raise ExplosionError(-1 if i is None else i, 0, math.inf, str(exc)) from exc
    _check_finite(y, -1 if i is None else i, cap)
    return y, z


def _poly_parts(driver):
    a = np.asarray(driver.poly[0], dtype=float)
    da = a[1:] * np.arange(1, len(a))
    return a, da


def implicit_step(y_next, step: ChainStep, driver: DriverSpec, h, scheme: Scheme = None, i=None):
    """Backward-Euler counterpart: solve ``y = E[y_next] + f(y, z) h`` node-wise.

    ``z`` is the explicit one.  Newton for polynomial scalar drivers, secant
    for other scalar drivers, damped fixed point for vector drivers; all
    start from the explicit value.  Stops once ``|dy| <= tol * max(1, |y|)``.
    """
    opts = scheme or Scheme(SchemeKind.IMPLICIT_UNIFORM)
    idx = -1 if i is None else i
    y_next = np.asarray(y_next, dtype=float)
    y, z = explicit_step(y_next, step, driver, h, i, cap=math.inf)
    c = step.P @ y_next

    def G(v):
        return v - c - h * eval_driver(driver, v, z)

    def done(dy, v):
        return np.all(np.abs(dy) <= opts.tol * np.maximum(1.0, np.abs(v)))

    if not np.all(np.isfinite(y)):
        y = c.copy()
    prev = None
    for _ in range(opts.max_iter):
        g = G(y)
        if driver.k == 1 and driver.poly is not None:
            _, da = _poly_parts(driver)
            slope = 1.0 - h * np.polynomial.polynomial.polyval(y, da)
            slope = np.where(np.abs(slope) < 1e-3, np.copysign(1e-3, slope), slope)
            dy = -g / slope
        elif driver.k == 1:
            if prev is None:
                lloc = driver.L_y * (2.0 + 2.0 * np.abs(y) ** (driver.m - 1))
                dy = -g / (1.0 + h * lloc)
            else:
                yp, gp = prev
                den = y - yp
                with np.errstate(divide="ignore", invalid="ignore"):
                    slope = np.where(den != 0, (g - gp) / den, 1.0)
                slope = np.where(np.abs(slope) < 1e-3, 1.0, slope)
                dy = -g / slope
            prev = (y, g)
        else:
            nrm = np.linalg.norm(y, axis=-1, keepdims=True)
            lloc = driver.L_y * (2.0 + 2.0 * nrm ** (driver.m - 1))
            dy = -g / (1.0 + h * lloc)
        y = y + dy
        if np.any(~np.isfinite(y)) or np.any(np.abs(y) > opts.cap):
            _check_finite(y, idx, opts.cap)
        if done(dy, y):
            return y, z
    resid = float(np.max(np.abs(G(y))))
    raise ConvergenceError(f"implicit step {idx} did not converge in {opts.max_iter} iterations", resid)


# -- full sweep ----------------------------------------------------------------

@dataclass
class BackwardSolution:
    grid: object
    spatial: list
    scheme: Scheme
    y: list = field(default_factory=list)
    z: list = field(default_factory=list)

    def y_at_x0(self, i=0):
        g = self.spatial[i]
        return self.y[i][g.root_index()]

    def z_at_x0(self, i=0):
        g = self.spatial[i]
        return self.z[i][g.root_index()]

    def max_abs(self, i):
        return float(np.max(np.linalg.norm(self.y[i], axis=-1)))


def terminal_table(chain: QuantizedChain, problem: ProblemSpec, scheme: Scheme):
    nodes = chain.nodes(chain.N)
    y = np.asarray(problem.terminal.g(nodes), dtype=float).reshape(len(nodes), problem.driver.k)
    if scheme.kind is SchemeKind.EXPLICIT_TRUNC_TERMINAL:
        L0, alpha = scheme.L0, scheme.alpha
        gs = chain.grid.spec
        if L0 is None and gs is not None:
            L0 = gs.L0
        if alpha is None and gs is not None:
            alpha = gs.alpha
        if L0 is None or alpha is None:
            raise ConfigurationError("terminal truncation needs L0 and alpha")
        Ln = truncation_level(L0, alpha, problem.driver.m, chain.grid.n)
        y = np.clip(y, -Ln, Ln)
    elif not problem.terminal.bounded:
        raise ConfigurationError("unbounded terminal condition needs the truncated-terminal scheme")
    return y


def solve_backward(chain: QuantizedChain, problem: ProblemSpec, scheme) -> BackwardSolution:
    if not isinstance(scheme, Scheme):
        scheme = Scheme(scheme)
    grid = chain.grid
    _check_scheme(scheme, grid)
    drv = problem.driver
    N = grid.N
    ys = [None] * (N + 1)
    zs = [None] * (N + 1)
    ys[N] = terminal_table(chain, problem, scheme)
    zs[N] = np.zeros(ys[N].shape + (drv.d,))
    for i in range(N - 1, -1, -1):
        st = chain.step(i)
        h = float(grid.steps[i])
        try:
            if scheme.implicit:
                ys[i], zs[i] = implicit_step(ys[i + 1], st, drv, h, scheme, i)
            else:
                ys[i], zs[i] = explicit_step(ys[i + 1], st, drv, h, i, scheme.cap)
        except ExplosionError as exc:
            err = exc if exc.i == i else ExplosionError(i, exc.k, exc.magnitude)
            # tables i+1..N stay available for envelope reporting
            err.partial = BackwardSolution(grid, chain.spatial, scheme, ys, zs)
            if err is exc:
                raise
            raise err from exc
    return BackwardSolution(grid, chain.spatial, scheme, ys, zs)


def solution_probe(sol: BackwardSolution, i):
    """``(min, max, argmin, argmax)`` of the first component of ``y_i`` over nodes."""
    v = sol.y[i][:, 0]
    lo, hi = int(np.argmin(v)), int(np.argmax(v))
    return float(v[lo]), float(v[hi]), lo, hi


# -- exact kernels on finite probability spaces --------------------------------

@dataclass(frozen=True)
class DiscreteSpace:
    """Finite outcome space with a single conditioning atom."""

    probs: np.ndarray     # (M,)
    y_next: np.ndarray    # (M, k)
    H: np.ndarray         # (M, d)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("probabilities must be non-negative and sum to 1")
        H = np.asarray(self.H, dtype=float)
        scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
        if np.any(np.abs(p @ H) > 1e-12 * scale):
            raise ConfigurationError("increment weights must have zero mean")

    @property
    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.y_next, axis=-1)))

    def mean_sq(self):
        return float(self.probs @ np.sum(self.y_next ** 2, axis=-1))


def random_space(rng, k, d, h, pairs, y_scale, cov_cap=None):
    """Random symmetric space: outcomes come in pairs ``(+H, -H)`` of equal mass.

    Weights are clamped to ``R(h)/h`` and, when ``cov_cap`` is given, scaled so
    that ``lambda_max(E[H H^T]) <= cov_cap``.
    """
    w = rng.dirichlet(np.ones(pairs)) / 2.0
    probs = np.repeat(w, 2)
    raw = rng.standard_normal((pairs, d)) * rng.uniform(0.2, 3.0) / math.sqrt(h)
    R = truncation_radius(h)
    raw = np.clip(raw, -R / h, R / h)
    if cov_cap is not None:
        S = (2 * w[:, None, None] * raw[:, :, None] * raw[:, None, :]).sum(axis=0)
        lam = float(np.linalg.eigvalsh(S)[-1])
        if lam > cov_cap:
            raw = raw * math.sqrt(cov_cap / lam) * (1 - 1e-12)
    H = np.empty((2 * pairs, d))
    H[0::2] = raw
    H[1::2] = -raw
    y = rng.uniform(-1.0, 1.0, (2 * pairs, k)) * y_scale
    return DiscreteSpace(probs, y, H)


def multi_cov_cap(h):
    """Second-moment ceiling ``Lambda(h)/h`` used for multi-dimensional test spaces."""
    return lambda_factor(h) / h


def exact_one_step(space: DiscreteSpace, driver: DriverSpec, h):
    p = np.asarray(space.probs, dtype=float)
    y = np.asarray(space.y_next, dtype=float)
    Z = np.einsum("w,wj,wc->jc", p, y, np.asarray(space.H, dtype=float))
    F = eval_driver(driver, y, np.broadcast_to(Z, y.shape + (driver.d,)))
    Y = p @ (y + F * h)
    return Y, Z
