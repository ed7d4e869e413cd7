"""Time discretization: truncated increments, step ceilings and adapted grids.

All grids are built backward from ``T``: at each date ``t_next`` the step is the
minimum of a list of clauses, evaluated in the fixed order
``formula, h0, h_max, t_next, T/n`` so that recomputing a step from a stored
date reproduces it bit for bit.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError
from .model import ProblemSpec, Regime, stability_flags

H_MAX = 0.95
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
MAX_GRID_STEPS = 5_000_000
SNAP_FRACTION = 1e-10


def _check_h(h):
    if not (0.0 < h <= H_MAX):
        raise ConfigurationError(f"step size must lie in (0, {H_MAX}], got {h!r}")


def increment_truncation(h):
    """Return ``(r(h), R(h))`` with ``r = sqrt(2) ln(1/h)`` and ``R = sqrt(h) r``."""
    _check_h(h)
    r = _SQRT2 * math.log(1.0 / h)
    return r, math.sqrt(h) * r


def truncation_radius(h):
    return increment_truncation(h)[1]


def lambda_factor(h):
    """Second moment of a standard normal clamped to ``[-r(h), r(h)]``.

    Rounds to exactly 1.0 once h is below about 5e-3.
    """
    r, _ = increment_truncation(h)
    tail = 1.0 - float(ndtr(r))
    dens = _INV_SQRT_2PI * math.exp(-0.5 * r * r)
    return (2.0 * float(ndtr(r)) - 1.0 - 2.0 * r * dens) + 2.0 * r * r * tail


def increment_clamp_error(h, d=1):
    """Closed form of ``E|dW/h - H|^2`` for a step ``h`` in dimension ``d``.

    Per component this is ``E[(|G| - r)_+^2] / h``.
    """
    r, _ = increment_truncation(h)
    tail = 1.0 - float(ndtr(r))
    dens = _INV_SQRT_2PI * math.exp(-0.5 * r * r)
    return d * 2.0 * ((1.0 + r * r) * tail - r * dens) / h


R_PEAK_H = math.exp(-2.0)
R_MAX = math.sqrt(R_PEAK_H) * _SQRT2 * 2.0  # R(e^-2) = 2 sqrt(2) / e


@functools.lru_cache(maxsize=256)
def h0_lipz(L_z):
    """Largest step keeping ``R(h) <= 1/(3 L_z)`` on the increasing branch of ``R``."""
    if L_z < 0:
        raise ConfigurationError("L_z must be >= 0")
    if L_z == 0:
        return H_MAX
    target = 1.0 / (3.0 * L_z)
    if target >= R_MAX:
        return H_MAX
    lo, hi = 0.0, R_PEAK_H
    # R is increasing on (0, e^-2]; keep the invariant R(lo) <= target < R(hi)
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if math.sqrt(mid) * _SQRT2 * math.log(1.0 / mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


def hat_h0(driver):
    if driver.L_z == 0:
        return math.inf
    return (1.0 / 8.0) * (1.0 / (2.0 * (driver.d + 1) * driver.L_z ** 2))


def truncation_moment_envelope(h, d=1):
    """Gaussian-tail envelope ``2^{d/2} (1/h) ln(1/h)^d exp(-ln(1/h)^2)``."""
    _check_h(h)
    if d < 1:
        raise ConfigurationError("d must be >= 1")
    lh = math.log(1.0 / h)
    return 2.0 ** (d / 2.0) * (1.0 / h) * lh ** d * math.exp(-lh * lh)


# -- grids ---------------------------------------------------------------------

class GridKind(str, Enum):
    UNIFORM = "uniform"
    ATS_1D = "ats_1d"
    ATS_MULTI = "ats_multi"
    ATS_COMPARISON = "ats_comparison"
    ATS_REFINED = "ats_refined"
    ATS_GMONGR = "ats_gmongr"
    ATS_TRUNC_TERMINAL = "ats_trunc_terminal"


_STRICT_KINDS = {GridKind.ATS_1D, GridKind.ATS_MULTI, GridKind.ATS_COMPARISON, GridKind.ATS_REFINED}
CLAUSES = ("formula", "h0_Lz", "h_max", "t_next", "T_over_n")


@dataclass(frozen=True)
class GridSpec:
    """Which partition to build.

    ``comparison_bound`` is the common bound ``C`` of the terminal pair for the
    comparison grid (defaults to the terminal sup-norm).  ``base`` is the kind
    refined by ``ATS_REFINED`` or truncated by ``ATS_TRUNC_TERMINAL``;
    ``L0`` and ``alpha`` set the truncation level ``L_n = L0 n^{alpha/(2(m-1))}``.
    """

    kind: GridKind
    n: int
    comparison_bound: Optional[float] = None
    base: Optional[GridKind] = None
    L0: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GridKind(self.kind))
        if self.base is not None:
            object.__setattr__(self, "base", GridKind(self.base))
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"n must be an integer >= 1, got {self.n}")
        kind = self.kind
        if kind is GridKind.ATS_TRUNC_TERMINAL:
            if self.L0 is None or self.alpha is None:
                raise ConfigurationError("terminal truncation needs L0 and alpha")
            if not self.L0 > 0 or not (0 < self.alpha <= 1):
                raise ConfigurationError("need L0 > 0 and alpha in (0, 1]")
            if self.base in (GridKind.ATS_TRUNC_TERMINAL, GridKind.UNIFORM):
                raise ConfigurationError("truncated grid base must be an ATS kind")
        elif self.L0 is not None or self.alpha is not None:
            raise ConfigurationError("L0/alpha only apply to the truncated-terminal grid")
        if kind is GridKind.ATS_REFINED and self.base not in (None, GridKind.ATS_1D, GridKind.ATS_MULTI):
            raise ConfigurationError("refined grid base must be ats_1d or ats_multi")
        if kind not in (GridKind.ATS_REFINED, GridKind.ATS_TRUNC_TERMINAL) and self.base is not None:
            raise ConfigurationError(f"{kind.value} takes no base kind")
        if self.comparison_bound is not None and kind is not GridKind.ATS_COMPARISON and \
                not (kind is GridKind.ATS_TRUNC_TERMINAL and self.base is GridKind.ATS_COMPARISON):
            raise ConfigurationError("comparison_bound only applies to the comparison grid")


def truncation_level(L0, alpha, m, n):
    """``L_n = L0 * n^{alpha / (2 (m - 1))}``."""
    if m < 2:
        raise ConfigurationError("terminal truncation schedule needs m >= 2")
    return L0 * n ** (alpha / (2.0 * (m - 1)))


def _default_base(problem):
    return GridKind.ATS_1D if problem.driver.k == 1 else GridKind.ATS_MULTI


def _check_kind(kind, problem, spec):
    drv = problem.driver
    if kind in _STRICT_KINDS and not drv.M_y < 0:
        raise ConfigurationError(
            f"{kind.value} needs a strictly monotone driver (M_y < 0); "
            "use ats_gmongr for drivers that are only monotone far from the origin")
    if kind in _STRICT_KINDS and drv.regime is Regime.OVERALL_MONOTONE:
        raise ConfigurationError(
            f"{kind.value} needs (MonY) with M_y < 0; use ats_gmongr for an overall-monotone driver")
    if kind is GridKind.ATS_MULTI and not stability_flags(drv).k_dSn:
        raise ConfigurationError("ats_multi requires L_z^2 <= -M_y/4; the stability guarantee does not apply")
    if kind is GridKind.ATS_GMONGR and drv.K is None:
        raise ConfigurationError("ats_gmongr needs a driver with monotone-growth radius K")


def _xi_norm(problem, spec):
    if spec.kind is GridKind.ATS_TRUNC_TERMINAL:
        return truncation_level(spec.L0, spec.alpha, problem.driver.m, spec.n)
    norm = problem.terminal.sup_norm
    if not math.isfinite(norm):
        raise ConfigurationError("unbounded terminal function: use the truncated-terminal grid")
    return norm


def _coefficients(kind, problem, spec, xi):
    """Constants of ``num / (A (1 + c max(exp(E (T - t)) X, floor)))`` for the first clause.

    Returns None when the clause is vacuous (``L_y = 0``).
    """
    drv = problem.driver
    m, My, Ly = drv.m, drv.M_y, drv.L_y
    if Ly == 0:
        return None
    if kind is GridKind.ATS_1D:
        return 1.0, 3.0 * Ly, 1.0, (m - 1) * My, xi ** (m - 1), 0.0
    if kind is GridKind.ATS_COMPARISON:
        C = xi if spec.comparison_bound is None else spec.comparison_bound
        return 1.0, 3.0 * Ly, 2.0, (m - 1) * My, C ** (m - 1), 0.0
    if kind is GridKind.ATS_MULTI:
        return 0.25 * (-My), (drv.d + 1) * Ly ** 2, 1.0, (m - 1) * (My / 2.0), xi ** (2 * (m - 1)), 0.0
    if kind is GridKind.ATS_GMONGR:
        return 1.0, 3.0 * Ly, 2.0, (m - 1) * My, xi ** (m - 1), drv.K ** (m - 1)
    if kind is GridKind.ATS_REFINED:
        # refinement uses the quarter rate hat M_y = M_y / 4
        return 0.25 * (-My), 3.0 * (drv.d + 1) * Ly ** 2, 2.0, 2 * (m - 1) * (My / 4.0), \
            xi ** (2 * (m - 1)), 0.0
    raise AssertionError(kind)


def _evaluate(coef, tau):
    if coef is None:
        return math.inf
    num, A, c, E, X, floor = coef
    return num / (A * (1.0 + c * max(math.exp(E * tau) * X, floor)))


def _ceiling(kind, drv):
    return hat_h0(drv) if kind is GridKind.ATS_MULTI else h0_lipz(drv.L_z)


def _argmin(values):
    best = 0
    for j in range(1, len(values)):
        if values[j] < values[best]:
            best = j
    return values[best], CLAUSES[best]


def _resolve(spec, problem):
    """Validate ``spec`` against ``problem`` once; returns the per-grid constants of the step loop."""
    kind = spec.kind
    if kind is GridKind.UNIFORM:
        raise ConfigurationError("uniform grids have no adapted step")
    _check_kind(kind, problem, spec)
    xi = _xi_norm(problem, spec)
    if kind is GridKind.ATS_TRUNC_TERMINAL:
        kind = spec.base or _default_base(problem)
        _check_kind(kind, problem, spec)
    refined = None
    if kind is GridKind.ATS_REFINED:
        refined = _coefficients(kind, problem, spec, xi)
        kind = spec.base or _default_base(problem)
        _check_kind(kind, problem, spec)
    return (_coefficients(kind, problem, spec, xi), refined, _ceiling(kind, problem.driver),
            problem.T, problem.T / spec.n)


def _step(plan, t_next):
    coef, refined, ceiling, T, t_over_n = plan
    tau = T - t_next
    h, clause = _argmin((_evaluate(coef, tau), ceiling, H_MAX, t_next, t_over_n))
    if refined is not None:
        r = _evaluate(refined, tau)
        if r < h:
            return r, "formula"
    return h, clause


class StepRule:
    """Adapted step as a function of ``t_next``, validated once for a grid spec.

    ``rule(t)`` returns ``(h, clause)``; :func:`build_grid` uses the same rule,
    so recomputing a step from a stored date reproduces it bit for bit.
    """

    def __init__(self, spec: GridSpec, problem: ProblemSpec):
        self.spec = spec
        self.T = problem.T
        self._plan = _resolve(spec, problem)

    def __call__(self, t_next):
        if not (0.0 < t_next <= self.T):
            raise ConfigurationError(f"t_next must lie in (0, T], got {t_next!r}")
        return _step(self._plan, t_next)


def ats_step_size(spec: GridSpec, problem: ProblemSpec, t_next, with_clause=False):
    """Step ending at ``t_next`` for the grid ``spec``.

    Returns the exact minimum of the clause list for the kind; with
    ``with_clause=True`` also returns the name of the winning clause.
    """
    h, clause = StepRule(spec, problem)(t_next)
    if with_clause:
        return h, clause
    return h


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    steps: np.ndarray
    kind: GridKind
    n: int
    spec: Optional[GridSpec] = None
    clauses: tuple = field(default=())

    @property
    def N(self):
        return len(self.steps)

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def modulus(self):
        return float(np.max(self.steps))


def build_grid(spec: GridSpec, problem: ProblemSpec) -> TimeGrid:
    T = problem.T
    if spec.kind is GridKind.UNIFORM:
        h = T / spec.n
        if h > H_MAX:
            raise ConfigurationError(f"uniform step T/n = {h:.6g} exceeds h_max = {H_MAX}")
        times = T * np.arange(spec.n + 1) / spec.n
        steps = np.full(spec.n, h)
        return TimeGrid(times, steps, spec.kind, spec.n, spec, ("T_over_n",) * spec.n)
    times = [T]
    steps = []
    clauses = []
    t = T
    plan = _resolve(spec, problem)
    while t > 0.0:
        h, clause = _step(plan, t)
        steps.append(h)
        clauses.append(clause)
        t = t - h
        if t < SNAP_FRACTION * T:
            # round-off remainder of repeated subtraction, not a genuine step
            t = 0.0
        times.append(t)
        if len(steps) > MAX_GRID_STEPS:
            raise ConfigurationError("adapted grid exceeds the step budget; check the declared constants")
    return TimeGrid(np.array(times[::-1]), np.array(steps[::-1]), spec.kind, spec.n, spec,
                    tuple(clauses[::-1]))


# -- one-step ceilings and rates ----------------------------------------------

class StepRegime(str, Enum):
    ONE_D = "one_d"
    ONE_D_PAIR = "one_d_pair"
    MULTI = "multi"


def step_bound(regime, norms, driver):
    """Largest step for which the one-step size/comparison estimates apply."""
    regime = StepRegime(regime)
    norms = tuple(float(v) for v in np.atleast_1d(norms))
    if any(v < 0 for v in norms):
        raise ConfigurationError("norms must be >= 0")
    m, Ly = driver.m, driver.L_y
    if regime is StepRegime.ONE_D:
        (a,) = norms
        first = math.inf if Ly == 0 else 1.0 / (3.0 * Ly * (1.0 + a ** (m - 1)))
        return min(first, h0_lipz(driver.L_z), H_MAX)
    if regime is StepRegime.ONE_D_PAIR:
        a, b = norms
        first = math.inf if Ly == 0 else 1.0 / (3.0 * Ly * (1.0 + a ** (m - 1) + b ** (m - 1)))
        return min(first, h0_lipz(driver.L_z), H_MAX)
    if not driver.M_y < 0:
        raise ConfigurationError("the multi-dimensional ceiling needs M_y < 0")
    (a,) = norms
    first = math.inf if Ly == 0 else 0.25 * (-driver.M_y) / ((driver.d + 1) * Ly ** 2 * (1.0 + a ** (2 * (m - 1))))
    return min(first, hat_h0(driver), H_MAX)


class RateKind(str, Enum):
    HAT_ONE_STEP = "hat_one_step"
    TILDE_PAIR = "tilde_pair"
    TILDE_G = "tilde_g"


def stability_rate(which, h, norms, driver):
    """Affine-in-``h`` damping rates of the one-step L2 estimates.

    ``HAT_ONE_STEP`` takes ``norms = ||Y_{i+1}||``; ``TILDE_PAIR`` takes the two
    input norms; ``TILDE_G`` takes ``||g||``.  Without z-dependence the one-step
    rate uses ``(d+1) L_y^2`` instead of ``2 (d+1) L_y^2``.
    """
    which = RateKind(which)
    if h < 0:
        raise ConfigurationError("h must be >= 0")
    norms = tuple(float(v) for v in np.atleast_1d(norms))
    m, d, Ly, Lz = driver.m, driver.d, driver.L_y, driver.L_z
    base = driver.M_y + 2.0 * Lz ** 2
    p = 2 * (m - 1)
    if which is RateKind.HAT_ONE_STEP:
        (a,) = norms
        coef = 2.0 * (d + 1) * Ly ** 2 if Lz > 0 else (d + 1) * Ly ** 2
        return base + coef * (1.0 + a ** p) * h
    if which is RateKind.TILDE_PAIR:
        a, b = norms
        return base + 3.0 * (d + 1) * Ly ** 2 * h * (1.0 + a ** p + b ** p)
    (g,) = norms
    return base + 3.0 * (d + 1) * Ly ** 2 * h * (1.0 + 2.0 * g ** p)


@dataclass(frozen=True)
class StabilityConstants:
    hat_M_y: float
    hat_h0: float
    h0_lipz: float
    lambda_min: float


def stability_constants(driver):
    return StabilityConstants(driver.M_y / 4.0, hat_h0(driver), h0_lipz(driver.L_z), lambda_factor(H_MAX))


@dataclass(frozen=True)
class GridDiagnostics:
    N: int
    excess: float
    non_uniformity: float
    min_step: float
    max_step: float


def grid_diagnostics(grid: TimeGrid, n=None) -> GridDiagnostics:
    n = grid.n if n is None else n
    lo = float(np.min(grid.steps))
    hi = float(np.max(grid.steps))
    return GridDiagnostics(grid.N, grid.N / n, hi / lo, lo, hi)
