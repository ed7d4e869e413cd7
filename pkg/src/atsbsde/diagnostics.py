"""Verdicts on backward solutions: envelopes, ordering, convergence, truncation decay."""

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ExplosionError
from .model import ProblemSpec
from .quantize import GridPolicy, build_chain
from .solver import BackwardSolution, Scheme, SchemeKind, solve_backward
from .timegrid import GridKind, GridSpec, RateKind, build_grid, stability_rate, truncation_level


class EnvelopeRegime(str, Enum):
    ONE_D = "one_d"
    MULTI = "multi"
    GMONGR = "gmongr"


def envelope_bound(regime, problem: ProblemSpec, t, xi_norm=None):
    """Theoretical size bound ``b(t)`` for the given regime."""
    regime = EnvelopeRegime(regime)
    drv = problem.driver
    xi = problem.terminal.sup_norm if xi_norm is None else xi_norm
    tau = problem.T - np.asarray(t, dtype=float)
    if regime is EnvelopeRegime.ONE_D:
        return np.exp(drv.M_y * tau) * xi
    if regime is EnvelopeRegime.MULTI:
        return np.exp(drv.M_y / 4.0 * tau) * xi
    if drv.K is None:
        raise ConfigurationError("the monotone-growth envelope needs K")
    return np.maximum(np.exp(drv.M_y * tau) * xi, drv.K)


@dataclass
class StabilityEnvelope:
    regime: EnvelopeRegime
    times: np.ndarray
    min_y: np.ndarray      # NaN where the sweep never got
    max_abs: np.ndarray
    bound: np.ndarray
    tol: float
    violations: list = field(default_factory=list)
    exploded_at: Optional[int] = None

    @property
    def passed(self):
        return not self.violations and self.exploded_at is None

    def negative_times(self, tol=1e-8):
        with np.errstate(invalid="ignore"):
            return [int(i) for i in np.flatnonzero(self.min_y < -tol)]


def stability_envelope(sol: BackwardSolution, problem: ProblemSpec, regime, tol=0.05,
                       xi_norm=None, exploded_at=None) -> StabilityEnvelope:
    times = np.asarray(sol.grid.times, dtype=float)
    n = len(times)
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    for i, y in enumerate(sol.y):
        if y is None:
            continue
        lo[i] = float(np.min(y[:, 0]))
        hi[i] = float(np.max(np.linalg.norm(y, axis=-1)))
    if xi_norm is None:
        xi_norm = problem.terminal.sup_norm
        if not math.isfinite(xi_norm):
            xi_norm = float(hi[-1])
    b = envelope_bound(regime, problem, times, xi_norm)
    with np.errstate(invalid="ignore"):
        viol = [int(i) for i in np.flatnonzero(hi > b * (1.0 + tol))]
    if exploded_at is not None:
        viol.append(int(exploded_at))
    return StabilityEnvelope(EnvelopeRegime(regime), times, lo, hi, b, tol, viol, exploded_at)


def run_stability(chain, problem, scheme, regime, tol=0.05):
    """Solve and build the envelope; an explosion becomes a violation, not an exception."""
    try:
        sol = solve_backward(chain, problem, scheme)
        return stability_envelope(sol, problem, regime, tol), sol
    except ExplosionError as exc:
        return stability_envelope(exc.partial, problem, regime, tol, exploded_at=exc.i), exc.partial


def default_regime(problem):
    drv = problem.driver
    if drv.K is not None and drv.regime.value == "overall_monotone":
        return EnvelopeRegime.GMONGR
    return EnvelopeRegime.ONE_D if drv.k == 1 else EnvelopeRegime.MULTI


@dataclass
class ComparisonReport:
    differences: list
    min_difference: float
    tol: float

    @property
    def passed(self):
        return self.min_difference >= -self.tol


def comparison_check(sol_hi: BackwardSolution, sol_lo: BackwardSolution, tol=1e-10) -> ComparisonReport:
    if not np.array_equal(sol_hi.grid.times, sol_lo.grid.times) or \
            [g.size for g in sol_hi.spatial] != [g.size for g in sol_lo.spatial]:
        raise ConfigurationError("comparison needs both solutions on the same chain")
    diffs = [a - b for a, b in zip(sol_hi.y, sol_lo.y)]
    worst = min(float(np.min(d)) for d in diffs)
    return ComparisonReport(diffs, worst, tol)


# -- convergence ---------------------------------------------------------------

@dataclass(frozen=True)
class FineGrid:
    n_ref: int


@dataclass(frozen=True)
class ImplicitExplicitAverage:
    n_ref: int = 150


@dataclass
class RunResult:
    n: int
    N: int
    y0: float
    z0: float
    seconds: float
    exploded: bool = False


def run_point(problem, grid_spec, scheme, policy=GridPolicy(), mode="analytic", mc_opts=None) -> RunResult:
    """Full pipeline at one resolution; returns the value at ``(0, x0)``."""
    t0 = time.perf_counter()
    grid = build_grid(grid_spec, problem)
    chain = build_chain(problem, grid, policy, mode, mc_opts, cache=False)
    try:
        sol = solve_backward(chain, problem, scheme)
    except ExplosionError:
        return RunResult(grid_spec.n, grid.N, math.nan, math.nan, time.perf_counter() - t0, True)
    y0 = float(sol.y_at_x0(0)[0])
    z0 = float(sol.z_at_x0(0)[0, 0])
    return RunResult(grid_spec.n, grid.N, y0, z0, time.perf_counter() - t0)


def grid_spec_for(scheme: Scheme, kind, n, **extra):
    if scheme.kind in (SchemeKind.EXPLICIT_UNIFORM, SchemeKind.IMPLICIT_UNIFORM):
        return GridSpec(GridKind.UNIFORM, n)
    return GridSpec(GridKind(kind), n, **extra)


def fit_slope(ns, errs):
    ns = np.asarray(ns, dtype=float)
    errs = np.asarray(errs, dtype=float)
    keep = np.isfinite(errs) & (errs > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ns[keep]), np.log(errs[keep]), 1)[0])


@dataclass
class ConvergenceReport:
    runs: list
    reference: float
    errors: list
    slope: float

    @property
    def ns(self):
        return [r.n for r in self.runs]


def reference_value(problem, scheme, kind, reference_policy, policy, mode="analytic", mc_opts=None, **extra):
    if isinstance(reference_policy, ImplicitExplicitAverage):
        n = reference_policy.n_ref
        a = run_point(problem, GridSpec(GridKind.UNIFORM, n), Scheme(SchemeKind.IMPLICIT_UNIFORM), policy, mode, mc_opts)
        b = run_point(problem, GridSpec(GridKind.UNIFORM, n), Scheme(SchemeKind.EXPLICIT_UNIFORM), policy, mode, mc_opts)
        if a.exploded or b.exploded:
            raise ConfigurationError(f"reference run at n = {n} exploded; increase n_ref")
        return 0.5 * (a.y0 + b.y0)
    if isinstance(reference_policy, FineGrid):
        r = run_point(problem, grid_spec_for(scheme, kind, reference_policy.n_ref, **extra), scheme, policy, mode, mc_opts)
        if r.exploded:
            raise ConfigurationError(f"reference run at n = {reference_policy.n_ref} exploded")
        return r.y0
    raise ConfigurationError(f"unknown reference policy {reference_policy!r}")


def convergence_study(problem, scheme, n_list, reference_policy, kind=GridKind.ATS_1D,
                      policy=GridPolicy(), mode="analytic", mc_opts=None, **extra) -> ConvergenceReport:
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigurationError("n values must be strictly increasing")
    ref = reference_value(problem, scheme, kind, reference_policy, policy, mode, mc_opts, **extra)
    runs = [run_point(problem, grid_spec_for(scheme, kind, n, **extra), scheme, policy, mode, mc_opts)
            for n in n_list]
    errs = [abs(r.y0 - ref) for r in runs]
    return ConvergenceReport(runs, ref, errs, fit_slope(n_list, errs))


def sandwiched(value, a, b, slack=1e-12):
    """``value`` in the closed interval spanned by ``a`` and ``b`` (round-off slack)."""
    if not all(math.isfinite(v) for v in (value, a, b)):
        return False
    return min(a, b) - slack <= value <= max(a, b) + slack


# -- bounds and truncation -----------------------------------------------------

@dataclass(frozen=True)
class ErrorBound:
    rate: float
    bound: float
    refined_rate: float
    refined_bound: float


def theoretical_error_bound(problem: ProblemSpec, grid, epsilon, C_eps=1.0) -> ErrorBound:
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be > 0")
    drv = problem.driver
    mod = grid if isinstance(grid, float) else grid.modulus
    xi = problem.terminal.sup_norm
    rate = epsilon + stability_rate(RateKind.TILDE_G, mod, xi, drv)
    refined = epsilon + drv.M_y / 4.0
    T = problem.T
    return ErrorBound(rate, math.exp(rate * T) * C_eps * mod, refined, math.exp(refined * T) * C_eps * mod)


def clamp(v, L):
    return np.clip(v, -L, L)


@dataclass
class TruncationReport:
    runs: list
    levels: list
    reference: float
    errors: list

    @property
    def decreasing(self):
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))


def truncation_error_decay(problem, n_list, n_ref, L0, alpha, policy=GridPolicy(), mode="analytic") -> TruncationReport:
    if problem.terminal.bounded:
        raise ConfigurationError("truncation study expects an unbounded terminal function")
    scheme = Scheme(SchemeKind.EXPLICIT_TRUNC_TERMINAL, L0=L0, alpha=alpha)
    extra = dict(L0=L0, alpha=alpha)
    ref = run_point(problem, GridSpec(GridKind.ATS_TRUNC_TERMINAL, n_ref, **extra), scheme, policy, mode)
    if ref.exploded:
        raise ConfigurationError("truncated reference run exploded")
    runs = [run_point(problem, GridSpec(GridKind.ATS_TRUNC_TERMINAL, n, **extra), scheme, policy, mode)
            for n in n_list]
    levels = [truncation_level(L0, alpha, problem.driver.m, n) for n in n_list]
    return TruncationReport(runs, levels, ref.y0, [abs(r.y0 - ref.y0) for r in runs])
