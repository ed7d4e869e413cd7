"""Problem description: forward SDE, driver, terminal function and presets.

Drivers are evaluated in broadcasting form: ``evaluate(y, z)`` receives
``y`` of shape ``(..., k)`` and ``z`` of shape ``(..., k, d)`` and returns an
array of shape ``(..., k)``.  Every preset below follows that convention so
the solver can evaluate whole node tables at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DriverEvaluationError


class Regime(str, Enum):
    TRULY_MONOTONE = "truly_monotone"
    STRICTLY_MONOTONE = "strictly_monotone"
    OVERALL_MONOTONE = "overall_monotone"


@dataclass(frozen=True)
class DriverSpec:
    """Driver ``f(y, z)`` together with its declared structural constants.

    For ``OVERALL_MONOTONE`` drivers ``M_y`` is the constant of the
    generalized monotone-growth condition, which only has to hold for
    ``|y| > K``.

    ``poly`` optionally records ``f(y, z) = sum_j a_j y**j + b . z`` for
    scalar drivers (``k == 1``) as ``(a, b)``; the quantized solver uses it to
    take the compiled kernel path.
    """

    evaluate: Callable
    m: int
    M_y: float
    L_y: float
    L_z: float
    regime: Regime
    k: int = 1
    d: int = 1
    K: Optional[float] = None
    name: str = "custom"
    poly: Optional[tuple] = None

    def __post_init__(self):
        if self.m < 1 or int(self.m) != self.m:
            raise ConfigurationError(f"polynomial degree m must be an integer >= 1, got {self.m}")
        if self.L_y < 0 or self.L_z < 0:
            raise ConfigurationError("L_y and L_z must be non-negative")
        if self.k < 1 or self.d < 1:
            raise ConfigurationError("dimensions k and d must be >= 1")
        regime = Regime(self.regime)
        object.__setattr__(self, "regime", regime)
        if regime is Regime.STRICTLY_MONOTONE and not self.M_y < 0:
            raise ConfigurationError("a strictly monotone driver needs M_y < 0")
        if regime is Regime.TRULY_MONOTONE and not self.M_y <= 0:
            raise ConfigurationError("a truly monotone driver needs M_y <= 0")
        if regime is Regime.OVERALL_MONOTONE:
            if self.K is None or not self.K > 0:
                raise ConfigurationError("an overall-monotone driver needs a growth radius K > 0")
            if not self.M_y < 0:
                raise ConfigurationError("the monotone-growth constant M_y must be < 0")
        f0 = np.asarray(self.evaluate(np.zeros(self.k), np.zeros((self.k, self.d))), dtype=float)
        if f0.shape != (self.k,) or np.any(f0 != 0.0):
            raise ConfigurationError(f"driver must satisfy f(0, 0) = 0 exactly, got {f0!r}")

    @property
    def depends_on_z(self):
        return self.L_z > 0

    @property
    def monotone_growth_radius(self):
        return self.K


@dataclass(frozen=True)
class TerminalSpec:
    g: Callable
    sup_norm: float
    lipschitz_bound: float = math.inf
    name: str = "custom"

    @property
    def bounded(self):
        return math.isfinite(self.sup_norm)


@dataclass(frozen=True)
class ForwardSpec:
    """Forward SDE ``dX = mu(t, X) dt + sigma(t, X) dW`` started at ``x0``.

    ``mu`` maps ``(t, x)`` with ``x`` of shape ``(..., d)`` to ``(..., d)``;
    ``sigma`` maps to ``(..., d, d)``.
    """

    x0: np.ndarray
    mu: Callable
    sigma: Callable
    name: str = "custom"
    drift_bound: float = 0.0
    diffusion_bound: float = 1.0

    @property
    def d(self):
        return int(np.asarray(self.x0).shape[0])


@dataclass(frozen=True)
class ProblemSpec:
    T: float
    forward: ForwardSpec
    driver: DriverSpec
    terminal: TerminalSpec

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError(f"horizon T must be > 0, got {self.T}")
        if self.forward.d != self.driver.d:
            raise ConfigurationError("forward dimension and driver dimension d disagree")


def eval_driver(spec: DriverSpec, y, z=None):
    y = np.asarray(y, dtype=float)
    if z is None:
        z = np.zeros(y.shape + (spec.d,))
    z = np.asarray(z, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        raise DriverEvaluationError("driver inputs must be finite")
    out = np.asarray(spec.evaluate(y, z), dtype=float)
    if not np.all(np.isfinite(out)):
        raise DriverEvaluationError(f"driver {spec.name} returned {out!r} at y={y!r}, z={z!r}")
    return out


# -- presets -----------------------------------------------------------------

def _sqnorm(y):
    return np.sum(y * y, axis=-1, keepdims=True)


def _zterm(z, b):
    # (..., k, d) @ (d,) -> (..., k); Lipschitz in Frobenius norm with constant |b|
    return z @ b


def cubic_damped(k=1, d=1, z_coupling=None):
    """``f(y, z) = -y - |y|^2 y + z b``; with ``b = 0`` this is the damped cubic."""
    b = np.zeros(d) if z_coupling is None else np.asarray(z_coupling, dtype=float).reshape(d)
    lz = float(np.linalg.norm(b))

    def f(y, z):
        out = -y - _sqnorm(y) * y
        if lz > 0:
            out = out + _zterm(z, b)
        return out

    poly = ((0.0, -1.0, 0.0, -1.0), tuple(b)) if k == 1 else None
    return DriverSpec(f, m=3, M_y=-1.0, L_y=1.5, L_z=lz, regime=Regime.STRICTLY_MONOTONE,
                      k=k, d=d, name="cubic_damped", poly=poly)


def pure_cubic(k=1, d=1, K=None, growth_constant=None):
    """``f(y) = -|y|^2 y``.

    Truly monotone with ``M_y = 0`` by default.  Passing ``K`` declares it in the
    overall-monotone regime; the growth constant defaults to ``-K**2``.
    """
    def f(y, z):
        return -_sqnorm(y) * y

    poly = ((0.0, 0.0, 0.0, -1.0), (0.0,) * d) if k == 1 else None
    if K is None:
        return DriverSpec(f, m=3, M_y=0.0, L_y=1.5, L_z=0.0, regime=Regime.TRULY_MONOTONE,
                          k=k, d=d, name="pure_cubic", poly=poly)
    M = -float(K) ** 2 if growth_constant is None else float(growth_constant)
    return DriverSpec(f, m=3, M_y=M, L_y=1.5, L_z=0.0, regime=Regime.OVERALL_MONOTONE,
                      k=k, d=d, K=float(K), name="pure_cubic", poly=poly)


def bistable_cubic(k=1, d=1, K=math.sqrt(2.0), growth_constant=-1.0):
    """``f(y) = y - |y|^2 y``: only monotone far from the origin.

    ``y f(y) = |y|^2 - |y|^4 <= -|y|^2`` as soon as ``|y|^2 >= 2``, hence the
    default ``K = sqrt(2)`` with growth constant ``-1``.
    """
    def f(y, z):
        return y - _sqnorm(y) * y

    poly = ((0.0, 1.0, 0.0, -1.0), (0.0,) * d) if k == 1 else None
    return DriverSpec(f, m=3, M_y=float(growth_constant), L_y=1.5, L_z=0.0,
                      regime=Regime.OVERALL_MONOTONE, k=k, d=d, K=float(K),
                      name="bistable_cubic", poly=poly)


def linear_decay(rate=1.0, k=1, d=1):
    """``f(y) = -rate * y``; handy for closed-form checks."""
    def f(y, z):
        return -rate * y

    poly = ((0.0, -float(rate)), (0.0,) * d) if k == 1 else None
    regime = Regime.STRICTLY_MONOTONE if rate > 0 else Regime.TRULY_MONOTONE
    return DriverSpec(f, m=1, M_y=-float(rate), L_y=abs(rate) / 3.0, L_z=0.0, regime=regime,
                      k=k, d=d, name="linear_decay", poly=poly)


DRIVERS = {
    "cubic_damped": cubic_damped,
    "pure_cubic": pure_cubic,
    "bistable_cubic": bistable_cubic,
    "linear_decay": linear_decay,
}


def capped_square(c, k=1):
    """``g(x) = min(|x|^2, c)`` replicated on the ``k`` output components."""
    c = float(c)
    if not c > 0:
        raise ConfigurationError("cap c must be > 0")

    def g(x):
        v = np.minimum(np.sum(np.asarray(x) ** 2, axis=-1), c)
        return np.repeat(v[..., None], k, axis=-1)

    return TerminalSpec(g, sup_norm=c, lipschitz_bound=2.0 * math.sqrt(c), name="capped_square")


def square(k=1):
    """Unbounded ``g(x) = |x|^2``; only usable with terminal truncation."""
    def g(x):
        v = np.sum(np.asarray(x) ** 2, axis=-1)
        return np.repeat(v[..., None], k, axis=-1)

    return TerminalSpec(g, sup_norm=math.inf, lipschitz_bound=math.inf, name="square")


def zero_terminal(k=1):
    def g(x):
        x = np.asarray(x)
        return np.zeros(x.shape[:-1] + (k,))

    return TerminalSpec(g, sup_norm=0.0, lipschitz_bound=0.0, name="zero")


def shifted(terminal: TerminalSpec, shift):
    """``g + shift``; used to build ordered terminal pairs."""
    base = terminal.g

    def g(x):
        return base(x) + shift

    return TerminalSpec(g, sup_norm=terminal.sup_norm + abs(shift),
                        lipschitz_bound=terminal.lipschitz_bound,
                        name=f"{terminal.name}+{shift:g}")


TERMINALS = {
    "capped_square": capped_square,
    "square": square,
    "zero": zero_terminal,
}


def brownian(d=1):
    """``X = W``: zero drift, identity diffusion, started at the origin."""
    def mu(t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def sigma(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()

    return ForwardSpec(np.zeros(d), mu, sigma, name="brownian", drift_bound=0.0, diffusion_bound=1.0)


# -- structural checks ---------------------------------------------------------

@dataclass
class ConditionResult:
    name: str
    worst_slack: float
    passed: bool
    skipped: bool = False
    witness: Optional[dict] = None
    gating: bool = True


@dataclass
class ValidationReport:
    driver: str
    sample_count: int
    box: float
    tolerance: float
    conditions: dict = field(default_factory=dict)
    max_chord_slope: float = -math.inf

    @property
    def all_passed(self):
        return all(c.passed for c in self.conditions.values() if c.gating and not c.skipped)

    def rows(self):
        for c in self.conditions.values():
            yield {"condition": c.name, "worst_slack": c.worst_slack,
                   "passed": c.passed, "skipped": c.skipped, "gating": c.gating}


_CHUNK = 4096


def _draw(rng, n, shape, box):
    return rng.uniform(-box, box, size=(n,) + shape)


def validate_driver(spec: DriverSpec, sample_count: int, seed: int, box: float = 10.0,
                    tolerance: float = 1e-10) -> ValidationReport:
    """Spot-check the declared constants of ``spec`` on ``[-box, box]``.

    Half of each chunk draws independent pairs ``y, y'`` uniformly in the box;
    the other half draws close pairs ``y' = y + eps u`` with ``eps`` log-uniform
    in ``[1e-6, 1]`` so that behaviour near the diagonal (and near the origin)
    is exercised.  ``z`` pairs are drawn the same way.  Each chunk uses its own
    substream ``[seed, chunk]`` so the report does not depend on scheduling.

    A slack is ``lhs - rhs`` of the inequality; a condition passes when its
    worst slack is ``<= tolerance``.
    """
    if sample_count < 1:
        raise ConfigurationError("sample_count must be >= 1")
    k, d = spec.k, spec.d
    worst = {"MonY": -math.inf, "RegY": -math.inf, "LipZ": -math.inf, "GMonGr": -math.inf}
    witness = {}
    max_slope = -math.inf
    done = 0
    chunk = 0
    while done < sample_count:
        n = min(_CHUNK, sample_count - done)
        rng = np.random.default_rng([seed, chunk])
        y = _draw(rng, n, (k,), box)
        z = _draw(rng, n, (k, d), box)
        near = rng.random(n) < 0.5
        eps = 10.0 ** rng.uniform(-6.0, 0.0, size=(n, 1))
        yp = np.where(near[:, None], y + eps * rng.uniform(-1, 1, size=(n, k)), _draw(rng, n, (k,), box))
        zp = np.where(near[:, None, None], z + eps[:, :, None] * rng.uniform(-1, 1, size=(n, k, d)),
                      _draw(rng, n, (k, d), box))
        # a slice of pairs straddling the origin, where strictness degenerates first
        small = rng.random(n) < 0.1
        y = np.where(small[:, None], y * 1e-3, y)
        yp = np.where(small[:, None], yp * 1e-3, yp)

        fy = np.asarray(spec.evaluate(y, z))
        fyp = np.asarray(spec.evaluate(yp, z))
        dy = yp - y
        df = fyp - fy
        dy2 = np.sum(dy * dy, axis=-1)
        inner = np.sum(dy * df, axis=-1)

        mon = inner - spec.M_y * dy2
        nz = dy2 > 0
        if np.any(nz):
            max_slope = max(max_slope, float(np.max(inner[nz] / dy2[nz])))
        _track(worst, witness, "MonY", mon, y, yp)

        ny = np.linalg.norm(y, axis=-1)
        nyp = np.linalg.norm(yp, axis=-1)
        reg = np.linalg.norm(df, axis=-1) - spec.L_y * (1 + nyp ** (spec.m - 1) + ny ** (spec.m - 1)) * np.sqrt(dy2)
        _track(worst, witness, "RegY", reg, y, yp)

        fz = np.asarray(spec.evaluate(y, zp))
        lip = np.linalg.norm(fz - fy, axis=-1) - spec.L_z * np.linalg.norm((zp - z).reshape(n, -1), axis=-1)
        _track(worst, witness, "LipZ", lip, y, yp)

        if spec.regime is Regime.OVERALL_MONOTONE:
            far = ny > spec.K
            if np.any(far):
                f0 = np.asarray(spec.evaluate(y[far], np.zeros((int(far.sum()), k, d))))
                gm = np.sum(y[far] * f0, axis=-1) - spec.M_y * ny[far] ** 2
                _track(worst, witness, "GMonGr", gm, y[far], y[far])
        done += n
        chunk += 1

    report = ValidationReport(spec.name, sample_count, box, tolerance, max_chord_slope=max_slope)
    overall = spec.regime is Regime.OVERALL_MONOTONE
    for name in ("MonY", "RegY", "LipZ", "GMonGr"):
        skipped = (name == "MonY" and overall) or (name == "GMonGr" and not overall)
        w = worst[name]
        report.conditions[name] = ConditionResult(name, w, skipped or w <= tolerance, skipped,
                                                  witness.get(name))
    # strictness is only claimed by the STRICTLY_MONOTONE regime; otherwise informational
    strict_ok = spec.M_y < 0 and report.conditions["MonY"].passed
    report.conditions["Strict"] = ConditionResult(
        "Strict", max_slope, strict_ok, skipped=overall,
        gating=spec.regime is Regime.STRICTLY_MONOTONE)
    return report


def _track(worst, witness, name, slack, y, yp):
    if slack.size == 0:
        return
    j = int(np.argmax(slack))
    if slack[j] > worst[name]:
        worst[name] = float(slack[j])
        witness[name] = {"y": y[j].tolist(), "y_prime": yp[j].tolist()}


@dataclass(frozen=True)
class StabilityFlags:
    k_dSc: bool
    k_dSn: bool


def stability_flags(spec: DriverSpec) -> StabilityFlags:
    lz2 = spec.L_z ** 2
    return StabilityFlags(lz2 <= -spec.M_y, lz2 <= (-spec.M_y) / 4.0)
