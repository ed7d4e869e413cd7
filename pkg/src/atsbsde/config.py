"""Experiment configuration: INI files with named blocks, plus named experiment presets.

Every quantity the experiments do not pin down (the horizon ``T`` first of
all) must be given explicitly; nothing falls back to a silent default.
"""

import configparser
import hashlib
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .model import (DRIVERS, ProblemSpec, TERMINALS, brownian, bistable_cubic, capped_square,
                    cubic_damped, linear_decay, pure_cubic, square, zero_terminal)
from .quantize import GridPolicy, MonteCarloOptions
from .solver import Scheme, SchemeKind
from .timegrid import GridKind, GridSpec

CUBIC_DAMPED_C_VALUES = (3.6, 4.0, 6.0)

PRESETS = {
    "cubic_damped_cap": {"driver": "cubic_damped", "terminal": "capped_square"},
    "pure_cubic_cap": {"driver": "pure_cubic", "terminal": "capped_square", "K": "1", "growth_constant": "-1", "c": "7"},
}

BLOCKS = ("problem", "grid", "quantize", "scheme", "output", "stability", "compare", "convergence", "validate")


def preset(name):
    """Named experiment block; unstated values (``T``, and ``c`` for cubic_damped_cap) stay required."""
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


@dataclass
class ExperimentConfig:
    raw: dict                   # block -> {key: str}, fully resolved
    problem: ProblemSpec
    grid: GridSpec
    policy: GridPolicy
    mode: str
    mc: MonteCarloOptions
    scheme: Scheme

    def section(self, name):
        return self.raw.get(name, {})

    def serialize(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for block in BLOCKS:
            if block in self.raw:
                cp[block] = {k: self.raw[block][k] for k in sorted(self.raw[block])}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self):
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _num(block, key, raw, cast=float, required=True, default=None):
    if key not in raw:
        if required:
            raise ConfigurationError(f"[{block}] missing required field '{key}'")
        return default
    try:
        return cast(raw[key])
    except ValueError:
        raise ConfigurationError(f"[{block}] {key} = {raw[key]!r} is not a valid {cast.__name__}") from None


def _build_problem(p):
    name = p.get("preset")
    if name:
        merged = preset(name)
        merged.update(p)
        p.clear()
        p.update(merged)
        if name == "cubic_damped_cap" and "c" not in p:
            raise ConfigurationError("preset cubic_damped_cap needs the cap c (the experiments use c in {3.6, 4, 6})")
    T = _num("problem", "T", p)
    if not (math.isfinite(T) and T > 0):
        raise ConfigurationError("T must be a positive finite number")
    dname = p.get("driver", "cubic_damped")
    if dname not in DRIVERS:
        raise ConfigurationError(f"unknown driver {dname!r}; known: {sorted(DRIVERS)}")
    if dname == "cubic_damped":
        b = _num("problem", "z_coupling", p, float, False, 0.0)
        drv = cubic_damped(z_coupling=[b] if b else None)
    elif dname == "pure_cubic":
        K = _num("problem", "K", p, float, False)
        gc = _num("problem", "growth_constant", p, float, False)
        drv = pure_cubic(K=K, growth_constant=gc)
    elif dname == "bistable_cubic":
        drv = bistable_cubic(K=_num("problem", "K", p, float, False, math.sqrt(2.0)),
                             growth_constant=_num("problem", "growth_constant", p, float, False, -1.0))
    else:
        drv = linear_decay(_num("problem", "rate", p))
    tname = p.get("terminal", "capped_square")
    if tname not in TERMINALS:
        raise ConfigurationError(f"unknown terminal {tname!r}; known: {sorted(TERMINALS)}")
    if tname == "capped_square":
        term = capped_square(_num("problem", "c", p))
    elif tname == "square":
        term = square()
    else:
        term = zero_terminal()
    return ProblemSpec(T, brownian(1), drv, term)


def _build_grid(g):
    try:
        kind = GridKind(g.get("kind", ""))
    except ValueError:
        raise ConfigurationError(f"[grid] unknown kind {g.get('kind')!r}; known: {[k.value for k in GridKind]}") from None
    n = _num("grid", "n", g, int)
    kw = {}
    for key in ("comparison_bound", "L0", "alpha"):
        if key in g:
            kw[key] = _num("grid", key, g)
    if "base" in g:
        kw["base"] = GridKind(g["base"])
    return GridSpec(kind, n, **kw)


def _build_quantize(q):
    sched = q.get("schedule", "index")
    if sched != "index":
        sched = _num("quantize", "schedule", q, int)
    policy = GridPolicy(drift_bound=_num("quantize", "drift_factor", q, float, False, 0.5),
                        width_factor=_num("quantize", "width_factor", q, float, False, 1.5),
                        q=_num("quantize", "q", q, float, False, 3.0),
                        diffusion_bound=_num("quantize", "diffusion_bound", q, float, False, 1.0),
                        schedule=sched)
    mode = q.get("mode", "analytic")
    if mode not in ("analytic", "mc"):
        raise ConfigurationError(f"[quantize] mode must be analytic or mc, got {mode!r}")
    mc = MonteCarloOptions(_num("quantize", "samples", q, int, False, 100_000),
                           _num("quantize", "seed", q, int, False, 0))
    return policy, mode, mc


def _build_scheme(s, grid):
    default = {GridKind.UNIFORM: "explicit_uniform",
               GridKind.ATS_TRUNC_TERMINAL: "explicit_trunc_terminal"}.get(grid.kind, "explicit_ats")
    try:
        kind = SchemeKind(s.get("kind", default))
    except ValueError:
        raise ConfigurationError(f"[scheme] unknown kind {s.get('kind')!r}") from None
    return Scheme(kind, tol=_num("scheme", "tol", s, float, False, 1e-12),
                  max_iter=_num("scheme", "max_iter", s, int, False, 200),
                  cap=_num("scheme", "cap", s, float, False, 1e12),
                  L0=grid.L0, alpha=grid.alpha)


def load_config(text=None, path=None, seed=None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh)
        else:
            cp.read_string(text or "")
    except (configparser.Error, OSError) as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None
    unknown = [s for s in cp.sections() if s not in BLOCKS]
    if unknown:
        raise ConfigurationError(f"unknown config blocks {unknown}")
    raw = {s: dict(cp[s]) for s in cp.sections()}
    if "problem" not in raw:
        raise ConfigurationError("config needs a [problem] block")
    if "grid" not in raw:
        raise ConfigurationError("config needs a [grid] block")
    raw.setdefault("quantize", {})
    if seed is not None:
        raw["quantize"]["seed"] = str(seed)
    problem = _build_problem(raw["problem"])
    grid = _build_grid(raw["grid"])
    policy, mode, mc = _build_quantize(raw["quantize"])
    scheme = _build_scheme(raw.setdefault("scheme", {}), grid)
    raw["scheme"]["kind"] = scheme.kind.value
    return ExperimentConfig(raw, problem, grid, policy, mode, mc, scheme)


def fmt(x):
    """Float formatting for CSV output: 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)
