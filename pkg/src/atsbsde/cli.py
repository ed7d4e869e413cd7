"""Command-line experiment runner.

    atsbsde <grid|solve|stability|compare|convergence|validate> --config run.ini [--out DIR]

Exit status: 0 when every verdict passes, 1 when one fails, 2 on a
configuration error.  ``ATSBSDE_CONFIG``, ``ATSBSDE_OUT``, ``ATSBSDE_SEED`` and
``ATSBSDE_THREADS`` stand in for the matching flags.
"""

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy

from . import __version__, kernels
from .config import ExperimentConfig, fmt, load_config
from .diagnostics import (EnvelopeRegime, FineGrid, ImplicitExplicitAverage, comparison_check,
                          default_regime, fit_slope, grid_spec_for, reference_value, run_point,
                          run_stability)
from .errors import ConfigurationError, ConvergenceError, ExplosionError
from .model import ProblemSpec, shifted, validate_driver, zero_terminal
from .quantize import build_chain
from .solver import solve_backward
from .timegrid import GridKind, build_grid, grid_diagnostics

SUBCOMMANDS = ("grid", "solve", "stability", "compare", "convergence", "validate")


class Run:
    def __init__(self, cfg: ExperimentConfig, out, threads):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.files = []
        self.timings = {}
        self.summary = {}
        os.makedirs(out, exist_ok=True)

    def write_csv(self, name, header, rows):
        path = os.path.join(self.out, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([fmt(v) for v in r])
        self.files.append(name)
        return path

    def stage(self, name):
        run = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *a):
                run.timings[name] = time.perf_counter() - self.t0
        return _T()

    def chain(self):
        cfg = self.cfg
        with self.stage("grid"):
            grid = build_grid(cfg.grid, cfg.problem)
        with self.stage("chain"):
            chain = build_chain(cfg.problem, grid, cfg.policy, cfg.mode, cfg.mc)
        return grid, chain


def cmd_grid(run: Run):
    cfg = run.cfg
    with run.stage("grid"):
        grid = build_grid(cfg.grid, cfg.problem)
    rows = [(0, grid.times[0], "", "")]
    rows += [(i + 1, grid.times[i + 1], grid.steps[i], grid.clauses[i]) for i in range(grid.N)]
    run.write_csv("grid.csv", ("i", "t_i", "h_i", "active_clause"), rows)
    dg = grid_diagnostics(grid)
    run.write_csv("grid_diagnostics.csv", ("N", "excess", "non_uniformity", "min_step", "max_step"),
                  [(dg.N, dg.excess, dg.non_uniformity, dg.min_step, dg.max_step)])
    print(f"N={dg.N} excess={dg.excess:.4g} non_uniformity={dg.non_uniformity:.4g}")
    run.summary.update(N=dg.N, excess=dg.excess, non_uniformity=dg.non_uniformity)
    return True


def _solve(run):
    grid, chain = run.chain()
    with run.stage("solve"):
        sol = solve_backward(chain, run.cfg.problem, run.cfg.scheme)
    return grid, sol


def cmd_solve(run: Run):
    try:
        grid, sol = _solve(run)
    except ExplosionError as exc:
        print(f"explosion: {exc}")
        run.summary.update(exploded_at=exc.i)
        return False
    rows = []
    for i in range(grid.N + 1):
        y = sol.y[i][:, 0]
        h = grid.steps[i - 1] if i > 0 else ""
        rows.append((i, grid.times[i], h, y.min(), y.max(), sol.y_at_x0(i)[0], sol.z_at_x0(i)[0, 0]))
    run.write_csv("solve.csv", ("i", "t_i", "h_i", "min_y", "max_y", "y_at_x0", "z_at_x0"), rows)
    if run.cfg.section("output").get("dump", "summary") == "full":
        full = []
        for i in range(grid.N + 1):
            nodes = sol.spatial[i].nodes()
            for k in range(len(nodes)):
                full.append((i, k, nodes[k, 0], sol.y[i][k, 0], sol.z[i][k, 0, 0]))
        run.write_csv("tables.csv", ("i", "k", "x", "y", "z"), full)
    run.summary.update(y0=float(sol.y_at_x0(0)[0]), N=grid.N)
    return True


def _regime(run):
    r = run.cfg.section("stability").get("regime", "auto")
    if r == "auto":
        return default_regime(run.cfg.problem)
    try:
        return EnvelopeRegime(r)
    except ValueError:
        raise ConfigurationError(f"[stability] unknown regime {r!r}") from None


def cmd_stability(run: Run):
    sec = run.cfg.section("stability")
    tol = float(sec.get("tol", "0.05"))
    positivity = sec.get("positivity", "false").lower() in ("1", "true", "yes")
    grid, chain = run.chain()
    with run.stage("solve"):
        env, _ = run_stability(chain, run.cfg.problem, run.cfg.scheme, _regime(run), tol)
    bad = set(env.violations)
    neg = set(env.negative_times()) if positivity else set()
    rows = [(i, env.times[i], env.min_y[i], env.max_abs[i], env.bound[i], int(i in bad or i in neg))
            for i in range(len(env.times))]
    run.write_csv("stability.csv", ("i", "t_i", "min_y", "max_abs_y", "bound", "violation"), rows)
    ok = env.passed and not neg
    run.summary.update(regime=env.regime.value, violations=sorted(bad), negative_times=sorted(neg),
                       exploded_at=env.exploded_at, passed=ok)
    print(f"stability {env.regime.value}: {'pass' if ok else 'FAIL'} "
          f"({len(bad)} envelope violations, {len(neg)} negative times)")
    return ok


def cmd_compare(run: Run):
    cfg = run.cfg
    sec = cfg.section("compare")
    tol = float(sec.get("tol", "1e-10"))
    lower = sec.get("lower", "shift")
    grid, chain = run.chain()
    pb = cfg.problem
    if lower == "zero":
        hi, lo = pb, ProblemSpec(pb.T, pb.forward, pb.driver, zero_terminal(pb.driver.k))
    elif lower == "shift":
        s = float(sec.get("shift", "1.0"))
        if s < 0:
            raise ConfigurationError("[compare] shift must be >= 0")
        hi, lo = ProblemSpec(pb.T, pb.forward, pb.driver, shifted(pb.terminal, s)), pb
    else:
        raise ConfigurationError(f"[compare] lower must be 'shift' or 'zero', got {lower!r}")
    with run.stage("solve"):
        try:
            s_hi = solve_backward(chain, hi, cfg.scheme)
            s_lo = solve_backward(chain, lo, cfg.scheme)
        except ExplosionError as exc:
            print(f"explosion: {exc}")
            run.summary.update(exploded_at=exc.i, passed=False)
            return False
    rep = comparison_check(s_hi, s_lo, tol)
    rows = []
    for i, d in enumerate(rep.differences):
        for k in range(d.shape[0]):
            rows.append((i, k, d[k, 0]))
    run.write_csv("compare.csv", ("i", "k", "difference"), rows)
    run.summary.update(min_difference=rep.min_difference, passed=rep.passed)
    print(f"comparison: {'pass' if rep.passed else 'FAIL'} (min difference {rep.min_difference:.3e})")
    return rep.passed


def cmd_convergence(run: Run):
    cfg = run.cfg
    sec = cfg.section("convergence")
    try:
        ns = [int(v) for v in sec.get("n_list", "10,20,40,80").split(",")]
    except ValueError:
        raise ConfigurationError("[convergence] n_list must be comma-separated integers") from None
    n_ref = int(sec.get("n_ref", "150"))
    ref_kind = sec.get("reference", "implicit_explicit_average")
    policy = {"implicit_explicit_average": ImplicitExplicitAverage, "fine_grid": FineGrid}.get(ref_kind)
    if policy is None:
        raise ConfigurationError(f"[convergence] unknown reference {ref_kind!r}")
    lo, hi = (float(v) for v in sec.get("slope_window", "-0.75,-0.30").split(","))
    extra = {k: getattr(cfg.grid, k) for k in ("L0", "alpha", "comparison_bound") if getattr(cfg.grid, k) is not None}
    kind = cfg.grid.kind
    with run.stage("reference"):
        ref = reference_value(cfg.problem, cfg.scheme, kind, policy(n_ref), cfg.policy, cfg.mode, cfg.mc, **extra)

    def one(n):
        return run_point(cfg.problem, grid_spec_for(cfg.scheme, kind, n, **extra), cfg.scheme,
                         cfg.policy, cfg.mode, cfg.mc)

    with run.stage("runs"):
        with ThreadPoolExecutor(max_workers=max(1, run.threads)) as ex:
            results = list(ex.map(one, ns))
    errs = [abs(r.y0 - ref) for r in results]
    slope = fit_slope(ns, errs)
    run.write_csv("convergence.csv", ("n", "N", "y0", "z0", "reference", "error"),
                  [(r.n, r.N, r.y0, r.z0, ref, e) for r, e in zip(results, errs)])
    run.timings.update({f"run_n{r.n}": r.seconds for r in results})
    ok = lo <= slope <= hi
    run.summary.update(reference=ref, slope=slope, slope_window=[lo, hi], passed=ok)
    print(f"convergence: slope {slope:.4f} {'within' if ok else 'OUTSIDE'} [{lo}, {hi}]")
    return ok


def cmd_validate(run: Run):
    sec = run.cfg.section("validate")
    n = int(sec.get("samples", "10000"))
    seed = int(sec.get("seed", run.cfg.mc.seed))
    box = float(sec.get("box", "10"))
    with run.stage("validate"):
        rep = validate_driver(run.cfg.problem.driver, n, seed, box)
    rows = [(c.name, c.worst_slack, int(c.passed), int(c.skipped), int(c.gating)) for c in rep.conditions.values()]
    run.write_csv("validate.csv", ("condition", "worst_slack", "passed", "skipped", "gating"), rows)
    run.summary.update(all_passed=rep.all_passed)
    print(f"validate {rep.driver}: {'pass' if rep.all_passed else 'FAIL'}")
    return rep.all_passed


COMMANDS = {
    "grid": cmd_grid, "solve": cmd_solve, "stability": cmd_stability,
    "compare": cmd_compare, "convergence": cmd_convergence, "validate": cmd_validate,
}


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(run: Run, subcommand):
    cfg = run.cfg
    with open(os.path.join(run.out, "resolved.ini"), "w", newline="\n") as fh:
        fh.write(cfg.serialize())
    manifest = {
        "subcommand": subcommand,
        "config": cfg.raw,
        "config_hash": cfg.digest(),
        "seed": cfg.mc.seed,
        "threads": run.threads,
        "versions": {"atsbsde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version(), "kernels": kernels.BACKEND},
        "timings": run.timings,
        "outputs": {name: _sha(os.path.join(run.out, name)) for name in run.files},
        "summary": run.summary,
    }
    with open(os.path.join(run.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return manifest


def run(config_path, subcommand, out, seed=None, threads=1):
    """Execute one subcommand; returns ``(exit_code, manifest)``."""
    if subcommand not in COMMANDS:
        raise ConfigurationError(f"unknown subcommand {subcommand!r}")
    cfg = load_config(path=config_path, seed=seed)
    r = Run(cfg, out, threads)
    try:
        ok = COMMANDS[subcommand](r)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        r.summary.update(error=str(exc))
        ok = False
    return (0 if ok else 1), write_manifest(r, subcommand)


def build_parser():
    env = os.environ.get
    p = argparse.ArgumentParser(prog="atsbsde", description="Adapted time-step BSDE experiments")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", default=env("ATSBSDE_CONFIG"), help="INI experiment file")
    p.add_argument("--out", default=env("ATSBSDE_OUT", "out"), help="output directory")
    p.add_argument("--seed", type=int, default=env("ATSBSDE_SEED"), help="override [quantize] seed")
    p.add_argument("--threads", type=int, default=int(env("ATSBSDE_THREADS", "1")))
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not args.config:
        print("error: --config is required (or set ATSBSDE_CONFIG)", file=sys.stderr)
        return 2
    try:
        code, _ = run(args.config, args.subcommand, args.out,
                      None if args.seed is None else int(args.seed), args.threads)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())
