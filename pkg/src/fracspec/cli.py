"""Command-line front end.

Every subcommand assembles a pencil from the mesh options, then either
computes (or loads) an eigenbasis, partitions the spectrum, or runs a
counting experiment.  Outputs are UTF-8 CSV/text files in ``--out``.
A flat ``key = value`` config file may supply any flag; flags given on
the command line win.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import fracpde
from .counting import count_geq_exact, count_geq_kpm
from .errors import FracSpecError
from .fem import BasisSpec, assemble, build_mesh, error_norm, read_mesh
from .partition import (
    RefinementParams, estimate_spectral_radius, partition, save_plan,
)
from .slicer import PHASES, EigenBasis, EvaluatorPool, SolverOptions, compute_eigenbasis

COMMANDS = ("eigs", "poisson", "diffusion", "partition", "count", "apply", "accuracy-sweep")


def _floats(text):
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(x) for x in str(text).replace(",", " ").split()]


@dataclass
class RunConfig:
    """All knobs of one run, validated on construction."""

    problem: str = "eigs"
    dim: int = 2
    elements: list = field(default_factory=lambda: [8])
    order: list = field(default_factory=lambda: [3])
    bc: str = "dirichlet"
    alpha: list = field(default_factory=lambda: [round(0.2 * k, 1) for k in range(11)])
    mu: float = 1.0
    time: float = 0.4
    evaluators: int = 1
    na: int = 7
    nb: int = 3
    nc: int = 10
    threshold: float = 0.2
    tol: float = 1e-10
    seed: int = 0
    out: str = "fracspec-out"
    basis_cache: str | None = None
    mesh_file: str | None = None
    sweep_problem: str = "poisson"
    degrees: list = field(default_factory=lambda: [64, 256, 1024])
    damping: str = "none"
    probes: int = 32
    shifts: int = 20
    samples: int = 33

    def __post_init__(self):
        if self.problem not in COMMANDS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if any(e < 1 for e in self.elements):
            raise ValueError("elements must be positive")
        if any(not 1 <= p <= 8 for p in self.order):
            raise ValueError("order must lie in 1..8")
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError("bc must be dirichlet or neumann")
        if self.problem != "apply" and any(not 0 <= a <= 2 for a in self.alpha):
            raise ValueError("alpha values must lie in [0, 2]")
        if self.problem == "apply" and any(not -2 <= a <= 2 for a in self.alpha):
            raise ValueError("alpha values must lie in [-2, 2]")
        if self.mu <= 0 or self.time < 0:
            raise ValueError("need mu > 0 and time >= 0")
        if self.evaluators < 1 or min(self.na, self.nb, self.nc) < 0:
            raise ValueError("evaluators must be >= 1 and refinement counts >= 0")
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")
        if self.sweep_problem not in ("poisson", "diffusion"):
            raise ValueError("sweep problem must be poisson or diffusion")
        if self.damping not in ("none", "jackson", "both"):
            raise ValueError("damping must be none, jackson or both")


# flag name -> value parser; the RunConfig field is the flag with underscores
_FLAGS = {
    "dim": int, "elements": _ints, "order": _ints, "bc": str, "alpha": _floats,
    "mu": float, "time": float, "evaluators": int, "na": int, "nb": int, "nc": int,
    "threshold": float, "tol": float, "seed": int, "out": str, "basis-cache": str,
    "mesh-file": str, "sweep-problem": str, "degrees": _ints, "damping": str,
    "probes": int, "shifts": int, "samples": int,
}

_HELP = {
    "dim": "spatial dimension, 1 or 2 (default 2)",
    "elements": "elements per side, comma list for sweeps (default 8)",
    "order": "polynomial order 1..8, comma list for sweeps (default 3)",
    "bc": "dirichlet or neumann (default dirichlet)",
    "alpha": "comma list of fractional orders (default 0,0.2,...,2)",
    "mu": "diffusivity (default 1)",
    "time": "diffusion evaluation time (default 0.4)",
    "evaluators": "number of spectrum slices solved concurrently (default 1)",
    "na": "global refinement iterations (default 7)",
    "nb": "local refinement passes (default 3)",
    "nc": "bisection steps per split (default 10)",
    "threshold": "relative imbalance that triggers local refinement (default 0.2)",
    "tol": "relative Ritz residual accepted by the slice solver (default 1e-10)",
    "seed": "seed for start blocks and probes (default 0)",
    "out": "output directory (default fracspec-out)",
    "basis-cache": "directory of cached eigenbases, keyed by discretization",
    "mesh-file": "read a quad mesh in the text format instead of building one",
    "sweep-problem": "poisson or diffusion, for accuracy-sweep (default poisson)",
    "degrees": "Chebyshev degrees for count (default 64,256,1024)",
    "damping": "none, jackson or both, for count (default none)",
    "probes": "random probe vectors for the KPM trace (default 32)",
    "shifts": "number of interior shifts for count (default 20)",
    "samples": "points per side of the output sampling grid (default 33)",
}


def read_config(path):
    """Parse a flat ``key = value`` file; unknown keys are an error."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            flag = key.replace("_", "-")
            if flag not in _FLAGS:
                raise ValueError(f"{path}:{ln}: unknown key {key!r}")
            out[flag.replace("-", "_")] = _FLAGS[flag](value)
    return out


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fracspec",
        description="Spectrum slicing eigensolver and spectral fractional PDE solver.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "eigs": "compute and store the full eigenbasis",
        "poisson": "solve the fractional Poisson problem for each alpha",
        "diffusion": "evolve fractional diffusion to --time for each alpha",
        "partition": "partition the spectrum and report slice loads",
        "count": "compare exact inertia counts with KPM estimates",
        "apply": "apply the fractional Laplacian to the forcing for each alpha",
        "accuracy-sweep": "L2 errors over orders, meshes and alphas",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="flat key = value file with defaults")
        for flag, typ in _FLAGS.items():
            p.add_argument(f"--{flag}", type=typ, default=None, help=_HELP[flag])
    return parser


def make_config(argv=None):
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        values.update(read_config(args.config))
    for flag in _FLAGS:
        v = getattr(args, flag.replace("-", "_"))
        if v is not None:
            values[flag.replace("-", "_")] = v
    return RunConfig(problem=args.command, **values)


# ----------------------------------------------------------------------------
# shared pieces

def assemble_from(cfg, order=None, elements=None):
    order = order or cfg.order[0]
    if cfg.mesh_file:
        mesh = read_mesh(cfg.mesh_file)
    else:
        mesh = build_mesh(cfg.dim, elements or cfg.elements[0])
    return assemble(mesh, BasisSpec(order), bc=cfg.bc)


def forcing(dim):
    """Lowest Dirichlet mode of the unit box, normalized to unit L2 norm."""
    c = 2.0 ** (dim / 2)
    if dim == 1:
        return lambda x: c * np.sin(np.pi * x)
    return lambda x, y: c * np.sin(np.pi * x) * np.sin(np.pi * y)


def _unit_box(ap):
    return ap.bc == "dirichlet" and all(b == (0.0, 1.0) for b in ap.mesh.bounds)


def exact_solution(cfg, ap, alpha, problem):
    """Closed-form solution for the default forcing, or None off the unit box."""
    if not _unit_box(ap):
        return None
    lam = ap.mesh.dim * np.pi ** 2
    f = forcing(ap.mesh.dim)
    if problem == "poisson":
        factor = lam ** (-alpha / 2)
    else:
        factor = np.exp(-cfg.mu * lam ** (alpha / 2) * cfg.time)
    return lambda *x: factor * f(*x)


def compute_basis(ap, cfg, out_dir=None):
    """Partition + slice solve + post-processing, with per-phase timings."""
    params = RefinementParams(cfg.na, cfg.nb, cfg.nc, cfg.threshold)
    opts = SolverOptions(ritz_tol=cfg.tol, seed=cfg.seed)
    basis = compute_eigenbasis(ap, cfg.evaluators, params, opts, seed=cfg.seed)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_plan(basis.plan, os.path.join(out_dir, "plan.txt"))
        write_phases(os.path.join(out_dir, "phases.csv"), basis, basis.plan)
    return basis


def write_phases(path, basis, plan):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "seconds", "rounds", "factorizations"])
        counters = {
            "partition": (plan.rounds, plan.factorizations),
            "solve": ("", basis.meta.get("factorizations", "")),
        }
        total = 0.0
        for phase in PHASES:
            sec = basis.timings.get(phase, 0.0)
            total += sec
            r, f = counters.get(phase, ("", ""))
            w.writerow([phase, f"{sec:.6f}", r, f])
        w.writerow(["total", f"{total:.6f}", plan.rounds,
                    plan.factorizations + basis.meta.get("factorizations", 0)])


def obtain_basis(ap, cfg, log=print):
    """Load the cached basis for this discretization or compute and cache it."""
    cache = os.path.join(cfg.basis_cache, ap.digest) if cfg.basis_cache else None
    if cache and os.path.exists(os.path.join(cache, "meta.json")):
        log(f"loading cached basis {cache}")
        return EigenBasis.load(cache, ap.pencil, digest=ap.digest)
    basis = compute_basis(ap, cfg, cache)
    if cache:
        basis.save(cache)
        log(f"cached basis in {cache}")
    return basis


def _alpha_tag(a):
    return f"{a:+.2f}".replace("+", "").replace("-", "m")


# ----------------------------------------------------------------------------
# subcommands

def cmd_eigs(cfg, log=print):
    ap = assemble_from(cfg)
    basis = compute_basis(ap, cfg, cfg.out)
    basis.save(os.path.join(cfg.out, "basis"))
    log(f"N = {basis.count} eigenpairs, lowest {basis.values[0]:.12g}, "
        f"highest {basis.values[-1]:.12g}")
    return basis


def _fractional(cfg, problem, log=print):
    ap = assemble_from(cfg)
    basis = obtain_basis(ap, cfg, log)
    f = forcing(ap.mesh.dim)
    c = fracpde.expand_function(f, basis, ap)
    rows = []
    for a in cfg.alpha:
        if problem == "poisson":
            u = fracpde.solve_poisson(c, basis, a)
        else:
            u = fracpde.solve_diffusion(c, basis, a, cfg.mu, cfg.time)
        fracpde.export_csv(os.path.join(cfg.out, f"{problem}_alpha{_alpha_tag(a)}.csv"),
                           u, ap, samples=cfg.samples)
        exact = exact_solution(cfg, ap, a, problem)
        err = error_norm(u, exact, ap) if exact else float("nan")
        rows.append((a, err))
        log(f"alpha = {a:.2f}  L2 error = {err:.3e}")
    with open(os.path.join(cfg.out, f"{problem}_errors.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "l2_error"])
        w.writerows([(f"{a:.2f}", f"{e:.6e}") for a, e in rows])
    return rows


def cmd_poisson(cfg, log=print):
    return _fractional(cfg, "poisson", log)


def cmd_diffusion(cfg, log=print):
    return _fractional(cfg, "diffusion", log)


def cmd_apply(cfg, log=print):
    ap = assemble_from(cfg)
    basis = obtain_basis(ap, cfg, log)
    c = fracpde.expand_function(forcing(ap.mesh.dim), basis, ap)
    paths = []
    for a in cfg.alpha:
        ca = fracpde.apply_fractional(c, basis, a)
        u = fracpde.reconstruct(ca, basis)
        path = os.path.join(cfg.out, f"apply_alpha{_alpha_tag(a)}.csv")
        fracpde.export_csv(path, u, ap, samples=cfg.samples)
        fracpde.export_coefficients(
            os.path.join(cfg.out, f"apply_alpha{_alpha_tag(a)}_coeffs.txt"), ca)
        paths.append(path)
        log(f"alpha = {a:.2f} -> {path}")
    return paths


def cmd_partition(cfg, log=print):
    ap = assemble_from(cfg)
    params = RefinementParams(cfg.na, cfg.nb, cfg.nc, cfg.threshold)
    with EvaluatorPool(cfg.evaluators) as pool:
        plan = partition(ap.pencil, cfg.evaluators, params, executor=pool.executor,
                         seed=cfg.seed)
    save_plan(plan, os.path.join(cfg.out, "plan.txt"))
    with open(os.path.join(cfg.out, "imbalance.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "max_load", "min_load", "ideal_load", "rounds"])
        for stage, mx, mn, ideal, r in plan.history:
            w.writerow([stage, mx, mn, f"{ideal:.3f}", r])
    for stage, mx, mn, ideal, r in plan.history:
        log(f"{stage:8s} max {mx:6d}  min {mn:6d}  ideal {ideal:9.2f}  rounds {r}")
    return plan


def cmd_count(cfg, log=print):
    ap = assemble_from(cfg)
    pencil = ap.pencil
    bounds = estimate_spectral_radius(pencil, seed=cfg.seed)
    shifts = np.linspace(0, bounds.hi, cfg.shifts + 2)[1:-1]
    dampings = ("none", "jackson") if cfg.damping == "both" else (cfg.damping,)
    rows = []
    for a in shifts:
        exact = count_geq_exact(pencil, a)
        for deg in cfg.degrees:
            for d in dampings:
                est = count_geq_kpm(pencil, a, degree=deg, probes=cfg.probes, damping=d,
                                    seed=cfg.seed, bounds=bounds)
                rows.append((a, exact, est, deg, d))
    with open(os.path.join(cfg.out, "counts.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["shift", "exact", "kpm_estimate", "degree", "damping"])
        for a, e, k, deg, d in rows:
            w.writerow([f"{a:.12g}", e, f"{k:.6f}", deg, d])
    for deg in cfg.degrees:
        for d in dampings:
            errs = [abs(k - e) for a, e, k, dg, dd in rows if dg == deg and dd == d]
            log(f"degree {deg:5d} damping {d:7s} median |kpm - exact| = {np.median(errs):.3f}")
    return rows


def cmd_accuracy_sweep(cfg, log=print):
    rows = []
    path = os.path.join(cfg.out, "accuracy.csv")
    for ne in cfg.elements:
        for p in cfg.order:
            ap = assemble_from(cfg, order=p, elements=ne)
            basis = obtain_basis(ap, cfg, log)
            c = fracpde.expand_function(forcing(ap.mesh.dim), basis, ap)
            for a in cfg.alpha:
                if cfg.sweep_problem == "poisson":
                    u = fracpde.solve_poisson(c, basis, a)
                else:
                    u = fracpde.solve_diffusion(c, basis, a, cfg.mu, cfg.time)
                exact = exact_solution(cfg, ap, a, cfg.sweep_problem)
                err = error_norm(u, exact, ap) if exact else float("nan")
                rows.append((cfg.sweep_problem, a, p, ne, err))
            log(f"order {p} elements {ne}: max error {max(r[-1] for r in rows[-len(cfg.alpha):]):.3e}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["problem", "alpha", "order", "elements", "l2_error"])
        for prob, a, p, ne, e in rows:
            w.writerow([prob, f"{a:.2f}", p, ne, f"{e:.6e}"])
    return rows


HANDLERS = {
    "eigs": cmd_eigs, "poisson": cmd_poisson, "diffusion": cmd_diffusion,
    "partition": cmd_partition, "count": cmd_count, "apply": cmd_apply,
    "accuracy-sweep": cmd_accuracy_sweep,
}


def main(argv=None):
    try:
        cfg = make_config(argv)
    except (ValueError, OSError) as exc:
        print(f"fracspec: {exc}", file=sys.stderr)
        return 2
    os.makedirs(cfg.out, exist_ok=True)
    try:
        HANDLERS[cfg.problem](cfg)
    except (FracSpecError, ValueError, ArithmeticError) as exc:
        print(f"fracspec: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
