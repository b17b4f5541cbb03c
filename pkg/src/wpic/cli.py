"""Command-line front end.

Subcommands: ``run`` a scenario, ``check-mesh`` a mesh file, ``courant``
for the stable time step, ``verify`` the conservation property suite, and
``dump-matrices`` for offline operator inspection.

Exit codes: 0 success, 1 usage or I/O error, 2 invariant violation.
Set ``WPIC_LOG={error,info,debug}`` to control log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import engine, hodge, verification
from .engine import InitializationError, InvariantViolation
from .maxwell import CourantEstimateError, SolveError, estimate_courant
from .mesh import (MeshFormatError, MeshTopologyError, build_incidence,
                   load_mesh)
from .scenario import ScenarioError, load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2

_USER_ERRORS = (ScenarioError, MeshFormatError, MeshTopologyError,
                InitializationError, SolveError, CourantEstimateError,
                OSError, FloatingPointError)


def _setup_logging():
    level = os.environ.get("WPIC_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _scenario_from_args(args) -> Path:
    path = args.scenario if args.scenario else args.scenario_flag
    if path is None:
        raise ScenarioError("a scenario file is required "
                            "(positional or --scenario)")
    return Path(path)


def _apply_overrides(scenario, args):
    if getattr(args, "seed", None) is not None:
        scenario.seed = args.seed
    if getattr(args, "allow_unstable", False):
        scenario.allow_unstable = True
    if getattr(args, "threads", None):
        # Numerical kernels are sequential and deterministic; the thread
        # cap only limits the BLAS pool used by dense helpers.
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    return scenario


def cmd_run(args) -> int:
    scenario = load_scenario(_scenario_from_args(args))
    _apply_overrides(scenario, args)
    summary = engine.run(scenario, out_dir=args.out, strict=False,
                         steps_override=args.steps)
    print(json.dumps(summary, indent=2))
    if args.strict and summary["violations"]:
        print("invariant violations detected:", file=sys.stderr)
        for v in summary["violations"]:
            print(f"  {v}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_check_mesh(args) -> int:
    mesh = load_mesh(args.mesh)
    build_incidence(mesh)
    print(f"{args.mesh}: OK "
          f"(V={mesh.num_vertices} E={mesh.num_edges} F={mesh.num_faces}, "
          f"boundary edges={int(mesh.boundary_edge.sum())}, "
          f"total area={mesh.area.sum():.6g} m^2)")
    return EXIT_OK


def _mesh_and_materials(args):
    """Accept either a scenario file or a bare mesh file (vacuum)."""
    path = Path(args.input)
    if path.suffix == ".ini":
        scenario = load_scenario(path)
        mesh = load_mesh(scenario.mesh_path)
        return mesh, scenario.epsilon, scenario.mu
    from .scenario import EPS0, MU0
    return load_mesh(path), EPS0, MU0


def cmd_courant(args) -> int:
    mesh, eps, mu = _mesh_and_materials(args)
    ops = hodge.assemble(mesh, eps, mu)
    inc = build_incidence(mesh)
    dt_c = estimate_courant(inc.C, ops.star_eps, ops.star_mu_inv)
    print(f"dt_c = {dt_c:.6e} s")
    print(f"suggested dt = {args.safety * dt_c:.6e} s "
          f"(safety factor {args.safety})")
    return EXIT_OK


def cmd_verify(args) -> int:
    scenario = load_scenario(_scenario_from_args(args))
    mesh = load_mesh(scenario.mesh_path)
    results = verification.run_all(
        mesh, corrupt_incidence=args.corrupt_incidence)
    width = max(len(name) for name, _, _ in results)
    failed = False
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"{name:<{width}}  {status}  {detail}")
        failed = failed or not ok
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_dump_matrices(args) -> int:
    mesh, eps, mu = _mesh_and_materials(args)
    inc = build_incidence(mesh)
    ops = hodge.assemble(mesh, eps, mu)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hodge.dump_triplets(inc.C, out / "curl.txt")
    hodge.dump_triplets(inc.Stilde, out / "div_dual.txt")
    hodge.dump_triplets(ops.star_eps, out / "star_eps.txt")
    hodge.dump_triplets(ops.star_mu_inv, out / "star_mu_inv.txt")
    print(f"wrote curl.txt div_dual.txt star_eps.txt star_mu_inv.txt to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wpic",
        description="Charge-conserving particle-in-cell simulation on "
                    "unstructured triangular meshes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario")
    run_p.add_argument("scenario", nargs="?", help="scenario INI file")
    run_p.add_argument("--scenario", dest="scenario_flag", help=argparse.SUPPRESS)
    run_p.add_argument("--out", help="output directory for CSV/JSON results")
    run_p.add_argument("--strict", action="store_true",
                       help="exit 2 if any conservation bound is violated")
    run_p.add_argument("--threads", type=int, help="cap worker threads")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument("--allow-unstable", action="store_true",
                       help="permit dt above the Courant limit")
    run_p.add_argument("--steps", type=int, default=None,
                       help="override the scenario step count")
    run_p.set_defaults(func=cmd_run)

    chk = sub.add_parser("check-mesh", help="validate a mesh file")
    chk.add_argument("mesh")
    chk.set_defaults(func=cmd_check_mesh)

    cou = sub.add_parser("courant", help="print the Courant time-step limit")
    cou.add_argument("input", help="scenario .ini or mesh file")
    cou.add_argument("--safety", type=float, default=0.9)
    cou.set_defaults(func=cmd_courant)

    ver = sub.add_parser("verify", help="run the conservation property suite")
    ver.add_argument("scenario", nargs="?", help="scenario INI file")
    ver.add_argument("--scenario", dest="scenario_flag", help=argparse.SUPPRESS)
    ver.add_argument("--corrupt-incidence", action="store_true",
                     help="negative control: flip one incidence entry and "
                          "confirm the exact-sequence check fails")
    ver.set_defaults(func=cmd_verify)

    dmp = sub.add_parser("dump-matrices",
                         help="write operators as triplet text files")
    dmp.add_argument("input", help="scenario .ini or mesh file")
    dmp.add_argument("--out", required=True)
    dmp.set_defaults(func=cmd_dump_matrices)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
