"""Command line front end: ``solve``, ``convergence`` and ``classify``.

Exit codes: 0 success, 2 invalid input or mesh, 3 mesh fails the one-corner
validation, 4 internal consistency failure (rank, cycle or solver audits).
"""

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import io
from .argyris import ConditioningError
from .harness import error_norms, manufactured_case, solve, convergence_study
from .mesh import MeshError, VertexClass, classify_vertices, default_theta, parse_mesh_spec
from .pressure import ConsistencyError, ValidationFailure
from .velocity import AnalyticLoad, SolverError

EXIT_OK, EXIT_INPUT, EXIT_VALIDATION, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("stingstokes")


def _levels(text):
    try:
        levels = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma separated integers, got {text!r}") from None
    if not levels:
        raise argparse.ArgumentTypeError("no levels given")
    return levels


def build_parser():
    p = argparse.ArgumentParser(prog="stingstokes", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="velocity solve plus local pressure recovery on one mesh")
    s.add_argument("--mesh", required=True, help="crisscross:N or a mesh file")
    s.add_argument("--plain-corners", action="store_true", help="crisscross corner cells without dead corners")
    s.add_argument("--theta", type=float, default=None, help="near-singularity threshold (radians)")
    s.add_argument("--case", default="trig", help="manufactured solution supplying the body force")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--vtu", action="store_true", help="also write a sampled VTU file")

    c = sub.add_parser("convergence", help="error table on refined crisscross meshes")
    c.add_argument("--levels", required=True, type=_levels)
    c.add_argument("--case", default="trig")
    c.add_argument("--plain-corners", action="store_true")
    c.add_argument("--out", required=True, type=Path)

    k = sub.add_parser("classify", help="count regular, nearly singular and dead-corner vertices")
    k.add_argument("--mesh", required=True)
    k.add_argument("--plain-corners", action="store_true")
    k.add_argument("--theta", type=float, default=None)
    return p


def _cmd_solve(args):
    T = parse_mesh_spec(args.mesh, not args.plain_corners)
    case = manufactured_case(args.case)
    sol = solve(T, AnalyticLoad(T, case.f), args.theta)
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_mesh(args.out / "mesh.txt", T)
    io.write_velocity(args.out / "velocity.txt", sol.velocity)
    io.write_pressure(args.out / "pressure.txt", sol.pressure)
    eu, ep = error_norms(T, case, sol.velocity, sol.pressure)
    counts = Counter(c.value for c in sol.classes)
    summary = {
        "mesh": args.mesh, "triangles": T.n_triangles, "vertices": T.n_vertices,
        "stream_dofs": int(sol.velocity.space.n_free), "h": T.h,
        "vertex_classes": dict(sorted(counts.items())),
        "vel_h1_err": eu, "prs_l2_err": ep, "case": case.name,
    }
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if args.vtu:
        io.write_vtu(args.out / "solution.vtu", T, sol.velocity, sol.pressure)
    print(f"|u-u_h|_1 = {eu:.6e}  ||p-p_h||_0 = {ep:.6e}  ({T.n_triangles} triangles)")
    return EXIT_OK


def _cmd_convergence(args):
    rows = convergence_study(args.levels, args.case, singular_corners=not args.plain_corners)
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_convergence_csv(args.out / "convergence.csv", rows)
    for r in rows:
        vo = "" if r.vel_order is None else f"{r.vel_order:.2f}"
        po = "" if r.prs_order is None else f"{r.prs_order:.2f}"
        print(f"{r.n:4d}  {r.vel_h1_err:.4e} {vo:>5}  {r.prs_l2_err:.4e} {po:>5}")
    return EXIT_OK


def _cmd_classify(args):
    T = parse_mesh_spec(args.mesh, not args.plain_corners)
    theta = default_theta(T) if args.theta is None else args.theta
    classes = classify_vertices(T, theta)
    counts = Counter(classes)
    print(f"theta = {theta:.6g}")
    for c in VertexClass:
        print(f"{c.value}: {counts.get(c, 0)}")
    return EXIT_OK


COMMANDS = {"solve": _cmd_solve, "convergence": _cmd_convergence, "classify": _cmd_classify}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConsistencyError, SolverError) as exc:
        print(f"internal consistency failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (MeshError, ConditioningError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
