"""Command-line interface.

Exit codes: 0 success, 2 input or format error, 3 numerical failure,
4 precondition violation.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_PRECONDITION = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcqc", description="Quasi-conformal analysis of point-cloud maps")
    p.add_argument("--seed", type=int, default=None, help="seed for randomised instances")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    p.add_argument("--out", default=None, help="output path (stdout when omitted)")
    sub = p.add_subparsers(dest="command", required=True)

    def mls_opts(sp):
        sp.add_argument("--k", type=int, default=25)
        sp.add_argument("--kernel", default="gauss", choices=("gauss", "wendland", "cubic"))
        sp.add_argument("--strategy", default="knn", choices=("knn", "radius"))

    s = sub.add_parser("bc", help="Beltrami coefficient of a planar map")
    s.add_argument("cloud")
    s.add_argument("map")
    s.add_argument("--flavor", default="diffuse", choices=("diffuse", "standard"))
    mls_opts(s)

    s = sub.add_parser("bc-surface", help="Beltrami coefficient of a map from a planar cloud into R^3")
    s.add_argument("cloud")
    s.add_argument("map")
    s.add_argument("--flavor", default="diffuse", choices=("diffuse", "standard"))
    mls_opts(s)

    s = sub.add_parser("solve", help="recover a map from a prescribed Beltrami coefficient")
    s.add_argument("cloud")
    s.add_argument("mu")
    s.add_argument("--boundary", required=True,
                   help="map file whose values at the hull points give the Dirichlet data")
    s.add_argument("--formulation", default="beltrami", choices=("beltrami", "glaplace"))
    s.add_argument("--method", default="collocation", choices=("collocation", "efg"))
    mls_opts(s)

    s = sub.add_parser("parameterize", help="harmonic parameterization of a 3D surface cloud")
    s.add_argument("cloud")
    s.add_argument("--boundary", default="disk", choices=("rect", "disk"))
    mls_opts(s)

    s = sub.add_parser("convergence", help="run a convergence experiment from a JSON spec")
    s.add_argument("spec")

    s = sub.add_parser("weights-bench", help="derivative benchmark over weight kernels (CSV)")
    s.add_argument("--metric", default="mean", choices=("mean", "sup"))
    s.add_argument("--sizes", default="25,33,49,65,97,129")
    return p


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _field_text(values, kind=None) -> str:
    from .io import format_field

    return format_field(values, kind)


def _run(args) -> int:
    from . import io
    from .errors import InputError

    def mls():
        from .mls import MlsConfig

        return MlsConfig(kernel=args.kernel, strategy=args.strategy, k=args.k)

    if args.command == "bc":
        from .beltrami2d import PlanarMap, pcbc

        pc = io.read_cloud(args.cloud)
        fm = PlanarMap(pc, io.read_map(args.map, pc))
        _emit(_field_text(pcbc(fm, args.flavor, mls()).values, "complex"), args.out)
    elif args.command == "bc-surface":
        from .beltrami_surface import SurfaceMap, surface_bc

        pc = io.read_cloud(args.cloud)
        sm = SurfaceMap(pc, io.read_map(args.map, pc))
        _emit(_field_text(surface_bc(sm, args.flavor, mls()).values, "complex"), args.out)
    elif args.command == "solve":
        from .solvers import QcProblem, detect_boundary, solve_qc_map

        pc = io.read_cloud(args.cloud)
        kind, mu = io.read_field(args.mu)
        if kind != "complex" or len(mu) != len(pc):
            raise InputError("mu must be a complex field with one value per cloud point")
        target = io.read_map(args.boundary, pc)
        B = detect_boundary(pc)
        sol = solve_qc_map(QcProblem(pc, mu, B, target[B], args.formulation, args.method), mls())
        _emit(_field_text(sol.map.targets, "vec2"), args.out)
    elif args.command == "parameterize":
        from .parameterization import conformal_parameterize

        pc = io.read_cloud(args.cloud)
        pair = conformal_parameterize(pc, args.boundary, mls())
        if args.out is None:
            _emit(_field_text(pair.plane_coords, "vec2"), None)
        else:
            io.write_cloud(args.out, pair.plane_coords)
            io.write_json(args.out + ".json", {"e_grade": pair.e_grade, "points": len(pc),
                                               "boundary": args.boundary,
                                               "diagnostics": pair.diagnostics})
        sys.stderr.write(f"e_grade {pair.e_grade:.6g}\n")
    elif args.command == "convergence":
        import json

        from .convergence import ExperimentSpec, run_convergence

        try:
            with open(args.spec, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read spec {args.spec}: {exc}") from exc
        if args.seed is not None:
            raw["seed"] = args.seed
        rep = run_convergence(ExperimentSpec.from_dict(raw))
        _emit(rep.to_json() + "\n", args.out)
    elif args.command == "weights-bench":
        from .convergence import weights_bench

        try:
            sizes = [int(s) for s in args.sizes.split(",")]
        except ValueError as exc:
            raise InputError(f"bad --sizes: {args.sizes}") from exc
        rows = weights_bench(sizes, metric=args.metric)
        lines = ["size,kernel,flavor,error"] + [f"{r['size']},{r['kernel']},{r['flavor']},{r['error']!r}"
                                                for r in rows]
        _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .errors import InputError, NumericalError, PcqcError, PreconditionError

    codes = ((InputError, EXIT_INPUT), (NumericalError, EXIT_NUMERICAL),
             (PreconditionError, EXIT_PRECONDITION), (PcqcError, EXIT_NUMERICAL))
    try:
        return _run(args)
    except PcqcError as exc:
        sys.stderr.write(f"pcqc: {type(exc).__name__}: {exc}\n")
        return next(code for cls, code in codes if isinstance(exc, cls))


if __name__ == "__main__":
    sys.exit(main())
