"""Command line entry point: ``monostencil <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..domain import make_domain
from ..errors import ContractViolation, StencilFailure
from ..pointcloud import DEFAULT_SKIP, ProperConstants, generate_cloud, validate_proper
from ..solver import SOLVER_TOL, MonotoneEllipticSolver, dmp_check, max_norm_error
from ..stencil.build import StencilBuilder, cone_condition_check, monomial_exponents, monomials
from ..stencil.calibration import (CalibrationTable, band_grids, calibrate_c, closed_form_radius, default_table,
                                   searching_delta)
from ..stencil.kernel import kernel_normalize
from ..stencil.simplex import LP_TOL
from .coefficients import builtin_matrix
from .convergence import CSV_HEADER, DOMAIN_DIMS, ExperimentConfig, run_convergence, run_single
from .solutions import builtin_solution

MAX_SIZE = {2: 6, 3: 10}


def _h_list(text: str) -> tuple[float, ...]:
    try:
        hs = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not hs or any(h <= 0 for h in hs):
        raise argparse.ArgumentTypeError("fill distances must be positive")
    return hs


def _add_problem(p: argparse.ArgumentParser, h_default: str) -> None:
    p.add_argument("--domain", default="disk2", choices=sorted(DOMAIN_DIMS) + ["box"])
    p.add_argument("--dim", type=int, choices=(2, 3))
    p.add_argument("--matrix", type=int, default=0, choices=range(10), metavar="{0..9}")
    p.add_argument("--solution", default="u1", choices=("u1", "u2", "u3"))
    p.add_argument("--h", type=_h_list, default=_h_list(h_default), help="comma-separated target fill distances")
    p.add_argument("--alpha", type=float, default=3.0, help="kernel exponent, in (2, d+2)")
    p.add_argument("--reduced-c", action=argparse.BooleanOptionalAction, default=True,
                   help="try the reduced search radius first (default on)")
    p.add_argument("--lp-tol", type=float, default=LP_TOL)
    p.add_argument("--solver-tol", type=float, default=SOLVER_TOL)
    p.add_argument("--jacobi", action="store_true", help="diagonal preconditioning in BiCGSTAB")
    p.add_argument("--seed", type=int, default=DEFAULT_SKIP, help="Halton skip of the first cloud")
    p.add_argument("--table", help="calibration table (JSON) replacing the built-in constants")
    p.add_argument("--out")
    p.add_argument("--dump-stencils", metavar="PATH")
    p.add_argument("--dump-matrix", metavar="PATH", help="Matrix Market dump of the assembled system")
    p.add_argument("--check-dmp", action="store_true", help="also solve f=0, g=x1 and check the maximum principle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monostencil", description="Monotone meshfree solver for -A:D^2u = f.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem and report the max-norm error")
    _add_problem(p, "0.05")
    p = sub.add_parser("converge", help="convergence sweep, CSV output")
    _add_problem(p, "0.1,0.05,0.025")
    p = sub.add_parser("check", help="validate cloud, stencils and maximum principle for one problem")
    _add_problem(p, "0.1")

    p = sub.add_parser("calibrate", help="recompute the search-radius constants")
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--nodes", type=int, default=50, help="grid nodes per band")
    p.add_argument("--out", help="write the table as JSON")

    p = sub.add_parser("cloud", help="generate a proper point cloud")
    p.add_argument("--domain", default="disk2", choices=sorted(DOMAIN_DIMS) + ["box"])
    p.add_argument("--dim", type=int, choices=(2, 3))
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--matrix", type=int, default=0, choices=range(10), metavar="{0..9}",
                   help="sets the collar width through its ellipticity ratio")
    p.add_argument("--seed", type=int, default=DEFAULT_SKIP)
    p.add_argument("--out", required=True)
    return parser


def _config(args) -> ExperimentConfig:
    table = CalibrationTable.load(args.table) if args.table else None
    return ExperimentConfig(domain=args.domain, dim=args.dim, matrix=args.matrix, solution=args.solution,
                            hs=args.h, alpha=args.alpha, reduced=args.reduced_c, seed=args.seed,
                            lp_tol=args.lp_tol, solver_tol=args.solver_tol, precondition=args.jacobi,
                            table=table, out=None, dump_stencils=args.dump_stencils,
                            dump_matrix=args.dump_matrix, check_dmp=args.check_dmp)


def _cmd_solve(args) -> int:
    cfg = _config(args)
    row = run_single(cfg, cfg.hs[0], cfg.seed)
    print(f"h={row.h:.6g} delta={row.delta:.6g} N={row.n} max_error={row.max_error:.6e} "
          f"avg_stencil={row.avg_stencil:.4g} lp_retries={row.lp_retries} solver_iters={row.solver_iters}")
    if args.out:
        Path(args.out).write_text(CSV_HEADER + "\n" + row.csv() + "\n")
    if row.failure:
        print(f"failed: {row.failure}", file=sys.stderr)
        return 1
    return 0


def _cmd_converge(args) -> int:
    cfg = _config(args)
    cfg.out = args.out
    result = run_convergence(cfg)
    if not args.out:
        sys.stdout.write(result.csv())
    else:
        print(f"wrote {args.out}")
    print(f"slope={result.slope:.4g}")
    return 0 if all(r.ok for r in result.rows) else 1


def _cmd_calibrate(args) -> int:
    table = calibrate_c(args.dim, band_grids(nodes=args.nodes))
    ref = default_table(args.dim)
    for lo, hi, c, c0 in zip(table.edges[:-1], table.edges[1:], table.constants, ref.constants):
        print(f"rho in ({lo:g}, {hi:g}]: c = {c:.4f}  (built-in {c0:.3f})")
    if args.dim == 2:
        print(f"isotropic check: 1/r = {1.0 / closed_form_radius(np.pi / 8):.4f}")
    if args.out:
        Path(args.out).write_text(table.to_json())
    return 0


def _cmd_cloud(args) -> int:
    domain = make_domain(args.domain, args.dim)
    d = domain.dim
    rho = builtin_matrix(args.matrix, d).nominal_rho
    delta0 = searching_delta(args.h, rho, default_table(d))
    cloud = generate_cloud(domain, args.h, delta0, ProperConstants(), args.seed)
    cloud.save(args.out)
    print(f"N={cloud.n_interior} M={cloud.n_total} h={cloud.fill_distance:.6g} "
          f"zeta={cloud.separation:.6g} kappa={cloud.boundary_dist:.6g}")
    return 0


def _cmd_check(args) -> int:
    cfg = _config(args)
    d = cfg.dim
    domain = make_domain(cfg.domain, d)
    coeff = builtin_matrix(cfg.matrix, d)
    table = cfg.table or default_table(d)
    rho = coeff.nominal_rho
    h_target = cfg.hs[0]
    delta0 = searching_delta(h_target, rho, table)
    cloud = generate_cloud(domain, h_target, delta0, cfg.consts, cfg.seed)
    failures = 0

    def report(name, ok, detail=""):
        nonlocal failures
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}{': ' + detail if detail else ''}")

    rep = validate_proper(cloud, domain, delta0, cfg.consts)
    report("proper cloud", rep.ok, f"h={rep.h:.4g} zeta={rep.zeta:.4g} kappa={rep.kappa:.4g}"
           + (f" violated {rep.violated}" if rep.violated else ""))
    kernel = kernel_normalize(cfg.alpha, d)
    builder = StencilBuilder(cloud, domain, coeff, kernel, cloud.fill_distance, table, rho, cfg.reduced,
                             lp_tol=cfg.lp_tol)
    cone_fail = 0
    for i in range(cloud.n_interior):
        e = builder.ellipsoid(i, reduced=False)
        cone_fail += not cone_condition_check(cloud.points[i], cloud.points, e, exclude=i).satisfied
    report("cone condition at full radius", cone_fail == 0, f"{cone_fail} of {cloud.n_interior} centres fail")
    try:
        st = builder.build_all()
    except StencilFailure as exc:
        report("stencils", False, str(exc))
        return 1
    sizes = np.array([s.size for s in st])
    wmin = min((float(s.weights.min()) for s in st if len(s.weights)), default=0.0)
    report("nonnegative weights", wmin >= 0.0, f"min weight {wmin:.3g}")
    report("stencil size bound", int(sizes.max()) <= MAX_SIZE[d], f"largest {sizes.max()}, mean {sizes.mean():.3g}")
    exps = monomial_exponents(d)
    worst = 0.0
    for s in st:
        x = cloud.points[s.center]
        a = builder.coeffs_at[s.center]
        got = monomials(s.positions - x, exps) @ s.coeffs
        want = np.array([2.0 * a[np.flatnonzero(e)[0], np.flatnonzero(e)[-1]] if e.sum() == 2 else 0.0 for e in exps])
        worst = max(worst, float(np.max(np.abs(got - want))) / max(1.0, float(np.max(np.abs(want)))))
    report("quadratic exactness", worst <= 1e-8, f"worst scaled defect {worst:.2e}")
    solver = MonotoneEllipticSolver(domain, coeff, rho, cfg.alpha, table, cfg.reduced, solver_tol=cfg.solver_tol)
    solver.fit(cloud, stencils=st)
    for label, g in (("g=1", 1.0), ("g=x1", lambda x: x[:, 0])):
        u = solver.solve(0.0, g)
        dm = dmp_check(cloud, st, u, g)
        report(f"maximum principle ({label})", dm.ok, f"max u - max g = {dm.worst_violation:.2e}")
    case = builtin_solution(cfg.solution, d)
    u = solver.solve(case.rhs(coeff), case.u)
    print(f"max-norm error for {cfg.solution}: {max_norm_error(u, case.u, cloud):.4e}")
    return 1 if failures else 0


COMMANDS = {"solve": _cmd_solve, "converge": _cmd_converge, "calibrate": _cmd_calibrate,
            "cloud": _cmd_cloud, "check": _cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
