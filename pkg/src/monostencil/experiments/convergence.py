"""Convergence sweeps over a list of target fill distances."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..domain import make_domain
from ..errors import AdjustmentFailed, ContractViolation, SolverBreakdown, StencilFailure
from ..pointcloud import DEFAULT_SKIP, ProperConstants, generate_cloud
from ..solver import SOLVER_TOL, MonotoneEllipticSolver, dmp_check, max_norm_error, write_matrix_market
from ..stencil.build import dump_stencils
from ..stencil.calibration import CalibrationTable, default_table, searching_delta
from ..stencil.simplex import LP_TOL
from .coefficients import builtin_matrix
from .solutions import builtin_solution

log = logging.getLogger(__name__)

CSV_HEADER = "h,delta,N,max_error,avg_stencil,max_t3,lp_retries,solver_iters"
DOMAIN_DIMS = {"disk2": 2, "lshape2": 2, "sphere3": 3, "lshape3": 3}


@dataclass
class ExperimentConfig:
    domain: str = "disk2"
    dim: int | None = None
    matrix: int = 0
    solution: str = "u1"
    hs: tuple[float, ...] = (0.1, 0.05, 0.025)
    alpha: float = 3.0
    consts: ProperConstants = field(default_factory=ProperConstants)
    reduced: bool = True
    seed: int = DEFAULT_SKIP
    lp_tol: float = LP_TOL
    solver_tol: float = SOLVER_TOL
    precondition: bool = False
    table: CalibrationTable | None = None
    out: str | None = None
    dump_stencils: str | None = None
    dump_matrix: str | None = None
    check_dmp: bool = False

    def __post_init__(self):
        implied = DOMAIN_DIMS.get(self.domain)
        if self.dim is None:
            self.dim = implied or 2
        elif implied is not None and implied != self.dim:
            raise ContractViolation(f"domain {self.domain} is {implied}d but dim={self.dim}")
        if self.table is not None and self.table.dim != self.dim:
            raise ContractViolation("calibration table dimension differs from the run")
        if not self.hs or any(h <= 0 for h in self.hs):
            raise ContractViolation("need at least one positive fill distance")


@dataclass
class RunRow:
    h: float
    delta: float
    n: int
    max_error: float
    avg_stencil: float
    max_t3: float
    lp_retries: int
    solver_iters: int
    failure: str = ""

    def csv(self) -> str:
        return ",".join([f"{self.h:.12g}", f"{self.delta:.12g}", str(self.n), f"{self.max_error:.12g}",
                         f"{self.avg_stencil:.12g}", f"{self.max_t3:.12g}", str(self.lp_retries),
                         str(self.solver_iters)])

    @property
    def ok(self) -> bool:
        return not self.failure


@dataclass
class ConvergenceResult:
    rows: list[RunRow]
    slope: float

    def csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(r.csv())
            if r.failure:
                lines.append(f"# failed h={r.h:.12g}: {r.failure}")
        lines.append(f"# slope={self.slope:.6g}")
        return "\n".join(lines) + "\n"


def fit_slope(hs, errors) -> float:
    """Least-squares slope of log(error) against log(h); nan with fewer than two points."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ok = np.isfinite(errors) & (errors > 0) & (hs > 0)
    if np.count_nonzero(ok) < 2:
        return math.nan
    return float(np.polyfit(np.log(hs[ok]), np.log(errors[ok]), 1)[0])


def _suffixed(path: str, k: int, total: int) -> str:
    if total == 1:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{k}{p.suffix}"))


def run_single(cfg: ExperimentConfig, h_target: float, skip: int, index: int = 0) -> RunRow:
    domain = make_domain(cfg.domain, cfg.dim)
    coeff = builtin_matrix(cfg.matrix, cfg.dim)
    case = builtin_solution(cfg.solution, cfg.dim)
    table = cfg.table or default_table(cfg.dim)
    rho = coeff.nominal_rho
    # the cloud is built on the collar of the largest search radius in use
    delta0 = searching_delta(h_target, rho, table, reduced=False)
    nan = math.nan
    try:
        cloud = generate_cloud(domain, h_target, delta0, cfg.consts, skip)
    except AdjustmentFailed as exc:
        return RunRow(h_target, nan, 0, nan, nan, nan, 0, 0, f"point cloud: {exc}")
    h = cloud.fill_distance
    solver = MonotoneEllipticSolver(domain, coeff, rho, cfg.alpha, table, cfg.reduced,
                                    lp_tol=cfg.lp_tol, solver_tol=cfg.solver_tol, precondition=cfg.precondition)
    delta = searching_delta(h, rho, table, cfg.reduced)
    try:
        solver.fit(cloud, h)
    except StencilFailure as exc:
        return RunRow(h, delta, cloud.n_interior, nan, nan, nan, 0, 0, f"stencil: {exc}")
    st = solver.stencils_
    if cfg.dump_stencils:
        dump_stencils(st, _suffixed(cfg.dump_stencils, index, len(cfg.hs)))
    try:
        u = solver.solve(case.rhs(coeff), case.u)
    except SolverBreakdown as exc:
        return RunRow(h, delta, cloud.n_interior, nan, st.average_size, st.max_third_moment,
                      st.lp_retries, 0, f"solver: {exc}")
    if cfg.dump_matrix:
        write_matrix_market(solver.system_, _suffixed(cfg.dump_matrix, index, len(cfg.hs)))
    stats = solver.stats_
    err = max_norm_error(u, case.u, cloud)
    row = RunRow(h, delta, cloud.n_interior, err, st.average_size, st.max_third_moment,
                 st.lp_retries, stats.iterations)
    if not stats.converged:
        row.failure = f"solver: residual {stats.final_residual:.3e} after {stats.iterations} iterations"
    if cfg.check_dmp:
        # zero source, boundary data x_1: the interior may not exceed the boundary
        g = lambda x: x[:, 0]  # noqa: E731
        v = solver.solve(0.0, g)
        rep = dmp_check(cloud, st, v, g)
        log.info("maximum principle at h=%.4g: ok=%s worst=%.3e", h, rep.ok, rep.worst_violation)
        if not rep.ok:
            row.failure = (row.failure + "; " if row.failure else "") + \
                f"maximum principle violated by {rep.worst_violation:.3e}"
    return row


def run_convergence(cfg: ExperimentConfig) -> ConvergenceResult:
    """One row per target h (in the given order), each on its own cloud.

    Cloud k is seeded with Halton skip ``cfg.seed + k``, so rows are
    independent and the whole sweep is reproducible.
    """
    rows = []
    for k, h in enumerate(cfg.hs):
        row = run_single(cfg, h, cfg.seed + k, k)
        if row.failure:
            log.warning("h=%.4g: %s", h, row.failure)
        rows.append(row)
    good = [r for r in rows if r.ok]
    result = ConvergenceResult(rows, fit_slope([r.h for r in good], [r.max_error for r in good]))
    if cfg.out:
        Path(cfg.out).write_text(result.csv())
    return result
