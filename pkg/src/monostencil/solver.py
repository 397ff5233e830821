"""Sparse assembly of the monotone scheme, BiCGSTAB, and maximum-principle checks.

Row i of the system reads

    (sum_j beta_ij) u_i - sum_{j interior} beta_ij u_j = f(x_i) + sum_{j boundary} beta_ij g(xbar_j)

so the matrix has a positive diagonal, nonpositive off-diagonals and
nonnegative row sums: an M-matrix whenever every row reaches the boundary
through some chain of stencils.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from .domain import Domain
from .errors import ContractViolation, SolverBreakdown
from .pointcloud import PointCloud
from .stencil.build import CoefficientLike, StencilBuilder, StencilSet
from .stencil.calibration import CalibrationTable, default_table
from .stencil.kernel import kernel_normalize
from .stencil.simplex import FEAS_TOL, LP_TOL

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-10
DENSE_LIMIT = 500
_BREAKDOWN = 1e-30

FieldLike = Union[np.ndarray, Callable[[np.ndarray], np.ndarray], float]


def _eval(field: FieldLike, x: np.ndarray) -> np.ndarray:
    if callable(field):
        vals = np.asarray(field(x), dtype=float)
    else:
        vals = np.asarray(field, dtype=float)
        if vals.ndim == 0:
            vals = np.full(len(x), float(vals))
    if vals.shape != (len(x),):
        raise ContractViolation(f"field has shape {vals.shape}, expected ({len(x)},)")
    return vals


def reindex(points: np.ndarray) -> np.ndarray:
    """Stable lexicographic order of the points (first coordinate most significant)."""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.lexsort(points.T[::-1]).astype(np.int64)


def bandwidth(matrix) -> int:
    m = sp.coo_matrix(matrix)
    return int(np.max(np.abs(m.row - m.col))) if m.nnz else 0


@dataclass(frozen=True)
class SparseSystem:
    """Interior unknowns only.  ``permutation[k]`` is the cloud index of unknown k."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    permutation: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def to_cloud_order(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        out[self.permutation] = x
        return out

    def from_cloud_order(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[self.permutation]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.rhs - self.matrix @ x


def _flatten(stencils, n_interior: int):
    if len(stencils) != n_interior:
        raise ContractViolation(f"{len(stencils)} stencils for {n_interior} interior points")
    centers = np.empty(n_interior, dtype=np.int64)
    counts = np.empty(n_interior, dtype=np.int64)
    for k, s in enumerate(stencils):
        centers[k] = s.center
        counts[k] = len(s.coeffs)
    if not np.array_equal(np.sort(centers), np.arange(n_interior)):
        raise ContractViolation("every interior point needs exactly one stencil")
    rows = np.repeat(centers, counts)
    if counts.sum() == 0:
        d = stencils[0].positions.shape[1] if len(stencils) else 0
        return rows, np.zeros(0, np.int64), np.zeros(0), np.zeros((0, d)), np.zeros(0, bool)
    cols = np.concatenate([s.neighbors for s in stencils]).astype(np.int64)
    beta = np.concatenate([s.coeffs for s in stencils])
    pos = np.concatenate([s.positions for s in stencils])
    bnd = np.concatenate([s.boundary for s in stencils]).astype(bool)
    return rows, cols, beta, pos, bnd


def assemble(cloud: PointCloud, stencils, f: FieldLike, g: FieldLike,
             permutation: np.ndarray | None = None) -> SparseSystem:
    """Build the sparse system.  ``f`` is evaluated at the interior points (or
    given as values in cloud order); ``g`` at the projected boundary points
    the stencils actually use."""
    n = cloud.n_interior
    rows, cols, beta, pos, bnd = _flatten(stencils, n)
    perm = np.arange(n, dtype=np.int64) if permutation is None else np.asarray(permutation, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ContractViolation("permutation must reorder the interior points")
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)

    rhs = _eval(f, cloud.interior).copy()
    if np.any(bnd):
        # each projected point is evaluated once per (centre, neighbour) pair
        gvals = _eval(g, pos[bnd])
        np.add.at(rhs, rows[bnd], beta[bnd] * gvals)
    diag = np.bincount(rows, weights=beta, minlength=n)
    inner = ~bnd
    r = np.concatenate([inv[rows[inner]], inv[np.arange(n)]])
    c = np.concatenate([inv[cols[inner]], inv[np.arange(n)]])
    v = np.concatenate([-beta[inner], diag])
    matrix = sp.csr_matrix((v, (r, c)), shape=(n, n))
    matrix.sum_duplicates()
    return SparseSystem(matrix, rhs[perm], perm)


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_residual: float
    converged: bool


def bicgstab(matrix, b: np.ndarray, tol: float = SOLVER_TOL, max_iter: int | None = None,
             x0: np.ndarray | None = None, precondition: bool = False) -> tuple[np.ndarray, SolveStats]:
    """Right-preconditioned BiCGSTAB (Jacobi when ``precondition``).

    Stops when ||b - A x||_2 <= tol ||b||_2.  A vanishing rho restarts the
    shadow residual; two breakdowns in a row raise SolverBreakdown.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = 20 * n if max_iter is None else max_iter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if precondition:
        d = np.asarray(matrix.diagonal(), dtype=float)
        if np.any(d == 0.0):
            raise ContractViolation("Jacobi preconditioning needs a nonzero diagonal")
        dinv = 1.0 / d
        apply_m = lambda v: dinv * v  # noqa: E731
    else:
        apply_m = lambda v: v  # noqa: E731

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, True)
    r = b - matrix @ x
    res = float(np.linalg.norm(r)) / bnorm
    if res <= tol:
        return x, SolveStats(0, res, True)
    r_hat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    breakdowns = 0
    it = 0
    while it < max_iter:
        it += 1
        rho = float(np.dot(r_hat, r))
        if abs(rho) < _BREAKDOWN or omega == 0.0:
            breakdowns += 1
            if breakdowns >= 2:
                raise SolverBreakdown(f"BiCGSTAB broke down twice in a row at iteration {it}")
            r_hat = r.copy()
            rho = float(np.dot(r_hat, r))
            rho_old = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            if abs(rho) < _BREAKDOWN:
                raise SolverBreakdown("residual vanished without meeting the tolerance")
        else:
            breakdowns = 0
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = apply_m(p)
        v = matrix @ p_hat
        denom = float(np.dot(r_hat, v))
        if abs(denom) < _BREAKDOWN:
            omega = 0.0
            rho_old = rho
            continue
        alpha = rho / denom
        s = r - alpha * v
        if float(np.linalg.norm(s)) / bnorm <= tol:
            x_half = x + alpha * p_hat
            res = float(np.linalg.norm(b - matrix @ x_half)) / bnorm
            if res <= tol:
                return x_half, SolveStats(it, res, True)
        s_hat = apply_m(s)
        t = matrix @ s_hat
        tt = float(np.dot(t, t))
        omega = float(np.dot(t, s)) / tt if tt > 0.0 else 0.0
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rho_old = rho
        if float(np.linalg.norm(r)) / bnorm <= tol:
            # confirm against the true residual; recurrences drift
            res = float(np.linalg.norm(b - matrix @ x)) / bnorm
            if res <= tol:
                return x, SolveStats(it, res, True)
            r = b - matrix @ x
    res = float(np.linalg.norm(b - matrix @ x)) / bnorm
    return x, SolveStats(it, res, res <= tol)


def dense_solve(matrix, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting (LAPACK) on the dense matrix."""
    a = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    return np.linalg.solve(a, np.asarray(b, dtype=float))


def solve_system(system: SparseSystem, tol: float = SOLVER_TOL, max_iter: int | None = None,
                 precondition: bool = False) -> tuple[np.ndarray, SolveStats]:
    """Solve and return the interior values in cloud order."""
    x, stats = bicgstab(system.matrix, system.rhs, tol, max_iter, precondition=precondition)
    if not stats.converged:
        log.warning("BiCGSTAB stopped after %d iterations at residual %.3e", stats.iterations,
                    stats.final_residual)
    return system.to_cloud_order(x), stats


@dataclass(frozen=True)
class DmpReport:
    ok: bool
    worst_violation: float
    negative_weights: int


def dmp_check(cloud: PointCloud, stencils, u: np.ndarray, g: FieldLike, slack: float = 1e-8) -> DmpReport:
    """Interior maximum against the largest boundary value the stencils use.

    Also counts negative stencil coefficients, which void the maximum
    principle regardless of the computed values.  ``worst_violation`` is
    max(u) - max(g) (positive means violated).
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (cloud.n_interior,):
        raise ContractViolation("solution must hold one value per interior point")
    _, _, beta, pos, bnd = _flatten(stencils, cloud.n_interior)
    negative = int(np.count_nonzero(beta < 0.0))
    gmax = float(np.max(_eval(g, pos[bnd]))) if np.any(bnd) else -math.inf
    worst = float(np.max(u)) - gmax if len(u) else -math.inf
    scale = max(1.0, abs(gmax)) if math.isfinite(gmax) else 1.0
    return DmpReport(negative == 0 and worst <= slack * scale, worst, negative)


def max_norm_error(u: np.ndarray, exact: FieldLike, cloud: PointCloud) -> float:
    """max_i |u_i - u(x_i)| over the interior points."""
    u = np.asarray(u, dtype=float)
    ref = _eval(exact, cloud.interior)
    if u.shape != ref.shape:
        raise ContractViolation("solution and exact values differ in length")
    return float(np.max(np.abs(u - ref))) if len(u) else 0.0


def write_matrix_market(system: SparseSystem, path) -> None:
    scipy.io.mmwrite(str(path), system.matrix, comment="interior unknowns in reindexed order")


class MonotoneEllipticSolver:
    """Positive-stencil solver for  -A : D^2 u = f  with Dirichlet data.

    ``fit(cloud, h)`` builds one stencil per interior point (``stencils_``);
    ``solve(f, g)`` assembles and solves, returning interior values in cloud
    order.  Stencils depend only on the cloud and A, so one fit serves any
    number of right-hand sides.
    """

    def __init__(self, domain: Domain, a_field: CoefficientLike, rho: float = 1.0, alpha: float = 3.0,
                 table: CalibrationTable | None = None, reduced: bool = True, per_point: bool = False,
                 lp_tol: float = LP_TOL, feas_tol: float = FEAS_TOL, solver_tol: float = SOLVER_TOL,
                 max_iter: int | None = None, precondition: bool = False, reorder: bool = True):
        self.domain = domain
        self.a_field = a_field
        self.rho = rho
        self.alpha = alpha
        self.table = table
        self.reduced = reduced
        self.per_point = per_point
        self.lp_tol = lp_tol
        self.feas_tol = feas_tol
        self.solver_tol = solver_tol
        self.max_iter = max_iter
        self.precondition = precondition
        self.reorder = reorder

    def fit(self, cloud: PointCloud, h: float | None = None,
            stencils: StencilSet | None = None) -> "MonotoneEllipticSolver":
        """Build the stencils (or adopt ``stencils`` built elsewhere for this cloud)."""
        if stencils is None:
            d = cloud.dim
            table = self.table or default_table(d)
            h = cloud.fill_distance if h is None else h
            builder = StencilBuilder(cloud, self.domain, self.a_field, kernel_normalize(self.alpha, d), h,
                                     table, self.rho, self.reduced, self.per_point, self.lp_tol, self.feas_tol)
            stencils = builder.build_all()
        elif len(stencils) != cloud.n_interior:
            raise ContractViolation("one stencil per interior point is required")
        self.cloud_ = cloud
        self.stencils_: StencilSet = stencils
        self.permutation_ = reindex(cloud.interior) if self.reorder else np.arange(cloud.n_interior)
        return self

    def assemble(self, f: FieldLike, g: FieldLike) -> SparseSystem:
        if not hasattr(self, "stencils_"):
            raise ContractViolation("call fit before assembling")
        return assemble(self.cloud_, self.stencils_, f, g, self.permutation_)

    def solve(self, f: FieldLike, g: FieldLike) -> np.ndarray:
        self.system_ = self.assemble(f, g)
        u, self.stats_ = solve_system(self.system_, self.solver_tol, self.max_iter, self.precondition)
        return u
