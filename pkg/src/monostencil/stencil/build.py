"""Minimal positive stencils, one linear program per interior point."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Union

import numpy as np
from numba import njit

from ..domain import Domain
from ..errors import ContractViolation, DegenerateCoefficient, EmptyNeighborhood, Infeasible, StencilFailure
from ..geometry import HyperRect, SearchEllipsoid, VoxelGrid, _frame
from ..pointcloud import PointCloud
from .calibration import CalibrationTable, searching_delta
from .kernel import KernelSpec, rho_from_frame
from .simplex import FEAS_TOL, LP_TOL, simplex_min_sum

log = logging.getLogger(__name__)

# a coefficient field maps an (n, d) array of points to (n, d, d) matrices
CoefficientLike = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def monomial_exponents(d: int, degrees=(1, 2)) -> np.ndarray:
    """Multi-indices by degree, lexicographically descending within a degree:
    (1,0), (0,1), (2,0), (1,1), (0,2) in 2d."""
    rows = []
    for deg in degrees:
        block = set()
        for combo in combinations_with_replacement(range(d), deg):
            e = [0] * d
            for k in combo:
                e[k] += 1
            block.add(tuple(e))
        rows.extend(sorted(block, reverse=True))
    return np.array(rows, dtype=np.int64)


@njit(cache=True)
def _monomials(disp, exps):
    out = np.ones((exps.shape[0], disp.shape[0]))
    for r in range(exps.shape[0]):
        for j in range(disp.shape[0]):
            v = 1.0
            for k in range(disp.shape[1]):
                for _ in range(exps[r, k]):
                    v *= disp[j, k]
            out[r, j] = v
    return out


def monomials(disp: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Matrix of y^alpha, one row per multi-index, one column per displacement."""
    return _monomials(np.ascontiguousarray(disp, dtype=float), exps)


@njit(cache=True)
def _moment_rhs(a, exps):
    out = np.zeros(exps.shape[0])
    for r in range(exps.shape[0]):
        if exps[r].sum() != 2:
            continue
        i = -1
        j = -1
        for k in range(exps.shape[1]):
            if exps[r, k] == 2:
                i = j = k
            elif exps[r, k] == 1:
                if i < 0:
                    i = k
                else:
                    j = k
        out[r] = 2.0 * a[i, j]
    return out


def moment_rhs(a: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Target moments: 0 for first-degree rows, entries of 2A for second-degree rows."""
    return _moment_rhs(np.ascontiguousarray(a, dtype=float), exps)


def evaluate_field(a_field: CoefficientLike, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    if callable(a_field):
        vals = np.asarray(a_field(x), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(a_field, dtype=float), (len(x), x.shape[1], x.shape[1]))
    if vals.shape != (len(x), x.shape[1], x.shape[1]):
        raise ContractViolation(f"coefficient field returned shape {vals.shape}")
    return np.array(vals)


@dataclass
class StencilConstraints:
    ids: np.ndarray          # cloud ids of the source points
    positions: np.ndarray    # projected positions
    boundary: np.ndarray     # True where the neighbour carries Dirichlet data
    rho: np.ndarray          # kernel weights per column
    matrix: np.ndarray       # rows: monomials, columns: neighbours
    rhs: np.ndarray


@dataclass
class Stencil:
    center: int
    neighbors: np.ndarray
    positions: np.ndarray
    weights: np.ndarray
    coeffs: np.ndarray
    boundary: np.ndarray
    delta: float
    retried: bool = False
    n_candidates: int = 0

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.weights))

    def apply(self, u_center: float, u_neighbors: np.ndarray) -> float:
        """Discrete operator sum beta_j (u_j - u_i)."""
        return float(np.dot(self.coeffs, np.asarray(u_neighbors) - u_center))


def build_constraints(x_i: np.ndarray, ids: np.ndarray, cloud: PointCloud, domain: Domain,
                      minv: np.ndarray, det_m: float, delta: float, a_i: np.ndarray,
                      kernel: KernelSpec, exps: np.ndarray | None = None) -> StencilConstraints:
    """LP data for one centre.  Neighbours outside the closed domain are
    replaced by the first boundary hit on the ray from ``x_i``; coincident
    projections keep only the column whose source point is nearest."""
    if len(ids) == 0:
        raise EmptyNeighborhood("no neighbour inside the search ellipsoid")
    d = cloud.dim
    exps = monomial_exponents(d) if exps is None else exps
    pos = cloud.points[ids]
    boundary = ids >= cloud.n_interior
    if np.any(boundary):
        bpos = pos[boundary]
        proj = domain.project_to_boundary(x_i, bpos)
        moved = np.any(proj != bpos, axis=-1)
        if np.count_nonzero(moved) > 1:
            keep = _dedup(proj, np.linalg.norm(bpos - x_i, axis=-1), moved, delta)
            sel = np.flatnonzero(boundary)
            drop = sel[~keep]
            pos = pos.copy()
            pos[boundary] = proj
            mask = np.ones(len(ids), dtype=bool)
            mask[drop] = False
            ids, pos, boundary = ids[mask], pos[mask], boundary[mask]
        else:
            pos = pos.copy()
            pos[boundary] = proj
    disp = pos - x_i
    rho = rho_from_frame(minv, det_m, delta, disp, kernel)
    mat = monomials(disp, exps) * rho
    return StencilConstraints(ids, pos, boundary, rho, mat, moment_rhs(a_i, exps))


@njit(cache=True)
def _dedup_sorted(proj, order, moved, tol):
    keep = np.ones(proj.shape[0], dtype=np.bool_)
    kept = np.empty(proj.shape[0], dtype=np.int64)
    nk = 0
    for k in order:
        if not moved[k]:
            continue
        for jj in range(nk):
            j = kept[jj]
            close = True
            for c in range(proj.shape[1]):
                if abs(proj[k, c] - proj[j, c]) > tol:
                    close = False
                    break
            if close:
                keep[k] = False
                break
        if keep[k]:
            kept[nk] = k
            nk += 1
    return keep


def _dedup(proj, src_dist, moved, delta) -> np.ndarray:
    """Keep-mask over projected columns, dropping later duplicates (by source
    distance) of the same boundary point."""
    order = np.argsort(src_dist, kind="stable")
    return _dedup_sorted(np.ascontiguousarray(proj), order, np.asarray(moved), 1e-12 * delta)


@dataclass
class StencilSet:
    stencils: list[Stencil]
    lp_retries: int = 0
    deltas: tuple[float, float] = (float("nan"), float("nan"))
    third_moments: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.stencils)

    def __getitem__(self, i) -> Stencil:
        return self.stencils[i]

    def __iter__(self):
        return iter(self.stencils)

    @property
    def average_size(self) -> float:
        return float(np.mean([s.size for s in self.stencils])) if self.stencils else 0.0

    @property
    def max_third_moment(self) -> float:
        return float(np.max(self.third_moments)) if len(self.third_moments) else 0.0


class StencilBuilder:
    """Builds stencils for every interior point of a cloud.

    ``rho`` is the global ellipticity ratio used to pick the search radius;
    with ``per_point=True`` the smallest eigenvalue of A(x_i) is used instead.
    """

    def __init__(self, cloud: PointCloud, domain: Domain, a_field: CoefficientLike,
                 kernel: KernelSpec, h: float, table: CalibrationTable, rho: float,
                 reduced: bool = True, per_point: bool = False,
                 lp_tol: float = LP_TOL, feas_tol: float = FEAS_TOL, cell_size: float | None = None):
        if cloud.dim != kernel.dim or cloud.dim != table.dim:
            raise ContractViolation("cloud, kernel and calibration table disagree on dimension")
        self.cloud = cloud
        self.domain = domain
        self.kernel = kernel
        self.h = float(h)
        self.table = table
        self.rho = float(rho)
        self.reduced = reduced
        self.per_point = per_point
        self.lp_tol = lp_tol
        self.feas_tol = feas_tol
        self.exps = monomial_exponents(cloud.dim)
        self.exps3 = monomial_exponents(cloud.dim, degrees=(3,))
        self.coeffs_at = evaluate_field(a_field, cloud.interior) if cloud.n_interior else np.zeros((0,))
        lo = cloud.points.min(axis=0)
        hi = cloud.points.max(axis=0)
        pad = 1e-9 * float(np.max(hi - lo)) + 1e-12
        # cells of 2h hold a handful of points each, enough for whole-cell
        # acceptance to beat testing points one by one
        self.grid = VoxelGrid(cloud.points, HyperRect(lo - pad, hi + pad), cell_size or 2.0 * self.h)

    def radius(self, lam_min: float, reduced: bool) -> float:
        rho = min(lam_min, 1.0) if self.per_point else self.rho
        return searching_delta(self.h, rho, self.table, reduced)

    def ellipsoid(self, i: int, reduced: bool | None = None) -> SearchEllipsoid:
        a = self.coeffs_at[i]
        m, minv, w, ok = _frame(a)
        if not ok:
            raise DegenerateCoefficient(f"A is not positive definite at point {i}")
        reduced = self.reduced if reduced is None else reduced
        return SearchEllipsoid(self.cloud.points[i], m, self.radius(w[0], reduced))

    def neighbors(self, i: int, minv, delta, a) -> np.ndarray:
        x = self.cloud.points[i]
        q = minv @ minv / delta**2
        ids = self.grid.query_raw(x, minv, delta, q, a * delta**2)
        return ids[ids != i]

    def build(self, i: int) -> Stencil:
        if not 0 <= i < self.cloud.n_interior:
            raise ContractViolation(f"point {i} is not an interior point")
        x = self.cloud.points[i]
        a = self.coeffs_at[i]
        m, minv, w, ok = _frame(a)
        if not ok:
            raise DegenerateCoefficient(f"A is not positive definite at point {i}")
        det_m = math.sqrt(float(np.prod(w)))
        attempts = (True, False) if self.reduced else (False,)
        delta = float("nan")
        for reduced in attempts:
            delta = self.radius(w[0], reduced)
            ids = self.neighbors(i, minv, delta, a)
            try:
                cons = build_constraints(x, ids, self.cloud, self.domain, minv, det_m, delta, a,
                                         self.kernel, self.exps)
                omega = simplex_min_sum(cons.matrix, cons.rhs, self.lp_tol, self.feas_tol)
            except (Infeasible, EmptyNeighborhood):
                continue
            nz = omega > 0.0
            return Stencil(i, cons.ids[nz], cons.positions[nz], omega[nz], cons.rho[nz] * omega[nz],
                           cons.boundary[nz], delta, retried=reduced is False and self.reduced,
                           n_candidates=len(ids))
        raise StencilFailure(i, delta)

    def build_all(self) -> StencilSet:
        stencils = []
        retries = 0
        t3 = np.empty(self.cloud.n_interior)
        for i in range(self.cloud.n_interior):
            s = self.build(i)
            retries += s.retried
            t3[i] = third_moment_diag(s, self.cloud.points[i], self.exps3)
            stencils.append(s)
        deltas = (self.radius(1.0, True) if self.reduced else float("nan"), self.radius(1.0, False))
        if retries:
            log.info("%d of %d stencils needed the full search radius", retries, len(stencils))
        return StencilSet(stencils, retries, deltas, t3)


def build_stencil(i: int, cloud: PointCloud, domain: Domain, a_field: CoefficientLike,
                  kernel: KernelSpec, h: float, table: CalibrationTable, rho: float,
                  reduced: bool = True, **kw) -> Stencil:
    return StencilBuilder(cloud, domain, a_field, kernel, h, table, rho, reduced, **kw).build(i)


def build_stencils(cloud: PointCloud, domain: Domain, a_field: CoefficientLike, kernel: KernelSpec,
                   h: float, table: CalibrationTable, rho: float, reduced: bool = True, **kw) -> StencilSet:
    return StencilBuilder(cloud, domain, a_field, kernel, h, table, rho, reduced, **kw).build_all()


def third_moment_diag(s: Stencil, x_i: np.ndarray, exps3: np.ndarray | None = None) -> float:
    """Largest third moment |sum_j beta_j (x_j - x_i)^alpha| over |alpha| = 3."""
    if len(s.coeffs) == 0:
        return 0.0
    exps3 = monomial_exponents(len(x_i), degrees=(3,)) if exps3 is None else exps3
    disp = s.positions - x_i
    return float(np.max(np.abs(monomials(disp, exps3) @ s.coeffs)))


# ---------------------------------------------------------------------------
# cone condition

SIGMA = {2: math.sqrt(2.0) - 1.0, 3: math.sqrt((3.0 - math.sqrt(6.0)) / 6.0)}


def cone_directions(d: int, n: int) -> np.ndarray:
    """Unit vectors: equally spaced angles in 2d, a Fibonacci lattice in 3d."""
    if d == 2:
        t = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(t), np.sin(t)])
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + math.sqrt(5.0)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@dataclass
class ConeReport:
    satisfied: bool
    worst_direction: np.ndarray
    worst_count: int
    n_failed: int


def cone_condition_check(x_i, points, e: SearchEllipsoid, n_directions: int = 64,
                         exclude: int | None = None) -> ConeReport:
    """Check that every mapped cone M(C_delta^v) around x_i holds a point.

    In the pre-image z = M^{-1}(y - x_i) a cone point satisfies |z| < delta
    and z.v >= |z| / sqrt(1 + sigma^2), i.e. it lies within the half-angle
    atan(sigma) of v.
    """
    x_i = np.asarray(x_i, dtype=float)
    pts = np.asarray(points, dtype=float)
    d = len(x_i)
    z = (pts - x_i) @ e.inv_sqrt.T
    nz = np.linalg.norm(z, axis=-1)
    ok = (nz > 0) & (nz < e.radius)
    if exclude is not None:
        ok[exclude] = False
    z, nz = z[ok], nz[ok]
    dirs = cone_directions(d, n_directions)
    cos_half = 1.0 / math.sqrt(1.0 + SIGMA[d] ** 2)
    counts = np.count_nonzero((z @ dirs.T) >= (cos_half * nz)[:, None], axis=0) if len(z) else np.zeros(len(dirs), int)
    worst = int(np.argmin(counts))
    return ConeReport(bool(np.all(counts > 0)), dirs[worst], int(counts[worst]), int(np.count_nonzero(counts == 0)))


def dump_stencils(stencils, path) -> None:
    """Text dump, one line per centre: ``i : (j, beta, usedBoundary) ...``."""
    with open(path, "w") as fh:
        for s in stencils:
            cells = " ".join(f"({int(j)}, {b:.17g}, {int(f)})" for j, b, f in zip(s.neighbors, s.coeffs, s.boundary))
            fh.write(f"{s.center} : {cells}\n")
