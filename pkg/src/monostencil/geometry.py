"""Small dense linear algebra, ellipsoid/box predicates and the voxel grid.

Everything here works for d = 2 or d = 3.  The inner loops are compiled with
numba because they run once per cloud point (or per probe) in the stencil and
point-cloud code.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

from .errors import ContractViolation, DegenerateCoefficient, OutOfBounds

# Slack used when deciding whether a reduced ellipse is empty.  Near-tangent
# faces are reported as touching, so the worst a rounding error can do is turn
# a Disjoint verdict into Partial (which only costs a pointwise filter).
TANGENT_SLACK = 1e-14


class Overlap(enum.IntEnum):
    DISJOINT = 0
    CONTAINED = 1
    PARTIAL = 2


# ---------------------------------------------------------------------------
# eigen-decomposition and matrix roots


@njit(cache=True)
def _jacobi_eigh(a_in):
    n = a_in.shape[0]
    a = a_in.copy()
    v = np.eye(n)
    scale = np.sqrt(np.sum(a * a))
    if scale == 0.0:
        return np.zeros(n), v
    for _sweep in range(64):
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += a[p, q] * a[p, q]
        if np.sqrt(off) < 1e-14 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    order = np.argsort(w)
    return w[order], v[:, order]


@njit(cache=True)
def _frame(a):
    """Square root, inverse square root and eigenvalues of an SPD matrix.

    Returns ``ok = False`` when an eigenvalue is not positive.
    """
    w, v = _jacobi_eigh(a)
    n = a.shape[0]
    m = np.zeros((n, n))
    minv = np.zeros((n, n))
    if w[0] <= 0.0:
        return m, minv, w, False
    for i in range(n):
        for j in range(n):
            s1 = 0.0
            s2 = 0.0
            for k in range(n):
                r = np.sqrt(w[k])
                s1 += v[i, k] * r * v[j, k]
                s2 += v[i, k] / r * v[j, k]
            m[i, j] = s1
            minv[i, j] = s2
    # exact symmetry helps downstream reproducibility
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = 0.5 * (m[i, j] + m[j, i])
            minv[i, j] = minv[j, i] = 0.5 * (minv[i, j] + minv[j, i])
    return m, minv, w, True


def _check_symmetric(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > 1e-14 * scale:
        raise ContractViolation("matrix is not symmetric")
    return a


def eigen_sym(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
    symmetric matrix, by cyclic Jacobi rotations."""
    a = _check_symmetric(a)
    return _jacobi_eigh(0.5 * (a + a.T))


def matrix_sqrt(a) -> np.ndarray:
    """Symmetric positive definite square root."""
    a = _check_symmetric(a)
    m, _, w, ok = _frame(0.5 * (a + a.T))
    if not ok:
        raise DegenerateCoefficient(f"matrix is not positive definite (smallest eigenvalue {w[0]:.3g})")
    return m


# ---------------------------------------------------------------------------
# boxes and ellipsoids


@dataclass(frozen=True)
class HyperRect:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractViolation("lo and hi must be vectors of equal length")
        if not np.all(lo < hi):
            raise ContractViolation("box needs lo < hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def vertices(self) -> np.ndarray:
        d = self.dim
        corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
        return np.where(corners == 0, self.lo, self.hi)

    def contains_closed(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)


@dataclass(frozen=True)
class SearchEllipsoid:
    """Open ellipsoid ``{y : |M^{-1}(y - center)| < radius}`` with ``M = A^{1/2}``."""

    center: np.ndarray
    sqrt_shape: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "sqrt_shape", np.asarray(self.sqrt_shape, dtype=float))
        if not self.radius > 0:
            raise ContractViolation("ellipsoid radius must be positive")

    @classmethod
    def from_matrix(cls, center, a, radius: float) -> "SearchEllipsoid":
        e = cls(center, matrix_sqrt(a), radius)
        return e

    @property
    def dim(self) -> int:
        return self.center.size

    @cached_property
    def shape_matrix(self) -> np.ndarray:
        return self.sqrt_shape @ self.sqrt_shape

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        _, minv, w, ok = _frame(self.shape_matrix)
        if not ok:
            raise DegenerateCoefficient("ellipsoid shape is not positive definite")
        return minv

    @cached_property
    def quad_form(self) -> np.ndarray:
        """Q with E = {y : (y-c)^T Q (y-c) < 1}."""
        return self.inv_sqrt @ self.inv_sqrt / self.radius**2

    @cached_property
    def quad_form_inv(self) -> np.ndarray:
        return self.shape_matrix * self.radius**2

    @property
    def semi_axes(self) -> np.ndarray:
        w, _ = eigen_sym(self.shape_matrix)
        return self.radius * np.sqrt(w)

    def contains(self, y) -> np.ndarray:
        z = (np.asarray(y, dtype=float) - self.center) @ self.inv_sqrt.T
        return np.sum(z * z, axis=-1) < self.radius**2


# ---------------------------------------------------------------------------
# box / ellipsoid classification
#
# The ellipsoid is carried as (c, Q, S) with E = {(y-c)^T Q (y-c) < 1} and
# S = Q^{-1}.  Restricting E to the hyperplane y_k = s gives a lower
# dimensional ellipsoid with centre c_z - Q_zz^{-1} Q_zk (s - c_k) and level
# 1 - (s - c_k)^2 / S_kk, which is how faces and edges are tested.


@njit(cache=True)
def _quad2(x0, x1, c, q):
    a = x0 - c[0]
    b = x1 - c[1]
    return q[0, 0] * a * a + 2.0 * q[0, 1] * a * b + q[1, 1] * b * b


@njit(cache=True)
def _quad3(x0, x1, x2, c, q):
    a = x0 - c[0]
    b = x1 - c[1]
    e = x2 - c[2]
    return (q[0, 0] * a * a + q[1, 1] * b * b + q[2, 2] * e * e
            + 2.0 * (q[0, 1] * a * b + q[0, 2] * a * e + q[1, 2] * b * e))


@njit(cache=True)
def _edge_meets(lo_z, hi_z, ck, cz, qzk, qzz, skk, s):
    """Does the closed edge {y_k = s, lo_z <= y_z <= hi_z} of a 2d box meet E?"""
    level = 1.0 - (s - ck) ** 2 / skk
    if level <= -TANGENT_SLACK:
        return False
    if level < 0.0:
        level = 0.0
    mid = cz - qzk / qzz * (s - ck)
    half = np.sqrt(level / qzz)
    return lo_z <= mid + half and hi_z >= mid - half


@njit(cache=True)
def _classify2s(l0, l1, h0, h1, c0, c1, q00, q01, q11, s00, s11):
    """Scalar form of the 2d classification (q: quadratic form, s: its inverse)."""
    def quad(x0, x1):
        a = x0 - c0
        b = x1 - c1
        return q00 * a * a + 2.0 * q01 * a * b + q11 * b * b

    if quad(0.5 * (l0 + h0), 0.5 * (l1 + h1)) < 1.0:
        if quad(l0, l1) <= 1.0 and quad(h0, l1) <= 1.0 and quad(l0, h1) <= 1.0 and quad(h0, h1) <= 1.0:
            return 1
        return 2
    if l0 < c0 < h0 and l1 < c1 < h1:
        return 2
    # edges x0 = const, then x1 = const
    if _edge_meets(l1, h1, c0, c1, q01, q11, s00, l0) or _edge_meets(l1, h1, c0, c1, q01, q11, s00, h0):
        return 2
    if _edge_meets(l0, h0, c1, c0, q01, q00, s11, l1) or _edge_meets(l0, h0, c1, c0, q01, q00, s11, h1):
        return 2
    return 0


@njit(cache=True)
def _classify2(lo, hi, c, q, s_mat):
    return _classify2s(lo[0], lo[1], hi[0], hi[1], c[0], c[1], q[0, 0], q[0, 1], q[1, 1],
                       s_mat[0, 0], s_mat[1, 1])


@njit(cache=True)
def _face_meets(lo, hi, c, q, s_mat, k, s):
    """Does the closed face {y_k = s} of a 3d box meet E?"""
    if k == 0:
        i, j = 1, 2
    elif k == 1:
        i, j = 0, 2
    else:
        i, j = 0, 1
    level = 1.0 - (s - c[k]) ** 2 / s_mat[k, k]
    if level <= -TANGENT_SLACK:
        return False
    qii = q[i, i]
    qij = q[i, j]
    qjj = q[j, j]
    det = qii * qjj - qij * qij
    # centre of the planar section
    ri = q[i, k] * (s - c[k])
    rj = q[j, k] * (s - c[k])
    ci = c[i] - (qjj * ri - qij * rj) / det
    cj = c[j] - (-qij * ri + qii * rj) / det
    if level <= 0.0:
        # tangent plane: the section degenerates to its centre
        return lo[i] <= ci <= hi[i] and lo[j] <= cj <= hi[j]
    return _classify2s(lo[i], lo[j], hi[i], hi[j], ci, cj, qii / level, qij / level, qjj / level,
                       qjj * level / det, qii * level / det) != 0


@njit(cache=True)
def _classify3(lo, hi, c, q, s_mat):
    m0 = 0.5 * (lo[0] + hi[0])
    m1 = 0.5 * (lo[1] + hi[1])
    m2 = 0.5 * (lo[2] + hi[2])
    if _quad3(m0, m1, m2, c, q) < 1.0:
        for v in range(8):
            x0 = hi[0] if v & 1 else lo[0]
            x1 = hi[1] if v & 2 else lo[1]
            x2 = hi[2] if v & 4 else lo[2]
            if _quad3(x0, x1, x2, c, q) > 1.0:
                return 2
        return 1
    if lo[0] < c[0] < hi[0] and lo[1] < c[1] < hi[1] and lo[2] < c[2] < hi[2]:
        return 2
    for k in range(3):
        if _face_meets(lo, hi, c, q, s_mat, k, lo[k]) or _face_meets(lo, hi, c, q, s_mat, k, hi[k]):
            return 2
    return 0


@njit(cache=True)
def _classify(lo, hi, c, q, s_mat):
    if lo.shape[0] == 2:
        return _classify2(lo, hi, c, q, s_mat)
    return _classify3(lo, hi, c, q, s_mat)


def rect_ellipsoid_classify(box: HyperRect, e: SearchEllipsoid) -> Overlap:
    """Classify an axis-aligned box against an open ellipsoid.

    Branch order: box centre inside E (then the closed vertex test decides
    between CONTAINED and PARTIAL), E's centre inside the box, then the faces
    one dimension down.
    """
    if box.dim != e.dim or box.dim not in (2, 3):
        raise ContractViolation("box and ellipsoid must share dimension 2 or 3")
    return Overlap(_classify(box.lo, box.hi, e.center, e.quad_form, e.quad_form_inv))


# ---------------------------------------------------------------------------
# voxel grid


@njit(cache=True)
def _query_ellipsoid(points, cell_start, cell_ids, glo, cell, dims, c, minv, delta, q, s_mat):
    d = points.shape[1]
    r0 = np.zeros(3, dtype=np.int64)
    r1 = np.zeros(3, dtype=np.int64)
    for k in range(d):
        ext = np.sqrt(s_mat[k, k])
        a = int(np.floor((c[k] - ext - glo[k]) / cell))
        b = int(np.floor((c[k] + ext - glo[k]) / cell))
        if b < 0 or a > dims[k] - 1:
            return np.empty(0, dtype=np.int64)
        r0[k] = max(a, 0)
        r1[k] = min(b, dims[k] - 1)
    total = 0
    for i in range(r0[0], r1[0] + 1):
        for j in range(r0[1], r1[1] + 1):
            for l in range(r0[2], r1[2] + 1):
                lin = (i * dims[1] + j) * dims[2] + l
                total += cell_start[lin + 1] - cell_start[lin]
    out = np.empty(total, dtype=np.int64)
    n = 0
    blo = np.empty(d)
    bhi = np.empty(d)
    r2 = delta * delta
    for i in range(r0[0], r1[0] + 1):
        for j in range(r0[1], r1[1] + 1):
            for l in range(r0[2], r1[2] + 1):
                lin = (i * dims[1] + j) * dims[2] + l
                s0 = cell_start[lin]
                s1 = cell_start[lin + 1]
                if s0 == s1:
                    continue
                blo[0] = glo[0] + i * cell
                blo[1] = glo[1] + j * cell
                if d == 3:
                    blo[2] = glo[2] + l * cell
                for k in range(d):
                    bhi[k] = blo[k] + cell
                verdict = _classify(blo, bhi, c, q, s_mat)
                if verdict == 0:
                    continue
                if verdict == 1:
                    for t in range(s0, s1):
                        out[n] = cell_ids[t]
                        n += 1
                    continue
                for t in range(s0, s1):
                    pid = cell_ids[t]
                    acc = 0.0
                    for a in range(d):
                        w = 0.0
                        for b in range(d):
                            w += minv[a, b] * (points[pid, b] - c[b])
                        acc += w * w
                    if acc < r2:
                        out[n] = pid
                        n += 1
    return out[:n]


@njit(cache=True)
def _nearest(points, cell_start, cell_ids, glo, cell, dims, queries, exclude):
    """Distance from each query to the nearest stored point (skipping the
    stored id ``exclude[i]`` if it is >= 0).  Shells of cells are searched
    outward until no unseen cell can hold a closer point."""
    d = points.shape[1]
    nq = queries.shape[0]
    out = np.empty(nq)
    ci = np.zeros(3, dtype=np.int64)
    maxk = max(dims[0], max(dims[1], dims[2]))
    for qi in range(nq):
        for k in range(d):
            t = int(np.floor((queries[qi, k] - glo[k]) / cell))
            ci[k] = min(max(t, 0), dims[k] - 1)
        best = np.inf
        for shell in range(maxk + 1):
            for i in range(ci[0] - shell, ci[0] + shell + 1):
                if i < 0 or i >= dims[0]:
                    continue
                for j in range(ci[1] - shell, ci[1] + shell + 1):
                    if j < 0 or j >= dims[1]:
                        continue
                    for l in range(ci[2] - shell, ci[2] + shell + 1):
                        if l < 0 or l >= dims[2]:
                            continue
                        cheb = max(abs(i - ci[0]), max(abs(j - ci[1]), abs(l - ci[2])))
                        if cheb != shell:
                            continue
                        lin = (i * dims[1] + j) * dims[2] + l
                        for t in range(cell_start[lin], cell_start[lin + 1]):
                            pid = cell_ids[t]
                            if pid == exclude[qi]:
                                continue
                            acc = 0.0
                            for a in range(d):
                                diff = points[pid, a] - queries[qi, a]
                                acc += diff * diff
                            if acc < best:
                                best = acc
            reach = shell * cell
            if best <= reach * reach:
                break
        out[qi] = np.sqrt(best)
    return out


class VoxelGrid:
    """Uniform grid of half-open cells ``[lo, lo + cell)`` over a box.

    Points are stored cell by cell (CSR layout) in insertion order, so queries
    return ids in a reproducible order.  Points on the top face of the bounds
    are clamped into the last cell.
    """

    def __init__(self, points, bounds: HyperRect, cell_size: float):
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != bounds.dim:
            raise ContractViolation("points must be an (n, d) array matching the bounds")
        if not cell_size > 0:
            raise ContractViolation("cell size must be positive")
        outside = ~bounds.contains_closed(pts) if len(pts) else np.zeros(0, bool)
        if np.any(outside):
            bad = int(np.flatnonzero(outside)[0])
            raise OutOfBounds(f"point {bad} at {pts[bad]} lies outside the grid bounds")
        d = bounds.dim
        self.bounds = bounds
        self.cell_size = float(cell_size)
        self.points = pts
        dims = np.maximum(np.ceil((bounds.hi - bounds.lo) / cell_size).astype(np.int64), 1)
        self.dims = dims
        self._dims3 = np.ones(3, dtype=np.int64)
        self._dims3[:d] = dims
        idx = np.floor((pts - bounds.lo) / cell_size).astype(np.int64)
        idx = np.clip(idx, 0, dims - 1)
        idx3 = np.zeros((len(pts), 3), dtype=np.int64)
        idx3[:, :d] = idx
        lin = (idx3[:, 0] * self._dims3[1] + idx3[:, 1]) * self._dims3[2] + idx3[:, 2]
        self.cell_ids = np.argsort(lin, kind="stable").astype(np.int64)
        counts = np.bincount(lin, minlength=int(np.prod(self._dims3)))
        self.cell_start = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self._cell_index = idx

    def __len__(self) -> int:
        return len(self.points)

    def cell_of(self, x) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float)
        if not self.bounds.contains_closed(x):
            raise OutOfBounds(f"{x} lies outside the grid bounds")
        idx = np.floor((x - self.bounds.lo) / self.cell_size).astype(np.int64)
        return tuple(int(i) for i in np.clip(idx, 0, self.dims - 1))

    @property
    def cells(self) -> dict[tuple[int, ...], list[int]]:
        """Non-empty cells keyed by lattice index."""
        out: dict[tuple[int, ...], list[int]] = {}
        for pid in self.cell_ids:
            out.setdefault(tuple(int(i) for i in self._cell_index[pid]), []).append(int(pid))
        return out

    def query_ellipsoid(self, e: SearchEllipsoid) -> np.ndarray:
        """Ids of stored points strictly inside ``e``."""
        return self.query_raw(e.center, e.inv_sqrt, e.radius, e.quad_form, e.quad_form_inv)

    def query_raw(self, center, minv, delta, q, s_mat) -> np.ndarray:
        return _query_ellipsoid(self.points, self.cell_start, self.cell_ids, self.bounds.lo,
                                self.cell_size, self._dims3, np.asarray(center, dtype=float),
                                minv, float(delta), q, s_mat)

    def nearest_distance(self, queries, exclude=None) -> np.ndarray:
        """Euclidean distance from each query point to its nearest stored point."""
        if len(self.points) == 0:
            raise ContractViolation("grid holds no points")
        qs = np.ascontiguousarray(queries, dtype=float).reshape(-1, self.bounds.dim)
        if exclude is None:
            exclude = np.full(len(qs), -1, dtype=np.int64)
        return _nearest(self.points, self.cell_start, self.cell_ids, self.bounds.lo,
                        self.cell_size, self._dims3, qs, np.asarray(exclude, dtype=np.int64))

    def nearest_other_distance(self) -> np.ndarray:
        """Distance from each stored point to its nearest other stored point."""
        ids = np.arange(len(self.points), dtype=np.int64)
        return self.nearest_distance(self.points, exclude=ids)


def voxel_build(points, bounds: HyperRect, cell_size: float) -> VoxelGrid:
    return VoxelGrid(points, bounds, cell_size)


def voxel_query_ellipsoid(grid: VoxelGrid, e: SearchEllipsoid) -> np.ndarray:
    return grid.query_ellipsoid(e)


@njit(cache=True)
def _pairs_within(points, cell_start, cell_ids, glo, cell, dims, radius):
    d = points.shape[1]
    reach = int(np.ceil(radius / cell))
    r2 = radius * radius
    cap = 16
    pi = np.empty(cap, dtype=np.int64)
    pj = np.empty(cap, dtype=np.int64)
    pd = np.empty(cap)
    n = 0
    ci = np.zeros(3, dtype=np.int64)
    for a in range(points.shape[0]):
        for k in range(d):
            t = int(np.floor((points[a, k] - glo[k]) / cell))
            ci[k] = min(max(t, 0), dims[k] - 1)
        for i in range(max(ci[0] - reach, 0), min(ci[0] + reach, dims[0] - 1) + 1):
            for j in range(max(ci[1] - reach, 0), min(ci[1] + reach, dims[1] - 1) + 1):
                for l in range(max(ci[2] - reach, 0), min(ci[2] + reach, dims[2] - 1) + 1):
                    lin = (i * dims[1] + j) * dims[2] + l
                    for t in range(cell_start[lin], cell_start[lin + 1]):
                        b = cell_ids[t]
                        if b <= a:
                            continue
                        acc = 0.0
                        for k in range(d):
                            diff = points[a, k] - points[b, k]
                            acc += diff * diff
                        if acc < r2:
                            if n == cap:
                                cap *= 2
                                pi2 = np.empty(cap, dtype=np.int64)
                                pj2 = np.empty(cap, dtype=np.int64)
                                pd2 = np.empty(cap)
                                pi2[:n] = pi[:n]
                                pj2[:n] = pj[:n]
                                pd2[:n] = pd[:n]
                                pi, pj, pd = pi2, pj2, pd2
                            pi[n] = a
                            pj[n] = b
                            pd[n] = np.sqrt(acc)
                            n += 1
    return pi[:n], pj[:n], pd[:n]


def pairs_within(grid: VoxelGrid, radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All stored pairs ``(i < j)`` closer than ``radius`` with their distances."""
    return _pairs_within(grid.points, grid.cell_start, grid.cell_ids, grid.bounds.lo,
                         grid.cell_size, grid._dims3, float(radius))
