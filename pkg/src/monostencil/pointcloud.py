"""Proper point clouds: Halton initialisation, fill/separation/boundary
distances and the add / push-inward / merge adjustment loop.

A cloud lives in the extended region ``Omega_delta0 = {x : dist(x, Omega) <
delta0}``.  Interior points (inside the open domain) come first, followed by
the collar points that only serve as projected boundary neighbours.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

from .domain import CLOSURE_SLACK, Domain
from .errors import AdjustmentFailed, ContractViolation
from .geometry import HyperRect, VoxelGrid, pairs_within

log = logging.getLogger(__name__)

PRIMES = (2, 3, 5)
DEFAULT_SKIP = 20
MC_SAMPLES = 10**6
MC_SEED = 20240607


@dataclass(frozen=True)
class ProperConstants:
    c_h: float = 1.0
    c_zeta: float = 0.175
    c_kappa: float = 0.25


@dataclass
class PointCloud:
    points: np.ndarray
    n_interior: int
    fill_distance: float = float("nan")
    separation: float = float("nan")
    boundary_dist: float = float("nan")
    # spacing of the probe lattice behind fill_distance
    probe_spacing: float = float("nan")

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise ContractViolation("points must be an (M, 2) or (M, 3) array")
        if not 0 <= self.n_interior <= len(self.points):
            raise ContractViolation("interior count out of range")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_total(self) -> int:
        return len(self.points)

    @property
    def interior(self) -> np.ndarray:
        return self.points[: self.n_interior]

    @property
    def collar(self) -> np.ndarray:
        return self.points[self.n_interior:]

    def permute_interior(self, perm) -> "PointCloud":
        """New cloud whose interior point k is the old interior point perm[k]."""
        perm = np.asarray(perm, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(self.n_interior)):
            raise ContractViolation("not a permutation of the interior points")
        pts = np.concatenate([self.interior[perm], self.collar])
        return replace(self, points=pts)

    # serialisation ---------------------------------------------------------

    def save(self, path) -> None:
        d = self.dim
        lines = [f"# d={d} N={self.n_interior} M={self.n_total} h={self.fill_distance!r}"]
        lines.extend(" ".join(f"{v:.17g}" for v in p) for p in self.points)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PointCloud":
        text = Path(path).read_text().splitlines()
        m = re.match(r"#\s*d=(\d+)\s+N=(\d+)\s+M=(\d+)\s+h=(\S+)", text[0])
        if not m:
            raise ContractViolation(f"{path}: missing cloud header")
        d, n, total, h = int(m[1]), int(m[2]), int(m[3]), float(m[4])
        pts = np.array([[float(v) for v in line.split()] for line in text[1:] if line.strip()])
        pts = pts.reshape(-1, d)
        if len(pts) != total:
            raise ContractViolation(f"{path}: header says {total} points, found {len(pts)}")
        return cls(pts, n, fill_distance=h)


# ---------------------------------------------------------------------------
# Halton sequence


def _radical_inverse(indices: np.ndarray, base: int) -> np.ndarray:
    out = np.zeros(len(indices))
    f = 1.0 / base
    i = indices.copy()
    while np.any(i > 0):
        out += f * (i % base)
        i //= base
        f /= base
    return out


def halton_init(count: int, box: HyperRect, skip: int = DEFAULT_SKIP) -> np.ndarray:
    """Halton points with prime bases, mapped affinely into ``box``.

    The sequence index starts at 1, so ``skip=0`` yields (1/2, 1/3, ...) first.
    """
    if count < 1:
        raise ContractViolation("need at least one point")
    idx = np.arange(skip + 1, skip + count + 1, dtype=np.int64)
    unit = np.column_stack([_radical_inverse(idx, b) for b in PRIMES[: box.dim]])
    return box.lo + unit * (box.hi - box.lo)


# ---------------------------------------------------------------------------
# geometric quantities


def region_membership(domain: Domain, delta0: float, x, closed: bool = False) -> np.ndarray:
    sd = domain.signed_distance(x)
    if delta0 == 0.0:
        return sd <= CLOSURE_SLACK if closed else sd < 0.0
    return sd <= delta0 if closed else sd < delta0


@lru_cache(maxsize=64)
def _collar_volume(domain: Domain, delta0: float, samples: int, seed: int) -> float:
    box = domain.bounding_box(delta0)
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 200_000
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        x = rng.uniform(box.lo, box.hi, size=(n, box.dim))
        hits += int(np.count_nonzero(region_membership(domain, delta0, x)))
        done += n
    return box.volume * hits / samples


def region_volume(domain: Domain, delta0: float, samples: int = MC_SAMPLES, seed: int = MC_SEED) -> float:
    """Monte-Carlo volume of ``Omega_delta0``."""
    return _collar_volume(domain, float(delta0), int(samples), int(seed))


def _probe_axes(box: HyperRect, spacing: float) -> list[np.ndarray]:
    counts = np.floor((box.hi - box.lo) / spacing + 1e-9).astype(int) + 1
    return [box.lo[k] + spacing * np.arange(counts[k]) for k in range(box.dim)]


def _probe_chunks(domain: Domain, delta0: float, spacing: float):
    """Probe lattice (anchored at the lower box corner) restricted to the
    closed extended region, one slab of constant first coordinate at a time."""
    box = domain.bounding_box(delta0)
    axes = _probe_axes(box, spacing)
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, box.dim - 1)
    for x0 in axes[0]:
        slab = np.column_stack([np.full(len(rest), x0), rest])
        keep = region_membership(domain, delta0, slab, closed=True)
        if np.any(keep):
            yield slab[keep]


def _grid_for(points: np.ndarray, domain: Domain, delta0: float, cell: float) -> VoxelGrid:
    box = domain.bounding_box(delta0)
    # probes and points all sit inside the box; a small pad keeps float
    # round-off at the top face from raising
    pad = 1e-9 * float(np.max(box.hi - box.lo))
    return VoxelGrid(points, HyperRect(box.lo - pad, box.hi + pad), cell)


def estimate_fill_distance(points, domain: Domain, delta0: float, spacing: float,
                           cell: float | None = None) -> float:
    """Largest distance from a probe of the lattice to its nearest point."""
    pts = np.asarray(points.points if isinstance(points, PointCloud) else points, dtype=float)
    if len(pts) == 0:
        raise ContractViolation("cannot estimate the fill distance of an empty cloud")
    if not spacing > 0:
        raise ContractViolation("probe spacing must be positive")
    cell = cell or _default_cell(domain, delta0, len(pts))
    grid = _grid_for(pts, domain, delta0, cell)
    worst = 0.0
    for probes in _probe_chunks(domain, delta0, spacing):
        worst = max(worst, float(grid.nearest_distance(probes).max()))
    return worst


def _default_cell(domain: Domain, delta0: float, n: int) -> float:
    box = domain.bounding_box(delta0)
    return float((box.volume / max(n, 1)) ** (1.0 / box.dim))


def compute_separation(points) -> float:
    """Half the smallest distance between two distinct entries."""
    pts = np.asarray(points.points if isinstance(points, PointCloud) else points, dtype=float)
    if len(pts) < 2:
        raise ContractViolation("separation needs at least two points")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    cell = float((np.prod(span) / len(pts)) ** (1.0 / pts.shape[1]))
    # flat or collinear input would otherwise get needle-thin cells
    cell = max(cell, float(span.max()) / len(pts), 1e-12)
    grid = VoxelGrid(pts, HyperRect(lo - 1e-9 * span, hi + 1e-9 * span), cell)
    return 0.5 * float(grid.nearest_other_distance().min())


def boundary_distance(points, domain: Domain) -> float:
    """Smallest distance from an interior point to the boundary."""
    pts = np.asarray(points, dtype=float)
    inside = domain.contains(pts)
    if not np.any(inside):
        return float("inf")
    return float(domain.dist_boundary(pts[inside]).min())


@dataclass
class ProperReport:
    ok: bool
    h: float
    zeta: float
    kappa: float
    volume: float
    n_total: int
    violated: list[str] = field(default_factory=list)


def _check(h, zeta, kappa, volume, m, d, consts: ProperConstants) -> list[str]:
    bad = []
    if not h <= consts.c_h * (volume / m) ** (1.0 / d):
        bad.append("i")
    if not zeta >= consts.c_zeta * h:
        bad.append("ii")
    if not kappa >= consts.c_kappa * h:
        bad.append("iii")
    return bad


def validate_proper(cloud: PointCloud | np.ndarray, domain: Domain, delta0: float,
                    consts: ProperConstants = ProperConstants(),
                    probe_spacing: float | None = None, h: float | None = None) -> ProperReport:
    """Evaluate the three proper-cloud inequalities.

    ``h`` may be passed when the fill distance is already known; otherwise it
    is estimated on a probe lattice.  The default is the lattice the cloud
    was built with, else a quarter of its recorded fill distance, else a
    quarter of the mean point spacing for a bare array.  A lattice estimate can miss the
    true value by up to half a lattice diagonal.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    d = pts.shape[1]
    volume = region_volume(domain, delta0)
    if h is None:
        if probe_spacing is None:
            if isinstance(cloud, PointCloud) and np.isfinite(cloud.probe_spacing):
                probe_spacing = cloud.probe_spacing
            else:
                ref = cloud.fill_distance if isinstance(cloud, PointCloud) else (volume / len(pts)) ** (1.0 / d)
                probe_spacing = 0.25 * ref
        spacing = probe_spacing
        h = estimate_fill_distance(pts, domain, delta0, spacing)
    zeta = compute_separation(pts)
    kappa = boundary_distance(pts, domain)
    bad = _check(h, zeta, kappa, volume, len(pts), d, consts)
    return ProperReport(not bad, h, zeta, kappa, volume, len(pts), bad)


# ---------------------------------------------------------------------------
# adjustment


@njit(cache=True)
def _accept_far(cands, glo, cell, dims, radius):
    """Greedy pass over candidates (already sorted by priority): keep one when
    no kept candidate is within ``radius``.  ``cell`` must satisfy
    cell * sqrt(d) < radius so each cell holds at most one kept point."""
    d = cands.shape[1]
    owner = -np.ones(dims[0] * dims[1] * dims[2], dtype=np.int64)
    keep = np.zeros(cands.shape[0], dtype=np.bool_)
    reach = int(np.ceil(radius / cell))
    ci = np.zeros(3, dtype=np.int64)
    r2 = radius * radius
    for a in range(cands.shape[0]):
        for k in range(d):
            t = int(np.floor((cands[a, k] - glo[k]) / cell))
            ci[k] = min(max(t, 0), dims[k] - 1)
        ok = True
        for i in range(max(ci[0] - reach, 0), min(ci[0] + reach, dims[0] - 1) + 1):
            if not ok:
                break
            for j in range(max(ci[1] - reach, 0), min(ci[1] + reach, dims[1] - 1) + 1):
                if not ok:
                    break
                for l in range(max(ci[2] - reach, 0), min(ci[2] + reach, dims[2] - 1) + 1):
                    b = owner[(i * dims[1] + j) * dims[2] + l]
                    if b < 0:
                        continue
                    acc = 0.0
                    for k in range(d):
                        diff = cands[a, k] - cands[b, k]
                        acc += diff * diff
                    if acc <= r2:
                        ok = False
                        break
        if ok:
            keep[a] = True
            owner[(ci[0] * dims[1] + ci[1]) * dims[2] + ci[2]] = a
    return keep


def _fill_holes(points, domain, delta0, h_target, spacing, cell) -> tuple[np.ndarray, float]:
    """Insert probes farther than ``h_target`` from the cloud (farthest first,
    each at least ``h_target`` from the previously inserted ones).  Returns the
    new points and the fill distance estimate of the input cloud."""
    grid = _grid_for(points, domain, delta0, cell)
    worst = 0.0
    cands, dists = [], []
    for probes in _probe_chunks(domain, delta0, spacing):
        dist = grid.nearest_distance(probes)
        worst = max(worst, float(dist.max()))
        far = dist > h_target
        if np.any(far):
            cands.append(probes[far])
            dists.append(dist[far])
    if not cands:
        return np.empty((0, points.shape[1])), worst
    cands = np.concatenate(cands)
    dists = np.concatenate(dists)
    order = np.argsort(-dists, kind="stable")
    cands = np.ascontiguousarray(cands[order])
    box = domain.bounding_box(delta0)
    d = box.dim
    hcell = h_target / (np.sqrt(d) + 0.5)
    dims = np.ones(3, dtype=np.int64)
    dims[:d] = np.maximum(np.ceil((box.hi - box.lo) / hcell).astype(np.int64), 1)
    keep = _accept_far(cands, box.lo, hcell, dims, h_target)
    new = cands[keep]
    # probes on the outer face of the collar are not in the open region;
    # step them a hair towards the domain so they survive
    rim = ~region_membership(domain, delta0, new)
    if np.any(rim):
        x = new[rim]
        toward = domain.nearest_boundary_point(x) - x
        toward /= np.linalg.norm(toward, axis=1, keepdims=True)
        new[rim] = x + 1e-6 * h_target * toward
    return new, worst


def _push_inward(points, domain, margin) -> int:
    """Move interior points closer than ``margin`` to the boundary onto
    distance ``margin`` along the inward normal.  Modifies ``points``."""
    moved = 0
    for _ in range(2 * points.shape[1]):
        sd = domain.signed_distance(points)
        near = (sd < 0.0) & (-sd < margin)
        if not np.any(near):
            break
        x = points[near]
        base = domain.nearest_boundary_point(x)
        points[near] = base + margin * domain.inward_normal(x)
        moved += int(np.count_nonzero(near))
    return moved


def _merge_close(points, domain, delta0, radius, cell) -> np.ndarray:
    """Replace pairs closer than ``radius`` by their midpoints, shortest pair
    first, each point used at most once."""
    grid = _grid_for(points, domain, delta0, cell)
    pi, pj, pd = pairs_within(grid, radius)
    if len(pi) == 0:
        return points
    order = np.lexsort((pj, pi, pd))
    used = np.zeros(len(points), dtype=bool)
    out = points.copy()
    drop = np.zeros(len(points), dtype=bool)
    for k in order:
        a, b = pi[k], pj[k]
        if used[a] or used[b]:
            continue
        used[a] = used[b] = True
        out[a] = 0.5 * (points[a] + points[b])
        drop[b] = True
    return out[~drop]


def _order_cloud(points, domain, delta0) -> tuple[np.ndarray, int]:
    keep = region_membership(domain, delta0, points)
    pts = points[keep]
    inside = domain.contains(pts)
    return np.concatenate([pts[inside], pts[~inside]]), int(np.count_nonzero(inside))


def adjust_proper(points, domain: Domain, delta0: float, h_target: float,
                  consts: ProperConstants = ProperConstants(), max_loops: int = 12,
                  probe_spacing: float | None = None) -> PointCloud:
    """Iterate add / push-inward / merge until the cloud is proper.

    The fill distance is estimated on a lattice of spacing ``h_target/4``
    (or ``probe_spacing``).  Raises :class:`AdjustmentFailed` if the
    conditions still fail after ``max_loops`` rounds.
    """
    pts = np.array(points.points if isinstance(points, PointCloud) else points, dtype=float)
    d = pts.shape[1]
    spacing = probe_spacing or h_target / 4.0
    cell = h_target
    volume = region_volume(domain, delta0)
    pts, _ = _order_cloud(pts, domain, delta0)
    report = None
    for loop in range(max_loops + 1):
        new, h_est = _fill_holes(pts, domain, delta0, h_target, spacing, cell)
        zeta = compute_separation(pts)
        kappa = boundary_distance(pts, domain)
        bad = _check(h_est, zeta, kappa, volume, len(pts), d, consts)
        report = ProperReport(not bad, h_est, zeta, kappa, volume, len(pts), bad)
        log.debug("adjust loop %d: M=%d h=%.4g zeta=%.4g kappa=%.4g violated=%s",
                  loop, len(pts), h_est, zeta, kappa, bad)
        if not bad and len(new) == 0:
            n_int = int(np.count_nonzero(domain.contains(pts)))
            return PointCloud(pts, n_int, h_est, zeta, kappa, spacing)
        if loop == max_loops:
            break
        if len(new):
            pts = np.concatenate([pts, new])
        # a relative hair above the threshold so rounding cannot undo the push
        _push_inward(pts, domain, consts.c_kappa * h_target * (1.0 + 1e-6))
        pts = _merge_close(pts, domain, delta0, 2.0 * consts.c_zeta * h_target, cell)
        pts, _ = _order_cloud(pts, domain, delta0)
    raise AdjustmentFailed(report.violated or ["i"], report)


def generate_cloud(domain: Domain, h_target: float, delta0: float,
                   consts: ProperConstants = ProperConstants(), skip: int = DEFAULT_SKIP,
                   density: float = 0.55, max_loops: int = 12) -> PointCloud:
    """Halton initialisation over the bounding box followed by adjustment.

    ``density`` sets the initial count as a fraction of ``|box| / h^d``; the
    hole-filling step tops up whatever the sparse start leaves uncovered.
    """
    box = domain.bounding_box(delta0)
    count = max(1, int(round(density * box.volume / h_target**box.dim)))
    pts = halton_init(count, box, skip)
    cloud = adjust_proper(pts, domain, delta0, h_target, consts, max_loops)
    log.info("cloud %s h=%.4g: N=%d M=%d zeta=%.4g kappa=%.4g", domain.name, cloud.fill_distance,
             cloud.n_interior, cloud.n_total, cloud.separation, cloud.boundary_dist)
    return cloud
