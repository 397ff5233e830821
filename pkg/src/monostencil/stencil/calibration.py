"""Search-radius constants.

For an ellipse with semi-axes sqrt(q) <= 1 and a cone of half-angle phi
around the direction v(theta), the image sector (bounded by the two mapped
rays and the ellipse arc) contains an inscribed circle of radius r(q, theta).
The worst case over theta, r(q), gives the constant c(q) = sqrt(q) / r(q):
a search radius delta >= c * h / sqrt(q) then leaves a point of any cloud
with fill distance h inside every mapped cone.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from ..errors import ContractViolation

PHI_2D = math.pi / 8.0
PHI_3D = math.radians(33.7) / 2.0
BAND_EDGES = (0.0, 0.01, 0.1, 1.0)
DEFAULT_CONSTANTS = {2: (2.836, 2.901, 3.614), 3: (3.623, 3.776, 4.450)}
REDUCTION = {2: 1.0 / math.sqrt(3.0), 3: 1.0 / 18.0 ** (1.0 / 3.0)}

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CalibrationTable:
    dim: int
    edges: tuple[float, ...] = BAND_EDGES
    constants: tuple[float, ...] = ()
    reduction: float = 1.0
    detail: dict = field(default_factory=dict, compare=False, repr=False)

    def constant(self, rho: float) -> float:
        if not 0.0 < rho <= 1.0 + 1e-12:
            raise ContractViolation(f"ellipticity ratio {rho} outside (0, 1]")
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.constants):
            if lo < rho <= hi:
                return c
        return self.constants[-1]

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "edges": list(self.edges),
                           "constants": list(self.constants), "reduction": self.reduction}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationTable":
        data = json.loads(text)
        edges = tuple(float(v) for v in data["edges"])
        consts = tuple(float(v) for v in data["constants"])
        if len(edges) != len(consts) + 1 or list(edges) != sorted(edges):
            raise ContractViolation("table needs ascending edges and one constant per band")
        d = int(data["dim"])
        return cls(d, edges, consts, float(data.get("reduction", REDUCTION[d])))

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        return cls.from_json(Path(path).read_text())


def default_table(d: int) -> CalibrationTable:
    if d not in (2, 3):
        raise ContractViolation("dimension must be 2 or 3")
    return CalibrationTable(d, BAND_EDGES, DEFAULT_CONSTANTS[d], REDUCTION[d])


def searching_delta(h: float, rho: float, table: CalibrationTable, reduced: bool = False) -> float:
    """delta = c(rho) * h / sqrt(rho), optionally shrunk by the reduction factor."""
    if not h > 0:
        raise ContractViolation("fill distance must be positive")
    delta = table.constant(rho) * h / math.sqrt(rho)
    return delta * table.reduction if reduced else delta


# ---------------------------------------------------------------------------
# inscribed circles, vectorised over (q, theta)

_NSEEDS = 48
_SEED_COS = np.cos(2.0 * np.pi * np.arange(_NSEEDS) / _NSEEDS)
_SEED_SIN = np.sin(2.0 * np.pi * np.arange(_NSEEDS) / _NSEEDS)


@njit(cache=True)
def _ellipse_distance(a, cx, cy):
    """Distance from (cx, cy), inside the ellipse (a cos s, sin s), to it.

    Seeded by a coarse angle sample, refined by Newton on the squared
    distance; falls back to golden section when Newton stalls.
    """
    best = np.inf
    s = 0.0
    width = 2.0 * np.pi / _NSEEDS
    for k in range(_NSEEDS):
        d2 = (a * _SEED_COS[k] - cx) ** 2 + (_SEED_SIN[k] - cy) ** 2
        if d2 < best:
            best = d2
            s = k * width
    s0 = s
    converged = False
    for _ in range(100):
        cs = np.cos(s)
        sn = np.sin(s)
        x = a * cs - cx
        y = sn - cy
        g = -a * sn * x + cs * y
        hess = a * a * sn * sn - a * cs * x + cs * cs - sn * y
        if hess <= 1e-14:
            converged = abs(g) <= 1e-14
            break
        step = g / hess
        s -= step
        if abs(step) < 1e-14:
            converged = True
            break
    if converged:
        return np.hypot(a * np.cos(s) - cx, np.sin(s) - cy)
    lo = s0 - width
    hi = s0 + width
    for _ in range(80):
        m1 = hi - _GOLD * (hi - lo)
        m2 = lo + _GOLD * (hi - lo)
        if np.hypot(a * np.cos(m1) - cx, np.sin(m1) - cy) < np.hypot(a * np.cos(m2) - cx, np.sin(m2) - cy):
            hi = m2
        else:
            lo = m1
    m = 0.5 * (lo + hi)
    return np.hypot(a * np.cos(m) - cx, np.sin(m) - cy)


@njit(cache=True)
def _inscribed(q, theta, phi, iters):
    a = np.sqrt(q)
    p1x = a * np.cos(theta - phi)
    p1y = np.sin(theta - phi)
    p2x = a * np.cos(theta + phi)
    p2y = np.sin(theta + phi)
    n1 = np.hypot(p1x, p1y)
    n2 = np.hypot(p2x, p2y)
    wx = n2 * p1x + n1 * p2x
    wy = n2 * p1y + n1 * p2y
    cross = abs(p1x * p2y - p1y * p2x)
    # bisection on the scale t of the centre t*w, which must stay inside
    lo = 0.0
    hi = 1.0 / np.sqrt(wx * wx / q + wy * wy)
    for _ in range(iters):
        t = 0.5 * (lo + hi)
        if _ellipse_distance(a, t * wx, t * wy) >= t * cross:
            lo = t
        else:
            hi = t
    return lo * cross


@njit(cache=True)
def _inscribed_many(q, theta, phi, iters):
    out = np.empty(q.size)
    for i in range(q.size):
        out[i] = _inscribed(q[i], theta[i], phi, iters)
    return out


def inscribed_radius(q, theta, phi: float, iters: int = 52):
    """Radius of the circle inscribed in the mapped cone sector: centred on
    the bisector of the two mapped rays and touching the ellipse."""
    q, theta = np.broadcast_arrays(np.asarray(q, dtype=float), np.asarray(theta, dtype=float))
    out = _inscribed_many(np.ascontiguousarray(q).ravel(), np.ascontiguousarray(theta).ravel(),
                          float(phi), iters)
    return out.reshape(q.shape)


def min_inscribed_radius(q, phi: float, samples: int = 721, tol: float = 1e-10):
    """Worst case of :func:`inscribed_radius` over theta in [0, pi/2].

    A uniform sweep locates the minimum, golden section refines it.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    thetas = np.linspace(0.0, 0.5 * np.pi, samples)
    r = inscribed_radius(q[:, None], thetas[None, :], phi)
    k = np.argmin(r, axis=1)
    best = r[np.arange(len(q)), k]
    step = thetas[1] - thetas[0]
    lo = np.clip(thetas[k] - step, 0.0, 0.5 * np.pi)
    hi = np.clip(thetas[k] + step, 0.0, 0.5 * np.pi)
    m1 = hi - _GOLD * (hi - lo)
    m2 = lo + _GOLD * (hi - lo)
    f1 = inscribed_radius(q, m1, phi)
    f2 = inscribed_radius(q, m2, phi)
    while np.max(hi - lo) > tol:
        left = f1 < f2
        hi = np.where(left, m2, hi)
        lo = np.where(left, lo, m1)
        new = np.where(left, hi - _GOLD * (hi - lo), lo + _GOLD * (hi - lo))
        fn = inscribed_radius(q, new, phi)
        m2, f2, m1, f1 = (np.where(left, m1, new), np.where(left, f1, fn),
                          np.where(left, new, m2), np.where(left, fn, f2))
    return np.minimum(best, np.minimum(f1, f2))


def _radius_3d(rho, phi):
    """Smallest inscribed radius over the three principal-plane sections of
    the ellipsoid with eigenvalues (rho, (1 + rho)/2, 1)."""
    mid = 0.5 * (1.0 + rho)
    qs = np.concatenate([rho / mid, mid, rho])
    r = min_inscribed_radius(qs, phi)
    n = len(rho)
    return np.minimum(np.sqrt(mid) * r[:n], np.minimum(r[n:2 * n], r[2 * n:]))


def band_grids(edges=BAND_EDGES, nodes: int = 50, floor: float = 1e-4) -> list[np.ndarray]:
    grids = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        grids.append(np.geomspace(max(lo, floor), hi, nodes))
    return grids


def calibrate_c(d: int, grids: list[np.ndarray] | None = None, phi: float | None = None,
                chunk: int = 25) -> CalibrationTable:
    """Recompute the band constants: c = max over each band's grid of sqrt(rho)/r(rho)."""
    if d not in (2, 3):
        raise ContractViolation("dimension must be 2 or 3")
    grids = grids if grids is not None else band_grids()
    phi = phi if phi is not None else (PHI_2D if d == 2 else PHI_3D)
    consts = []
    detail = {}
    for g in grids:
        g = np.asarray(g, dtype=float)
        r = np.concatenate([
            (min_inscribed_radius(g[i:i + chunk], phi) if d == 2 else _radius_3d(g[i:i + chunk], phi))
            for i in range(0, len(g), chunk)])
        c = np.sqrt(g) / r
        consts.append(float(c.max()))
        detail[(float(g[0]), float(g[-1]))] = (g, c)
    edges = (0.0,) + tuple(float(g[-1]) for g in grids)
    return CalibrationTable(d, edges, tuple(consts), REDUCTION[d], detail)


def closed_form_radius(phi: float) -> float:
    """Inscribed radius of a circular sector of half-angle phi (isotropic case)."""
    return math.sin(phi) / (1.0 + math.sin(phi))
