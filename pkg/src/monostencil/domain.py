"""Analytic computational domains: membership, boundary distance, ray casting
and the Dirichlet projection of exterior neighbours.

All queries accept a single point ``(d,)`` or a batch ``(n, d)``.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .geometry import HyperRect

# closure membership slack, also used for "ray grazes the notch corner"
CLOSURE_SLACK = 1e-13


def _batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def _unbatch(v, single):
    return v[0] if single else v


def _box_distance(x, lo, hi):
    """Distance from points to a closed axis-aligned box (0 inside)."""
    gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


def _slab_hits(o, u, lo, hi):
    """Entry/exit parameters of rays o + t u through the closed box [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - o) / u
        t1 = (hi - o) / u
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    parallel = u == 0
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    return tmin.max(axis=-1), tmax.min(axis=-1)


class Domain:
    """Open bounded set with an analytic boundary."""

    name: str
    dim: int

    # subclasses implement these on (n, d) arrays
    def _signed_distance(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _exit_parameter(self, o: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _nearest_boundary(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def box(self) -> HyperRect:
        raise NotImplementedError

    # public API -----------------------------------------------------------

    def signed_distance(self, x):
        """Negative inside, positive outside, magnitude = distance to the boundary."""
        xb, single = _batch(x)
        return _unbatch(self._signed_distance(xb), single)

    def contains(self, x):
        xb, single = _batch(x)
        return _unbatch(self._signed_distance(xb) < 0.0, single)

    def contains_closure(self, x, slack: float = CLOSURE_SLACK):
        xb, single = _batch(x)
        return _unbatch(self._signed_distance(xb) <= slack, single)

    def dist_boundary(self, x):
        xb, single = _batch(x)
        return _unbatch(np.abs(self._signed_distance(xb)), single)

    def ray_first_hit(self, origin, direction):
        """First boundary point along rays that start inside the domain."""
        ob, single = _batch(origin)
        ub = np.broadcast_to(np.atleast_2d(np.asarray(direction, dtype=float)), ob.shape)
        if not np.all(self._signed_distance(ob) < 0.0):
            raise ContractViolation("ray origin must lie inside the domain")
        norms = np.linalg.norm(ub, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ContractViolation("ray direction must be a unit vector")
        t = self._exit_parameter(ob, ub)
        return _unbatch(ob + t[:, None] * ub, single)

    def project_to_boundary(self, x_i, x_j):
        """Keep x_j when it lies in the closure, otherwise cast a ray from x_i
        towards x_j and return the first boundary point."""
        xj, single = _batch(x_j)
        xi = np.broadcast_to(np.atleast_2d(np.asarray(x_i, dtype=float)), xj.shape)
        out = xj.copy()
        outside = self._signed_distance(xj) > CLOSURE_SLACK
        if np.any(outside):
            diff = xj[outside] - xi[outside]
            u = diff / np.linalg.norm(diff, axis=-1, keepdims=True)
            t = self._exit_parameter(xi[outside], u)
            out[outside] = xi[outside] + t[:, None] * u
        return _unbatch(out, single)

    def inward_normal(self, x):
        """Unit direction from the nearest boundary point towards x (for
        interior x), i.e. the negative gradient of the signed distance."""
        xb, single = _batch(x)
        nb = self._nearest_boundary(xb)
        diff = xb - nb
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        return _unbatch(diff / np.where(norm > 0, norm, 1.0), single)

    def nearest_boundary_point(self, x):
        xb, single = _batch(x)
        return _unbatch(self._nearest_boundary(xb), single)

    def bounding_box(self, delta0: float = 0.0) -> HyperRect:
        if delta0 < 0:
            raise ContractViolation("collar width must be nonnegative")
        b = self.box()
        return HyperRect(b.lo - delta0, b.hi + delta0)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Ball(Domain):
    """Unit disk (d=2) or unit ball (d=3) centred at the origin."""

    def __init__(self, dim: int):
        if dim not in (2, 3):
            raise ContractViolation("ball dimension must be 2 or 3")
        self.dim = dim
        self.name = "disk2" if dim == 2 else "sphere3"

    def _signed_distance(self, x):
        return np.linalg.norm(x, axis=-1) - 1.0

    def _exit_parameter(self, o, u):
        # |o + t u| = 1 with |u| = 1, o inside: the positive root
        b = np.sum(o * u, axis=-1)
        c = np.sum(o * o, axis=-1) - 1.0
        return -b + np.sqrt(b * b - c)

    def _nearest_boundary(self, x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return x / np.where(r > 0, r, 1.0)

    def box(self):
        return HyperRect(-np.ones(self.dim), np.ones(self.dim))

    def __repr__(self):
        return f"Ball(dim={self.dim})"


class Box(Domain):
    """Open axis-aligned box."""

    def __init__(self, lo, hi):
        self._box = HyperRect(lo, hi)
        self.dim = self._box.dim
        self.name = "box"

    def _signed_distance(self, x):
        lo, hi = self._box.lo, self._box.hi
        outside = _box_distance(x, lo, hi)
        inside = np.minimum(x - lo, hi - x).min(axis=-1)
        return np.where(outside > 0, outside, -inside)

    def _exit_parameter(self, o, u):
        return _slab_hits(o, u, self._box.lo, self._box.hi)[1]

    def _nearest_boundary(self, x):
        lo, hi = self._box.lo, self._box.hi
        out = np.clip(x, lo, hi)
        inner = np.all((x > lo) & (x < hi), axis=-1)
        if np.any(inner):
            xi = x[inner]
            gaps = np.concatenate([xi - lo, hi - xi], axis=-1)
            k = np.argmin(gaps, axis=-1)
            p = xi.copy()
            rows = np.arange(len(xi))
            axis = k % self.dim
            p[rows, axis] = np.where(k < self.dim, lo[axis], hi[axis])
            out[inner] = p
        return out

    def box(self):
        return self._box

    def __repr__(self):
        return f"Box(lo={self._box.lo.tolist()}, hi={self._box.hi.tolist()})"


class LShape(Domain):
    """The cube (-1, 1)^d with the closed box ``notch`` removed.

    The notch is ``[0,1]^2`` in 2d and ``[0,1] x [-1,1] x [0,1]`` in 3d.  The
    closure of the domain is the union of the slabs ``{x_k <= 0}`` over the
    notched axes k, which makes exterior distances a min over boxes.
    """

    def __init__(self, dim: int):
        if dim not in (2, 3):
            raise ContractViolation("L-shape dimension must be 2 or 3")
        self.dim = dim
        self.name = "lshape2" if dim == 2 else "lshape3"
        self.notch_axes = (0, 1) if dim == 2 else (0, 2)
        lo = -np.ones(dim)
        hi = np.ones(dim)
        for k in self.notch_axes:
            lo[k] = 0.0
        self.notch = HyperRect(lo, hi)
        self.slabs = []
        for k in self.notch_axes:
            shi = np.ones(dim)
            shi[k] = 0.0
            self.slabs.append(HyperRect(-np.ones(dim), shi))

    def _signed_distance(self, x):
        out = np.min([_box_distance(x, s.lo, s.hi) for s in self.slabs], axis=0)
        # interior: distance to the complement = min(outer faces, notch)
        faces = (1.0 - np.abs(x)).min(axis=-1)
        notch = _box_distance(x, self.notch.lo, self.notch.hi)
        inside = np.minimum(faces, notch)
        return np.where(out > 0, out, -inside)

    def _exit_parameter(self, o, u):
        cube_exit = _slab_hits(o, u, -np.ones(self.dim), np.ones(self.dim))[1]
        t_in, t_out = _slab_hits(o, u, self.notch.lo, self.notch.hi)
        hits_notch = (t_in <= t_out) & (t_out >= 0.0)
        return np.where(hits_notch, np.minimum(cube_exit, np.maximum(t_in, 0.0)), cube_exit)

    def _nearest_boundary(self, x):
        # candidates: projection onto each outer face, closest notch point
        cands = []
        for k in range(self.dim):
            for side in (-1.0, 1.0):
                p = x.copy()
                p[:, k] = side
                cands.append(p)
        cands.append(np.clip(x, self.notch.lo, self.notch.hi))
        cands = np.stack(cands, axis=1)
        dist = np.linalg.norm(cands - x[:, None, :], axis=-1)
        # outer-face projections that land in the notch are not boundary points
        # of the domain; they are dominated by the notch candidate anyway
        best = np.argmin(dist, axis=1)
        out = cands[np.arange(len(x)), best]
        # outside the closure the nearest point is the best clip onto a slab
        far = np.min([_box_distance(x, s.lo, s.hi) for s in self.slabs], axis=0) > 0
        if np.any(far):
            xf = x[far]
            clips = np.stack([np.clip(xf, s.lo, s.hi) for s in self.slabs], axis=1)
            k = np.argmin(np.linalg.norm(clips - xf[:, None, :], axis=-1), axis=1)
            out[far] = clips[np.arange(len(xf)), k]
        return out

    def box(self):
        return HyperRect(-np.ones(self.dim), np.ones(self.dim))

    def __repr__(self):
        return f"LShape(dim={self.dim})"


DOMAIN_NAMES = ("disk2", "lshape2", "sphere3", "lshape3", "box")


def make_domain(name: str, dim: int | None = None) -> Domain:
    """Domain from its CLI name.  ``box`` is the unit cube (-1, 1)^dim."""
    if name == "disk2":
        return Ball(2)
    if name == "sphere3":
        return Ball(3)
    if name == "lshape2":
        return LShape(2)
    if name == "lshape3":
        return LShape(3)
    if name == "box":
        d = dim or 2
        return Box(-np.ones(d), np.ones(d))
    raise ContractViolation(f"unknown domain {name!r}; choose from {', '.join(DOMAIN_NAMES)}")
