"""Independent reference computations shared by the test modules."""
import numpy as np
from scipy.optimize import minimize


def symmetric_eigs_closed_form(a):
    """Eigenvalues of a symmetric 3x3 matrix from the trigonometric solution
    of its characteristic cubic."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = np.trace(a) / 3.0
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.sort([e1, 3.0 * q - e1 - e3, e3])


def box_min_quadratic(lo, hi, c, q):
    """min over the box of (y - c)^T Q (y - c), a bound-constrained convex QP."""
    f = lambda y: float((y - c) @ q @ (y - c))  # noqa: E731
    g = lambda y: 2.0 * q @ (y - c)  # noqa: E731
    x0 = np.clip(c, lo, hi)
    res = minimize(f, x0, jac=g, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"ftol": 1e-15, "gtol": 1e-13, "maxiter": 500})
    return min(res.fun, f(x0))


def classify_by_oracle(lo, hi, c, q, rng, samples=10_000):
    """0 disjoint, 1 contained in the closure, 2 partial; by vertices, the box
    minimum of the quadratic form, and dense sampling."""
    d = len(lo)
    corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
    verts = np.where(corners == 0, lo, hi)
    vq = np.einsum("ni,ij,nj->n", verts - c, q, verts - c)
    if np.all(vq <= 1.0):
        return 1
    pts = rng.uniform(lo, hi, size=(samples, d))
    inside = np.einsum("ni,ij,nj->n", pts - c, q, pts - c) < 1.0
    if np.any(inside) or np.any(vq < 1.0) or box_min_quadratic(lo, hi, c, q) < 1.0:
        return 2
    return 0


def brute_fill_distance(points, probes):
    d = np.linalg.norm(probes[:, None, :] - points[None, :, :], axis=-1)
    return float(d.min(axis=1).max())


def random_spd(rng, d, cond=10.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return (q * lam) @ q.T
