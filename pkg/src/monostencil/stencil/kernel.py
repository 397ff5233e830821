"""Truncated power kernel and the anisotropic weight built from it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ..errors import ContractViolation, InvalidKernel
from ..geometry import SearchEllipsoid


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class KernelSpec:
    """gamma(r) = norm_const * r^(-alpha) on 0 < r < 1, zero outside."""

    alpha: float
    norm_const: float
    dim: int

    def gamma(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where((r > 0) & (r < 1), self.norm_const * r ** (-self.alpha), 0.0)


def kernel_normalize(alpha: float = 3.0, d: int = 2) -> KernelSpec:
    """Scale the kernel so that its second moment over the unit ball is 2d."""
    if d not in (2, 3):
        raise ContractViolation("dimension must be 2 or 3")
    if not 2.0 < alpha < d + 2.0:
        raise InvalidKernel(f"exponent {alpha} outside (2, {d + 2})")
    c = 2.0 * d * (d + 2.0 - alpha) / sphere_area(d)
    return KernelSpec(float(alpha), c, d)


def kernel_second_moment(k: KernelSpec) -> float:
    """Numerical value of the integral of |y|^2 gamma(|y|) over the unit ball.

    The radial integrand is r^(d+1-alpha); quadrature uses the algebraic
    weight so the endpoint singularity is handled exactly.
    """
    expo = k.dim + 1.0 - k.alpha
    val, _ = integrate.quad(lambda r: 1.0, 0.0, 1.0, weight="alg", wvar=(expo, 0.0),
                            epsabs=1e-13, epsrel=1e-12)
    return sphere_area(k.dim) * k.norm_const * val


def rho_from_frame(minv: np.ndarray, det_m: float, delta: float, disp: np.ndarray,
                   k: KernelSpec) -> np.ndarray:
    """Weights for displacements ``disp`` (n, d) given M^{-1}, det(M) and delta."""
    z = disp @ minv.T
    s = np.sqrt(np.sum(z * z, axis=-1)) / delta
    if np.any(s == 0.0):
        raise ContractViolation("zero displacement: the kernel is singular at the centre")
    return delta ** (-(k.dim + 2)) * k.norm_const * s ** (-k.alpha) / det_m


def rho_weight(e: SearchEllipsoid, y, k: KernelSpec):
    """Kernel weight of displacement(s) ``y`` inside the search ellipsoid."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    yb = np.atleast_2d(y)
    if not np.all(e.contains(e.center + yb)):
        raise ContractViolation("displacement lies outside the search ellipsoid")
    det_m = float(np.linalg.det(e.sqrt_shape))
    out = rho_from_frame(e.inv_sqrt, det_m, e.radius, yb, k)
    return float(out[0]) if single else out
