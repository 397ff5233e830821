"""Manufactured solutions with analytic Hessians."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractViolation

SOLUTION_IDS = {2: ("u1", "u2", "u3"), 3: ("u1", "u2")}


@dataclass(frozen=True)
class ManufacturedCase:
    """u and its Hessian on (n, d) point arrays; ``rhs`` gives f = -A : D^2 u."""

    id: str
    dim: int
    u: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]

    def rhs(self, a_field) -> Callable[[np.ndarray], np.ndarray]:
        def f(x):
            x = np.atleast_2d(x)
            a = a_field(x) if callable(a_field) else np.broadcast_to(a_field, (len(x),) + np.shape(a_field))
            return -np.einsum("nij,nij->n", a, self.hessian(x))
        return f

    def boundary(self) -> Callable[[np.ndarray], np.ndarray]:
        return self.u


def _u1_2(x):
    return x[:, 0] * x[:, 1] + np.cos(x[:, 0]) * np.exp(x[:, 1])


def _h1_2(x):
    c = np.cos(x[:, 0]) * np.exp(x[:, 1])
    s = np.sin(x[:, 0]) * np.exp(x[:, 1])
    out = np.empty((len(x), 2, 2))
    out[:, 0, 0] = -c
    out[:, 1, 1] = c
    out[:, 0, 1] = out[:, 1, 0] = 1.0 - s
    return out


def _u3_2(x):
    return x[:, 0] ** 2 + np.sin(x[:, 1]) * np.exp(x[:, 1] ** 2 - 1.0)


def _h3_2(x):
    y = x[:, 1]
    e = np.exp(y * y - 1.0)
    out = np.zeros((len(x), 2, 2))
    out[:, 0, 0] = 2.0
    out[:, 1, 1] = e * (np.sin(y) * (1.0 + 4.0 * y * y) + 4.0 * y * np.cos(y))
    return out


def _u1_3(x):
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    return x1 * x2 + x1 * x3 + x2 * x3 + np.cos(x1) * np.exp(x2 + x3)


def _h1_3(x):
    e = np.exp(x[:, 1] + x[:, 2])
    c = np.cos(x[:, 0]) * e
    s = np.sin(x[:, 0]) * e
    out = np.empty((len(x), 3, 3))
    out[:, 0, 0] = -c
    out[:, 1, 1] = out[:, 2, 2] = c
    out[:, 0, 1] = out[:, 1, 0] = out[:, 0, 2] = out[:, 2, 0] = 1.0 - s
    out[:, 1, 2] = out[:, 2, 1] = 1.0 + c
    return out


# (sum x)^4 cos(q) with q = x1 (x1 + 2 x2 [+ 2 x3])

def _phase(x):
    x1 = x[:, 0]
    q = x1 * (x1 + 2.0 * x[:, 1:].sum(axis=1))
    grad = np.empty_like(x)
    grad[:, 0] = 2.0 * x.sum(axis=1)
    grad[:, 1:] = 2.0 * x1[:, None]
    hess = np.zeros((len(x), x.shape[1], x.shape[1]))
    hess[:, 0, :] = 2.0
    hess[:, :, 0] = 2.0
    return q, grad, hess


def _u2(x):
    q, _, _ = _phase(x)
    return x.sum(axis=1) ** 4 * np.cos(q)


def _h2(x):
    s = x.sum(axis=1)
    q, gq, hq = _phase(x)
    p = s**4
    dp = 4.0 * s**3                    # same in every coordinate
    ddp = 12.0 * s**2
    cq, sq = np.cos(q), np.sin(q)
    d = x.shape[1]
    ones = np.ones(d)
    outer_pq = dp[:, None, None] * (ones[None, :, None] * gq[:, None, :] + gq[:, :, None] * ones[None, None, :])
    return (ddp * cq)[:, None, None] * np.ones((1, d, d)) \
        - sq[:, None, None] * outer_pq \
        - (p * cq)[:, None, None] * gq[:, :, None] * gq[:, None, :] \
        - (p * sq)[:, None, None] * hq


_TABLE = {
    (2, "u1"): (_u1_2, _h1_2),
    (2, "u2"): (_u2, _h2),
    (2, "u3"): (_u3_2, _h3_2),
    (3, "u1"): (_u1_3, _h1_3),
    (3, "u2"): (_u2, _h2),
}


def builtin_solution(id: str, d: int) -> ManufacturedCase:
    key = (d, str(id))
    if key not in _TABLE:
        raise ContractViolation(f"unknown solution {id!r} in {d}d; choose from {', '.join(SOLUTION_IDS.get(d, ()))}")
    u, h = _TABLE[key]
    return ManufacturedCase(str(id), d, u, h)


def fd_hessian(u: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central second differences of u at the rows of x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    out = np.empty((len(x), d, d))
    eye = np.eye(d) * step
    for i in range(d):
        for j in range(i, d):
            if i == j:
                v = (u(x + eye[i]) - 2.0 * u(x) + u(x - eye[i])) / step**2
            else:
                v = (u(x + eye[i] + eye[j]) - u(x + eye[i] - eye[j])
                     - u(x - eye[i] + eye[j]) + u(x - eye[i] - eye[j])) / (4.0 * step**2)
            out[:, i, j] = out[:, j, i] = v
    return out
