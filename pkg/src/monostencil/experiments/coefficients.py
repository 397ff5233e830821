"""Built-in coefficient fields A_0 .. A_9 in two and three dimensions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractViolation
from .mersenne import mt19937_block_matrix

MATRIX_IDS = tuple(range(10))
BLOCK_COUNTS = {6: 10**10, 7: 10**4, 8: 1}
NOMINAL_RHO = {
    2: (1.0, 0.25, 0.0864, 0.025, 0.0025, 0.0014, 0.25, 0.25, 0.25, 0.025),
    3: (1.0, 0.25, 0.0864, 0.025, 0.0025, 0.0014, 0.1847, 0.1847, 0.1847, 0.025),
}
DESCRIPTIONS = {6: "dense blocks", 7: "medium blocks", 8: "loose blocks", 9: "two parts"}


@dataclass(frozen=True)
class CoefficientField:
    """``evaluate`` maps (n, d) points to (n, d, d) symmetric matrices."""

    id: int
    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    nominal_rho: float
    description: str = ""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(np.atleast_2d(np.asarray(x, dtype=float)))


def _diag(*entries) -> np.ndarray:
    n = len(entries[0])
    out = np.zeros((n, len(entries), len(entries)))
    for k, e in enumerate(entries):
        out[:, k, k] = e
    return out


def _identity(x):
    return np.broadcast_to(np.eye(x.shape[1]), (len(x), x.shape[1], x.shape[1])).copy()


# -- 2d ----------------------------------------------------------------------

def _a1_2(x):
    return _diag(1 - 0.5 * abs(x[:, 0]), 0.25 + 0.25 * abs(x[:, 1]))


def _a2_2(x):
    out = _diag(2 - abs(x[:, 0]), 0.5 + 0.5 * abs(x[:, 1]))
    out[:, 0, 1] = out[:, 1, 0] = 0.5
    return out / 2.21


def _a3_2(x):
    return _diag(1 - 0.5 * abs(x[:, 0]), 0.025 + 0.025 * abs(x[:, 1]))


def _a4_2(x):
    return _diag(1 - 0.5 * abs(x[:, 0]), 0.0025 + 0.0025 * abs(x[:, 1]))


def _a5_2(x):
    x1, x2 = x[:, 0], x[:, 1]
    out = _diag(2 - abs(x1 * (0.5 - x2)), 0.01 + 0.0025 * x1 * np.exp(x2))
    out[:, 0, 1] = out[:, 1, 0] = 0.025
    return out / 2.001


# -- 3d ----------------------------------------------------------------------

def _a1_3(x):
    return _diag(1 - 0.5 * abs(x[:, 0]), 0.5 - 0.25 * abs(x[:, 1]), 0.25 + 0.25 * abs(x[:, 2]))


def _a2_3(x):
    out = _diag(2 - abs(x[:, 0]), 0.5 + 0.5 * abs(x[:, 1]), 1 - 0.5 * abs(x[:, 2]))
    out[:, 0, 2] = out[:, 2, 0] = 0.5
    return out / 2.21


def _a3_3(x):
    return _diag(1 - 0.5 * abs(x[:, 0]), 0.05 - 0.025 * abs(x[:, 1]), 0.025 + 0.025 * abs(x[:, 2]))


def _a4_3(x):
    return _diag(1 - 0.5 * abs(x[:, 0]), 0.005 - 0.0025 * abs(x[:, 1]), 0.0025 + 0.0025 * abs(x[:, 2]))


def _a5_3(x):
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    out = _diag(2 - abs(x1 * (0.5 - x2)), 0.005 + 0.005 * abs(x1 + x3), 0.01 + 0.0025 * x2 * np.exp(x3))
    out[:, 0, 1] = out[:, 1, 0] = -0.02
    out[:, 0, 2] = out[:, 2, 0] = 0.005
    out[:, 1, 2] = out[:, 2, 1] = -0.001
    return out / 2.001


_CLOSED = {
    2: {1: _a1_2, 2: _a2_2, 3: _a3_2, 4: _a4_2, 5: _a5_2},
    3: {1: _a1_3, 2: _a2_3, 3: _a3_3, 4: _a4_3, 5: _a5_3},
}


def _blocks(n: int):
    def evaluate(x):
        return np.stack([mt19937_block_matrix(p, n, x.shape[1]) for p in x]) if len(x) else \
            np.zeros((0, x.shape[1], x.shape[1]))
    return evaluate


def _two_parts(d: int):
    left, right = _CLOSED[d][2], _CLOSED[d][3]

    def evaluate(x):
        return np.where((x[:, 0] < 0)[:, None, None], left(x), right(x))
    return evaluate


def builtin_matrix(id: int, d: int) -> CoefficientField:
    if d not in (2, 3):
        raise ContractViolation("dimension must be 2 or 3")
    if id not in MATRIX_IDS:
        raise ContractViolation(f"unknown matrix id {id}; choose 0..9")
    if id == 0:
        fn = _identity
    elif id in _CLOSED[d]:
        fn = _CLOSED[d][id]
    elif id in BLOCK_COUNTS:
        fn = _blocks(BLOCK_COUNTS[id])
    else:
        fn = _two_parts(d)
    return CoefficientField(id, d, fn, NOMINAL_RHO[d][id], DESCRIPTIONS.get(id, ""))


def sampled_rho(field: CoefficientField, points_per_axis: int = 201) -> float:
    """min lambda_min / max lambda_max over a lattice of [-1, 1]^d."""
    axes = [np.linspace(-1.0, 1.0, points_per_axis)] * field.dim
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, field.dim)
    lam = np.linalg.eigvalsh(field(pts))
    return float(lam[:, 0].min() / lam[:, -1].max())
