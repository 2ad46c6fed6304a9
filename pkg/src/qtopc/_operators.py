"""
Named operators of the two- and three-level examples.

Every matrix returned here is a fresh, writable copy; the module level
constants are read-only.
"""
from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "J_X",
    "J_Y",
    "J_Z",
    "LOWERING",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "identity",
    "ket",
    "named_operator",
    "operator_names",
    "projector",
]

ComplexMatrix = NDArray[np.complex128]


def _frozen(entries) -> ComplexMatrix:
    matrix = np.array(entries, dtype=np.complex128)
    matrix.setflags(write=False)
    return matrix


SIGMA_X = _frozen([[0, 1], [1, 0]])
SIGMA_Y = _frozen([[0, -1j], [1j, 0]])
SIGMA_Z = _frozen([[1, 0], [0, -1]])

J_X = _frozen(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / np.sqrt(2))
J_Y = _frozen(1j * np.array([[0, -1, 0], [1, 0, -1], [0, 1, 0]]) / np.sqrt(2))
J_Z = _frozen(np.diag([1, 0, -1]))

LOWERING = _frozen([[0, 1], [0, 0]])
"""|0><1|, relaxes the excited state |1> to the ground state |0>."""


def identity(dim: int) -> ComplexMatrix:
    return np.eye(dim, dtype=np.complex128)


def ket(dim: int, index: int) -> NDArray[np.complex128]:
    if not 0 <= index < dim:
        raise ValueError(f"Basis index {index} outside dimension {dim}")
    vector = np.zeros(dim, dtype=np.complex128)
    vector[index] = 1.0
    return vector


def projector(dim: int, index: int) -> ComplexMatrix:
    """|index><index| in dimension *dim*."""
    vector = ket(dim, index)
    return np.outer(vector, vector.conj())


_NAMED = {
    "sigma_x": SIGMA_X,
    "sigma_y": SIGMA_Y,
    "sigma_z": SIGMA_Z,
    "lowering": LOWERING,
    "J_x": J_X,
    "J_y": J_Y,
    "J_z": J_Z,
}


def operator_names() -> tuple[str, ...]:
    return tuple(_NAMED)


def named_operator(name: str) -> ComplexMatrix:
    try:
        return np.array(_NAMED[name])
    except KeyError:
        raise ValueError(f"Unknown operator {name!r}; expected one of {', '.join(_NAMED)}")
