from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._base import DimensionMismatch, InvariantViolation, Tolerances

__all__ = [
    "DensityMatrix",
    "PureState",
    "StateReport",
    "fidelity",
    "infidelity",
    "nearest_pure_state",
    "overlap",
    "terminal_error",
    "trace_distance",
    "validate_state",
]

logger = logging.getLogger(__name__)


def _readonly(array: NDArray) -> NDArray:
    array.setflags(write=False)
    return array


def _fix_phase(amplitudes: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Rotate the global phase so the first nonzero amplitude is real-positive."""
    magnitudes = np.abs(amplitudes)
    first = int(np.argmax(magnitudes > Tolerances.norm))
    if magnitudes[first] == 0:
        return amplitudes
    return amplitudes * (abs(amplitudes[first]) / amplitudes[first])


@dataclass(frozen=True, eq=False)
class PureState:
    """
    Unit state vector |psi>.

    The amplitudes are stored as given; use `PureState.normalized` to build
    one from an arbitrary nonzero vector.
    """

    amplitudes: NDArray[np.complex128]

    def __post_init__(self) -> None:
        amplitudes = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(amplitudes)
        if abs(norm - 1.0) > Tolerances.norm * max(1, amplitudes.size):
            raise InvariantViolation(f"State vector norm is {norm!r}, expected 1")
        object.__setattr__(self, "amplitudes", _readonly(amplitudes))

    @classmethod
    def normalized(cls, vector: ArrayLike, *, fix_phase: bool = False) -> PureState:
        amplitudes = np.asarray(vector, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(amplitudes)
        if norm == 0:
            raise InvariantViolation("Cannot normalize the zero vector")
        amplitudes = amplitudes / norm
        if fix_phase:
            amplitudes = _fix_phase(amplitudes)
        return cls(amplitudes)

    @classmethod
    def basis(cls, dim: int, index: int) -> PureState:
        amplitudes = np.zeros(dim, dtype=np.complex128)
        amplitudes[index] = 1.0
        return cls(amplitudes)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def inner(self, other: PureState) -> complex:
        """<self|other>"""
        _check_dims(self.dim, other.dim)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def density(self) -> DensityMatrix:
        return DensityMatrix.from_pure(self)

    def __repr__(self) -> str:
        return f"PureState({np.array2string(self.amplitudes, precision=6)})"


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """
    Square complex matrix standing for a quantum state.

    Construction only checks the shape so that `validate_state` can report
    on arbitrary matrices. Call `checked()` to enforce the invariants.
    """

    entries: NDArray[np.complex128]

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=np.complex128)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] == 0:
            raise DimensionMismatch(f"Density matrix must be square, got shape {entries.shape}")
        object.__setattr__(self, "entries", _readonly(entries))

    @classmethod
    def from_pure(cls, state: PureState | ArrayLike) -> DensityMatrix:
        amplitudes = state.amplitudes if isinstance(state, PureState) else PureState.normalized(state).amplitudes
        return cls(np.outer(amplitudes, amplitudes.conj()))

    @classmethod
    def basis(cls, dim: int, index: int) -> DensityMatrix:
        return cls.from_pure(PureState.basis(dim, index))

    @classmethod
    def maximally_mixed(cls, dim: int) -> DensityMatrix:
        return cls(np.eye(dim, dtype=np.complex128) / dim)

    @classmethod
    def diagonal(cls, values: ArrayLike) -> DensityMatrix:
        return cls(np.diag(np.asarray(values, dtype=np.complex128)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))

    def is_pure(self, tol: float = 1e-9) -> bool:
        return abs(self.purity() - 1.0) <= tol

    def checked(self, tol: float | None = None) -> DensityMatrix:
        report = validate_state(self, tol=tol)
        if not report.passed:
            raise InvariantViolation(f"Not a valid density matrix: {'; '.join(report.failures)}")
        return self

    def __repr__(self) -> str:
        return f"DensityMatrix({np.array2string(self.entries, precision=6)})"


@dataclass(frozen=True)
class StateReport:
    hermiticity_defect: float
    trace_defect: float
    min_eigenvalue: float
    failures: tuple[str, ...] = field(default=())

    @property
    def passed(self) -> bool:
        return not self.failures


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise DimensionMismatch(f"Dimension mismatch: {a} != {b}")


def validate_state(rho: DensityMatrix | ArrayLike, *, tol: float | None = None) -> StateReport:
    """
    Report the Hermiticity defect, trace defect and smallest eigenvalue of *rho*.

    *tol* replaces all three invariant tolerances when given.
    """
    entries = rho.entries if isinstance(rho, DensityMatrix) else DensityMatrix(rho).entries
    hermiticity = float(np.max(np.abs(entries - entries.conj().T)))
    trace_defect = float(abs(np.trace(entries) - 1.0))
    min_eigenvalue = float(np.linalg.eigvalsh((entries + entries.conj().T) / 2)[0])

    failures = []
    if hermiticity > (Tolerances.hermitian if tol is None else tol):
        failures.append(f"not Hermitian (defect {hermiticity:.3g})")
    if trace_defect > (Tolerances.trace if tol is None else tol):
        failures.append(f"trace differs from 1 by {trace_defect:.3g}")
    if min_eigenvalue < -(Tolerances.psd if tol is None else tol):
        failures.append(f"negative eigenvalue {min_eigenvalue:.3g}")
    return StateReport(hermiticity, trace_defect, min_eigenvalue, tuple(failures))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Half the sum of singular values of a - b."""
    _check_dims(a.dim, b.dim)
    singular_values = np.linalg.svd(a.entries - b.entries, compute_uv=False)
    return float(min(max(0.5 * singular_values.sum(), 0.0), 1.0))


def overlap(a: DensityMatrix, b: DensityMatrix) -> float:
    """Tr(a b); the imaginary residue is discarded."""
    _check_dims(a.dim, b.dim)
    value = np.einsum("ij,ji->", a.entries, b.entries)
    if abs(value.imag) > Tolerances.imaginary:
        logger.debug("Discarding imaginary part %.3g of an overlap", value.imag)
    return float(value.real)


def fidelity(state: DensityMatrix, reference: DensityMatrix) -> float:
    """sqrt(Tr(state reference)), the fidelity against a pure reference."""
    return float(np.sqrt(max(overlap(state, reference), 0.0)))


def infidelity(state: DensityMatrix, reference: DensityMatrix) -> float:
    """1 - Tr(state reference); equals 1 - |<psi|phi>|^2 for pure pairs."""
    return 1.0 - overlap(state, reference)


def terminal_error(target: DensityMatrix, final: DensityMatrix) -> float:
    return trace_distance(target, final) ** 2


def nearest_pure_state(rho: DensityMatrix) -> PureState:
    """
    Return the dominant eigenvector of *rho*.

    A degenerate top eigenvalue is resolved by projecting the lowest-index
    computational basis state with a nonzero component onto the degenerate
    eigenspace, which picks the eigenvector of largest overlap with it.
    """
    hermitian = (rho.entries + rho.entries.conj().T) / 2
    eigenvalues, eigenvectors = np.linalg.eigh(hermitian)
    top = eigenvalues[-1]
    degenerate = eigenvectors[:, eigenvalues >= top - Tolerances.degenerate]
    if degenerate.shape[1] == 1:
        return PureState.normalized(degenerate[:, 0], fix_phase=True)

    logger.debug("Top eigenvalue %.6g is %d-fold degenerate", top, degenerate.shape[1])
    projector = degenerate @ degenerate.conj().T
    for index in range(rho.dim):
        candidate = projector[:, index]
        if np.linalg.norm(candidate) > Tolerances.degenerate:
            return PureState.normalized(candidate, fix_phase=True)
    raise AssertionError("degenerate eigenspace is orthogonal to every basis state")  # pragma: no cover
