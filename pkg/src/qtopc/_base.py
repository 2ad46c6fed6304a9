from __future__ import annotations

import contextlib
import threading
from typing import TYPE_CHECKING, Any, ClassVar

if TYPE_CHECKING:
    from collections.abc import Iterator

__all__ = [
    "ConfigError",
    "DimensionMismatch",
    "InvariantViolation",
    "MeasurementError",
    "QtopcError",
    "SolverError",
    "StepSizeError",
    "Tolerances",
    "raise_exceptions",
]


class _Flag:
    def __init__(self, initial_value: bool) -> None:
        self.value = initial_value

    def set(self, value: bool) -> None:
        self.value = value

    def __bool__(self) -> bool:
        return self.value

    def __repr__(self) -> str:
        return str(self.value)


raise_exceptions = _Flag(True)
"""raise_exceptions is used to see if errors while emitting records should be propagated"""

_lock = threading.RLock()
"""_lock is used to serialize access to shared data structures in this package."""


class QtopcError(Exception):
    """Base class of every error raised by qtopc."""


class DimensionMismatch(QtopcError, ValueError):
    pass


class InvariantViolation(QtopcError, ValueError):
    """A state, operator or POVM does not satisfy its invariants."""


class StepSizeError(QtopcError, ValueError):
    """The requested integration step is too coarse for the interval or for the jump rate."""


class SolverError(QtopcError, RuntimeError):
    """
    The control solver produced a non-finite cost.

    The offending schedule is kept on the exception as ``schedule``.
    """

    def __init__(self, message: str, schedule: Any = None) -> None:
        super().__init__(message)
        self.schedule = schedule


class MeasurementError(QtopcError, RuntimeError):
    pass


class ConfigError(QtopcError, ValueError):
    pass


class Tolerances:
    """
    Numeric policy shared by every module and by the tests.

    Values are class attributes so that a single override applies everywhere.
    Use `Tolerances.override(...)` to change them temporarily.
    """

    hermitian: ClassVar[float] = 1e-10
    trace: ClassVar[float] = 1e-10
    psd: ClassVar[float] = 1e-10
    norm: ClassVar[float] = 1e-12
    degenerate: ClassVar[float] = 1e-10
    operator_norm: ClassVar[float] = 1e-9
    povm: ClassVar[float] = 1e-9
    imaginary: ClassVar[float] = 1e-10
    integration: ClassVar[float] = 1e-6
    probability_drift: ClassVar[float] = 1e-8
    negligible_probability: ClassVar[float] = 1e-12
    jump_probability_cap: ClassVar[float] = 0.1

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(name for name, value in vars(cls).items() if isinstance(value, float))

    @classmethod
    @contextlib.contextmanager
    def override(cls, *, restore: bool = True, **values: float) -> Iterator[type[Tolerances]]:
        unknown = set(values) - set(cls.names())
        if unknown:
            raise TypeError(f"Unknown tolerance(s): {', '.join(sorted(unknown))}")

        with _lock:
            original = {name: getattr(cls, name) for name in values}
            try:
                for name, value in values.items():
                    setattr(cls, name, float(value))
                yield cls
            finally:
                if restore:
                    for name, value in original.items():
                        setattr(cls, name, value)
