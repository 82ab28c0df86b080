"""Input validation helpers and shared error types."""

from __future__ import annotations

import os

import numpy as np

from .grids import Grid1D, GridFunction

__all__ = [
    "ConvergenceError",
    "PreconditionError",
    "check_positive",
    "check_nonnegative",
    "check_finite",
    "check_same_grid",
    "max_workers",
]


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget.

    Carries the recorded error trace in ``trace`` so callers can inspect
    how far the iteration got.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class PreconditionError(ValueError):
    """A certified precondition failed; the check refuses to report a vacuous pass."""


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_nonnegative(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be nonnegative and finite, got {value}")
    return value


def check_finite(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def check_same_grid(*functions: GridFunction) -> Grid1D:
    grids = {f.grid for f in functions}
    if len(grids) != 1:
        raise ValueError("grid functions must share one grid")
    return functions[0].grid


def max_workers() -> int:
    """Worker cap for internal thread pools.

    Honors the ``BRIDGECERT_THREADS`` environment variable; defaults to the
    machine's CPU count.
    """
    raw = os.environ.get("BRIDGECERT_THREADS", "")
    if raw.strip():
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ValueError(f"BRIDGECERT_THREADS must be an integer, got {raw!r}") from exc
        if cap < 1:
            raise ValueError("BRIDGECERT_THREADS must be >= 1")
        return cap
    return os.cpu_count() or 1
