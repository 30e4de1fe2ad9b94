"""
sparseloc error hierarchy

Every failure raised by the library derives from SparselocError so callers
can catch one type. Subclasses that represent bad input also derive from the
matching builtin (ValueError / IndexError).

Legal per-window conditions:
- NoDetectionsError
- NothingToRefineError

Everything else inside a pipeline stage is wrapped in FatalStageError.
"""

from __future__ import annotations


class SparselocError(Exception):
    """Root of all sparseloc errors."""


# ============================================================
# Input / configuration
# ============================================================

class ConfigurationError(SparselocError, ValueError):
    """Invalid or inconsistent configuration."""


class ArgumentError(SparselocError, ValueError):
    """Argument outside its documented range."""


class DomainError(SparselocError, ValueError):
    """Geometric degeneracy such as a zero range."""


class WindowIndexError(SparselocError, IndexError):
    """Window index outside 1..I."""

    def __init__(self, index: int, count: int):
        self.index = index
        self.count = count
        super().__init__(f"Window index {index} outside 1..{count}")


# ============================================================
# Per-window conditions
# ============================================================

class NoDetectionsError(SparselocError):
    """The energy detector kept no columns in this window."""


class NothingToRefineError(SparselocError):
    """No manifold columns are available (or all were removed)."""


# ============================================================
# Calibration / pipeline
# ============================================================

class CalibrationError(SparselocError):
    """Raised when a calibration cell cannot be fitted."""

    def __init__(self, message: str, n: int | None = None, gamma_db: float | None = None):
        self.n = n
        self.gamma_db = gamma_db
        where = ""
        if n is not None:
            where = f" (N={n}" + (f", gamma={gamma_db:.1f} dB)" if gamma_db is not None else ")")
        super().__init__(message + where)


class FatalStageError(SparselocError):
    """Unexpected failure inside a pipeline stage."""

    def __init__(self, stage: str, window: int, cause: Exception):
        self.stage = stage
        self.window = window
        self.cause = cause
        super().__init__(
            f"Stage '{stage}' failed in window {window}: "
            f"{type(cause).__name__}: {cause}"
        )
