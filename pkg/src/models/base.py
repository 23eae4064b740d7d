"""
Base data models module for type safety and validation across the codec pipeline.
This module provides the foundational model class, the error hierarchy and the
validation levels used by every domain record (clips, configs, token streams,
manifests).

The models are designed to be:
- Type-safe: Dataclass fields with explicit types
- Validatable: Built-in field and business-rule checks run at construction
- Serializable: Easy JSON serialization for run snapshots and file headers
"""

from abc import ABC, abstractmethod
from dataclasses import asdict
from enum import Enum, auto
from typing import Any, Dict

from src.utils.logging import get_logger

logger = get_logger(__name__)


class HpxError(Exception):
    """Root of every error raised by this package."""


class ConfigError(HpxError):
    """Invalid or inconsistent configuration."""


class ShapeError(HpxError):
    """Tensor shapes incompatible with an operation."""

    def __init__(self, op: str, *shapes: Any, detail: str = ""):
        self.op = op
        self.shapes = shapes
        shape_txt = ", ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {shape_txt}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class TapeError(HpxError):
    """Misuse of the gradient tape (non-scalar loss, second backward)."""


class CorruptFileError(HpxError):
    """A binary artifact is truncated or malformed."""


class DigestMismatchError(HpxError):
    """Checkpoint was produced by a different model configuration."""


class PreconditionError(HpxError):
    """An operation was called before the state it depends on exists."""


class InvariantError(HpxError):
    """A runtime invariant was violated (NaN loss, misaligned tokens, ...)."""


class ValidationLevel(Enum):
    """Validation severity levels."""
    CRITICAL = auto()    # Will raise exception
    WARNING = auto()     # Will log warning but continue
    INFO = auto()        # Will log informational message


class ValidationError(HpxError):
    """Base exception for validation errors."""

    def __init__(self, message: str, field: str = None, level: ValidationLevel = ValidationLevel.CRITICAL):
        self.message = message
        self.field = field
        self.level = level
        super().__init__(message if field is None else f"{field}: {message}")


class BaseModel(ABC):
    """
    Base model class with validation and serialization capabilities.

    All domain records inherit from this class to ensure:
    - Consistent validation (``check`` raises on CRITICAL findings)
    - Dictionary serialization for file headers
    - Uniform error reporting
    """

    def check(self) -> None:
        """Run validation and raise the first CRITICAL finding; log the rest."""
        self._validate_fields()
        try:
            self._validate_business_rules()
        except ValidationError as e:
            if e.level is ValidationLevel.CRITICAL:
                raise
            logger.warning(f"{type(self).__name__}: {e}")

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert model to dictionary.

        Returns:
            Dictionary representation of the model
        """
        return asdict(self)

    @abstractmethod
    def _validate_fields(self):
        """Validate individual fields."""

    @abstractmethod
    def _validate_business_rules(self):
        """Validate cross-field rules."""
