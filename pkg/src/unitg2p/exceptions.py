"""
Custom exceptions for unitg2p configuration, persistence and pipeline stages.
"""

from typing import Any, Dict, List, Optional, Sequence


class UnitG2PError(Exception):
    """Base class for every error raised by unitg2p."""
    pass


class DomainError(UnitG2PError, ValueError):
    """
    Raised when an operation is called outside its preconditions.

    This includes cases like:
    - Unknown phoneme id or zero-length rendering
    - Fewer frames than clusters, or frames of the wrong dimension
    - Empty mask sets, empty reference lists, mismatched sequence lengths
    """
    pass


class SchemaBindingError(UnitG2PError):
    """
    Raised when there are issues with schema binding during bind_handlers().

    This includes cases like:
    - Schema class name doesn't match the registry table class name
    - Required sub-schemas are missing
    - Invalid schema structure
    """
    pass


class ConfigValidationError(UnitG2PError):
    """
    Raised when Pydantic validation of a config tree or registry payload fails.

    Contains detailed field-level validation errors.
    """

    def __init__(self, message: str, errors: Optional[List[Dict[str, Any]]] = None):
        """
        Initialize validation error with detailed error information.

        Args:
            message: High-level error message
            errors: List of field-level validation errors from Pydantic
        """
        super().__init__(message)
        self.errors = errors or []

    def __str__(self) -> str:
        """Return formatted error message with field details."""
        base_msg = super().__str__()
        if self.errors:
            error_details = []
            for error in self.errors:
                loc = " -> ".join(str(x) for x in error.get('loc', []))
                msg = error.get('msg', 'Unknown error')
                error_details.append(f"{loc}: {msg}")
            return f"{base_msg}\nField errors:\n" + "\n".join(f"  - {detail}" for detail in error_details)
        return base_msg


class IngestError(UnitG2PError):
    """
    Raised when a dataset file cannot be ingested.

    Carries the offending path and, when known, the 1-based line number or
    the utterance ids whose audio is missing.
    """

    def __init__(self, message: str, path: Optional[str] = None,
                 line_number: Optional[int] = None, missing_ids: Sequence[str] = ()):
        super().__init__(message)
        self.path = path
        self.line_number = line_number
        self.missing_ids = list(missing_ids)

    def __str__(self) -> str:
        base_msg = super().__str__()
        where = self.path or "<unknown>"
        if self.line_number is not None:
            where = f"{where}:{self.line_number}"
        msg = f"{where}: {base_msg}"
        if self.missing_ids:
            shown = ", ".join(self.missing_ids[:20])
            more = "" if len(self.missing_ids) <= 20 else f" (+{len(self.missing_ids) - 20} more)"
            msg += f"\nMissing ids: {shown}{more}"
        return msg


class ContainerFormatError(UnitG2PError):
    """Raised when a UGPF/UGPK/UGPT binary container is malformed."""
    pass


class StageError(UnitG2PError):
    """
    Raised when a pipeline stage fails.

    Keeps the stage name and the artifacts that were already persisted so a
    rerun can resume from them.
    """

    def __init__(self, stage: str, message: str, partial_artifacts: Sequence[str] = ()):
        super().__init__(message)
        self.stage = stage
        self.partial_artifacts = list(partial_artifacts)

    def __str__(self) -> str:
        base_msg = super().__str__()
        msg = f"stage '{self.stage}' failed: {base_msg}"
        if self.partial_artifacts:
            msg += "\nPersisted artifacts:\n" + "\n".join(f"  - {p}" for p in self.partial_artifacts)
        return msg
