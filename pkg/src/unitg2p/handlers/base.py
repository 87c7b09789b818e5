from contextlib import contextmanager
from typing import Any, Dict, Generic, Iterator, Optional, Type, TypeVar

from pydantic import ValidationError
from sqlalchemy.orm import Session

from ..config.store import get_session_sync_
from ..exceptions import ConfigValidationError

T = TypeVar('T')


class RegistryHandler(Generic[T]):
    """
    Shared plumbing for handlers bound onto a registry table.

    Subclasses validate their payload with ``_validated`` and do their work
    inside ``_transaction``, which rolls the scoped session back on failure.
    """

    #: word used in validation error messages ("Payload", "Filter")
    payload_kind = "Payload"

    def __init__(self, model_class: Type[T], schema: Optional[Type[Any]] = None):
        self.model_class = model_class
        self.schema = schema

    def _validated(self, data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Run ``data`` through the bound pydantic schema, if any.

        Returns:
            Only the fields the caller actually set

        Raises:
            ConfigValidationError: If the schema rejects ``data``
        """
        if self.schema is None:
            return dict(data)
        try:
            return self.schema(**data).model_dump(exclude_unset=True)
        except ValidationError as e:
            raise ConfigValidationError(
                f"{self.payload_kind} validation failed for {self.model_class.__name__}",
                errors=e.errors()
            )

    def _where(self, stmt, criteria: Dict[str, Any]):
        for key, value in criteria.items():
            column = getattr(self.model_class, key, None)
            if column is not None:
                stmt = stmt.where(column == value)
        return stmt

    @contextmanager
    def _transaction(self) -> Iterator[Session]:
        session = get_session_sync_()
        try:
            yield session
        except Exception:
            session.rollback()
            raise


__all__ = ["RegistryHandler"]
