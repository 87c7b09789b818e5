from typing import Any, Dict

from sqlalchemy import delete

from .base import RegistryHandler


class Delete(RegistryHandler):
    """Removes every registry row matching a (non-empty) filter."""

    payload_kind = "Filter"

    def _build_query(self, filter_data: Dict[str, Any]):
        criteria = self._validated(filter_data)
        if not criteria:
            raise ValueError("Refusing to delete without a filter.")
        return self._where(delete(self.model_class), criteria)

    def __call__(self, filter_data: Dict[str, Any]) -> int:
        """
        Returns:
            Number of rows deleted

        Raises:
            ConfigValidationError: If the filter schema rejects ``filter_data``
            ValueError: If ``filter_data`` is empty
        """
        with self._transaction() as session:
            result = session.execute(self._build_query(filter_data))
            session.commit()
            return result.rowcount
