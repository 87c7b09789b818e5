from typing import Any, Dict, Optional

from sqlalchemy import select

from .base import RegistryHandler, T


class Find(RegistryHandler[T]):
    """Returns the newest registry row matching a filter, or None."""

    payload_kind = "Filter"

    def _build_query(self, filter_data: Optional[Dict[str, Any]] = None):
        stmt = self._where(select(self.model_class), self._validated(filter_data or {}))
        # a re-recorded stage shadows its older rows
        return stmt.order_by(self.model_class.id.desc())

    def __call__(self, filter_data: Optional[Dict[str, Any]] = None) -> Optional[T]:
        """
        Example:
            run = StageRunRecord.find({"stage": "pretrain", "config_hash": h})
        """
        with self._transaction() as session:
            return session.execute(self._build_query(filter_data)).scalars().first()
