from typing import Any, Dict

from .base import RegistryHandler, T


class Create(RegistryHandler[T]):
    """
    Records a single registry row.

    The row is committed and refreshed before it is returned, so ``id`` and
    ``created_at`` are populated.
    """

    def __call__(self, payload: Dict[str, Any]) -> T:
        """
        Args:
            payload: Column values for the new row

        Raises:
            ConfigValidationError: If the payload schema rejects ``payload``
            IntegrityError: If (stage, config_hash) is already recorded

        Example:
            StageRunRecord.create({"stage": "pretrain", "config_hash": h, "artifact_dir": d})
        """
        with self._transaction() as session:
            instance = self.model_class(**self._validated(payload))
            session.add(instance)
            session.commit()
            session.refresh(instance)
            return instance
