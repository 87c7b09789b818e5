import logging

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, scoped_session

logger = logging.getLogger(__name__)

# Global engine and session factory for the stage registry
_engine_sync = None
_session_factory_sync = None


def configure_store(store_url: str, **engine_kwargs):
    """
    Configure the registry engine and scoped session, creating tables if needed.

    Args:
        store_url: SQLAlchemy URL of the registry (e.g., sqlite:///artifacts/registry.db)
        **engine_kwargs: SQLAlchemy engine configuration parameters
                        (echo, pool_pre_ping, connect_args, etc.)
    """
    global _engine_sync, _session_factory_sync

    from ..models.base import BaseRecord
    from ..models import stage_run  # noqa: F401  (registers the table)

    if _session_factory_sync is not None:
        close_session_sync_()
    if _engine_sync is not None:
        _engine_sync.dispose()

    _engine_sync = create_engine(store_url, **engine_kwargs)
    BaseRecord.metadata.create_all(_engine_sync)

    _session_factory_sync = scoped_session(
        sessionmaker(bind=_engine_sync, expire_on_commit=False)
    )
    logger.debug("stage registry configured at %s", store_url)


def get_session_sync_():
    """Get scoped sync session."""
    if _session_factory_sync is None:
        raise RuntimeError("Artifact store not configured. Call configure_store() first.")
    return _session_factory_sync()


def close_session_sync_():
    """Close the sync registry session."""
    if _session_factory_sync is not None:
        try:
            _session_factory_sync.remove()
        except Exception as e:
            logger.warning("Error during registry session cleanup (this is usually harmless): %s", e)

            # Fallback: try to clear the registry
            try: _session_factory_sync.registry.clear()
            except Exception: pass
