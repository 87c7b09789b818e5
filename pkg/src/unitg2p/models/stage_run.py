"""
Registry of completed pipeline stages, keyed by (stage, config hash).
"""

from datetime import datetime, timezone
from typing import Literal, Optional

from pydantic import BaseModel as PydanticModel, ConfigDict, Field
from sqlalchemy import DateTime, Integer, String, Text, UniqueConstraint
from sqlalchemy.orm import Mapped, mapped_column

from .base import BaseRecord

STAGES = ("features", "pretrain", "targets", "g2p", "evaluate", "lexicon")


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class StageRunRecord(BaseRecord):
    __tablename__ = "stage_runs"
    __table_args__ = (UniqueConstraint("stage", "config_hash", name="uq_stage_hash"),)
    __schema_name__ = "StageRun"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    stage: Mapped[str] = mapped_column(String(32), nullable=False)
    config_hash: Mapped[str] = mapped_column(String(64), nullable=False)
    artifact_dir: Mapped[str] = mapped_column(Text, nullable=False)
    status: Mapped[str] = mapped_column(String(16), nullable=False, default="complete")
    detail: Mapped[Optional[str]] = mapped_column(Text, nullable=True)
    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), default=_utcnow)

    def __repr__(self) -> str:
        return f"StageRunRecord(stage={self.stage!r}, hash={self.config_hash!r}, status={self.status!r})"


class StageRun:
    """Validation schemas bound onto StageRunRecord."""

    class CreateSchema(PydanticModel):
        model_config = ConfigDict(extra="forbid")

        stage: Literal[STAGES]
        config_hash: str = Field(min_length=1, max_length=64)
        artifact_dir: str = Field(min_length=1)
        status: Literal["complete", "failed"] = "complete"
        detail: Optional[str] = None

    class FilterSchema(PydanticModel):
        model_config = ConfigDict(extra="forbid")

        stage: Optional[Literal[STAGES]] = None
        config_hash: Optional[str] = None
        status: Optional[Literal["complete", "failed"]] = None


StageRunRecord.bind_handlers(validation_schema=StageRun)

__all__ = ["STAGES", "StageRun", "StageRunRecord"]
