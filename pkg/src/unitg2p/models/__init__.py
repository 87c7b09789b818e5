from .base import BaseRecord
from .stage_run import STAGES, StageRun, StageRunRecord

__all__ = ["BaseRecord", "STAGES", "StageRun", "StageRunRecord"]
