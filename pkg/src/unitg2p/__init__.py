"""
unitg2p - Lexicon-free grapheme-to-phoneme training on self-discovered acoustic units.

Audio is turned into discrete phone-like units by iterative masked-prediction
pre-training and k-means; a sequence-to-sequence model then learns to map
text onto those units. Every stage is cached and resumable.
"""

from .config import PipelineConfig, load_config
from .exceptions import (
    ConfigValidationError,
    ContainerFormatError,
    DomainError,
    IngestError,
    SchemaBindingError,
    StageError,
    UnitG2PError,
)

__version__ = "0.1.0"
__all__ = [
    "PipelineConfig",
    "load_config",
    "ConfigValidationError",
    "ContainerFormatError",
    "DomainError",
    "IngestError",
    "SchemaBindingError",
    "StageError",
    "UnitG2PError",
]
