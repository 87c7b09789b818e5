from .settings import (
    EncoderConfig,
    FramingConfig,
    G2PConfig,
    OptimizerConfig,
    PipelineConfig,
    SeedConfig,
    ToyLanguageSpec,
    UnitConfig,
)
from .loader import PRESETS, config_hash, dump_config, get_runtime_settings, load_config, validate_config

__all__ = [
    "EncoderConfig",
    "FramingConfig",
    "G2PConfig",
    "OptimizerConfig",
    "PipelineConfig",
    "SeedConfig",
    "ToyLanguageSpec",
    "UnitConfig",
    "PRESETS",
    "config_hash",
    "dump_config",
    "get_runtime_settings",
    "load_config",
    "validate_config",
]
