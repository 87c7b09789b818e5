"""
Loading, merging, hashing and dumping of the configuration tree.

Config files are YAML key-value trees merged over a named preset; runtime
locations (artifact directory, registry URL, log level, workers) come from
the environment, optionally via a ``.env`` file.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from ..exceptions import ConfigValidationError
from .settings import PipelineConfig, SeedConfig

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {},
    "paper": {
        "target_sample_rate": 16000,
        "framing": {"sample_rate": 16000},
        "units": {"phone_target_k": 100},
        "encoder": {
            "n_layers": 12,
            "d_model": 768,
            "n_heads": 12,
            "ffn_dim": 3072,
            "dropout": 0.1,
            "feature_layer_index": 8,
            "n_iterations": 3,
            "k_schedule": [100, 500, 500],
            "mask_prob": 0.08,
            "mask_length": 10,
        },
        "optimizer": {"peak_lr": 5e-4, "warmup_fraction": 0.08, "schedule": "linear"},
        "g2p": {
            "d_model": 512,
            "enc_layers": 4,
            "dec_layers": 4,
            "ffn_dim": 1024,
            "n_heads": 4,
            "dropout": 0.1,
            "lr": 1e-4,
            "warmup_fraction": 0.0,
        },
    },
}


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _apply_override(tree: Dict[str, Any], dotted: str) -> None:
    if "=" not in dotted:
        raise ConfigValidationError(f"Override '{dotted}' is not of the form key.path=value")
    key, raw = dotted.split("=", 1)
    parts = key.strip().split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigValidationError(f"Override '{dotted}' descends into a scalar")
    node[parts[-1]] = yaml.safe_load(raw)


def validate_config(tree: Dict[str, Any]) -> PipelineConfig:
    """
    Validate a raw config tree.

    Raises:
        ConfigValidationError: If any sub-config violates its invariants
    """
    try:
        return PipelineConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigValidationError("Pipeline configuration is invalid", errors=e.errors())


def load_config(path: Optional[Union[str, Path]] = None, preset: str = "desk",
                overrides: Iterable[str] = (), seed: Optional[int] = None) -> PipelineConfig:
    """
    Build a validated PipelineConfig.

    Args:
        path: Optional YAML file merged over the preset
        preset: Name of the base preset ('desk' or 'paper')
        overrides: Dotted ``key.path=value`` assignments applied last
        seed: When given, replaces every seed with ones derived from it

    Returns:
        The validated configuration

    Raises:
        ConfigValidationError: Unknown preset, malformed file or invalid values

    Example:
        cfg = load_config("run.yaml", preset="desk", overrides=["encoder.n_layers=2"])
    """
    if preset not in PRESETS:
        raise ConfigValidationError(f"Unknown preset '{preset}'. Available: {sorted(PRESETS)}")
    tree = copy.deepcopy(PRESETS[preset])
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigValidationError(f"Config file {path} must contain a mapping at the top level")
        tree = _deep_merge(tree, loaded)
    for dotted in overrides:
        _apply_override(tree, dotted)
    if seed is not None:
        tree["seeds"] = SeedConfig.from_base(seed).model_dump()
    return validate_config(tree)


def dump_config(cfg: BaseModel, path: Union[str, Path]) -> None:
    """Write a validated config back out as YAML."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.model_dump(mode="json"), fh, sort_keys=True)


def config_hash(*parts: Union[BaseModel, Dict[str, Any], str, int, float, None]) -> str:
    """
    Stable hash of one or more config subtrees (or upstream hashes).

    Returns:
        First 16 hex digits of the SHA-256 of the canonical JSON encoding
    """
    payload = []
    for part in parts:
        if isinstance(part, BaseModel):
            payload.append(part.model_dump(mode="json"))
        else:
            payload.append(part)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class RuntimeSettings:
    artifact_dir: Path
    store_url: str
    log_level: str
    workers: int


def get_runtime_settings(env_file: Optional[Union[str, Path]] = None) -> RuntimeSettings:
    """
    Read runtime locations from the environment (and an optional .env file).

    Environment variables:
        UNITG2P_ARTIFACT_DIR: Artifact root (default ./artifacts)
        UNITG2P_STORE_URL: SQLAlchemy URL of the stage registry
            (default sqlite:///<artifact_dir>/registry.db)
        UNITG2P_LOG_LEVEL: Logging level name (default INFO)
        UNITG2P_WORKERS: Per-utterance worker threads (default 1)
    """
    load_dotenv(dotenv_path=env_file, override=False)
    artifact_dir = Path(os.environ.get("UNITG2P_ARTIFACT_DIR", "artifacts")).resolve()
    store_url = os.environ.get("UNITG2P_STORE_URL") or f"sqlite:///{artifact_dir / 'registry.db'}"
    log_level = os.environ.get("UNITG2P_LOG_LEVEL", "INFO").upper()
    try:
        workers = max(1, int(os.environ.get("UNITG2P_WORKERS", "1")))
    except ValueError:
        raise ConfigValidationError("UNITG2P_WORKERS must be an integer")
    return RuntimeSettings(artifact_dir=artifact_dir, store_url=store_url,
                           log_level=log_level, workers=workers)
