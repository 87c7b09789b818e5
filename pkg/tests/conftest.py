from pathlib import Path

import pytest
import yaml

from unitg2p.config import PipelineConfig, ToyLanguageSpec
from unitg2p.config.loader import RuntimeSettings
from unitg2p.config.store import close_session_sync_, configure_store
from unitg2p.synthlang import generate_corpus, write_corpus

# small enough that a full pipeline run takes seconds on a CPU
TINY_TREE = {
    "units": {"phone_target_k": 8, "max_iters": 30},
    "encoder": {
        "n_layers": 2,
        "d_model": 32,
        "n_heads": 2,
        "ffn_dim": 64,
        "dropout": 0.0,
        "feature_layer_index": 1,
        "n_iterations": 2,
        "k_schedule": [8, 8],
        "steps_per_iteration": 15,
        "batch_size": 4,
        "log_every": 5,
    },
    "g2p": {
        "d_model": 32,
        "enc_layers": 1,
        "dec_layers": 1,
        "ffn_dim": 64,
        "n_heads": 2,
        "dropout": 0.0,
        "max_steps": 20,
        "batch_size": 8,
        "eval_every": 10,
        "log_every": 10,
    },
}


@pytest.fixture
def tiny_cfg() -> PipelineConfig:
    return PipelineConfig.model_validate(TINY_TREE)


@pytest.fixture
def tiny_cfg_file(tmp_path) -> Path:
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_TREE), encoding="utf-8")
    return path


@pytest.fixture
def registry(tmp_path):
    configure_store(f"sqlite:///{tmp_path / 'registry.db'}")
    yield
    close_session_sync_()


@pytest.fixture
def runtime(tmp_path) -> RuntimeSettings:
    return RuntimeSettings(
        artifact_dir=tmp_path / "artifacts",
        store_url=f"sqlite:///{tmp_path / 'registry.db'}",
        log_level="INFO",
        workers=1,
    )


@pytest.fixture(scope="session")
def toy_spec() -> ToyLanguageSpec:
    return ToyLanguageSpec(seed=7)


@pytest.fixture(scope="session")
def toy_corpus_dir(tmp_path_factory, toy_spec) -> Path:
    """Eight five-word utterances of the default toy language."""
    out = tmp_path_factory.mktemp("toy") / "labeled"
    write_corpus(generate_corpus(toy_spec, 40, 5), out, toy_spec)
    return out
