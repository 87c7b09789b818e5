"""Dataset ingestion, cached stages and the end-to-end runners."""

from .ingest import (
    DatasetManifest,
    ManifestEntry,
    assign_splits,
    ingest_cmudict,
    ingest_ljspeech,
    read_pcm16,
    split_lexicon,
    write_cmudict,
)
from .runner import (
    AblationRow,
    PipelineArtifacts,
    PipelineRunner,
    ablate_k,
    format_ablation,
    run_full_pipeline,
    run_lexicon_baseline,
)
from .tasks import generate_phone_targets

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "assign_splits",
    "ingest_cmudict",
    "ingest_ljspeech",
    "read_pcm16",
    "split_lexicon",
    "write_cmudict",
    "AblationRow",
    "PipelineArtifacts",
    "PipelineRunner",
    "ablate_k",
    "format_ablation",
    "run_full_pipeline",
    "run_lexicon_baseline",
    "generate_phone_targets",
]
